"""Dataset manifests.

A manifest is UTF-8 TSV with '#' comments; columns are
image<TAB>field<TAB>transcript[<TAB>polygon], the polygon being
"x,y;x,y;..." page coordinates for rows that still need segmentation.
Transcripts are stored canonically (gt_normalize applied); an empty
transcript is allowed for segmentation-only rows.
"""

import os
from dataclasses import dataclass

from .fields import FIELD_TYPES, TranscriptError, gt_normalize


@dataclass(frozen=True)
class ManifestEntry:
    image: str
    field_type: str
    transcript: str  # canonical form
    raw_transcript: str = ""
    polygon: tuple | None = None

    def usable_for_training(self) -> bool:
        return bool(self.transcript) and os.path.exists(self.image)


def _parse_polygon(text: str) -> tuple:
    points = []
    for pair in text.split(";"):
        x, y = pair.split(",")
        points.append((float(x), float(y)))
    if len(points) < 3:
        raise ValueError("polygon needs at least 3 points")
    return tuple(points)


@dataclass
class ManifestLoad:
    entries: list
    dropped: int
    drop_reasons: list


def ingest_manifest(path) -> ManifestLoad:
    """Parse a manifest, normalizing transcripts; rows with malformed
    columns, unknown field types, missing image files, or transcripts
    outside their field alphabet are dropped and counted."""
    entries = []
    dropped = 0
    reasons = []
    base = os.path.dirname(os.fspath(path))
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) not in (3, 4):
                dropped += 1
                reasons.append(f"line {lineno}: expected 3 or 4 columns")
                continue
            image, field_type, raw = parts[0], parts[1], parts[2]
            if field_type not in FIELD_TYPES:
                dropped += 1
                reasons.append(f"line {lineno}: unknown field type {field_type!r}")
                continue
            if not os.path.isabs(image):
                image = os.path.join(base, image)
            if not os.path.exists(image):
                dropped += 1
                reasons.append(f"line {lineno}: missing image {image}")
                continue
            polygon = None
            if len(parts) == 4 and parts[3]:
                try:
                    polygon = _parse_polygon(parts[3])
                except ValueError as exc:
                    dropped += 1
                    reasons.append(f"line {lineno}: bad polygon ({exc})")
                    continue
            try:
                transcript = gt_normalize(field_type, raw) if raw.strip() else ""
            except TranscriptError as exc:
                dropped += 1
                reasons.append(f"line {lineno}: {exc}")
                continue
            entries.append(ManifestEntry(image, field_type, transcript, raw, polygon))
    return ManifestLoad(entries, dropped, reasons)
