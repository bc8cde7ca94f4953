"""Table-field image preprocessing.

Turns a page image plus approximate field polygons into normalized
single-writing crops: enlarge the polygon to a search box, locate the
ruled table lines from ink-density projection profiles, cut out the cell
interior, and normalize height and contrast.  All functions are pure.
"""

from dataclasses import dataclass, field

import numpy as np
from PIL import Image


class DegenerateFieldError(ValueError):
    """Raised when a field polygon collapses to zero area on the page."""


class EmptyCellError(ValueError):
    """Raised when the region between detected table lines is empty."""


@dataclass(frozen=True)
class Raster:
    """8-bit grayscale image; 0 is black ink, 255 is white paper."""

    pixels: np.ndarray  # (height, width) uint8

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=np.uint8)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError(f"raster must be 2-D and non-empty, got shape {px.shape}")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class FieldPolygon:
    """Approximate outline of one table field on the page."""

    vertices: tuple  # ((x, y), ...) pixel coordinates
    field_type: str = "NAME"

    def __post_init__(self):
        verts = tuple((float(x), float(y)) for x, y in self.vertices)
        if len(verts) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        object.__setattr__(self, "vertices", verts)

    def bounding_box(self):
        xs = [v[0] for v in self.vertices]
        ys = [v[1] for v in self.vertices]
        return min(xs), min(ys), max(xs), max(ys)


@dataclass(frozen=True)
class ProfileVector:
    """Ink-density sums along one axis.  axis='horizontal' profiles over
    columns (index = x), 'vertical' over rows (index = y)."""

    values: np.ndarray
    axis: str

    def __post_init__(self):
        if self.axis not in ("horizontal", "vertical"):
            raise ValueError(f"axis must be horizontal or vertical, got {self.axis!r}")
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))


@dataclass(frozen=True)
class NormalizationSpec:
    target_height: int = 128
    low_percentile: float = 0.05
    high_percentile: float = 0.95
    black_target: int = 0
    white_target: int = 255

    def __post_init__(self):
        if not (0.0 <= self.low_percentile < self.high_percentile <= 1.0):
            raise ValueError("need 0 <= low < high <= 1")
        if not self.black_target < self.white_target:
            raise ValueError("black_target must be below white_target")


def enlarge_polygon(poly: FieldPolygon, margin: float, page: Raster) -> FieldPolygon:
    """Axis-aligned bounding box of `poly` grown by `margin` on every
    side and clamped to the page.  Raises DegenerateFieldError if the
    clamped box has no area."""
    if margin < 0:
        raise ValueError("margin must be >= 0")
    x0, y0, x1, y1 = poly.bounding_box()
    x0 = max(0.0, x0 - margin)
    y0 = max(0.0, y0 - margin)
    x1 = min(float(page.width - 1), x1 + margin)
    y1 = min(float(page.height - 1), y1 + margin)
    if x1 <= x0 or y1 <= y0:
        raise DegenerateFieldError(
            f"field box degenerate after clamping: ({x0},{y0})-({x1},{y1})"
        )
    box = ((x0, y0), (x1, y0), (x1, y1), (x0, y1))
    return FieldPolygon(box, poly.field_type)


def projection_profile(r: Raster, axis: str) -> ProfileVector:
    """Ink density per column (axis='horizontal') or per row
    ('vertical'): sum of (255 - intensity)/255 over the orthogonal
    direction."""
    ink = (255.0 - r.pixels.astype(np.float64)) / 255.0
    if axis == "horizontal":
        values = ink.sum(axis=0)
    elif axis == "vertical":
        values = ink.sum(axis=1)
    else:
        raise ValueError(f"axis must be horizontal or vertical, got {axis!r}")
    return ProfileVector(values, axis)


def _smooth(values: np.ndarray, window: int) -> np.ndarray:
    if window == 1:
        return values.astype(np.float64)
    pad = window // 2
    padded = np.pad(values.astype(np.float64), pad)
    kernel = np.ones(window) / window
    return np.convolve(padded, kernel, mode="valid")


def detect_table_lines(
    p: ProfileVector,
    smoothing_window: int = 5,
    threshold_fraction: float = 0.5,
    min_separation: int = 8,
) -> list[int]:
    """Positions of ruled table lines: local maxima of the smoothed
    profile at or above threshold_fraction of its global maximum, with
    weaker peaks closer than min_separation to an accepted stronger one
    suppressed.  Returns ascending positions; empty when no ink."""
    if smoothing_window < 1 or smoothing_window % 2 == 0:
        raise ValueError("smoothing_window must be odd and >= 1")
    if not 0.0 < threshold_fraction <= 1.0:
        raise ValueError("threshold_fraction must be in (0, 1]")
    s = _smooth(p.values, smoothing_window)
    n = s.size
    peak = float(s.max(initial=0.0))
    if peak <= 0.0:
        return []
    threshold = threshold_fraction * peak

    # plateau-aware local maxima: a run of equal values counts as one
    # peak (at its center) when it is strictly above both sides
    candidates = []
    i = 0
    while i < n:
        j = i
        while j + 1 < n and s[j + 1] == s[i]:
            j += 1
        left_lower = i == 0 or s[i - 1] < s[i]
        right_lower = j == n - 1 or s[j + 1] < s[j]
        whole_profile = i == 0 and j == n - 1
        if left_lower and right_lower and not whole_profile and s[i] >= threshold:
            candidates.append(((i + j) // 2, s[i]))
        i = j + 1

    # greedy suppression, strongest first (position breaks strength ties)
    candidates.sort(key=lambda c: (-c[1], c[0]))
    accepted: list[int] = []
    for pos, _ in candidates:
        if all(abs(pos - a) >= min_separation for a in accepted):
            accepted.append(pos)
    return sorted(accepted)


def cut_cell(page: Raster, left: int, right: int, top: int, bottom: int) -> Raster:
    """Sub-raster strictly between the given line positions; the line
    pixels themselves are excluded."""
    if not (0 <= left < right < page.width and 0 <= top < bottom < page.height):
        raise ValueError(
            f"lines out of order or outside page: x {left}..{right}, y {top}..{bottom}"
        )
    interior = page.pixels[top + 1 : bottom, left + 1 : right]
    if interior.size == 0:
        raise EmptyCellError(f"no interior between x {left}..{right}, y {top}..{bottom}")
    return Raster(interior.copy())


def normalize_height(r: Raster, target_height: int) -> Raster:
    """Bilinear rescale to exactly target_height rows; width follows the
    aspect ratio (rounded, at least 1)."""
    if target_height < 1:
        raise ValueError("target_height must be >= 1")
    scale = target_height / r.height
    target_width = max(1, int(round(r.width * scale)))
    if target_height == r.height and target_width == r.width:
        return Raster(r.pixels.copy())
    out = _bilinear_resize(r.pixels.astype(np.float64), target_height, target_width)
    return Raster(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def _bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Edge-aligned bilinear interpolation (pixel centers at half
    coordinates, clamped at the borders)."""
    in_h, in_w = img.shape
    ys = (np.arange(out_h) + 0.5) * in_h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * in_w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, in_h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, in_w - 1)
    y1 = np.minimum(y0 + 1, in_h - 1)
    x1 = np.minimum(x0 + 1, in_w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = img[np.ix_(y0, x0)] * (1 - wx) + img[np.ix_(y0, x1)] * wx
    bot = img[np.ix_(y1, x0)] * (1 - wx) + img[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def normalize_contrast(r: Raster, spec: NormalizationSpec) -> Raster:
    """Linear gray-value map sending the low/high percentile intensities
    to the black/white targets, clamped to [0, 255].  Constant rasters
    map entirely to the white target."""
    px = r.pixels.astype(np.float64)
    lo = float(np.percentile(px, spec.low_percentile * 100.0))
    hi = float(np.percentile(px, spec.high_percentile * 100.0))
    if hi <= lo:
        return Raster(np.full_like(r.pixels, spec.white_target))
    scale = (spec.white_target - spec.black_target) / (hi - lo)
    mapped = (px - lo) * scale + spec.black_target
    return Raster(np.clip(np.rint(mapped), 0, 255).astype(np.uint8))


@dataclass(frozen=True)
class SegmentOptions:
    """Knobs for the polygon-to-crop pipeline."""

    margin: int = 20
    smoothing_window: int = 5
    threshold_fraction: float = 0.5
    min_separation: int = 8
    norm: NormalizationSpec = field(default_factory=NormalizationSpec)


def _nearest_line(lines: list[int], target: float, fallback: int) -> int:
    if not lines:
        return fallback
    return min(lines, key=lambda pos: (abs(pos - target), pos))


def extract_field(
    page: Raster,
    poly: FieldPolygon,
    target_height: int,
    opts: SegmentOptions = SegmentOptions(),
) -> Raster:
    """Full per-field pipeline: enlarge the polygon, find the table
    lines nearest each original polygon edge inside the enlarged box
    (box edges are the fallback when a side has no peak), cut the cell
    interior, then normalize height and contrast."""
    box = enlarge_polygon(poly, opts.margin, page)
    bx0, by0, bx1, by1 = (int(round(v)) for v in box.bounding_box())
    px0, py0, px1, py1 = poly.bounding_box()

    sub = Raster(page.pixels[by0 : by1 + 1, bx0 : bx1 + 1])
    vlines = [
        bx0 + pos
        for pos in detect_table_lines(
            projection_profile(sub, "horizontal"),
            opts.smoothing_window,
            opts.threshold_fraction,
            opts.min_separation,
        )
    ]
    hlines = [
        by0 + pos
        for pos in detect_table_lines(
            projection_profile(sub, "vertical"),
            opts.smoothing_window,
            opts.threshold_fraction,
            opts.min_separation,
        )
    ]
    left = _nearest_line(vlines, px0, bx0)
    right = _nearest_line([x for x in vlines if x > left], px1, bx1)
    top = _nearest_line(hlines, py0, by0)
    bottom = _nearest_line([y for y in hlines if y > top], py1, by1)
    if not left < right:
        left, right = bx0, bx1
    if not top < bottom:
        top, bottom = by0, by1

    cell = cut_cell(page, left, right, top, bottom)
    cell = normalize_height(cell, target_height)
    return normalize_contrast(cell, opts.norm)


def load_png(path) -> Raster:
    """Read an image file as 8-bit grayscale."""
    with Image.open(path) as im:
        return Raster(np.asarray(im.convert("L"), dtype=np.uint8))


def save_png(r: Raster, path) -> None:
    Image.fromarray(r.pixels, mode="L").save(path, format="PNG")
