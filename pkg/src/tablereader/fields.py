"""The five shipped field types: alphabets, input heights, decoding
parameters, and ground-truth normalization.

Alphabet sizes including the garbage symbol are 56 (NAME), 56
(RELATION), 25 (AGE), 7 (MARITAL) and 55 (BIRTHPLACE).  AGE treats each
fraction n/12 as a single symbol, so "4/12" is one token.
"""

import string

from .decode import DecodeParams
from .netcore import Alphabet

FIELD_TYPES = ("NAME", "RELATION", "AGE", "MARITAL", "BIRTHPLACE")

_LETTERS = tuple(string.ascii_uppercase) + tuple(string.ascii_lowercase)
_FRACTIONS = tuple(f"{n}/12" for n in range(13))

_ALPHABETS = {
    "NAME": Alphabet((" ", "'", "_") + _LETTERS),
    "RELATION": Alphabet((" ", "-", "_") + _LETTERS),
    "AGE": Alphabet((" ",) + tuple(string.digits) + _FRACTIONS),
    "MARITAL": Alphabet(("S", "M", "W", "D", "C", "V")),
    "BIRTHPLACE": Alphabet((" ", "-") + _LETTERS),
}

# crop heights the networks were built for
INPUT_HEIGHTS = {
    "NAME": 128,
    "RELATION": 128,
    "AGE": 128,
    "MARITAL": 128,
    "BIRTHPLACE": 96,
}

# committee sizes and per-field decoding weights; NAME decodes its two
# words with different weights
COMMITTEE_SIZES = {
    "NAME": 3,
    "RELATION": 2,
    "AGE": 1,
    "MARITAL": 1,
    "BIRTHPLACE": 2,
}

DECODE_PARAMS = {
    "NAME_FAMILY": DecodeParams(alpha=0.50, beta=0.50),
    "NAME_GIVEN": DecodeParams(alpha=0.25, beta=0.25),
    "RELATION": DecodeParams(alpha=1.00, beta=0.00),
    "AGE": DecodeParams(alpha=0.75, beta=0.25),
    "MARITAL": DecodeParams(alpha=0.75, beta=0.25),
    "BIRTHPLACE": DecodeParams(alpha=1.00, beta=0.00),
}

# in raw ground truth a literal "=" marks a repeated family name; the
# canonical encoding is the underscore ditto symbol
RAW_DITTO = "="
DITTO = "_"


class TranscriptError(ValueError):
    """Raised when a transcript contains a character outside its field
    alphabet."""

    def __init__(self, field_type: str, offending: str):
        self.field_type = field_type
        self.offending = offending
        super().__init__(f"character {offending!r} not allowed in {field_type} transcripts")


def field_alphabet(field_type: str) -> Alphabet:
    try:
        return _ALPHABETS[field_type]
    except KeyError:
        raise ValueError(f"unknown field type {field_type!r}") from None


def gt_normalize(field_type: str, raw: str) -> str:
    """Canonicalize a raw transcript: NAME ditto marks become "_", AGE
    fractions must tokenize to single symbols, and every character must
    lie in the field alphabet (TranscriptError otherwise)."""
    alphabet = field_alphabet(field_type)
    text = raw.strip()
    if field_type == "NAME":
        text = text.replace(RAW_DITTO, DITTO)
    try:
        alphabet.tokenize(text)
    except ValueError:
        for ch in text:
            if ch not in alphabet:
                raise TranscriptError(field_type, ch) from None
        raise
    return text
