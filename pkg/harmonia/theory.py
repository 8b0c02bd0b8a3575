"""Fixed music-theory vocabulary: dimensions, qualities, names and label parsing."""

import re
from typing import Dict, Optional, Tuple

from harmonia.exceptions import GoldLabelError

N_PITCH_CLASSES = 12
N_ROOTS = 13
REST_ROOT = 12
N_MODES = 2
N_SHIFTS = 12
N_KEYS = N_MODES * N_SHIFTS
MAX_DURATION = 16

DIATONIC = frozenset({0, 2, 4, 5, 7, 9, 11})

QUALITY_LABELS: Tuple[str, ...] = ("M", "m", "d", "7", "M7", "m7", "d7")
N_QUALITIES = len(QUALITY_LABELS)
QUALITY_INDEX: Dict[str, int] = {q: i for i, q in enumerate(QUALITY_LABELS)}
REST_LABEL = "Rest"

# intervals above the root, per quality
CHORD_TONES: Dict[str, Tuple[int, ...]] = {
    "M": (0, 4, 7),
    "m": (0, 3, 7),
    "d": (0, 3, 6),
    "7": (0, 4, 7, 10),
    "M7": (0, 4, 7, 11),
    "m7": (0, 3, 7, 10),
    "d7": (0, 3, 6, 9),
}
MAJOR_QUALITIES = frozenset({"M", "7", "M7"})
DIMINISHED_QUALITIES = frozenset({"d", "d7"})
SEVENTH_QUALITIES = frozenset({"7", "M7", "m7", "d7"})

NOTE_NAMES: Tuple[str, ...] = ("C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B")
CHORD_SUFFIX: Dict[str, str] = {
    "M": "",
    "m": "m",
    "d": "dim",
    "7": "7",
    "M7": "maj7",
    "m7": "m7",
    "d7": "dim7",
}

_LETTER_PC = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}
_NAME_RE = re.compile(r"^([A-Ga-g])([#b\-]*)(.*)$")
_SUFFIX_QUALITY = {
    "": "M",
    "maj": "M",
    "M": "M",
    "m": "m",
    "min": "m",
    "dim": "d",
    "o": "d",
    "7": "7",
    "dom7": "7",
    "maj7": "M7",
    "M7": "M7",
    "m7": "m7",
    "min7": "m7",
    "dim7": "d7",
    "o7": "d7",
}


def key_index(mode: int, shift: int) -> int:
    return mode * N_SHIFTS + shift


def key_parts(key: int) -> Tuple[int, int]:
    """Global key id -> (mode, shift)."""
    return divmod(key, N_SHIFTS)


def _split_name(token: str) -> Tuple[int, str, bool]:
    match = _NAME_RE.match(token.strip())
    if not match:
        raise GoldLabelError(token)
    letter, accidentals, rest = match.groups()
    pc = _LETTER_PC[letter.upper()]
    for acc in accidentals:
        pc += 1 if acc == "#" else -1
    return pc % N_PITCH_CLASSES, rest, letter.islower()


def parse_pitch_name(token: str) -> int:
    pc, rest, _ = _split_name(token)
    if rest:
        raise GoldLabelError(token, "trailing characters in pitch name")
    return pc


def parse_key_label(token: str) -> Tuple[int, bool]:
    """``"F#m"`` -> (6, True); ``"Eb"`` -> (3, False); a lowercase letter also means minor."""
    pc, rest, lower = _split_name(token)
    rest = rest.strip()
    if rest in ("m", "min", "minor"):
        return pc, True
    if rest in ("", "M", "maj", "major"):
        return pc, lower
    raise GoldLabelError(token, "unparseable key")


def parse_chord_label(token: str) -> Tuple[int, str]:
    """``"F#m7"`` -> (6, "m7")."""
    pc, rest, _ = _split_name(token)
    quality = _SUFFIX_QUALITY.get(rest.strip())
    if quality is None:
        raise GoldLabelError(token, "unknown chord quality")
    return pc, quality


def quality_label(index: Optional[int]) -> str:
    return REST_LABEL if index is None else QUALITY_LABELS[index]
