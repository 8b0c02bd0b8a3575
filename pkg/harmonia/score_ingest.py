"""Event-file ingestion: pitch-class frames, fermata segmentation, transposition."""

import json
import logging
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from cached_property import cached_property

from harmonia.exceptions import AlignmentError, ContractError, EventParseError, PitchRangeError
from harmonia.theory import (
    DIATONIC,
    N_PITCH_CLASSES,
    QUALITY_INDEX,
    parse_chord_label,
    parse_pitch_name,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True)
class FrameEvent:
    """One 16th-note frame: 12 pitch-class flags, an optional bass and a fermata mark."""

    pitch_classes: Tuple[int, ...]
    bass_pc: Optional[int] = None
    fermata: bool = False
    onset_index: int = 0

    def __post_init__(self) -> None:
        if len(self.pitch_classes) != N_PITCH_CLASSES or any(v not in (0, 1) for v in self.pitch_classes):
            raise ContractError(f"pitch_classes must be 12 binary flags, got {self.pitch_classes}")
        if self.bass_pc is not None and not self.pitch_classes[self.bass_pc]:
            raise ContractError(f"bass_pc {self.bass_pc} is not sounding in frame {self.onset_index}")

    @property
    def is_rest(self) -> bool:
        return not any(self.pitch_classes)

    @classmethod
    def from_pcs(cls, pcs: Iterable[int], bass_pc: Optional[int] = None, fermata: bool = False,
                 onset_index: int = 0) -> "FrameEvent":
        flags = [0] * N_PITCH_CLASSES
        for pc in pcs:
            flags[pc % N_PITCH_CLASSES] = 1
        return cls(tuple(flags), bass_pc, fermata, onset_index)

    def transposed(self, shift: int) -> "FrameEvent":
        """Move every pitch class down by ``shift`` semitones."""
        flags = tuple(np.roll(self.pitch_classes, -shift).tolist())
        bass = None if self.bass_pc is None else (self.bass_pc - shift) % N_PITCH_CLASSES
        return FrameEvent(flags, bass, self.fermata, self.onset_index)


@dataclass(frozen=True)
class EventSequence:
    """A fermata-delimited run of frames from one piece."""

    frames: Tuple[FrameEvent, ...]
    piece_id: str
    segment_index: int = 0
    shift_applied: int = 0
    key_signature: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.frames:
            raise ContractError(f"empty sequence for piece {self.piece_id!r}")
        onsets = [f.onset_index for f in self.frames]
        if any(b - a != 1 for a, b in zip(onsets, onsets[1:])):
            raise ContractError(f"onsets of {self.piece_id!r} segment {self.segment_index} are not contiguous")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def sequence_id(self) -> str:
        return f"{self.piece_id}#{self.segment_index}"

    @cached_property
    def observations(self) -> np.ndarray:
        """[L, 12] float array of pitch-class flags."""
        return np.array([f.pitch_classes for f in self.frames], dtype=np.float64)

    @property
    def bass(self) -> List[Optional[int]]:
        return [f.bass_pc for f in self.frames]


@dataclass(frozen=True)
class GoldLabel:
    key_label: Optional[str] = None
    degree_label: Optional[str] = None
    root_pc: Optional[int] = None
    quality: Optional[int] = None


@dataclass(frozen=True)
class GoldAnnotation:
    piece_id: str
    segment_index: int
    frames: Tuple[GoldLabel, ...] = field(default_factory=tuple)

    def __len__(self) -> int:
        return len(self.frames)


# transposition


def transpose(seq: EventSequence, shift: int) -> EventSequence:
    """Transpose down by ``shift``; ``shift_applied`` accumulates modulo 12."""
    shift %= N_PITCH_CLASSES
    signature = seq.key_signature
    if signature is not None:
        # 7 * 7 == 1 (mod 12): removing ``shift`` semitones removes 7 * shift sharps
        signature = (signature - 7 * shift + 5) % N_PITCH_CLASSES - 5
    return replace(
        seq,
        frames=tuple(f.transposed(shift) for f in seq.frames),
        shift_applied=(seq.shift_applied + shift) % N_PITCH_CLASSES,
        key_signature=signature,
    )


def diatonic_count(observations: np.ndarray, shift: int = 0) -> int:
    mask = np.array([((pc - shift) % N_PITCH_CLASSES) in DIATONIC for pc in range(N_PITCH_CLASSES)])
    return int(observations[:, mask].sum())


def best_normalizing_shift(seq: EventSequence) -> int:
    if seq.key_signature is not None:
        return (7 * seq.key_signature) % N_PITCH_CLASSES
    counts = [diatonic_count(seq.observations, s) for s in range(N_PITCH_CLASSES)]
    return int(np.argmax(counts))


def normalize_transposition(seq: EventSequence) -> EventSequence:
    """Transpose so the sounding flags best fit {0,2,4,5,7,9,11}; smallest shift wins ties."""
    shift = best_normalizing_shift(seq)
    return transpose(seq, shift)


# event files


def _read_json_lines(path: PathLike) -> Iterator[Tuple[int, Dict[str, Any]]]:
    with open(path) as infile:
        for line_no, raw in enumerate(infile, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as err:
                raise EventParseError(f"malformed JSON ({err.msg})", str(path), line_no) from err
            if not isinstance(obj, dict):
                raise EventParseError("expected a JSON object", str(path), line_no)
            yield line_no, obj


def _int_field(obj: Dict[str, Any], name: str, path: PathLike, line: int, required: bool = True) -> Optional[int]:
    value = obj.get(name)
    if value is None:
        if required:
            raise EventParseError(f"missing field {name!r}", str(path), line)
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise EventParseError(f"field {name!r} must be an integer, got {value!r}", str(path), line)
    return value


def _frame_pitches(obj: Dict[str, Any], path: PathLike, line: int) -> Tuple[List[int], Optional[int]]:
    """Pitch classes and the lowest MIDI pitch (when given) of one event line."""
    if "pitches" in obj:
        pitches = obj["pitches"]
        if not isinstance(pitches, list):
            raise EventParseError("'pitches' must be a list", str(path), line)
        for p in pitches:
            if isinstance(p, bool) or not isinstance(p, int) or not 0 <= p <= 127:
                raise PitchRangeError(f"MIDI pitch {p!r} outside 0-127", str(path), line)
        lowest = min(pitches) if pitches else None
        return [p % N_PITCH_CLASSES for p in pitches], lowest
    pcs = obj.get("pcs")
    if not isinstance(pcs, list):
        raise EventParseError("missing field 'pcs' (or 'pitches')", str(path), line)
    for pc in pcs:
        if isinstance(pc, bool) or not isinstance(pc, int) or not 0 <= pc < N_PITCH_CLASSES:
            raise PitchRangeError(f"pitch class {pc!r} outside 0-11", str(path), line)
    return list(pcs), None


@dataclass
class _PieceBuffer:
    frames: Dict[int, Dict[str, Any]] = field(default_factory=dict)
    key_signature: Optional[int] = None
    shift: int = 0
    # rewritten files carry both per "segment"; these override the piece-level values
    segment_signatures: Dict[int, int] = field(default_factory=dict)
    segment_shifts: Dict[int, int] = field(default_factory=dict)


def _segment(piece_id: str, buf: _PieceBuffer) -> List[EventSequence]:
    first, last = min(buf.frames), max(buf.frames)
    frames: List[FrameEvent] = []
    for onset in range(first, last + 1):
        entry = buf.frames.get(onset)
        if entry is None:
            frames.append(FrameEvent.from_pcs((), None, False, onset))
            continue
        frames.append(FrameEvent.from_pcs(entry["pcs"], entry["bass"], entry["fermata"], onset))

    segments: List[EventSequence] = []
    start = 0
    for i, frame in enumerate(frames):
        run_ends = frame.fermata and (i + 1 == len(frames) or not frames[i + 1].fermata)
        if run_ends:
            segments.append(frames[start:i + 1])
            start = i + 1
    if start < len(frames):
        segments.append(frames[start:])
    return [
        EventSequence(
            tuple(chunk),
            piece_id,
            index,
            buf.segment_shifts.get(index, buf.shift),
            buf.segment_signatures.get(index, buf.key_signature),
        )
        for index, chunk in enumerate(segments)
    ]


def parse_event_file(path: PathLike) -> List[EventSequence]:
    """Read a JSON-lines event file into one sequence per (piece, fermata segment)."""
    pieces: "OrderedDict[str, _PieceBuffer]" = OrderedDict()
    for line, obj in _read_json_lines(path):
        piece = obj.get("piece")
        if not isinstance(piece, str):
            raise EventParseError("missing string field 'piece'", str(path), line)
        onset = _int_field(obj, "frame", path, line)
        if onset < 0:  # type: ignore[operator]
            raise EventParseError(f"negative frame {onset}", str(path), line)
        pcs, lowest = _frame_pitches(obj, path, line)
        bass = _int_field(obj, "bass_pc", path, line, required=False)
        if bass is not None and not 0 <= bass < N_PITCH_CLASSES:
            raise PitchRangeError(f"bass_pc {bass} outside 0-11", str(path), line)
        if bass is not None and bass not in pcs:
            raise EventParseError(f"bass_pc {bass} is not among the sounding pitch classes", str(path), line)
        fermata = obj.get("fermata", False)
        if not isinstance(fermata, bool):
            raise EventParseError("'fermata' must be a boolean", str(path), line)

        buf = pieces.setdefault(piece, _PieceBuffer())
        segment = _int_field(obj, "segment", path, line, required=False)
        signature = _int_field(obj, "key_signature", path, line, required=False)
        if signature is not None:
            buf.key_signature = signature
            if segment is not None:
                buf.segment_signatures[segment] = signature
        shift = _int_field(obj, "shift", path, line, required=False)
        if shift is not None:
            buf.shift = shift % N_PITCH_CLASSES
            if segment is not None:
                buf.segment_shifts[segment] = buf.shift

        # simultaneities split over several lines share one frame
        entry = buf.frames.setdefault(
            onset, {"pcs": set(), "bass": None, "lowest": None, "explicit": False, "fermata": False}  # type: ignore[arg-type]
        )
        entry["pcs"].update(pcs)
        entry["fermata"] = entry["fermata"] or fermata
        if bass is not None:
            entry["bass"], entry["explicit"] = bass, True
        elif lowest is not None and not entry["explicit"]:
            if entry["lowest"] is None or lowest < entry["lowest"]:
                entry["lowest"] = lowest
                entry["bass"] = lowest % N_PITCH_CLASSES

    sequences: List[EventSequence] = []
    for piece_id, buf in pieces.items():
        segments = _segment(piece_id, buf)
        logger.debug(f"Piece {piece_id!r}: {sum(len(s) for s in segments)} frames in {len(segments)} segments")
        sequences.extend(segments)
    logger.info(f"Parsed {len(sequences)} sequences from {len(pieces)} pieces in {path}")
    return sequences


def event_records(seq: EventSequence) -> Iterator[Dict[str, Any]]:
    for frame in seq.frames:
        record: Dict[str, Any] = {
            "bass_pc": frame.bass_pc,
            "fermata": frame.fermata,
            "frame": frame.onset_index,
            "pcs": [pc for pc, on in enumerate(frame.pitch_classes) if on],
            "piece": seq.piece_id,
            "segment": seq.segment_index,
            "shift": seq.shift_applied,
        }
        if seq.key_signature is not None:
            record["key_signature"] = seq.key_signature
        yield record


def write_event_file(sequences: Sequence[EventSequence], path: PathLike) -> Path:
    """Write sequences back in the event format; re-reading yields the same sequences."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as outfile:
        for seq in sequences:
            for record in event_records(seq):
                outfile.write(json.dumps(record, sort_keys=True) + "\n")
    return path


# gold annotations


def _gold_label(raw: Dict[str, Any], path: PathLike, line: int) -> GoldLabel:
    if not isinstance(raw, dict):
        raise EventParseError("each label must be an object", str(path), line)
    root_pc: Optional[int] = None
    quality: Optional[int] = None
    if raw.get("chord"):
        root_pc, q = parse_chord_label(str(raw["chord"]))
        quality = QUALITY_INDEX[q]
    if raw.get("root") is not None:
        root = raw["root"]
        root_pc = root % N_PITCH_CLASSES if isinstance(root, int) else parse_pitch_name(str(root))
    if raw.get("quality") is not None:
        if raw["quality"] not in QUALITY_INDEX:
            raise EventParseError(f"unknown quality {raw['quality']!r}", str(path), line)
        quality = QUALITY_INDEX[raw["quality"]]
    return GoldLabel(raw.get("key"), raw.get("rn"), root_pc, quality)


def read_gold_labels(path: PathLike) -> "OrderedDict[str, Dict[int, GoldLabel]]":
    pieces: "OrderedDict[str, Dict[int, GoldLabel]]" = OrderedDict()
    for line, obj in _read_json_lines(path):
        piece = obj.get("piece")
        if not isinstance(piece, str):
            raise EventParseError("missing string field 'piece'", str(path), line)
        onset = _int_field(obj, "frame", path, line)
        labels = obj.get("labels")
        if not isinstance(labels, list) or not labels:
            raise EventParseError("'labels' must be a non-empty list", str(path), line)
        # several interpretations of one chord: the last one is kept
        pieces.setdefault(piece, {})[onset] = _gold_label(labels[-1], path, line)  # type: ignore[index]
    return pieces


def parse_gold_file(path: PathLike, sequences: Optional[Sequence[EventSequence]] = None) -> List[GoldAnnotation]:
    """Read gold labels; with ``sequences`` the result is aligned one-to-one with them."""
    pieces = read_gold_labels(path)
    if sequences is None:
        return [
            GoldAnnotation(piece_id, 0, tuple(labels[k] for k in sorted(labels)))
            for piece_id, labels in pieces.items()
        ]

    by_piece: "OrderedDict[str, List[EventSequence]]" = OrderedDict()
    for seq in sequences:
        by_piece.setdefault(seq.piece_id, []).append(seq)

    annotations: List[GoldAnnotation] = []
    for piece_id, segs in by_piece.items():
        labels = pieces.get(piece_id)
        if labels is None:
            raise AlignmentError(f"no gold labels for piece {piece_id!r}", piece_id)
        n_events = sum(len(s) for s in segs)
        if len(labels) != n_events:
            raise AlignmentError(
                f"gold for piece {piece_id!r} has {len(labels)} frames, events have {n_events}", piece_id
            )
        for seq in segs:
            missing = [f.onset_index for f in seq.frames if f.onset_index not in labels]
            if missing:
                raise AlignmentError(
                    f"gold for piece {piece_id!r} lacks frame {missing[0]}", piece_id
                )
            annotations.append(
                GoldAnnotation(piece_id, seq.segment_index, tuple(labels[f.onset_index] for f in seq.frames))
            )
    return annotations


# corpus splits


def split_folds(
    sequences: Sequence[EventSequence], n_folds: int = 10, test_fold: int = 0, seed: int = 123
) -> Tuple[List[EventSequence], List[EventSequence], List[EventSequence]]:
    """Piece-level k-fold split: ``test_fold`` for testing, the next fold for development."""
    if n_folds < 3:
        raise ContractError(f"need at least 3 folds, got {n_folds}")
    if not 0 <= test_fold < n_folds:
        raise ContractError(f"test_fold {test_fold} outside 0..{n_folds - 1}")
    pieces = list(OrderedDict.fromkeys(s.piece_id for s in sequences))
    order = np.random.default_rng(seed).permutation(len(pieces))
    fold_of = {pieces[idx]: rank % n_folds for rank, idx in enumerate(order)}
    dev_fold = (test_fold + 1) % n_folds
    train, dev, test = [], [], []
    for seq in sequences:
        fold = fold_of[seq.piece_id]
        if fold == test_fold:
            test.append(seq)
        elif fold == dev_fold:
            dev.append(seq)
        else:
            train.append(seq)
    return train, dev, test
