"""On-disk formats: feature matrices, trial lists, dataset manifests.

Feature files carry one real matrix: magic ``AVF1``, two little-endian u32
extents (rows, cols), then rows*cols IEEE-754 single-precision little-endian
values in row-major order.  Values are widened to double precision in memory.
One file per modality per utterance: ``<id>.audio.avf`` / ``<id>.visual.avf``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

FEATURE_MAGIC = b"AVF1"
_HEADER = struct.Struct("<4sII")

# Guard against absurd headers before attempting a huge allocation.
_MAX_ELEMENTS = 1 << 31


class FeatureFileError(IOError):
    """Base class for feature-file format violations."""


class BadMagicError(FeatureFileError):
    """File does not start with the expected magic bytes."""


class TruncatedPayloadError(FeatureFileError):
    """Payload shorter than the extents in the header declare."""


class ExtentError(FeatureFileError):
    """Header extents are zero or overflow sane limits."""


def save_features(path, matrix: np.ndarray) -> None:
    """Write a rank-2 real matrix as a single-precision feature file."""
    arr = np.asarray(matrix, dtype=np.float64)
    if arr.ndim != 2:
        raise FeatureFileError(f"feature matrix must be rank 2, got shape {arr.shape}")
    rows, cols = arr.shape
    payload = arr.astype("<f4").tobytes(order="C")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(FEATURE_MAGIC, rows, cols))
        fh.write(payload)


def load_features(path) -> np.ndarray:
    """Read a feature file back as float64, validating magic, extents, payload."""
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: file shorter than header")
    magic, rows, cols = _HEADER.unpack_from(blob)
    if magic != FEATURE_MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}")
    if rows == 0 or cols == 0 or rows * cols > _MAX_ELEMENTS:
        raise ExtentError(f"{path}: unusable extents {rows}x{cols}")
    expected = _HEADER.size + 4 * rows * cols
    if len(blob) < expected:
        raise TruncatedPayloadError(
            f"{path}: header declares {rows}x{cols} values but payload is short"
        )
    if len(blob) > expected:
        raise FeatureFileError(f"{path}: {len(blob) - expected} trailing bytes")
    values = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size)
    return values.astype(np.float64).reshape(rows, cols)


# ---------------------------------------------------------------------------
# Trial lists
# ---------------------------------------------------------------------------


class TrialParseError(ValueError):
    """Malformed trial-list line; message carries the line number."""


@dataclass(frozen=True)
class TrialPair:
    """One verification trial: same-speaker (target) or not."""

    is_target: bool
    enroll_id: str
    test_id: str


def parse_trial_list(path) -> list[TrialPair]:
    """Parse `label enroll_id test_id` lines, label 1 = target, 0 = nontarget."""
    trials = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3:
                raise TrialParseError(f"{path}: line {lineno}: expected 3 fields, got {len(parts)}")
            label, enroll_id, test_id = parts
            if label not in ("0", "1"):
                raise TrialParseError(f"{path}: line {lineno}: label must be 0 or 1, got {label!r}")
            trials.append(TrialPair(label == "1", enroll_id, test_id))
    return trials


def write_trial_list(path, trials) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in trials:
            fh.write(f"{int(t.is_target)} {t.enroll_id} {t.test_id}\n")


# ---------------------------------------------------------------------------
# Dataset manifest and loading
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    speaker_id: str
    split: str  # "train" or "eval"


@dataclass
class Utterance:
    """Per-segment features of both modalities for one utterance."""

    utt_id: str
    speaker_id: str
    audio: np.ndarray   # audio_dim x segments
    visual: np.ndarray  # visual_dim x segments


def write_manifest(path, entries) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(f"{e.utt_id}\t{e.speaker_id}\t{e.split}\n")


def read_manifest(path) -> list[ManifestEntry]:
    entries = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[2] not in ("train", "eval"):
                raise TrialParseError(f"{path}: line {lineno}: malformed manifest row")
            if parts[0] in seen:
                raise TrialParseError(f"{path}: line {lineno}: duplicate utterance id {parts[0]!r}")
            seen.add(parts[0])
            entries.append(ManifestEntry(*parts))
    return entries


def load_dataset(data_dir) -> dict[str, Utterance]:
    """Load every manifest utterance's feature pair; both modalities must agree on segments."""
    data_dir = Path(data_dir)
    utterances = {}
    for entry in read_manifest(data_dir / "manifest.tsv"):
        audio = load_features(data_dir / "feats" / f"{entry.utt_id}.audio.avf")
        visual = load_features(data_dir / "feats" / f"{entry.utt_id}.visual.avf")
        if audio.shape[1] != visual.shape[1]:
            raise FeatureFileError(
                f"{entry.utt_id}: segment counts disagree ({audio.shape[1]} vs {visual.shape[1]})"
            )
        utterances[entry.utt_id] = Utterance(entry.utt_id, entry.speaker_id, audio, visual)
    return utterances


def manifest_entries(data_dir) -> list[ManifestEntry]:
    return read_manifest(Path(data_dir) / "manifest.tsv")
