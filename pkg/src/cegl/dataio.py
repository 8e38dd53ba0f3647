"""Feature-matrix and annotation I/O, weak labels, synthetic video generation.

File formats
------------
CEGF (binary feature file):
    bytes 0-3   magic ``CEGF``
    bytes 4-7   version, 32-bit little-endian unsigned (currently 1)
    bytes 8-15  frame count T, 64-bit little-endian unsigned
    bytes 16-23 feature dim d, 64-bit little-endian unsigned
    then T*d 32-bit little-endian floats, row-major. No padding, no trailer.

CSV feature file: one frame per line, d comma-separated decimal reals,
no header. Values survive a round trip to within 32-bit float rounding.

Annotations: JSON object {"video_id": str, "frame_labels": [0|1, ...]
(optional), "notes": str (optional)}.

Values are widened to float64 in memory regardless of on-disk precision.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError, TruncatedFileError
from .numerics import make_rng

CEGF_MAGIC = b"CEGF"
CEGF_VERSION = 1

#: Shortest segment the synthetic generator will plant.
MIN_SYNTH_SEGMENT_LEN = 5

#: Scale of the isotropic Gaussian the per-segment mean vectors are drawn
#: from. Change-point contrast scales with SEGMENT_MEAN_SCALE/cluster_spread,
#: abnormality contrast with abnormal_offset_norm relative to the mean norm
#: SEGMENT_MEAN_SCALE * sqrt(feature_dim).
SEGMENT_MEAN_SCALE = 0.5


@dataclass(frozen=True)
class FeatureMatrix:
    """Per-frame feature sequence for one video; row i is frame i's vector."""

    video_id: str
    values: np.ndarray  # (T, d) float64

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"feature matrix must be non-empty 2-D, got shape {v.shape}")
        if not np.isfinite(v).all():
            bad = np.argwhere(~np.isfinite(v))[0]
            raise DataError(f"non-finite feature at row {bad[0]}, col {bad[1]}")
        object.__setattr__(self, "values", v)

    @property
    def frame_count(self) -> int:
        return self.values.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Annotations:
    """Optional per-frame ground truth (1 = abnormal); used for synthesis and evaluation only."""

    video_id: str
    frame_labels: np.ndarray | None = None  # (T,) of {0,1}
    notes: str | None = None

    def __post_init__(self):
        if self.frame_labels is not None:
            labels = np.asarray(self.frame_labels, dtype=np.int64)
            if labels.ndim != 1:
                raise ValueError("frame_labels must be 1-D")
            if not np.isin(labels, (0, 1)).all():
                raise ValueError("frame_labels must contain only 0 or 1")
            object.__setattr__(self, "frame_labels", labels)


@dataclass(frozen=True)
class SynthConfig:
    """Controls for the synthetic video generator.

    Separability of abnormal frames scales with
    abnormal_offset_norm / cluster_spread.
    """

    segment_count: int
    mean_segment_len: int
    feature_dim: int
    abnormal_segment_fraction: float
    abnormal_frame_fraction: float
    cluster_spread: float
    abnormal_offset_norm: float
    seed: int

    def __post_init__(self):
        if self.segment_count < 2:
            raise ConfigError("segment_count must be at least 2")
        if self.mean_segment_len < MIN_SYNTH_SEGMENT_LEN:
            raise ConfigError(
                f"mean_segment_len must be >= {MIN_SYNTH_SEGMENT_LEN}, got {self.mean_segment_len}"
            )
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be positive")
        if not 0.0 <= self.abnormal_segment_fraction <= 1.0:
            raise ConfigError("abnormal_segment_fraction must be in [0, 1]")
        if not 0.0 < self.abnormal_frame_fraction <= 1.0:
            raise ConfigError("abnormal_frame_fraction must be in (0, 1]")
        if self.cluster_spread <= 0:
            raise ConfigError("cluster_spread must be positive")
        if self.abnormal_offset_norm < 0:
            raise ConfigError("abnormal_offset_norm must be non-negative")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")


def write_feature_matrix(m: FeatureMatrix, path, format: str = "cegf") -> None:
    """Write a feature matrix as CEGF (float32 payload) or CSV."""
    path = Path(path)
    if format == "cegf":
        header = CEGF_MAGIC + struct.pack("<I", CEGF_VERSION)
        header += struct.pack("<QQ", m.frame_count, m.feature_dim)
        payload = m.values.astype("<f4").tobytes()
        path.write_bytes(header + payload)
    elif format == "csv":
        np.savetxt(path, m.values, delimiter=",", fmt="%.9g")
    else:
        raise ConfigError(f"unknown feature file format {format!r}")


def read_feature_matrix(path, video_id: str | None = None) -> FeatureMatrix:
    """Load a CEGF or CSV feature file; format is sniffed from the magic bytes."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"feature file not found: {path}")
    raw = path.read_bytes()
    if video_id is None:
        video_id = path.stem.removesuffix(".features")
    if raw[:4] == CEGF_MAGIC:
        return _parse_cegf(raw, video_id)
    # Heuristic: binary-looking header that is not CEGF is a corrupt file,
    # anything text-like is treated as CSV.
    head = raw[:4]
    if len(head) == 4 and not _looks_textual(head):
        raise FormatError(f"bad magic {head!r}, expected {CEGF_MAGIC!r}")
    return _parse_csv(path, video_id)


def _looks_textual(head: bytes) -> bool:
    return all(b in b"0123456789+-.eE, \t\r\n" for b in head)


def _parse_cegf(raw: bytes, video_id: str) -> FeatureMatrix:
    if len(raw) < 24:
        raise TruncatedFileError(f"CEGF header truncated: {len(raw)} bytes")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CEGF_VERSION:
        raise FormatError(f"unsupported CEGF version {version}")
    t, d = struct.unpack_from("<QQ", raw, 8)
    if t < 1 or d < 1:
        raise FormatError(f"CEGF declares empty matrix ({t}x{d})")
    expected = 24 + 4 * t * d
    if len(raw) != expected:
        raise TruncatedFileError(
            f"CEGF payload length mismatch: expected {expected} bytes, got {len(raw)}"
        )
    flat = np.frombuffer(raw, dtype="<f4", offset=24)
    values = flat.astype(np.float64).reshape(t, d)
    _check_finite(values)
    return FeatureMatrix(video_id, values)


def _parse_csv(path: Path, video_id: str) -> FeatureMatrix:
    try:
        values = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"malformed CSV feature file {path}: {exc}") from exc
    _check_finite(values)
    return FeatureMatrix(video_id, values)


def _check_finite(values: np.ndarray) -> None:
    if not np.isfinite(values).all():
        r, c = np.argwhere(~np.isfinite(values))[0]
        raise DataError(f"non-finite feature at row {r}, col {c}")


def write_annotations(ann: Annotations, path) -> None:
    obj: dict = {"video_id": ann.video_id}
    if ann.frame_labels is not None:
        obj["frame_labels"] = [int(x) for x in ann.frame_labels]
    if ann.notes is not None:
        obj["notes"] = ann.notes
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_annotations(path) -> Annotations:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"annotations file not found: {path}")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed annotations JSON {path}: {exc}") from exc
    if not isinstance(obj, dict) or "video_id" not in obj:
        raise FormatError(f"annotations JSON must be an object with a video_id: {path}")
    unknown = set(obj) - {"video_id", "frame_labels", "notes"}
    if unknown:
        raise FormatError(f"unknown annotation keys {sorted(unknown)} in {path}")
    labels = obj.get("frame_labels")
    return Annotations(
        video_id=obj["video_id"],
        frame_labels=None if labels is None else np.asarray(labels, dtype=np.int64),
        notes=obj.get("notes"),
    )


def derive_segment_labels(ann: Annotations, partition) -> np.ndarray:
    """Weak segment labels: a segment is abnormal iff it holds any abnormal frame."""
    if ann.frame_labels is None:
        raise ConfigError(
            "annotations carry no frame_labels; supply weak segment labels directly"
        )
    bounds = partition.boundaries
    if bounds[-1] != len(ann.frame_labels):
        raise ValueError(
            f"partition covers [0, {bounds[-1]}) but annotations have "
            f"{len(ann.frame_labels)} frames"
        )
    labels = ann.frame_labels
    return np.array(
        [int(labels[s:e].any()) for s, e in zip(bounds[:-1], bounds[1:])],
        dtype=np.int64,
    )


def synth_video(cfg: SynthConfig, video_id: str = "synth"):
    """Generate one synthetic video with planted change points and abnormal frames.

    Each segment's frames scatter around a segment mean drawn from an
    isotropic Gaussian of scale SEGMENT_MEAN_SCALE. In abnormal segments
    a fixed per-segment
    offset of the requested norm is added to a random, not necessarily
    contiguous subset of frames, which are labelled 1. Segment lengths
    follow a shifted Poisson around mean_segment_len, clamped to
    [MIN_SYNTH_SEGMENT_LEN, 3 * mean_segment_len]. Fully deterministic
    given cfg.seed.

    Returns (FeatureMatrix, Annotations, true Partition).
    """
    from .segmentation import Partition

    rng = make_rng(cfg.seed)
    min_len = MIN_SYNTH_SEGMENT_LEN
    lengths = min_len + rng.poisson(
        cfg.mean_segment_len - min_len, size=cfg.segment_count
    )
    lengths = np.clip(lengths, min_len, 3 * cfg.mean_segment_len)
    boundaries = np.concatenate([[0], np.cumsum(lengths)])
    total = int(boundaries[-1])

    n_abnormal = int(round(cfg.abnormal_segment_fraction * cfg.segment_count))
    abnormal_segments = np.sort(
        rng.choice(cfg.segment_count, size=n_abnormal, replace=False)
    )

    means = SEGMENT_MEAN_SCALE * rng.standard_normal((cfg.segment_count, cfg.feature_dim))
    values = np.empty((total, cfg.feature_dim))
    frame_labels = np.zeros(total, dtype=np.int64)

    for s in range(cfg.segment_count):
        lo, hi = int(boundaries[s]), int(boundaries[s + 1])
        noise = rng.standard_normal((hi - lo, cfg.feature_dim))
        values[lo:hi] = means[s] + cfg.cluster_spread * noise

    for s in abnormal_segments:
        lo, hi = int(boundaries[s]), int(boundaries[s + 1])
        n = hi - lo
        n_marked = max(1, int(round(cfg.abnormal_frame_fraction * n)))
        marked = np.sort(rng.choice(n, size=n_marked, replace=False))
        direction = rng.standard_normal(cfg.feature_dim)
        norm = np.linalg.norm(direction)
        offset = (
            direction * (cfg.abnormal_offset_norm / norm)
            if norm > 0 and cfg.abnormal_offset_norm > 0
            else np.zeros(cfg.feature_dim)
        )
        values[lo + marked] += offset
        frame_labels[lo + marked] = 1

    features = FeatureMatrix(video_id, values)
    ann = Annotations(video_id, frame_labels=frame_labels)
    return features, ann, Partition(tuple(int(b) for b in boundaries))
