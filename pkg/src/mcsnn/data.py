"""Signal ingest: raw physiological streams to windowed, labeled datasets.

Streams arrive as (value, label) series at a known sample rate. The pipeline
is: load -> normalize -> downsample -> binarize labels -> window -> fuse ->
split. Windows with mixed or dropped labels are discarded, so every dataset
row is a clean [0,1]-valued vector with a binary label.
"""

from __future__ import annotations

import csv
import json
import math
import pickle
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# Label sentinel for samples that must not survive windowing (unlabeled rows,
# transition/meditation segments, anything outside the binary task).
DROP_LABEL = -1

MODALITIES = ("eda", "bvp", "temp", "acc", "synthetic")

DATASET_MAGIC = b"MCQD"
DATASET_VERSION = 1


@dataclass
class RawRecording:
    """A single-modality value stream with per-sample integer labels."""

    values: np.ndarray
    labels: np.ndarray
    modality: str = "synthetic"
    sample_rate_hz: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.values.ndim != 1 or self.labels.ndim != 1:
            raise ValueError("recording values and labels must be 1-D")
        if len(self.values) != len(self.labels):
            raise ValueError(
                f"values ({len(self.values)}) and labels ({len(self.labels)}) "
                "must have equal length"
            )
        if self.modality not in MODALITIES:
            raise ValueError(f"unknown modality {self.modality!r}")
        if not self.sample_rate_hz > 0:
            raise ValueError("sample_rate_hz must be positive")

    def __len__(self):
        return len(self.values)


@dataclass
class WindowedDataset:
    """Fixed-length windows with one binary label each.

    provenance records, per fused part, the source modality and its segment
    length inside each window; feature columns are the concatenation of the
    segments in provenance order.
    """

    windows: np.ndarray
    labels: np.ndarray
    provenance: list[tuple[str, int]] = field(default_factory=list)

    def __post_init__(self):
        self.windows = np.asarray(self.windows, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.windows.ndim != 2:
            raise ValueError("windows must be a 2-D array")
        if len(self.windows) != len(self.labels):
            raise ValueError("windows and labels must have equal length")
        if self.windows.size and (
            self.windows.min() < 0.0 or self.windows.max() > 1.0
        ):
            raise ValueError("window values must lie in [0, 1]")
        if self.labels.size and not np.isin(self.labels, (0, 1)).all():
            raise ValueError("window labels must be 0 or 1")
        if not self.provenance:
            self.provenance = [("synthetic", self.window_len)]
        if sum(seg for _, seg in self.provenance) != self.window_len:
            raise ValueError("provenance segment lengths must sum to window_len")

    @property
    def n_windows(self) -> int:
        return len(self.windows)

    @property
    def window_len(self) -> int:
        return self.windows.shape[1] if self.windows.ndim == 2 else 0


@dataclass
class SplitDataset:
    train: WindowedDataset
    test: WindowedDataset
    seed: int


# ---------------------------------------------------------------------------
# Loading and per-stream transforms
# ---------------------------------------------------------------------------

def load_recording(path, format="csv", *, modality="synthetic",
                   sample_rate_hz=1.0) -> RawRecording:
    """Read a recording from disk.

    The csv format has a `value,label` header; rows with an empty label cell
    get DROP_LABEL. Stream metadata (modality, rate) is not stored in the
    file and comes from the caller, normally via the ingest manifest.
    """
    if format != "csv":
        raise ValueError(f"unsupported recording format {format!r}")
    values, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:2]] != ["value", "label"]:
            raise ValueError(f"{path}: expected 'value,label' header")
        for row in reader:
            if not row or not row[0].strip():
                continue
            values.append(float(row[0]))
            cell = row[1].strip() if len(row) > 1 else ""
            labels.append(int(cell) if cell else DROP_LABEL)
    return RawRecording(np.array(values), np.array(labels),
                        modality=modality, sample_rate_hz=sample_rate_hz)


def normalize(rec: RawRecording) -> RawRecording:
    """Min-max normalize values to [0, 1]; a constant stream maps to zeros."""
    lo, hi = rec.values.min(), rec.values.max()
    if hi > lo:
        vals = (rec.values - lo) / (hi - lo)
    else:
        vals = np.zeros_like(rec.values)
    return RawRecording(vals, rec.labels.copy(), rec.modality, rec.sample_rate_hz)


def _majority(block: np.ndarray) -> int:
    # deterministic tie-break: np.unique sorts, argmax takes the first max,
    # so the lowest label value wins ties
    uniq, counts = np.unique(block, return_counts=True)
    return int(uniq[np.argmax(counts)])


def downsample(rec: RawRecording, factor: int) -> RawRecording:
    """Reduce rate by an integer factor: block-mean values, majority labels.

    A trailing partial block is dropped.
    """
    if factor < 1 or int(factor) != factor:
        raise ValueError("downsample factor must be a positive integer")
    factor = int(factor)
    if factor == 1:
        return RawRecording(rec.values.copy(), rec.labels.copy(),
                            rec.modality, rec.sample_rate_hz)
    n = len(rec) // factor
    vals = rec.values[: n * factor].reshape(n, factor).mean(axis=1)
    lab_blocks = rec.labels[: n * factor].reshape(n, factor)
    labs = np.array([_majority(b) for b in lab_blocks], dtype=np.int64)
    return RawRecording(vals, labs, rec.modality, rec.sample_rate_hz / factor)


def binarize_labels(rec: RawRecording) -> RawRecording:
    """Map task labels to binary: 2 (stress) -> 1, {0, 1} -> 0, rest dropped.

    Raw protocol labels 0 (baseline-ish/undefined) and 1 (baseline) plus the
    amusement condition folded upstream all count as non-stress; transition
    and meditation segments fall through to DROP_LABEL.
    """
    labs = np.full_like(rec.labels, DROP_LABEL)
    labs[rec.labels == 2] = 1
    labs[(rec.labels == 0) | (rec.labels == 1)] = 0
    return RawRecording(rec.values.copy(), labs, rec.modality, rec.sample_rate_hz)


def window(rec: RawRecording, size: int, overlap: float) -> WindowedDataset:
    """Slice a recording into fixed windows with fractional overlap.

    stride = size * (1 - overlap) and must come out a positive integer.
    Windows whose labels are not all equal, or contain DROP_LABEL, are
    skipped. Values must already be normalized to [0, 1].
    """
    if size < 1:
        raise ValueError("window size must be >= 1")
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must lie in [0, 1)")
    stride_f = size * (1.0 - overlap)
    stride = round(stride_f)
    if stride < 1 or abs(stride_f - stride) > 1e-9:
        raise ValueError(
            f"size {size} with overlap {overlap} gives non-integer stride {stride_f}"
        )
    wins, labs = [], []
    for start in range(0, len(rec) - size + 1, stride):
        wl = rec.labels[start : start + size]
        first = wl[0]
        if first == DROP_LABEL or not (wl == first).all():
            continue
        wins.append(rec.values[start : start + size])
        labs.append(first)
    wins = np.array(wins) if wins else np.zeros((0, size))
    return WindowedDataset(wins, np.array(labs, dtype=np.int64),
                           provenance=[(rec.modality, size)])


def fuse_early(parts: list[WindowedDataset]) -> WindowedDataset:
    """Concatenate index-aligned datasets along the feature axis.

    Parts must have identical window counts and elementwise-equal labels;
    rate matching upstream is what makes index alignment meaningful.
    """
    if not parts:
        raise ValueError("fuse_early needs at least one part")
    n = parts[0].n_windows
    for p in parts[1:]:
        if p.n_windows != n:
            raise ValueError("fused parts must have equal window counts")
        if not np.array_equal(p.labels, parts[0].labels):
            raise ValueError("fused parts must agree on every label")
    windows = np.concatenate([p.windows for p in parts], axis=1)
    prov = [entry for p in parts for entry in p.provenance]
    return WindowedDataset(windows, parts[0].labels.copy(), provenance=prov)


def split(ds: WindowedDataset, train_fraction: float, seed: int) -> SplitDataset:
    """Deterministic shuffled split; train gets floor(n * fraction) windows."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    order = rng.permutation(ds.n_windows)
    n_train = int(math.floor(ds.n_windows * train_fraction))
    tr, te = order[:n_train], order[n_train:]
    make = lambda idx: WindowedDataset(
        ds.windows[idx], ds.labels[idx], provenance=list(ds.provenance))
    return SplitDataset(make(tr), make(te), seed)


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def synth_dataset(n_windows: int, window_len: int, seed: int) -> WindowedDataset:
    """Generate a balanced two-class synthetic dataset.

    Class 1 windows carry a slow-rising baseline plus a handful of burst
    pulses (fast rise, exponential decay); class 0 windows are flat with
    small noise. Amplitudes sit close to the rate-coding noise floor so
    that spike-encoded classification is discriminative but not trivial.
    Values are clamped to [0, 1]; class-1 windows have a reliably higher
    mean. Fully determined by the seed.
    """
    if n_windows < 2:
        raise ValueError("need at least 2 windows")
    if window_len < 8:
        raise ValueError("window_len must be >= 8")
    rng = np.random.default_rng(seed)
    n_pos = n_windows // 2
    labels = np.zeros(n_windows, dtype=np.int64)
    labels[:n_pos] = 1
    # interleave classes so any contiguous slice is roughly balanced
    order = np.argsort(np.tile(np.arange((n_windows + 1) // 2), 2)[:n_windows],
                       kind="stable")
    labels = labels[order]

    t = np.arange(window_len) / window_len
    windows = np.empty((n_windows, window_len))
    for i in range(n_windows):
        w = np.full(window_len, 0.05)
        if labels[i] == 1:
            w = w + rng.uniform(0.03, 0.05) * t
            for _ in range(rng.integers(2, 5)):
                center = rng.integers(0, window_len)
                amp = rng.uniform(0.05, 0.10)
                tau = rng.uniform(0.015, 0.05) * window_len
                k = np.arange(window_len) - center
                w = w + amp * np.exp(-np.maximum(k, 0) / tau) * (k >= 0)
        w = w + rng.normal(0.0, 0.01, size=window_len)
        windows[i] = np.clip(w, 0.0, 1.0)
    return WindowedDataset(windows, labels,
                           provenance=[("synthetic", window_len)])


# ---------------------------------------------------------------------------
# Dataset container
# ---------------------------------------------------------------------------

def write_dataset(ds: WindowedDataset, path) -> None:
    """Serialize to the binary dataset container.

    Layout (little-endian): magic 'MCQD', version u16, window_len u32,
    n_windows u32, provenance count u16 then per entry modality length u8 +
    utf-8 bytes + segment_len u32, then per window window_len float32 values
    followed by one label byte.
    """
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<HII", DATASET_VERSION, ds.window_len, ds.n_windows))
        fh.write(struct.pack("<H", len(ds.provenance)))
        for modality, seg in ds.provenance:
            enc = modality.encode("utf-8")
            fh.write(struct.pack("<B", len(enc)))
            fh.write(enc)
            fh.write(struct.pack("<I", seg))
        for i in range(ds.n_windows):
            fh.write(ds.windows[i].astype("<f4").tobytes())
            fh.write(struct.pack("<B", int(ds.labels[i])))


def read_dataset(path) -> WindowedDataset:
    """Inverse of write_dataset. Raises ValueError on a malformed container."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != DATASET_MAGIC:
        raise ValueError(f"{path}: not a dataset container (bad magic)")
    off = 4
    version, window_len, n_windows = struct.unpack_from("<HII", blob, off)
    off += 10
    if version != DATASET_VERSION:
        raise ValueError(f"{path}: unsupported dataset version {version}")
    (n_prov,) = struct.unpack_from("<H", blob, off)
    off += 2
    prov = []
    for _ in range(n_prov):
        (mlen,) = struct.unpack_from("<B", blob, off)
        off += 1
        modality = blob[off : off + mlen].decode("utf-8")
        off += mlen
        (seg,) = struct.unpack_from("<I", blob, off)
        off += 4
        prov.append((modality, seg))
    row = 4 * window_len + 1
    need = off + row * n_windows
    if len(blob) < need:
        raise ValueError(f"{path}: truncated dataset container")
    windows = np.empty((n_windows, window_len))
    labels = np.empty(n_windows, dtype=np.int64)
    for i in range(n_windows):
        windows[i] = np.frombuffer(blob, dtype="<f4", count=window_len, offset=off)
        off += 4 * window_len
        labels[i] = blob[off]
        off += 1
    return WindowedDataset(windows, labels, provenance=prov)


# ---------------------------------------------------------------------------
# Ingest manifest
# ---------------------------------------------------------------------------

def load_manifest(path) -> dict:
    """Parse and validate an ingest manifest (JSON).

    Either {"synthetic": {"n_windows", "window_len", "seed"}} or
    {"window_size", "overlap", "streams": [{"path", "format", "modality",
    "sample_rate_hz", "downsample_factor"}, ...]}.
    """
    with open(path) as fh:
        cfg = json.load(fh)
    if "synthetic" in cfg:
        syn = cfg["synthetic"]
        for key in ("n_windows", "window_len", "seed"):
            if key not in syn:
                raise ValueError(f"manifest synthetic block missing {key!r}")
        return cfg
    if "streams" not in cfg or not cfg["streams"]:
        raise ValueError("manifest needs a non-empty 'streams' list or 'synthetic'")
    for key in ("window_size", "overlap"):
        if key not in cfg:
            raise ValueError(f"manifest missing {key!r}")
    base = Path(path).parent
    for stream in cfg["streams"]:
        if "path" not in stream:
            raise ValueError("each manifest stream needs a 'path'")
        stream["path"] = str((base / stream["path"]).resolve())
    return cfg


def run_ingest(manifest: dict) -> WindowedDataset:
    """Execute the ingest pipeline described by a parsed manifest."""
    if "synthetic" in manifest:
        syn = manifest["synthetic"]
        return synth_dataset(int(syn["n_windows"]), int(syn["window_len"]),
                             int(syn["seed"]))
    parts = []
    for stream in manifest["streams"]:
        rec = load_recording(
            stream["path"], stream.get("format", "csv"),
            modality=stream.get("modality", "synthetic"),
            sample_rate_hz=float(stream.get("sample_rate_hz", 1.0)))
        rec = binarize_labels(rec) if stream.get("binarize", True) else rec
        rec = downsample(rec, int(stream.get("downsample_factor", 1)))
        rec = normalize(rec)
        parts.append(window(rec, int(manifest["window_size"]),
                            float(manifest["overlap"])))
    return fuse_early(parts)


# ---------------------------------------------------------------------------
# WESAD subject files (optional; only used when the corpus is present)
# ---------------------------------------------------------------------------

def load_wesad_subject(pkl_path) -> dict[str, RawRecording]:
    """Load chest and wrist EDA streams from one WESAD subject pickle.

    Returns {'chest_eda': 700 Hz recording, 'wrist_eda': 4 Hz recording},
    both carrying the protocol labels (wrist labels are majority-downsampled
    from the 700 Hz label track by factor 175).
    """
    with open(pkl_path, "rb") as fh:
        subject = pickle.load(fh, encoding="latin1")
    labels = np.asarray(subject["label"], dtype=np.int64).ravel()
    chest = np.asarray(subject["signal"]["chest"]["EDA"], dtype=np.float64).ravel()
    wrist = np.asarray(subject["signal"]["wrist"]["EDA"], dtype=np.float64).ravel()
    n = min(len(chest), len(labels))
    chest_rec = RawRecording(chest[:n], labels[:n], "eda", 700.0)
    lab_rec = downsample(RawRecording(np.zeros(n), labels[:n], "eda", 700.0), 175)
    m = min(len(wrist), len(lab_rec))
    wrist_rec = RawRecording(wrist[:m], lab_rec.labels[:m], "eda", 4.0)
    return {"chest_eda": chest_rec, "wrist_eda": wrist_rec}
