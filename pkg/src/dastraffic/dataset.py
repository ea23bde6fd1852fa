"""Labelled sample sets: tasks, label remaps, splits, oversampling, DASS files."""
from __future__ import annotations

import csv
import io
import os
import struct
from collections import Counter
from dataclasses import dataclass, replace

import numpy as np

from .framing import LabeledSample
from .waterfall import WaterfallFormatError, atomic_write

OCC5, OCC2, SIZE2 = "Occupancy5", "Occupancy2", "Size2"
TASKS = (OCC5, OCC2, SIZE2)
CLASS_NAMES = {
    OCC5: ("1p", "2p", "3p", "4p", "5p"),
    OCC2: ("LOV", "HOV"),
    SIZE2: ("Large", "Small"),
}
LOV, HOV = 0, 1

MAGIC = b"DASS"
VERSION = 1
_DIRS = {None: 0, "East": 1, "West": 2}
_DIRS_INV = {v: k for k, v in _DIRS.items()}
_TASK_CODES = {OCC5: 0, OCC2: 1, SIZE2: 2}
_TASK_INV = {v: k for k, v in _TASK_CODES.items()}


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledDataset:
    """Samples with zero-based labels for one task."""

    samples: tuple
    task: str

    def __post_init__(self):
        if self.task not in TASKS:
            raise DatasetError(f"unknown task {self.task!r}; expected one of {TASKS}")
        object.__setattr__(self, "samples", tuple(self.samples))
        k = self.num_classes
        for s in self.samples:
            if not 0 <= s.label < k:
                raise DatasetError(f"label {s.label} out of range for {self.task}")

    @property
    def class_names(self):
        return CLASS_NAMES[self.task]

    @property
    def num_classes(self):
        return len(self.class_names)

    def __len__(self):
        return len(self.samples)

    def labels(self):
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def counts(self):
        c = np.bincount(self.labels(), minlength=self.num_classes)
        return dict(zip(self.class_names, (int(v) for v in c)))

    def arrays(self):
        """Stacked float64 payloads and labels."""
        if not self.samples:
            return np.zeros((0,)), np.zeros(0, dtype=np.int64)
        return np.stack([s.values for s in self.samples]), self.labels()

    def sample_shape(self):
        return self.samples[0].values.shape if self.samples else None

    def subset(self, idx):
        return LabeledDataset(tuple(self.samples[i] for i in idx), self.task)

    def filter(self, pred):
        return LabeledDataset(tuple(s for s in self.samples if pred(s)), self.task)


def from_samples(samples, task):
    """Wrap framing output, whose labels are occupancy 1..5 or size codes 1..2.

    Occupancy labels map to 0..4. Size code 2 (Large) maps to 0 and 1
    (Small) to 1, following the class order Large, Small.
    """
    out = []
    for s in samples:
        if task == OCC5:
            if not 1 <= s.label <= 5:
                raise DatasetError(f"occupancy label {s.label} outside 1..5")
            lab = s.label - 1
        elif task == SIZE2:
            if s.label not in (1, 2):
                raise DatasetError(f"size label {s.label} is not 1 (small) or 2 (large)")
            lab = 0 if s.label == 2 else 1
        elif task == OCC2:
            if not 1 <= s.label <= 5:
                raise DatasetError(f"occupancy label {s.label} outside 1..5")
            lab = LOV if s.label <= 2 else HOV
        else:
            raise DatasetError(f"unknown task {task!r}")
        out.append(replace(s, label=lab))
    return LabeledDataset(tuple(out), task)


def occupancy_to_binary(occupancy):
    """Passenger count to LOV (0) for one or two, HOV (1) for three or more."""
    return LOV if occupancy <= 2 else HOV


def remap_occupancy_binary(ds):
    if ds.task != OCC5:
        raise DatasetError(f"binary remap needs an {OCC5} dataset, got {ds.task}")
    return LabeledDataset(
        tuple(replace(s, label=occupancy_to_binary(s.label + 1)) for s in ds.samples), OCC2)


def _two_counts(ds_or_counts):
    if isinstance(ds_or_counts, LabeledDataset):
        if ds_or_counts.num_classes != 2:
            raise DatasetError("imbalance ratio needs a two-class dataset")
        return list(np.bincount(ds_or_counts.labels(), minlength=2))
    counts = list(ds_or_counts)
    if len(counts) != 2:
        raise DatasetError("imbalance ratio needs exactly two class counts")
    return counts


def imbalance_ratio(ds_or_counts):
    """Minority over majority class count, for a dataset or a pair of counts."""
    a, b = _two_counts(ds_or_counts)
    if a <= 0 or b <= 0:
        raise DatasetError(f"imbalance ratio undefined with an empty class (counts {a}, {b})")
    return min(a, b) / max(a, b)


def oversample_minority(ds, seed=0):
    """Append seeded with-replacement duplicates of the minority class."""
    counts = _two_counts(ds)
    if min(counts) == 0:
        raise DatasetError("cannot oversample: one class is empty")
    if counts[0] == counts[1]:
        return ds
    minority = int(np.argmin(counts))
    need = abs(counts[0] - counts[1])
    pool = np.flatnonzero(ds.labels() == minority)
    rng = np.random.default_rng(seed)
    extra = rng.choice(pool, size=need, replace=True)
    return LabeledDataset(ds.samples + tuple(ds.samples[i] for i in extra), ds.task)


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0
    stratified: bool = True
    group: bool = False

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DatasetError(f"train fraction must lie in (0, 1), got {self.train_fraction}")


def _take(n, fraction):
    return int(np.floor(n * fraction + 0.5))


def split(ds, spec):
    """Seeded train/test partition.

    Stratified splits shuffle each class and send ``round(f * n_c)`` of
    class ``c`` to train. With ``group`` set, whole passes (track ids)
    are assigned instead of single samples.
    """
    if len(ds) == 0:
        raise DatasetError("cannot split an empty dataset")
    rng = np.random.default_rng(spec.seed)
    labels = ds.labels()
    if spec.group:
        keys = np.array([s.track_id for s in ds.samples])
        units = sorted(set(keys.tolist()))
        unit_label = {u: Counter(labels[keys == u].tolist()).most_common(1)[0][0] for u in units}
        strata = {}
        for u in units:
            strata.setdefault(unit_label[u] if spec.stratified else 0, []).append(u)
        train_units = set()
        for k in sorted(strata):
            members = np.array(strata[k])
            rng.shuffle(members)
            train_units.update(members[:_take(len(members), spec.train_fraction)].tolist())
        mask = np.isin(keys, list(train_units))
        return ds.subset(np.flatnonzero(mask)), ds.subset(np.flatnonzero(~mask))
    strata = ({k: np.flatnonzero(labels == k) for k in range(ds.num_classes)}
              if spec.stratified else {0: np.arange(len(ds))})
    train_idx, test_idx = [], []
    for k in sorted(strata):
        idx = strata[k].copy()
        rng.shuffle(idx)
        cut = _take(idx.size, spec.train_fraction)
        train_idx.append(idx[:cut])
        test_idx.append(idx[cut:])
    tr = np.concatenate(train_idx)
    te = np.concatenate(test_idx)
    # shuffle across classes so neither side is sorted by label
    return ds.subset(rng.permutation(tr)), ds.subset(rng.permutation(te))


def build_independent_occupancy(allcars_rc_samples, rc60_5p_samples):
    """LOV from the single-occupant queue pass, HOV from the five-occupant passes."""
    lov = [replace(s, label=LOV) for s in allcars_rc_samples]
    hov = [replace(s, label=HOV) for s in rc60_5p_samples]
    n = min(len(lov), len(hov))
    if n == 0:
        raise DatasetError("independent set needs samples on both sides")
    return LabeledDataset(tuple(lov[:n] + hov[:n]), OCC2)


def pad_dataset(ds, d_m):
    """Re-centre every sample to length ``d_m`` (for scoring sets framed separately)."""
    from .framing import pad_to

    out = []
    for s in ds.samples:
        v = s.values
        n = v.shape[-1]
        if n == d_m:
            out.append(s)
            continue
        if n > d_m:
            # trim the padding symmetrically; the framed part must survive
            left = (n - d_m) // 2
            if s.raw_len > d_m:
                raise DatasetError(f"sample frame of {s.raw_len} shots exceeds d_m={d_m}")
            v = v[..., left:left + d_m]
        else:
            v = pad_to(v, d_m)
        out.append(replace(s, values=v))
    return LabeledDataset(tuple(out), ds.task)


# --- DASS files ----------------------------------------------------------------
#
# "DASS" | version u16 | task u8 | count u32, then per sample:
# label u8 | bin u32 | direction u8 | speed f32 | track_id i32 | raw_len u32
# | dims u8 | shape u32 * dims | payload f32 * prod(shape)

_HEAD = struct.Struct("<4sHBI")
_REC = struct.Struct("<BIBfiIB")


def to_bytes(ds):
    parts = [_HEAD.pack(MAGIC, VERSION, _TASK_CODES[ds.task], len(ds))]
    for s in ds.samples:
        v = np.ascontiguousarray(s.values, dtype="<f4")
        parts.append(_REC.pack(s.label, s.bin, _DIRS[s.direction], s.speed_kmh,
                               s.track_id, s.raw_len, v.ndim))
        parts.append(struct.pack(f"<{v.ndim}I", *v.shape))
        parts.append(v.tobytes())
    return b"".join(parts)


def save_dataset(ds, path):
    atomic_write(path, to_bytes(ds))


def from_bytes(data, source="<bytes>"):
    if len(data) < _HEAD.size:
        raise WaterfallFormatError(f"{source}: truncated dataset header")
    magic, version, task, count = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise WaterfallFormatError(f"{source}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise WaterfallFormatError(f"{source}: unsupported dataset version {version}")
    if task not in _TASK_INV:
        raise WaterfallFormatError(f"{source}: unknown task code {task}")
    pos = _HEAD.size
    samples = []
    try:
        for _ in range(count):
            label, b, d, speed, tid, rl, dims = _REC.unpack_from(data, pos)
            pos += _REC.size
            shape = struct.unpack_from(f"<{dims}I", data, pos)
            pos += 4 * dims
            n = int(np.prod(shape))
            if pos + 4 * n > len(data):
                raise struct.error("payload")
            v = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(shape)
            pos += 4 * n
            samples.append(LabeledSample(v.astype(np.float64), label, b, _DIRS_INV[d],
                                         float(speed), rl, tid))
    except (struct.error, KeyError):
        raise WaterfallFormatError(f"{source}: truncated or corrupt sample record") from None
    if pos != len(data):
        raise WaterfallFormatError(f"{source}: {len(data) - pos} trailing bytes")
    try:
        return LabeledDataset(tuple(samples), _TASK_INV[task])
    except DatasetError as exc:
        raise WaterfallFormatError(f"{source}: {exc}") from None


def load_dataset(path):
    with open(path, "rb") as fh:
        return from_bytes(fh.read(), os.fspath(path))


def manifest_csv(ds):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "label", "class", "bin", "direction", "speed_kmh", "track_id",
                "raw_len", "shape"])
    for i, s in enumerate(ds.samples):
        w.writerow([i, s.label, ds.class_names[s.label], s.bin, s.direction or "",
                    s.speed_kmh, s.track_id, s.raw_len, "x".join(map(str, s.values.shape))])
    return buf.getvalue()


def count_table(ds, title=None):
    """Per-class counts in a small text table."""
    counts = ds.counts()
    width = max(len(n) for n in counts) + 2
    lines = [title] if title else []
    lines += [f"{name:<{width}}{n:>8}" for name, n in counts.items()]
    lines.append(f"{'Total':<{width}}{len(ds):>8}")
    return "\n".join(lines)
