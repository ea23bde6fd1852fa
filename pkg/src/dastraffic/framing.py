"""Event framing: line fits from anchors, per-bin frames, padding, 1D/2D samples.

A track's event frame at bin ``b`` runs from ``round(c1*b + c2)`` to
``round(c3*b + c4)`` inclusive. Samples are centre zero-padded to a common
length ``d_m``, the longest frame in the extraction run.
"""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

ONE_D, TWO_D = "1d", "2d"
WINDOW_BINS = 6
WINDOW_BEFORE = 2  # rows centre-2 .. centre+3
DEFAULT_BIN_RANGE = (250, 750)
DEFAULT_DM_CAP = 4096


class FramingError(ValueError):
    pass


class FrameRangeError(FramingError):
    pass


@dataclass(frozen=True)
class Anchor:
    bin: int
    s_start: float
    s_end: float

    def __post_init__(self):
        if not self.s_end > self.s_start:
            raise FramingError(f"anchor at bin {self.bin}: s_end must exceed s_start")


@dataclass(frozen=True)
class TrackFit:
    """Start line ``c1*b + c2`` and end line ``c3*b + c4``, in shots."""

    c1: float
    c2: float
    c3: float
    c4: float
    fit_residual_rms: float = 0.0

    def start(self, b):
        return self.c1 * b + self.c2

    def end(self, b):
        return self.c3 * b + self.c4

    @classmethod
    def from_truth(cls, gt):
        return cls(gt.c1, gt.c2, gt.c3, gt.c4)


def _ols(x, y):
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    slope = (dx * (y - ym)).sum() / (dx * dx).sum()
    return slope, ym - slope * xm


def fit_track_lines(anchors, bin_range=None):
    """Least-squares start and end lines through ``anchors``.

    The frame must not invert anywhere in ``bin_range`` (default: the span
    of the anchor bins).
    """
    anchors = list(anchors)
    b = np.array([a.bin for a in anchors], dtype=float)
    if np.unique(b).size < 2:
        raise FramingError(
            f"underdetermined fit: need anchors at >= 2 distinct bins, got {np.unique(b).size}")
    ss = np.array([a.s_start for a in anchors], dtype=float)
    se = np.array([a.s_end for a in anchors], dtype=float)
    c1, c2 = _ols(b, ss)
    c3, c4 = _ols(b, se)
    resid = np.concatenate([ss - (c1 * b + c2), se - (c3 * b + c4)])
    fit = TrackFit(float(c1), float(c2), float(c3), float(c4),
                   float(np.sqrt(np.mean(resid ** 2))))
    lo, hi = bin_range if bin_range is not None else (b.min(), b.max())
    for edge in (lo, hi):
        if not fit.end(edge) > fit.start(edge):
            raise FramingError(f"inverted frame: fitted end line meets start line inside "
                               f"bins {lo}..{hi} (at bin {edge})")
    return fit


def round_half_away(x):
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def frame_bounds(fit, b):
    """Inclusive shot indices ``(s_start, s_end)`` of the frame at bin ``b``."""
    return int(round_half_away(fit.start(b))), int(round_half_away(fit.end(b)))


def raw_len(fit, b):
    s0, s1 = frame_bounds(fit, b)
    return s1 - s0 + 1


def frame_event(w, fit, b):
    """Bin ``b``'s values over its event frame, as float64."""
    if not 0 <= b < w.bins:
        raise FrameRangeError(f"bin {b} outside 0..{w.bins - 1}")
    s0, s1 = frame_bounds(fit, b)
    if s0 < 0 or s1 >= w.shots or s1 < s0:
        raise FrameRangeError(
            f"frame at bin {b} spans shots {s0}..{s1}, outside 0..{w.shots - 1}")
    return w.values[b, s0:s1 + 1].astype(np.float64)


def pad_to(raw, d_m):
    """Centre ``raw`` in ``d_m`` zeros; the odd leftover zero goes on the right."""
    raw = np.asarray(raw, dtype=np.float64)
    n = raw.shape[-1]
    if n > d_m:
        raise FramingError(f"sample longer than d_m ({n} > {d_m}); enlarge d_m")
    left = (d_m - n) // 2
    out = np.zeros(raw.shape[:-1] + (d_m,))
    out[..., left:left + n] = raw
    return out


def window_2d(w, fit, center_bin, d_m):
    """Six framed-and-padded rows, bins ``center_bin-2 .. center_bin+3``."""
    first = center_bin - WINDOW_BEFORE
    last = first + WINDOW_BINS - 1
    if first < 0 or last >= w.bins:
        raise FrameRangeError(
            f"window around bin {center_bin} needs bins {first}..{last}, outside 0..{w.bins - 1}")
    return np.stack([pad_to(frame_event(w, fit, b), d_m) for b in range(first, last + 1)])


def window_span_m(w):
    return WINDOW_BINS * w.bin_pitch_m


@dataclass(frozen=True)
class TrackRef:
    """A fitted track with its label; label 0 marks an interferer."""

    fit: TrackFit
    label: int
    direction: str | None = None
    speed_kmh: float = 0.0
    track_id: int = -1


@dataclass(frozen=True)
class LabeledSample:
    values: np.ndarray
    label: int
    bin: int
    direction: str | None
    speed_kmh: float
    raw_len: int
    track_id: int = -1

    @property
    def dims(self):
        return self.values.ndim


def _centres(bin_range, mode):
    lo, hi = bin_range
    if mode == ONE_D:
        return range(lo, hi + 1)
    return range(lo + WINDOW_BEFORE, hi - (WINDOW_BINS - WINDOW_BEFORE - 1) + 1)


def common_length(tracks, bin_range, cap=DEFAULT_DM_CAP):
    """d_m: the longest frame over all controlled tracks and bins."""
    lo, hi = bin_range
    bins = np.arange(lo, hi + 1)
    d_m = 0
    for tr in tracks:
        if tr.label == 0:
            continue
        lens = round_half_away(tr.fit.end(bins)) - round_half_away(tr.fit.start(bins)) + 1
        d_m = max(d_m, int(lens.max()))
    if d_m > cap:
        raise FramingError(f"longest frame is {d_m} shots, above the cap of {cap}")
    return d_m


def extract_dataset(w, tracks, bin_range=DEFAULT_BIN_RANGE, mode=ONE_D, d_m=None,
                    cap=DEFAULT_DM_CAP):
    """One sample per (controlled track, bin), or per six-bin window for 2D."""
    if mode not in (ONE_D, TWO_D):
        raise ValueError(f"mode must be {ONE_D!r} or {TWO_D!r}")
    lo, hi = (int(v) for v in bin_range)
    if hi < lo or (mode == TWO_D and hi - lo + 1 < WINDOW_BINS):
        raise ValueError(f"empty bin range {lo}:{hi} for mode {mode}")
    if d_m is None:
        d_m = common_length(tracks, (lo, hi), cap)
    out = []
    for tr in tracks:
        if tr.label == 0:
            continue
        for b in _centres((lo, hi), mode):
            raw = frame_event(w, tr.fit, b)
            if mode == ONE_D:
                vals = pad_to(raw, d_m)
            else:
                vals = window_2d(w, tr.fit, b, d_m)
            out.append(LabeledSample(vals, tr.label, b, tr.direction, tr.speed_kmh,
                                     raw.size, tr.track_id))
    return out


def refs_from_truth(truths):
    """TrackRefs built from simulator ground truth."""
    return [TrackRef(TrackFit.from_truth(gt), gt.track.label, gt.track.direction,
                     gt.track.speed_kmh, gt.track_id) for gt in truths]


# --- anchor files ------------------------------------------------------------

def read_anchors(path):
    anchors = []
    with open(path) as fh:
        for n, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 3:
                raise FramingError(f"{path}:{n}: expected bin,s_start,s_end")
            try:
                anchors.append(Anchor(int(parts[0]), float(parts[1]), float(parts[2])))
            except ValueError as exc:
                raise FramingError(f"{path}:{n}: {exc}") from None
    return anchors


def write_anchors(anchors, path):
    lines = ["# bin,s_start,s_end"]
    lines += [f"{a.bin},{a.s_start!r},{a.s_end!r}" for a in anchors]
    with open(os.fspath(path), "w") as fh:
        fh.write("\n".join(lines) + "\n")
