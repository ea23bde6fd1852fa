"""Synthetic waterfalls for controlled constant-speed vehicle passes.

Each track is a straight line in (bin, shot) space. At every bin it spans
is an event frame ``[c1*b + c2, c3*b + c4]`` holding a mass-scaled, raised
cosine envelope times a seeded band-limited carrier. Gaussian noise is
drawn once per scene from its own stream, then tracks are added on top.
"""
from __future__ import annotations

import configparser
import io
import math
import zlib
from dataclasses import dataclass, replace

import numpy as np

from .waterfall import BIN_PITCH_M, SHOT_PERIOD_S, Waterfall

EAST, WEST = "East", "West"
OCCUPANCY, SIZE, NOISE = "Occupancy", "Size", "Noise"
SMALL, LARGE = "Small", "Large"
DIRECTIONS = (EAST, WEST)
LABEL_KINDS = (OCCUPANCY, SIZE, NOISE)

DEFAULT_BINS = 1000
DEFAULT_SHOTS = 120_000
DEFAULT_NOISE_RMS = 0.02
DEFAULT_ALPHA = 1e-3  # rad per kg
DEFAULT_GAUGE_M = 10.0
DEFAULT_BAND_HZ = (5.0, 50.0)
CARRIER_TONES = 8
SKEW_PER_PASSENGER = 0.05  # fraction of the half-width, relative to 3 passengers

_NOISE_KEY = zlib.crc32(b"noise")
_TRACK_KEY = zlib.crc32(b"track")


class SceneError(ValueError):
    pass


@dataclass(frozen=True)
class VehicleProfile:
    name: str
    length_m: float
    base_mass_kg: float
    size_class: str
    passenger_mass_kg: float = 80.0

    def __post_init__(self):
        if self.length_m <= 0 or self.base_mass_kg <= 0 or self.passenger_mass_kg < 0:
            raise ValueError(f"{self.name}: length and masses must be positive")
        if self.size_class not in (SMALL, LARGE):
            raise ValueError(f"{self.name}: size_class must be {SMALL!r} or {LARGE!r}")

    def mass(self, occupancy):
        return self.base_mass_kg + occupancy * self.passenger_mass_kg


# Large/Small mean base masses differ by 350 kg.
VEHICLES = {
    "SUV": VehicleProfile("SUV", 4.70, 1650.0, LARGE),
    "RC": VehicleProfile("RC", 4.05, 1150.0, SMALL),
    "Compact": VehicleProfile("Compact", 4.30, 1350.0, SMALL),
    "MPV": VehicleProfile("MPV", 4.60, 1475.0, SMALL),
    "LCV": VehicleProfile("LCV", 5.30, 1700.0, LARGE),
    "Walker": VehicleProfile("Walker", 0.50, 80.0, SMALL, passenger_mass_kg=0.0),
    "StrayCar": VehicleProfile("StrayCar", 4.50, 1400.0, SMALL),
}
QUEUE = ("SUV", "RC", "Compact", "MPV", "LCV")


@dataclass(frozen=True)
class TrackSpec:
    """One constant-speed pass.

    ``entry_shot`` is the frame start at the bin where the vehicle enters
    the spanned stretch: ``bin_span[0]`` for East, ``bin_span[1]`` for West.
    ``bin_span=None`` means the whole fibre.
    """

    vehicle: VehicleProfile
    occupancy: int
    speed_kmh: float
    direction: str
    entry_shot: float
    label_kind: str = OCCUPANCY
    bin_span: tuple | None = None

    def __post_init__(self):
        if self.direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        if self.label_kind not in LABEL_KINDS:
            raise ValueError(f"label_kind must be one of {LABEL_KINDS}")
        if not 0 <= self.occupancy <= 5:
            raise ValueError("occupancy must be in 0..5")
        if self.label_kind != NOISE and self.occupancy < 1:
            raise ValueError("controlled tracks need at least one occupant")
        if not 5.0 <= self.speed_kmh <= 120.0 and self.label_kind != NOISE:
            raise ValueError("controlled speeds must lie in [5, 120] km/h")
        if self.speed_kmh <= 0:
            raise ValueError("speed must be positive")

    @property
    def label(self):
        """Occupancy (1..5), size code (1 small, 2 large) or 0 for noise."""
        if self.label_kind == NOISE:
            return 0
        if self.label_kind == SIZE:
            return 2 if self.vehicle.size_class == LARGE else 1
        return self.occupancy


@dataclass(frozen=True)
class SceneSpec:
    bins: int = DEFAULT_BINS
    shots: int = DEFAULT_SHOTS
    tracks: tuple = ()
    noise_rms: float = DEFAULT_NOISE_RMS
    seed: int = 0
    alpha: float = DEFAULT_ALPHA
    gauge_m: float = DEFAULT_GAUGE_M
    band_hz: tuple = DEFAULT_BAND_HZ
    bin_pitch_m: float = BIN_PITCH_M
    shot_period_s: float = SHOT_PERIOD_S
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "tracks", tuple(self.tracks))
        if self.bins < 1 or self.shots < 1:
            raise ValueError("bins and shots must be positive")
        if self.noise_rms < 0:
            raise ValueError("noise_rms must be >= 0")


@dataclass(frozen=True)
class GroundTruthTrack:
    track_id: int
    track: TrackSpec
    c1: float
    c2: float
    c3: float
    c4: float
    first_bin: int
    last_bin: int

    def start(self, b):
        return self.c1 * b + self.c2

    def end(self, b):
        return self.c3 * b + self.c4


def shots_per_bin(speed_kmh, bin_pitch_m=BIN_PITCH_M, shot_period_s=SHOT_PERIOD_S):
    """Track slope |c1|: shots elapsed while the vehicle crosses one bin."""
    if not speed_kmh > 0:
        raise ValueError(f"speed must be positive, got {speed_kmh}")
    return bin_pitch_m / (speed_kmh / 3.6) / shot_period_s


def half_width_s(profile, speed_kmh, gauge_m=DEFAULT_GAUGE_M):
    return (profile.length_m + gauge_m) / (speed_kmh / 3.6)


def envelope(t, half_width, peak_offset=0.0):
    """Raised cosine on [-half_width, half_width] peaking (value 1) at ``peak_offset``."""
    t = np.asarray(t, dtype=float)
    T, tp = half_width, peak_offset
    out = np.zeros_like(t)
    left = (t >= -T) & (t < tp)
    right = (t >= tp) & (t <= T)
    out[left] = 0.5 * (1 + np.cos(np.pi * (t[left] - tp) / (T + tp)))
    out[right] = 0.5 * (1 + np.cos(np.pi * (t[right] - tp) / (T - tp)))
    return out


def peak_offset(occupancy, half_width):
    # heavier loads shift the strain peak toward the rear axle (later in time)
    if occupancy < 1:
        return 0.0
    return (occupancy - 3) * SKEW_PER_PASSENGER * half_width


@dataclass(frozen=True)
class Carrier:
    """Sum of sinusoids with roughly unit RMS."""

    freqs: np.ndarray
    phases: np.ndarray
    amps: np.ndarray

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for f, p, a in zip(self.freqs, self.phases, self.amps):
            out += a * np.sin(2 * np.pi * f * t + p)
        return out


def make_carrier(rng, band_hz=DEFAULT_BAND_HZ, n_tones=CARRIER_TONES):
    lo, hi = band_hz
    freqs = rng.uniform(lo, hi, n_tones)
    phases = rng.uniform(0, 2 * np.pi, n_tones)
    amps = np.full(n_tones, math.sqrt(2.0 / n_tones))
    return Carrier(freqs, phases, amps)


def vehicle_signature(profile, occupancy, speed_kmh, t_rel_s, carrier,
                      alpha=DEFAULT_ALPHA, gauge_m=DEFAULT_GAUGE_M):
    """Strain response (radians) at time ``t_rel_s`` relative to the vehicle centre.

    ``carrier`` is a callable of time, normally from :func:`make_carrier`.
    """
    T = half_width_s(profile, speed_kmh, gauge_m)
    amp = alpha * profile.mass(occupancy)
    g = envelope(t_rel_s, T, peak_offset(occupancy, T))
    return amp * g * carrier(t_rel_s)


def _salt(name):
    # scenes with the same seed but different names get unrelated streams
    return zlib.crc32(name.encode("utf-8"))


def track_key(track):
    """Stable id of a track's parameters, independent of its list position."""
    v = track.vehicle
    text = (f"{v.name}|{v.length_m!r}|{v.base_mass_kg!r}|{v.size_class}|{v.passenger_mass_kg!r}|"
            f"{track.occupancy}|{track.speed_kmh!r}|{track.direction}|{track.entry_shot!r}|"
            f"{track.label_kind}|{track.bin_span}")
    return zlib.crc32(text.encode("utf-8"))


def track_ids(scene):
    """(key, occurrence) per track; identical tracks are told apart by occurrence."""
    seen = {}
    out = []
    for tr in scene.tracks:
        k = track_key(tr)
        out.append((k, seen.get(k, 0)))
        seen[k] = seen.get(k, 0) + 1
    return out


def track_stream(seed, track_id, name=""):
    """Carrier stream of one track; ``track_id`` is a ``(key, occurrence)`` pair.

    Keying on track content rather than list position means a track renders
    identically in any scene that contains it, so scenes superpose exactly.
    """
    key, occurrence = track_id
    return np.random.default_rng(
        np.random.SeedSequence([seed, _salt(name), _TRACK_KEY, key, occurrence]))


def noise_stream(seed, name=""):
    return np.random.default_rng(np.random.SeedSequence([seed, _salt(name), _NOISE_KEY]))


def ground_truth(scene, track_id):
    tr = scene.tracks[track_id]
    lo, hi = tr.bin_span if tr.bin_span is not None else (0, scene.bins - 1)
    spb = shots_per_bin(tr.speed_kmh, scene.bin_pitch_m, scene.shot_period_s)
    # whole-shot frame width keeps the rounded frame length equal at every bin
    width = float(round(2 * half_width_s(tr.vehicle, tr.speed_kmh, scene.gauge_m)
                        / scene.shot_period_s))
    if tr.direction == EAST:
        c1, c2 = spb, tr.entry_shot - spb * lo
    else:
        c1, c2 = -spb, tr.entry_shot + spb * hi
    return GroundTruthTrack(track_id, tr, c1, c2, c1, c2 + width, int(lo), int(hi))


def validate_scene(scene):
    truths = []
    for i, tr in enumerate(scene.tracks):
        gt = ground_truth(scene, i)
        if not 0 <= gt.first_bin <= gt.last_bin < scene.bins:
            raise SceneError(f"track {i} ({tr.vehicle.name}): bin span "
                             f"{gt.first_bin}..{gt.last_bin} outside 0..{scene.bins - 1}")
        ends = [gt.start(gt.first_bin), gt.start(gt.last_bin),
                gt.end(gt.first_bin), gt.end(gt.last_bin)]
        if min(ends) < 0 or max(ends) > scene.shots - 1:
            raise SceneError(
                f"track {i} ({tr.vehicle.name}, {tr.direction}, entry {tr.entry_shot}) "
                f"spans shots {min(ends):.1f}..{max(ends):.1f}, outside 0..{scene.shots - 1}"
            )
        truths.append(gt)
    return truths


def track_contribution(scene, gt):
    """(rows, cols, values) of one track's additive contribution."""
    tr = gt.track
    rng = track_stream(scene.seed, track_ids(scene)[gt.track_id], scene.name)
    carrier = make_carrier(rng, scene.band_hz)
    bins = np.arange(gt.first_bin, gt.last_bin + 1)
    start = gt.start(bins)
    end = gt.end(bins)
    centre = 0.5 * (start + end)
    width = int(math.ceil(gt.c4 - gt.c2)) + 2
    cols = np.ceil(start).astype(np.int64)[:, None] + np.arange(width)[None, :]
    cols = np.minimum(cols, scene.shots - 1)
    t = (cols - centre[:, None]) * scene.shot_period_s
    vals = vehicle_signature(tr.vehicle, tr.occupancy, tr.speed_kmh, t, carrier,
                             alpha=scene.alpha, gauge_m=scene.gauge_m)
    # columns clamped at the edge or beyond the frame end carry nothing
    keep = cols <= end[:, None]
    keep[:, 1:] &= cols[:, 1:] > cols[:, :-1]
    rows = np.broadcast_to(bins[:, None], cols.shape)
    return rows[keep], cols[keep], vals[keep]


def simulate(scene):
    """Render ``scene``; returns ``(Waterfall, [GroundTruthTrack, ...])``."""
    truths = validate_scene(scene)
    rng = noise_stream(scene.seed, scene.name)
    values = rng.standard_normal((scene.bins, scene.shots), dtype=np.float32)
    values *= np.float32(scene.noise_rms)
    for gt in truths:
        rows, cols, vals = track_contribution(scene, gt)
        values[rows, cols] = (values[rows, cols].astype(np.float64) + vals).astype(np.float32)
    return Waterfall(values, scene.bin_pitch_m, scene.shot_period_s), truths


# --- presets ---------------------------------------------------------------

def _frame_shots(profile, speed):
    return 2 * half_width_s(profile, speed) / SHOT_PERIOD_S


def _rc60_scene(occupancies):
    rc = VEHICLES["RC"]
    spb = shots_per_bin(60.0)
    spacing = 3500.0
    tracks = []
    entry = 1000.0
    for occ in occupancies:
        tracks.append(TrackSpec(rc, occ, 60.0, EAST, entry))
        entry += spacing
    # West passes begin once the last East frame has left the far bin
    last_east_end = tracks[-1].entry_shot + spb * (DEFAULT_BINS - 1) + _frame_shots(rc, 60.0)
    entry = math.ceil(last_east_end / 500.0) * 500.0 + 500.0
    for occ in occupancies:
        tracks.append(TrackSpec(rc, occ, 60.0, WEST, entry))
        entry += spacing
    return tracks


def preset_scene(name, seed=0):
    """Scene reproducing one of the controlled trials.

    ``rc60mix``: RC at 60 km/h, occupancy 5..1 eastbound then 5..1
    westbound, plus a walker and a stray car. ``rc60-5p``: one pass each
    way with five occupants. ``allcarsNN`` (or ``allcars:NN``) for NN in
    30..70: the five-vehicle queue eastbound at NN km/h with one stray car
    inside the queue and one oncoming car.
    """
    key = name.strip().lower().replace(":", "")
    if key == "rc60mix":
        return _rc60mix(seed)
    if key in ("rc60-5p", "rc605p"):
        return _rc60_5p(seed)
    if key.startswith("allcars"):
        try:
            speed = int(key[len("allcars"):])
        except ValueError:
            speed = None
        if speed not in ALLCARS_SPEEDS:
            raise SceneError(f"allcars speed must be one of {ALLCARS_SPEEDS}, got {name!r}")
        return _allcars(speed, seed)
    raise SceneError(f"unknown preset {name!r}; valid: {', '.join(PRESET_NAMES)}")


ALLCARS_SPEEDS = (30, 40, 50, 60, 70)
PRESET_NAMES = ("rc60mix", "rc60-5p") + tuple(f"allcars{v}" for v in ALLCARS_SPEEDS)


def _rc60mix(seed):
    tracks = _rc60_scene([5, 4, 3, 2, 1])
    walker = VEHICLES["Walker"]
    stray = VEHICLES["StrayCar"]
    spb = shots_per_bin(60.0)
    last_west = tracks[-1]
    # stray car trails the last westbound pass over the near half of the fibre
    stray_entry = last_west.entry_shot + spb * (DEFAULT_BINS - 1 - 500) + 3500.0
    tracks += [
        TrackSpec(walker, 0, 5.0, EAST, 1000.0, NOISE, bin_span=(0, 200)),
        TrackSpec(stray, 0, 60.0, WEST, stray_entry, NOISE, bin_span=(0, 500)),
    ]
    return SceneSpec(tracks=tuple(tracks), seed=seed, name="rc60mix")


def _rc60_5p(seed):
    return SceneSpec(tracks=tuple(_rc60_scene([5])), seed=seed, name="rc60-5p")


def _allcars(speed, seed, headway_m=60.0):
    gap = headway_m / (speed / 3.6) / SHOT_PERIOD_S
    tracks = []
    centres = []
    for k, name in enumerate(QUEUE):
        prof = VEHICLES[name]
        half = _frame_shots(prof, speed) / 2
        centre = 3000.0 + k * gap
        centres.append(centre)
        tracks.append(TrackSpec(prof, 1, float(speed), EAST, centre - half, SIZE))
    stray = VEHICLES["StrayCar"]
    half_stray = _frame_shots(stray, speed) / 2
    same_dir = TrackSpec(stray, 0, float(speed), EAST,
                         0.5 * (centres[1] + centres[2]) - half_stray, NOISE)
    # oncoming car over the first 170 bins, meeting car 4 near bin 150
    spb = shots_per_bin(speed)
    hi, meet = 170, 150
    entry = centres[3] + spb * meet - spb * (hi - meet) - half_stray
    oncoming = TrackSpec(stray, 0, float(speed), WEST, entry, NOISE, bin_span=(0, hi))
    return SceneSpec(tracks=tuple(tracks) + (same_dir, oncoming), seed=seed,
                     name=f"allcars{speed}")


# --- key = value scene files ---------------------------------------------

def scene_to_config(scene):
    cp = configparser.ConfigParser()
    cp["scene"] = {
        "name": scene.name,
        "bins": str(scene.bins),
        "shots": str(scene.shots),
        "noise_rms": repr(scene.noise_rms),
        "seed": str(scene.seed),
        "alpha": repr(scene.alpha),
        "gauge_m": repr(scene.gauge_m),
        "band_hz": f"{scene.band_hz[0]!r}:{scene.band_hz[1]!r}",
        "bin_pitch_m": repr(scene.bin_pitch_m),
        "shot_period_s": repr(scene.shot_period_s),
    }
    written = set()
    for tr in scene.tracks:
        v = tr.vehicle
        if v.name not in written and VEHICLES.get(v.name) != v:
            cp[f"vehicle.{v.name}"] = {
                "length_m": repr(v.length_m),
                "base_mass_kg": repr(v.base_mass_kg),
                "size_class": v.size_class,
                "passenger_mass_kg": repr(v.passenger_mass_kg),
            }
        written.add(v.name)
    for i, tr in enumerate(scene.tracks):
        sec = {
            "vehicle": tr.vehicle.name,
            "occupancy": str(tr.occupancy),
            "speed_kmh": repr(tr.speed_kmh),
            "direction": tr.direction,
            "entry_shot": repr(tr.entry_shot),
            "label_kind": tr.label_kind,
        }
        if tr.bin_span is not None:
            sec["bins"] = f"{tr.bin_span[0]}:{tr.bin_span[1]}"
        cp[f"track.{i}"] = sec
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def _pair(text, cast):
    a, b = text.split(":")
    return cast(a), cast(b)


def scene_from_config(text, seed=None):
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise SceneError(f"bad scene file: {exc}") from None
    try:
        sc = cp["scene"] if cp.has_section("scene") else {}
        vehicles = dict(VEHICLES)
        for sec in cp.sections():
            if sec.startswith("vehicle."):
                name = sec.split(".", 1)[1]
                s = cp[sec]
                vehicles[name] = VehicleProfile(
                    name, float(s["length_m"]), float(s["base_mass_kg"]), s["size_class"],
                    float(s.get("passenger_mass_kg", "80")))
        track_secs = sorted((s for s in cp.sections() if s.startswith("track.")),
                            key=lambda s: int(s.split(".", 1)[1]))
        tracks = []
        for sec in track_secs:
            s = cp[sec]
            if s["vehicle"] not in vehicles:
                raise SceneError(f"[{sec}]: unknown vehicle {s['vehicle']!r}")
            tracks.append(TrackSpec(
                vehicles[s["vehicle"]], int(s.get("occupancy", "1")), float(s["speed_kmh"]),
                s.get("direction", EAST), float(s["entry_shot"]),
                s.get("label_kind", OCCUPANCY),
                _pair(s["bins"], int) if "bins" in s else None))
        scene = SceneSpec(
            bins=int(sc.get("bins", DEFAULT_BINS)),
            shots=int(sc.get("shots", DEFAULT_SHOTS)),
            tracks=tuple(tracks),
            noise_rms=float(sc.get("noise_rms", DEFAULT_NOISE_RMS)),
            seed=int(sc.get("seed", 0)),
            alpha=float(sc.get("alpha", DEFAULT_ALPHA)),
            gauge_m=float(sc.get("gauge_m", DEFAULT_GAUGE_M)),
            band_hz=_pair(sc["band_hz"], float) if "band_hz" in sc else DEFAULT_BAND_HZ,
            bin_pitch_m=float(sc.get("bin_pitch_m", BIN_PITCH_M)),
            shot_period_s=float(sc.get("shot_period_s", SHOT_PERIOD_S)),
            name=sc.get("name", ""),
        )
    except SceneError:
        raise
    except (KeyError, ValueError) as exc:
        raise SceneError(f"bad scene file: {exc}") from None
    if seed is not None:
        scene = replace(scene, seed=seed)
    return scene


def with_seed(scene, seed):
    return replace(scene, seed=seed)
