"""Reduced-order generator of labeled loss-of-coolant transients.

Each channel follows a closed-form response law of (time, break diameter,
break location) plus seeded Gaussian noise.  Informative channels share a
few latent trajectories: primary depressurization, the break-loop pump
coast-down onset and the accumulator (SIT) injection trigger.  Decoy
channels never see the label; they are noise around a per-case baseline
with a slow drift.  The ground-truth ``informative`` flag of every channel
is written to the dataset manifest.

Diameters are normalized to (0, 1] (fraction of the largest modeled
break).  Time runs over ``duration`` seconds sampled at ``frequency`` Hz,
starting at the break instant, so the first column is the steady state.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DatasetLoadError, ValidationError
from .numerics.rng import Rng

log = logging.getLogger(__name__)

CLASSES = ("cold_leg", "hot_leg")
KINDS = ("pressure", "fluid_temperature", "pump_speed", "void_fraction", "level",
         "control_variable", "flow")
MANIFEST = "manifest.json"
FORMAT = "tresdiag-dataset/1"

# Latent-trajectory constants.
P_FLOOR = 0.05          # asymptotic pressure fraction
K_DEPRESS = 0.13        # 1/s, depressurization rate at diameter 1 (cold leg)
LOC_RATE = {"cold_leg": 1.0, "hot_leg": 0.8}
SIT_THRESHOLD = 0.30    # pressure fraction that opens the accumulators
PUMP_DELAY = {"cold_leg": 2.0, "hot_leg": 14.0}
PUMP_DELAY_SLOPE = 8.0  # extra onset delay (s) as diameter goes to 0


# --------------------------------------------------------------------------
# latent trajectories

def depressurization_rate(diameter: float, location: str) -> float:
    return K_DEPRESS * LOC_RATE[location] * diameter


def pressure_fraction(t, diameter: float, location: str, rate_scale: float = 1.0):
    k = depressurization_rate(diameter, location) * rate_scale
    return P_FLOOR + (1.0 - P_FLOOR) * np.exp(-k * np.asarray(t, dtype=float))


def pressure_fraction_time(fraction: float, diameter: float, location: str) -> float:
    """Time at which the pressure fraction reaches ``fraction`` (inf if never)."""
    if fraction <= P_FLOOR:
        return math.inf
    if fraction >= 1.0:
        return 0.0
    return math.log((1.0 - P_FLOOR) / (fraction - P_FLOOR)) / depressurization_rate(diameter, location)


def pump_onset_time(diameter: float, location: str) -> float:
    return PUMP_DELAY[location] + PUMP_DELAY_SLOPE * (1.0 - diameter)


def sit_trigger_time(diameter: float, location: str) -> float:
    return pressure_fraction_time(SIT_THRESHOLD, diameter, location)


def _delayed_rise(t, onset: float, tau: float):
    """0 before ``onset``, then 1 - exp(-(t - onset)/tau)."""
    return 1.0 - np.exp(-np.clip(np.asarray(t, dtype=float) - onset, 0.0, None) / tau)


# --------------------------------------------------------------------------
# response laws: law(t, diameter, location, params) -> noiseless series

def _law_pressure(t, d, loc, p):
    rate = p["near"] if p["side"] == loc else p["far"]
    return p["base"] * pressure_fraction(t, d, loc, rate)


def _law_temperature(t, d, loc, p):
    amp = p["amp"] * (d ** 0.7) * (p["near"] if p["side"] == loc else p["far"])
    tau = p["tau"] / (0.3 + d)
    return p["base"] - amp * (1.0 - np.exp(-t / tau))


def _law_pump(t, d, loc, p):
    onset = pump_onset_time(d, loc) + p["lag"]
    drop = p["depth"] * (0.15 + 0.45 * d)
    return p["base"] * (1.0 - drop * _delayed_rise(t, onset, p["tau"]))


def _law_void(t, d, loc, p):
    onset = pump_onset_time(d, loc) - 1.0 + p["lag"]
    return p["amp"] * min(1.0, 0.2 + d) * _delayed_rise(t, onset, p["tau"] / (0.3 + d))


def _law_sit(t, d, loc, p):
    start = sit_trigger_time(d, loc)
    rate = p["rate"] * (0.5 + d)
    return p["base"] + np.clip(rate * (t - start), 0.0, 1.0 - p["base"])


def _law_level(t, d, loc, p):
    depth = p["near"] if p["side"] == loc else p["far"]
    k = depressurization_rate(d, loc) * p["speed"]
    return p["base"] * (1.0 - depth * (1.0 - np.exp(-k * t)))


def _law_power(t, d, loc, p):
    # reactor trip on low pressure, then decay to residual power
    trip = pressure_fraction_time(p["trip"], d, loc)
    return p["base"] * (1.0 - (1.0 - p["residual"]) * _delayed_rise(t, trip, p["tau"]))


def _law_injection(t, d, loc, p):
    # safety-injection flow starts once pressure drops below its set point
    start = pressure_fraction_time(p["setpoint"], d, loc) + p["delay"]
    frac = pressure_fraction(t, d, loc)
    head = np.clip((p["setpoint"] - frac) / p["setpoint"], 0.0, None)
    return p["amp"] * head * (t >= start)


def _law_break_flow(t, d, loc, p):
    gain = p["near"] if p["side"] == loc else p["far"]
    return p["amp"] * gain * d * np.sqrt(pressure_fraction(t, d, loc)) * (1.0 - np.exp(-t / 0.5))


def _law_loop_flow(t, d, loc, p):
    onset = pump_onset_time(d, loc) + p["lag"]
    drop = 0.2 + 0.6 * d
    return p["base"] * (1.0 - drop * _delayed_rise(t, onset, p["tau"]))


def _law_decoy(t, d, loc, p, offset=0.0, drift=0.0):
    # label-independent: d and loc are accepted for a uniform signature only
    return p["base"] + p["range"] * (offset + drift * np.asarray(t, dtype=float) / 100.0)


LAWS = {
    "pressure": _law_pressure,
    "temperature": _law_temperature,
    "pump": _law_pump,
    "void": _law_void,
    "sit": _law_sit,
    "level": _law_level,
    "power": _law_power,
    "injection": _law_injection,
    "break_flow": _law_break_flow,
    "loop_flow": _law_loop_flow,
    "decoy": _law_decoy,
}


# --------------------------------------------------------------------------
# catalog

@dataclass(frozen=True)
class ChannelSpec:
    name: str
    kind: str
    informative: bool
    law: str
    params: dict = field(default_factory=dict, hash=False, compare=True)
    value_range: float = 1.0
    noise: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ChannelSpec:
        return cls(name=d["name"], kind=d["kind"], informative=bool(d["informative"]),
                   law=d["law"], params=dict(d["params"]), value_range=float(d["value_range"]),
                   noise=float(d["noise"]))


# (name, law, params, value range).  The first entry of a kind is the anchor
# channel; further entries cycle through the variants with a shifted code.
_INFORMATIVE = {
    "pressure": [
        ("p_155010000", "pressure", dict(base=15.5, side="cold_leg", near=1.0, far=1.0), 15.5 * 0.95),
        ("p_280010000", "pressure", dict(base=15.4, side="hot_leg", near=1.25, far=0.85), 15.4 * 0.95),
        ("p_335010000", "pressure", dict(base=15.6, side="hot_leg", near=1.15, far=0.9), 15.6 * 0.95),
        ("p_115010000", "pressure", dict(base=15.7, side="cold_leg", near=1.2, far=0.8), 15.7 * 0.95),
        ("p_105010000", "pressure", dict(base=15.8, side="cold_leg", near=1.1, far=0.95), 15.8 * 0.95),
    ],
    "fluid_temperature": [
        ("tempf_335010000", "temperature", dict(base=327.0, amp=60.0, tau=15.0, side="hot_leg", near=1.4, far=0.7), 60.0),
        ("tempf_315010000", "temperature", dict(base=292.0, amp=45.0, tau=10.0, side="cold_leg", near=1.4, far=0.8), 45.0),
        ("tempf_205010000", "temperature", dict(base=310.0, amp=50.0, tau=25.0, side="hot_leg", near=1.2, far=0.9), 50.0),
        ("tempf_120010000", "temperature", dict(base=291.0, amp=40.0, tau=12.0, side="cold_leg", near=1.3, far=0.75), 40.0),
        ("tempf_176010000", "temperature", dict(base=318.0, amp=55.0, tau=30.0, side="hot_leg", near=1.1, far=1.0), 55.0),
    ],
    "pump_speed": [
        ("pmpvel_235", "pump", dict(base=155.0, lag=0.0, depth=1.0, tau=6.0), 155.0 * 0.6),
        ("pmpvel_335", "pump", dict(base=155.0, lag=6.0, depth=0.5, tau=9.0), 155.0 * 0.3),
        ("pmpvel_435", "pump", dict(base=155.0, lag=9.0, depth=0.5, tau=10.0), 155.0 * 0.3),
    ],
    "void_fraction": [
        ("voidf_236010000", "void", dict(amp=0.9, lag=0.0, tau=4.0), 0.9),
        ("voidf_160010000", "void", dict(amp=0.7, lag=4.0, tau=8.0), 0.7),
        ("voidf_345010000", "void", dict(amp=0.5, lag=8.0, tau=10.0), 0.5),
    ],
    "level": [
        ("voidf_811010000", "sit", dict(base=0.05, rate=0.05), 0.95),
        ("cntrlvar_411", "level", dict(base=8.2, side="hot_leg", near=0.9, far=0.55, speed=2.0), 8.2 * 0.9),
    ],
    "control_variable": [
        ("cntrlvar_101", "power", dict(base=100.0, residual=0.06, trip=0.85, tau=1.5), 94.0),
        ("cntrlvar_520", "injection", dict(amp=120.0, setpoint=0.75, delay=5.0), 120.0),
    ],
    "flow": [
        ("mflowj_910000000", "break_flow", dict(amp=5000.0, side="cold_leg", near=1.0, far=0.65), 5000.0),
        ("mflowj_240010000", "loop_flow", dict(base=4800.0, lag=1.0, tau=5.0), 4800.0 * 0.8),
    ],
}

_DECOY = {
    "pressure": [("p_600010000", 7.6, 1.2), ("p_610010000", 7.5, 1.2), ("p_620010000", 7.6, 1.2)],
    "fluid_temperature": [("tempf_640010000", 226.0, 12.0), ("tempf_650010000", 225.0, 12.0),
                          ("tempf_660010000", 226.0, 12.0), ("tempf_700010000", 40.0, 6.0)],
    "pump_speed": [("pmpvel_565", 120.0, 10.0)],
    "void_fraction": [("voidf_670010000", 0.35, 0.1), ("voidf_680010000", 0.33, 0.1)],
    "level": [("cntrlvar_611", 12.1, 1.5), ("cntrlvar_621", 12.0, 1.5)],
    "control_variable": [("cntrlvar_901", 50.0, 8.0), ("cntrlvar_902", 1.0, 0.2),
                         ("cntrlvar_905", 20.0, 3.0)],
    "flow": [("mflowj_690000000", 520.0, 40.0)],
}

DEFAULT_INFORMATIVE = {k: len(v) for k, v in _INFORMATIVE.items()}
DEFAULT_DECOY = {k: len(v) for k, v in _DECOY.items()}


def _variant_name(name: str, n: int) -> str:
    if n == 0:
        return name
    prefix, code = name.split("_", 1)
    return f"{prefix}_{int(code) + 7 * n}"


@dataclass
class GeneratorConfig:
    n_cases: int = 346
    test_fraction: float = 70 / 346
    duration: float = 100.0
    frequency: float = 2.0
    diameter_min: float = 0.05
    diameter_max: float = 1.0
    noise_level: float = 0.01
    discharge_spread: float = 0.0
    n_channels: int = 38
    informative_counts: dict = field(default_factory=lambda: dict(DEFAULT_INFORMATIVE))
    decoy_counts: dict = field(default_factory=lambda: dict(DEFAULT_DECOY))

    @property
    def n_samples(self) -> int:
        return int(round(self.duration * self.frequency))

    def validate(self) -> None:
        if self.n_cases < 2:
            raise ConfigError(f"n_cases must be >= 2, got {self.n_cases}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")
        if not 0.0 < self.diameter_min <= self.diameter_max <= 1.0:
            raise ConfigError("need 0 < diameter_min <= diameter_max <= 1")
        if self.duration <= 0 or self.frequency <= 0 or self.n_samples < 2:
            raise ConfigError("duration and frequency must give at least 2 samples")
        if self.noise_level < 0:
            raise ConfigError("noise_level must be >= 0")
        if self.discharge_spread < 0:
            raise ConfigError("discharge_spread must be >= 0")
        for counts in (self.informative_counts, self.decoy_counts):
            unknown = set(counts) - set(KINDS)
            if unknown:
                raise ConfigError(f"unknown channel kinds: {sorted(unknown)}")
            if any(int(v) < 0 for v in counts.values()):
                raise ConfigError("channel counts must be non-negative")
        total = sum(self.informative_counts.values()) + sum(self.decoy_counts.values())
        if total != self.n_channels:
            raise ConfigError(f"channel counts sum to {total}, expected {self.n_channels}")

    def to_dict(self) -> dict:
        return asdict(self)


def channel_catalog(config: GeneratorConfig | None = None) -> list[ChannelSpec]:
    """Deterministic channel list grouped by kind; within a kind, informative channels come first."""
    config = config or GeneratorConfig()
    config.validate()
    specs: list[ChannelSpec] = []
    for kind in KINDS:
        templates = _INFORMATIVE[kind]
        for j in range(int(config.informative_counts.get(kind, 0))):
            name, law, params, span = templates[j % len(templates)]
            name = _variant_name(name, j // len(templates))
            specs.append(ChannelSpec(name, kind, True, law, dict(params), float(span),
                                     config.noise_level * span))
        templates = _DECOY[kind]
        for j in range(int(config.decoy_counts.get(kind, 0))):
            name, base, span = templates[j % len(templates)]
            name = _variant_name(name, j // len(templates))
            specs.append(ChannelSpec(name, kind, False, "decoy", dict(base=base, range=span),
                                     float(span), config.noise_level * span))
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ConfigError("channel names are not unique")
    return specs


# --------------------------------------------------------------------------
# cases

@dataclass(frozen=True)
class BreakSpec:
    location: str
    diameter: float

    def __post_init__(self):
        if self.location not in CLASSES:
            raise ValidationError(f"unknown break location {self.location!r}; expected one of {CLASSES}")
        if not (0.0 < self.diameter <= 1.0) or not math.isfinite(self.diameter):
            raise ValidationError(f"break diameter must lie in (0, 1], got {self.diameter}")

    @property
    def class_index(self) -> int:
        return CLASSES.index(self.location)


@dataclass(frozen=True, eq=False)
class TransientCase:
    values: np.ndarray          # P x T
    label: BreakSpec
    case_id: int
    seed: int
    names: tuple[str, ...]
    frequency: float = 2.0

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64)
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "names", tuple(self.names))
        if arr.ndim != 2 or arr.shape[0] != len(self.names):
            raise ValidationError(f"case {self.case_id}: values shape {arr.shape} vs {len(self.names)} names")

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.values.shape[1]) / self.frequency

    def select(self, names: Sequence[str]) -> TransientCase:
        index = {n: i for i, n in enumerate(self.names)}
        missing = [n for n in names if n not in index]
        if missing:
            raise ValidationError(f"case {self.case_id} lacks channels {missing}")
        rows = [index[n] for n in names]
        return TransientCase(self.values[rows], self.label, self.case_id, self.seed, tuple(names),
                             self.frequency)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TransientCase):
            return NotImplemented
        return (self.case_id == other.case_id and self.seed == other.seed
                and self.label == other.label and self.names == other.names
                and self.values.shape == other.values.shape
                and bool(np.array_equal(self.values, other.values)))

    __hash__ = None


def generate_case(catalog: Sequence[ChannelSpec], break_spec: BreakSpec, seed: int,
                  case_id: int = 0, duration: float = 100.0, frequency: float = 2.0,
                  discharge_spread: float = 0.0) -> TransientCase:
    if not isinstance(break_spec, BreakSpec):
        raise ValidationError("break_spec must be a BreakSpec")
    n_t = int(round(duration * frequency))
    t = np.arange(n_t) / frequency
    rng = Rng(seed)
    d, loc = break_spec.diameter, break_spec.location
    if discharge_spread > 0:
        # unobserved discharge coefficient: the plant responds to an effective
        # break size, so the labeled diameter is only identifiable up to it
        d = d * math.exp(discharge_spread * rng.child("discharge").normal(0.0, 1.0))
    rows = []
    # Draw order is fixed per channel so streams do not depend on the label.
    for spec in catalog:
        if spec.law == "decoy":
            offset, drift = rng.normal(0.0, 0.02), rng.normal(0.0, 0.01)
            clean = _law_decoy(t, d, loc, spec.params, offset, drift)
        else:
            rng.normal(0.0, 0.02), rng.normal(0.0, 0.01)
            clean = LAWS[spec.law](t, d, loc, spec.params)
        noise = rng.normal(0.0, 1.0, n_t) * spec.noise
        rows.append(np.asarray(clean, dtype=float) + noise)
    values = np.vstack(rows) if rows else np.zeros((0, n_t))
    return TransientCase(values, break_spec, case_id, seed, tuple(s.name for s in catalog), frequency)


@dataclass(eq=False)
class Dataset:
    catalog: list[ChannelSpec]
    cases: list[TransientCase]
    split: dict[int, str]
    config: GeneratorConfig
    seed: int

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.catalog)

    def by_split(self, which: str) -> list[TransientCase]:
        return [c for c in self.cases if self.split.get(c.case_id) == which]

    @property
    def train_cases(self) -> list[TransientCase]:
        return self.by_split("train")

    @property
    def test_cases(self) -> list[TransientCase]:
        return self.by_split("test")

    def case(self, case_id: int) -> TransientCase:
        for c in self.cases:
            if c.case_id == case_id:
                return c
        raise KeyError(case_id)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.catalog == other.catalog and self.split == other.split
                and self.seed == other.seed and self.config.to_dict() == other.config.to_dict()
                and len(self.cases) == len(other.cases)
                and all(a == b for a, b in zip(self.cases, other.cases)))


def draw_labels(config: GeneratorConfig, seed: int) -> tuple[list[BreakSpec], list[int], dict[int, str]]:
    """Labels, per-case seeds and the train/test split for a dataset."""
    root = Rng(seed).child("dataset")
    n = config.n_cases
    lab = root.child("labels")
    lo, hi = math.log(config.diameter_min), math.log(config.diameter_max)
    diameters = np.exp(lab.uniform(lo, hi, n))
    diameters = np.clip(diameters, config.diameter_min, config.diameter_max)
    locs = np.array([CLASSES[0]] * (n // 2) + [CLASSES[1]] * (n - n // 2))
    locs = locs[lab.permutation(n)]
    specs = [BreakSpec(str(l), float(dm)) for l, dm in zip(locs, diameters)]
    seeds = [root.child("cases").derive_seed(i) for i in range(n)]
    n_test = min(max(int(round(n * config.test_fraction)), 1), n - 1)
    perm = root.child("split").permutation(n)
    test = set(int(i) for i in perm[:n_test])
    split = {i: ("test" if i in test else "train") for i in range(n)}
    return specs, seeds, split


def _generate_one(args):
    catalog, spec, seed, case_id, duration, frequency, spread = args
    return generate_case(catalog, spec, seed, case_id, duration, frequency, spread)


def generate_dataset(config: GeneratorConfig | None = None, seed: int = 0,
                     workers: int = 1) -> Dataset:
    config = config or GeneratorConfig()
    config.validate()
    catalog = channel_catalog(config)
    specs, seeds, split = draw_labels(config, seed)
    jobs = [(catalog, s, sd, i, config.duration, config.frequency, config.discharge_spread)
            for i, (s, sd) in enumerate(zip(specs, seeds))]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            cases = list(pool.map(_generate_one, jobs, chunksize=8))
    else:
        cases = [_generate_one(j) for j in jobs]
    return Dataset(catalog, cases, split, config, int(seed))


# --------------------------------------------------------------------------
# on-disk format

def case_filename(case_id: int) -> str:
    return f"case_{case_id:04d}.csv"


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_dataset(dataset: Dataset, directory) -> Path:
    directory = Path(directory)
    (directory / "cases").mkdir(parents=True, exist_ok=True)
    manifest = {
        "format": FORMAT,
        "master_seed": dataset.seed,
        "generator_config": dataset.config.to_dict(),
        "classes": list(CLASSES),
        "catalog": [s.to_dict() for s in dataset.catalog],
        "cases": [
            {"case_id": c.case_id, "seed": c.seed, "location": c.label.location,
             "diameter": c.label.diameter, "split": dataset.split[c.case_id],
             "file": f"cases/{case_filename(c.case_id)}"}
            for c in dataset.cases
        ],
    }
    with open(directory / MANIFEST, "w", newline="\n") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    names = dataset.names
    for c in dataset.cases:
        lines = ["time," + ",".join(names)]
        for j, t in enumerate(c.times):
            lines.append(_fmt(t) + "," + ",".join(_fmt(v) for v in c.values[:, j]))
        with open(directory / "cases" / case_filename(c.case_id), "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
    return directory


def read_manifest(directory) -> dict:
    path = Path(directory) / MANIFEST
    if not path.is_file():
        raise DatasetLoadError(f"missing manifest {path}", path=path)
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DatasetLoadError(f"corrupt manifest {path}: {exc}", path=path) from exc
    for key in ("catalog", "cases", "generator_config", "master_seed"):
        if key not in manifest:
            raise DatasetLoadError(f"manifest {path} lacks {key!r}", path=path)
    return manifest


def _read_case_csv(path: Path, names: tuple[str, ...], n_t: int, case_id: int) -> np.ndarray:
    if not path.is_file():
        raise DatasetLoadError(f"case {case_id}: file {path} is missing", path=path, case_id=case_id)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetLoadError(f"case {case_id}: empty file {path}", path=path, case_id=case_id)
    header = lines[0].split(",")
    if header[0] != "time" or len(header) - 1 != len(names):
        raise DatasetLoadError(
            f"case {case_id}: {path} has {len(header) - 1} channels, manifest declares {len(names)}",
            path=path, case_id=case_id)
    if tuple(header[1:]) != names:
        diff = [(i, m, h) for i, (m, h) in enumerate(zip(names, header[1:])) if m != h]
        raise DatasetLoadError(
            f"case {case_id}: {path} header order disagrees with manifest at {diff[:3]}",
            path=path, case_id=case_id)
    rows = lines[1:]
    if len(rows) != n_t:
        raise DatasetLoadError(f"case {case_id}: {path} has {len(rows)} rows, expected {n_t}",
                               path=path, case_id=case_id)
    try:
        data = np.array([[float(v) for v in r.split(",")] for r in rows])
    except ValueError as exc:
        raise DatasetLoadError(f"case {case_id}: unparsable value in {path}: {exc}",
                               path=path, case_id=case_id) from exc
    if data.shape != (n_t, len(names) + 1):
        raise DatasetLoadError(f"case {case_id}: ragged rows in {path}", path=path, case_id=case_id)
    return data[:, 1:].T


def load_dataset(directory, splits: Iterable[str] | None = None,
                 access_log: list | None = None) -> Dataset:
    """Load a dataset directory.

    ``splits`` restricts which case files are read (e.g. ``{"train"}``); the
    manifest still carries the full split.  Every file opened is appended to
    ``access_log`` when one is given.
    """
    directory = Path(directory)
    manifest = read_manifest(directory)
    if access_log is not None:
        access_log.append(str(directory / MANIFEST))
    try:
        cfg = GeneratorConfig(**manifest["generator_config"])
        catalog = [ChannelSpec.from_dict(d) for d in manifest["catalog"]]
    except (TypeError, KeyError) as exc:
        raise DatasetLoadError(f"corrupt manifest {directory / MANIFEST}: {exc}",
                               path=directory / MANIFEST) from exc
    names = tuple(s.name for s in catalog)
    if len(names) != cfg.n_channels:
        raise DatasetLoadError(f"manifest catalog has {len(names)} channels, config says {cfg.n_channels}",
                               path=directory / MANIFEST)
    wanted = set(splits) if splits is not None else None
    cases, split = [], {}
    for entry in manifest["cases"]:
        cid = int(entry["case_id"])
        split[cid] = entry["split"]
        if wanted is not None and entry["split"] not in wanted:
            continue
        path = directory / entry["file"]
        if access_log is not None:
            access_log.append(str(path))
        values = _read_case_csv(path, names, cfg.n_samples, cid)
        label = BreakSpec(entry["location"], float(entry["diameter"]))
        cases.append(TransientCase(values, label, cid, int(entry["seed"]), names, cfg.frequency))
    return Dataset(catalog, cases, split, cfg, int(manifest["master_seed"]))
