"""Supervised datasets built from simulated telemetry.

Covers channel selection, first differencing (VAR path), per-channel
standardization with training statistics (LSTM path), CSV persistence and
trajectory generation with divergence retries.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CsvParseError,
    DegenerateChannelError,
    EmptyInputError,
    InvalidArgumentError,
    SimulationDivergedError,
    TooShortError,
)
from .plant import PlantConfig, draw_schedule, n_samples_for, randomize_plant, simulate_schedules
from .series import MultiSeries
from .telegraph import FaultParams, TelegraphParams


class Transform(enum.Enum):
    RAW = "raw"
    FIRST_DIFFERENCE = "first_difference"
    STANDARDIZED = "standardized"


class Role(enum.Enum):
    TRAIN = "train"
    TEST = "test"


class Direction(enum.Enum):
    PQ_TO_VPHI = "PQ_to_VPhi"
    VPHI_TO_PQ = "VPhi_to_PQ"

    @property
    def channels(self):
        if self is Direction.PQ_TO_VPHI:
            return ("P", "Q"), ("phi", "V")
        return ("V", "phi"), ("P", "Q")


@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: MultiSeries
    outputs: MultiSeries
    transform: Transform = Transform.RAW
    transform_stats: dict | None = None

    def __post_init__(self):
        if len(self.inputs) != len(self.outputs):
            raise InvalidArgumentError("inputs and outputs must have equal length")
        if (self.transform_stats is None) != (self.transform is Transform.RAW):
            raise InvalidArgumentError("transform_stats present iff transform is not RAW")
        if self.transform is Transform.STANDARDIZED:
            if any(s <= 0 for _, s in self.transform_stats.values()):
                raise InvalidArgumentError("standardized channel with stddev <= 0")

    def __len__(self):
        return len(self.outputs)


@dataclass(frozen=True, eq=False)
class SampleSet:
    trajectories: list
    role: Role = Role.TRAIN

    def __post_init__(self):
        if not self.trajectories:
            raise EmptyInputError("a sample set needs at least one trajectory")
        first = self.trajectories[0]
        for d in self.trajectories[1:]:
            if (d.inputs.labels != first.inputs.labels
                    or d.outputs.labels != first.outputs.labels
                    or d.inputs.sample_rate != first.inputs.sample_rate):
                raise InvalidArgumentError("trajectories must share channel layout and sample rate")

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def __getitem__(self, i):
        return self.trajectories[i]

    @property
    def input_labels(self):
        return self.trajectories[0].inputs.labels

    @property
    def output_labels(self):
        return self.trajectories[0].outputs.labels

    def stacked(self):
        """Inputs and outputs as ``(T, N, C)`` arrays; lengths must agree."""
        lengths = {len(d) for d in self.trajectories}
        if len(lengths) != 1:
            raise InvalidArgumentError("trajectories have unequal lengths")
        x = np.stack([d.inputs.data for d in self.trajectories], axis=1)
        y = np.stack([d.outputs.data for d in self.trajectories], axis=1)
        return x, y


def make_dataset(series: MultiSeries, direction=Direction.PQ_TO_VPHI) -> Dataset:
    ins, outs = Direction(direction).channels
    return Dataset(series.select(ins), series.select(outs))


def make_sample_set(series_list, direction=Direction.PQ_TO_VPHI, role=Role.TRAIN) -> SampleSet:
    return SampleSet([make_dataset(s, direction) for s in series_list], Role(role))


# -- differencing ----------------------------------------------------------------

def difference(series: MultiSeries):
    """Increments ``x[t+1] - x[t]`` and the first row as anchors."""
    if len(series) < 2:
        raise TooShortError("differencing needs at least two samples")
    anchors = series.data[0].copy()
    return series.with_data(np.diff(series.data, axis=0), t0=series.t0 + series.dt), anchors


def undifference(increments: MultiSeries, anchors) -> MultiSeries:
    """Inverse of :func:`difference`: the anchor row followed by running sums."""
    anchors = np.asarray(anchors, dtype=float).reshape(1, -1)
    levels = np.concatenate([anchors, anchors + np.cumsum(increments.data, axis=0)])
    return increments.with_data(levels, t0=increments.t0 - increments.dt)


def difference_dataset(ds: Dataset, difference_inputs=False) -> Dataset:
    """VAR-domain view: output increments aligned with inputs from sample 1 on."""
    if ds.transform is not Transform.RAW:
        raise InvalidArgumentError("differencing expects a raw dataset")
    outs, anchors = difference(ds.outputs)
    if difference_inputs:
        ins, in_anchors = difference(ds.inputs)
        stats = dict(zip(ds.outputs.labels, anchors))
        stats.update({"input:" + k: v for k, v in zip(ds.inputs.labels, in_anchors)})
    else:
        ins = ds.inputs.window(1)
        stats = dict(zip(ds.outputs.labels, anchors))
    return Dataset(ins, outs, Transform.FIRST_DIFFERENCE, {k: float(v) for k, v in stats.items()})


def difference_set(sample_set: SampleSet, difference_inputs=False) -> SampleSet:
    return SampleSet([difference_dataset(d, difference_inputs) for d in sample_set],
                     sample_set.role)


# -- standardization ---------------------------------------------------------------

@dataclass(frozen=True)
class Standardizer:
    """Per-channel ``(mean, std)`` keyed by channel label."""

    inputs: dict
    outputs: dict

    @classmethod
    def fit(cls, train: SampleSet, min_std=1e-12):
        if train.role is not Role.TRAIN:
            raise InvalidArgumentError("standardization statistics must come from a TRAIN set")
        x = np.concatenate([d.inputs.data for d in train])
        y = np.concatenate([d.outputs.data for d in train])

        def stats(data, labels):
            out = {}
            for j, lab in enumerate(labels):
                mu, sd = float(np.mean(data[:, j])), float(np.std(data[:, j]))
                if not sd > min_std:
                    raise DegenerateChannelError(lab)
                out[lab] = (mu, sd)
            return out

        return cls(stats(x, train.input_labels), stats(y, train.output_labels))

    @staticmethod
    def _apply(series, table, inverse=False):
        mu = np.array([table[k][0] for k in series.labels])
        sd = np.array([table[k][1] for k in series.labels])
        data = series.data * sd + mu if inverse else (series.data - mu) / sd
        return series.with_data(data)

    def apply(self, sample_set: SampleSet) -> SampleSet:
        out = []
        for d in sample_set:
            if d.transform is not Transform.RAW:
                raise InvalidArgumentError("standardization expects raw datasets")
            stats = {**{"input:" + k: v for k, v in self.inputs.items()}, **self.outputs}
            out.append(Dataset(self._apply(d.inputs, self.inputs),
                               self._apply(d.outputs, self.outputs),
                               Transform.STANDARDIZED, stats))
        return SampleSet(out, sample_set.role)

    def invert_outputs(self, series: MultiSeries) -> MultiSeries:
        return self._apply(series, self.outputs, inverse=True)

    def to_dict(self):
        return {"inputs": {k: list(v) for k, v in self.inputs.items()},
                "outputs": {k: list(v) for k, v in self.outputs.items()}}

    @classmethod
    def from_dict(cls, d):
        return cls({k: tuple(v) for k, v in d["inputs"].items()},
                   {k: tuple(v) for k, v in d["outputs"].items()})


def standardize(train: SampleSet, *others: SampleSet):
    """Standardize ``train`` and any further sets with training statistics only.

    Returns ``(standardizer, [train_std, *others_std])``.
    """
    st = Standardizer.fit(train)
    return st, [st.apply(s) for s in (train, *others)]


# -- CSV ------------------------------------------------------------------------------

def save_csv(series: MultiSeries, path):
    lines = [",".join(("t",) + series.labels)]
    times = series.times
    for t, row in zip(times, series.data):
        lines.append(",".join([repr(float(t))] + [repr(float(v)) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_csv(path, sample_rate=None) -> MultiSeries:
    """Parse a file written by :func:`save_csv`.

    The sample rate is inferred from the ``t`` column unless given.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].strip():
        raise CsvParseError("empty file or missing header", 1)
    header = lines[0].split(",")
    if header[0] != "t" or len(header) < 2:
        raise CsvParseError("header must start with 't' followed by channel labels", 1)
    labels = header[1:]
    if len(set(labels)) != len(labels) or "t" in labels:
        raise CsvParseError("duplicate channel label in header", 1)
    if any(not lab for lab in labels):
        raise CsvParseError("empty channel label in header", 1)
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(header):
            raise CsvParseError(f"expected {len(header)} cells, found {len(cells)}", i)
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise CsvParseError(f"non-numeric cell ({exc})", i) from None
    if not rows:
        raise CsvParseError("no data rows", 2)
    arr = np.array(rows)
    t = arr[:, 0]
    if sample_rate is None:
        if len(t) < 2:
            raise CsvParseError("cannot infer the sample rate from a single row", 2)
        steps = np.diff(t)
        step = (t[-1] - t[0]) / (len(t) - 1)
        if not step > 0 or np.max(np.abs(steps - step)) > 1e-6 * step:
            bad = int(np.argmax(np.abs(steps - step))) + 3
            raise CsvParseError("t column is not uniformly spaced", bad)
        sample_rate = float(f"{1.0 / step:.9g}")
    return MultiSeries(sample_rate, tuple(labels), arr[:, 1:], float(t[0]))


def save_set_csv(series_list, path):
    """All trajectories in one file with a leading ``trajectory`` index column."""
    first = series_list[0]
    lines = [",".join(("trajectory", "t") + first.labels)]
    for j, s in enumerate(series_list):
        if s.labels != first.labels:
            raise InvalidArgumentError("trajectories must share channel labels")
        for t, row in zip(s.times, s.data):
            lines.append(",".join([str(j), repr(float(t))] + [repr(float(v)) for v in row]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def load_set_csv(path, sample_rate=None) -> list:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
    if header[:2] != ["trajectory", "t"] or len(header) < 3:
        raise CsvParseError("header must start with 'trajectory,t' followed by channel labels", 1)
    try:
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise CsvParseError(f"malformed row ({exc})", 0) from None
    if arr.shape[0] == 0 or arr.shape[1] != len(header):
        raise CsvParseError("no data rows or wrong column count", 2)
    out = []
    idx = arr[:, 0].astype(int)
    for j in np.unique(idx):
        block = arr[idx == j]
        t = block[:, 1]
        rate = sample_rate
        if rate is None:
            if len(t) < 2:
                raise CsvParseError(f"trajectory {j} has a single row", 0)
            rate = float(f"{(len(t) - 1) / (t[-1] - t[0]):.9g}")
        out.append(MultiSeries(rate, tuple(header[2:]), block[:, 2:].copy(), float(t[0])))
    return out


def write_manifest(path, *, seed, plant, telegraph, transform, role, extra=None):
    doc = {
        "seed": seed,
        "plant": plant.to_dict() if isinstance(plant, PlantConfig) else plant,
        "telegraph": {"rate_to_fault": telegraph.rate_to_fault,
                      "rate_to_clear": telegraph.rate_to_clear},
        "transform": Transform(transform).value,
        "role": Role(role).value,
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return doc


# -- trajectory generation --------------------------------------------------------

@dataclass
class GeneratedSet:
    series: list
    configs: list
    seeds: list
    retries: int = 0
    faults: list = field(default_factory=list)


def generate_trajectories(
    plant: PlantConfig,
    telegraph: TelegraphParams,
    base_fault: FaultParams,
    n: int,
    duration: float,
    seed: int,
    randomize=False,
    plant_scale=0.1,
    fault_scale=0.1,
    max_attempts=20,
) -> GeneratedSet:
    """Simulate ``n`` surviving trajectories.

    Trajectory ``j`` attempt ``a`` draws everything from
    ``default_rng([*seed, j, a])`` (``seed`` is an int or a tuple of ints); diverged attempts are redrawn so the
    returned set only holds trajectories the generator survived.
    """
    plant.validate()
    key = [int(k) for k in np.atleast_1d(seed)]
    n_samples = n_samples_for(duration, plant.sample_dt)
    result = [None] * n
    configs = [None] * n
    seeds = [None] * n
    pending = list(range(n))
    attempt = 0
    retries = 0
    while pending:
        if attempt >= max_attempts:
            raise SimulationDivergedError(float("nan"), f"{len(pending)} trajectories never survived")
        batch_cfg, batch_sched = [], []
        for j in pending:
            rng = np.random.default_rng([*key, j, attempt])
            cfg = randomize_plant(plant, rng, plant_scale) if randomize else plant
            batch_cfg.append(cfg)
            batch_sched.append(
                draw_schedule(n_samples, telegraph, base_fault, rng, plant.sample_dt, fault_scale)
            )
        out = []
        for i in range(0, len(pending), 256):
            out.extend(simulate_schedules(batch_cfg[i:i + 256], batch_sched[i:i + 256],
                                          on_diverge="return"))
        still = []
        for j, cfg, res in zip(pending, batch_cfg, out):
            if isinstance(res, SimulationDivergedError):
                still.append(j)
                continue
            result[j], configs[j], seeds[j] = res, cfg, [*key, j, attempt]
        retries += len(still)
        pending = still
        attempt += 1
    return GeneratedSet(result, configs, seeds, retries)


def dataset_fingerprint(sample_set: SampleSet):
    """Cheap summary used in manifests: trajectory count, length, channel means."""
    x, y = sample_set.stacked()
    return {
        "n": len(sample_set),
        "length": x.shape[0],
        "input_mean": [float(v) for v in x.mean(axis=(0, 1))],
        "output_mean": [float(v) for v in y.mean(axis=(0, 1))],
    }
