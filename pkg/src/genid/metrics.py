"""Error metrics, correlation diagnostics and regime sweeps."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EmptyInputError,
    GenIdError,
    InvalidArgumentError,
    UndefinedNormalizationError,
    ZeroVarianceError,
)
from .series import MultiSeries


def _values(x):
    return x.data if isinstance(x, MultiSeries) else np.asarray(x, dtype=float)


def nrmse(truth, estimate, literal=False) -> float:
    """Root-mean-square error normalized by the root-mean-square truth.

    ``sqrt(mean_t ||x_t - y_t||^2) / sqrt(mean_t ||x_t||^2)`` as a fraction.
    ``literal=True`` drops the squares inside the sums (unsquared norms).
    """
    if isinstance(truth, MultiSeries) and isinstance(estimate, MultiSeries):
        if truth.labels != estimate.labels:
            raise InvalidArgumentError("channel layouts differ")
    x, y = _values(truth), _values(estimate)
    if x.shape != y.shape:
        raise InvalidArgumentError(f"shape mismatch {x.shape} vs {y.shape}")
    if x.ndim == 1:
        x, y = x[:, None], y[:, None]
    err = np.linalg.norm(x - y, axis=1)
    ref = np.linalg.norm(x, axis=1)
    if literal:
        num, den = np.mean(err), np.mean(ref)
    else:
        num, den = np.mean(err ** 2), np.mean(ref ** 2)
    if den == 0:
        raise UndefinedNormalizationError("truth is identically zero")
    return float(math.sqrt(num) / math.sqrt(den))


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise InvalidArgumentError("pearson needs two equal-length 1-D series of length >= 2")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0 or sy == 0:
        raise ZeroVarianceError("constant input has no correlation")
    r = float(dx @ dy) / (sx * sy)
    return max(-1.0, min(1.0, r))


def autocorrelation(x, max_lag: int) -> np.ndarray:
    """``r[k] = pearson(x[:T-k], x[k:])`` for k = 0..max_lag, with ``r[0] = 1``."""
    x = np.asarray(x, dtype=float)
    if max_lag < 0 or len(x) <= max_lag + 2:
        raise InvalidArgumentError("series must be longer than max_lag + 2")
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    if np.all(x == x[0]):
        raise ZeroVarianceError("constant input has no correlation")
    for k in range(1, max_lag + 1):
        out[k] = pearson(x[:len(x) - k], x[k:])
    return out


@dataclass
class NrmseSummary:
    mean: float
    median: float
    p95: float
    values: list = field(default_factory=list)

    def as_percent(self):
        return {"mean": 100 * self.mean, "median": 100 * self.median, "p95": 100 * self.p95}


def summarize(values) -> NrmseSummary:
    """Mean, median and linearly interpolated 95th percentile."""
    v = np.asarray(list(values), dtype=float)
    if v.size == 0:
        raise EmptyInputError("cannot summarize an empty list")
    return NrmseSummary(float(np.mean(v)), float(np.median(v)),
                        float(np.percentile(v, 95, method="linear")), [float(a) for a in v])


def spearman(x, y) -> float:
    from scipy.stats import spearmanr

    return float(spearmanr(x, y).statistic)


def metrics_report(model, regime, summary: NrmseSummary, seed, extra=None):
    doc = {
        "model": model,
        "regime": regime,
        "mean": summary.mean,
        "median": summary.median,
        "p95": summary.p95,
        "n_samples": len(summary.values),
        "seed": seed,
    }
    if extra:
        doc.update(extra)
    return doc


def write_json(doc, path):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    Path(path).write_text(text, encoding="utf-8")
    return text


# -- regime grids ------------------------------------------------------------------

@dataclass
class RegimeGrid:
    """Rectangular grid of NRMSE values; NaN marks a failed cell."""

    row_label: str
    row_values: list
    col_label: str
    col_values: list
    values: np.ndarray
    failures: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.row_values),
                                                                   len(self.col_values))

    def to_csv(self, path):
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"{self.row_label}\\{self.col_label}"] + [repr(float(c)) for c in self.col_values])
            for r, row in zip(self.row_values, self.values):
                w.writerow([repr(float(r))] + [repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path):
        with open(path, encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        row_label, col_label = rows[0][0].split("\\", 1)
        cols = [float(c) for c in rows[0][1:]]
        rvals = [float(r[0]) for r in rows[1:]]
        vals = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
        return cls(row_label, rvals, col_label, cols, vals)

    def to_dict(self):
        d = asdict(self)
        d["values"] = self.values.tolist()
        return d


def regime_sweep(fit_evaluate, resistances, col_label="model", col_values=(0,)) -> RegimeGrid:
    """Evaluate ``fit_evaluate(resistance)`` for each resistance.

    The callable generates its own train/test pair, fits on the first and
    returns the NRMSE on the second (or one value per column).  Failures are
    recorded as NaN cells with their messages instead of aborting the sweep.
    """
    vals = np.full((len(resistances), len(col_values)), np.nan)
    failures = {}
    for i, r in enumerate(resistances):
        try:
            vals[i] = np.atleast_1d(fit_evaluate(r))
        except GenIdError as exc:
            failures[repr(float(r))] = f"{type(exc).__name__}: {exc}"
    return RegimeGrid("resistance", [float(r) for r in resistances], col_label,
                      list(col_values), vals, failures)
