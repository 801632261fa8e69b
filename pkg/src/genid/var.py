"""Vector auto-regression with exogenous inputs (VARX).

    y_t = mu + sum_{i=1..p} A_i y_{t-i} + sum_{i=1..p} B_i x_{t-i} + e_t

With ``contemporaneous=True`` the exogenous lags run over 0..p-1 instead,
so B_1 multiplies x_t.

Estimated by ordinary least squares on regressors stacked over all
trajectories of a :class:`~genid.dataset.SampleSet`.  Also provides the
information criteria used for order selection, the coefficient-decay order
rule and the lagged inverse-correlation diagnostic.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar

from .dataset import Dataset, SampleSet
from .errors import (
    DiagnosticFailedError,
    IdentifiabilityError,
    InsufficientHistoryError,
    InvalidArgumentError,
    NoValidOrderError,
    SingularDesignError,
    UndefinedCriterionError,
)
from .series import MultiSeries

CRITERIA = ("aic", "bic", "hqic", "fpe")


@dataclass(eq=False)
class VarxModel:
    order_p: int
    intercept_mu: np.ndarray          # (d,)
    endo_coeffs: np.ndarray           # (p, d, d)
    exo_coeffs: np.ndarray            # (p, d, m)
    noise_cov: np.ndarray             # (d, d)
    fit_loglik: float = float("nan")
    n_eff: int = 0
    output_labels: tuple = ()
    input_labels: tuple = ()
    beta: float | None = None
    meta: dict = field(default_factory=dict)
    contemporaneous: bool = False

    def __post_init__(self):
        # contiguous copies keep fresh and reloaded models bit-identical in predict
        self.intercept_mu = np.ascontiguousarray(self.intercept_mu, float)
        self.endo_coeffs = np.ascontiguousarray(self.endo_coeffs, float)
        self.exo_coeffs = np.ascontiguousarray(self.exo_coeffs, float)
        self.noise_cov = np.ascontiguousarray(self.noise_cov, float)
        d = self.intercept_mu.shape[0]
        if self.order_p < 1 or self.endo_coeffs.shape != (self.order_p, d, d):
            raise InvalidArgumentError("endo_coeffs must have shape (p, d, d)")
        if self.exo_coeffs.ndim != 3 or self.exo_coeffs.shape[:2] != (self.order_p, d):
            raise InvalidArgumentError("exo_coeffs must have shape (p, d, m)")
        for a in (self.intercept_mu, self.endo_coeffs, self.exo_coeffs, self.noise_cov):
            if not np.all(np.isfinite(a)):
                raise InvalidArgumentError("model coefficients must be finite")

    @property
    def output_dim(self):
        return self.intercept_mu.shape[0]

    @property
    def input_dim(self):
        return self.exo_coeffs.shape[2]

    @property
    def regressors_per_eq(self):
        return 1 + self.order_p * (self.output_dim + self.input_dim)

    @property
    def n_params(self):
        return self.output_dim * self.regressors_per_eq

    def to_dict(self):
        return {
            "order": self.order_p,
            "intercept": self.intercept_mu.tolist(),
            "endo": [a.tolist() for a in self.endo_coeffs],
            "exo": [b.tolist() for b in self.exo_coeffs],
            "noise_cov": self.noise_cov.tolist(),
            "loglik": self.fit_loglik,
            "n_eff": self.n_eff,
            "output_labels": list(self.output_labels),
            "input_labels": list(self.input_labels),
            "beta": self.beta,
            "meta": self.meta,
            "contemporaneous": self.contemporaneous,
        }

    @classmethod
    def from_dict(cls, d):
        p = d["order"]
        n_out = len(d["intercept"])
        exo = np.asarray(d["exo"], float).reshape(p, n_out, -1)
        return cls(p, np.asarray(d["intercept"]), np.asarray(d["endo"], float).reshape(p, n_out, n_out),
                   exo, np.asarray(d["noise_cov"]), d["loglik"], d["n_eff"],
                   tuple(d["output_labels"]), tuple(d["input_labels"]), d.get("beta"),
                   d.get("meta", {}), bool(d.get("contemporaneous", False)))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# -- design matrices ---------------------------------------------------------------

def _arrays(ds):
    y = ds.outputs.data if isinstance(ds, Dataset) else np.asarray(ds[0], float)
    x = ds.inputs.data if isinstance(ds, Dataset) else ds[1]
    if x is None:
        return y, np.zeros((len(y), 0))
    return y, np.asarray(x, float)


def _lagged(y, x, p, start, contemporaneous=False):
    """Regressor rows ``[1, y_{t-1..t-p}, x_{t-1..t-p}]`` for ``t = start..T-1``.

    ``contemporaneous`` shifts the exogenous block to ``x_{t..t-p+1}``.
    """
    t_len = y.shape[0]
    rows = t_len - start
    c = 1 if contemporaneous else 0
    parts = [np.ones((rows, 1))]
    parts += [y[start - i:t_len - i] for i in range(1, p + 1)]
    parts += [x[start - i + c:t_len - i + c] for i in range(1, p + 1)]
    return np.hstack(parts), y[start:]


def design(train, p, start=None, contemporaneous=False):
    """Stacked regressors and targets over every trajectory in ``train``."""
    start = p if start is None else start
    if start < p:
        raise InvalidArgumentError("estimation start must be >= order")
    xs, ys = [], []
    for ds in train:
        y, x = _arrays(ds)
        d = y.shape[1]
        if y.shape[0] <= p + d * p or y.shape[0] <= start:
            raise IdentifiabilityError(
                f"trajectory of length {y.shape[0]} too short for order {p} with {d} outputs"
            )
        z, t = _lagged(y, x, p, start, contemporaneous)
        xs.append(z)
        ys.append(t)
    return np.vstack(xs), np.vstack(ys)


def _unpack(coef, p, d, m):
    mu = coef[0]
    endo = np.stack([coef[1 + i * d:1 + (i + 1) * d].T for i in range(p)])
    off = 1 + p * d
    exo = np.stack([coef[off + i * m:off + (i + 1) * m].T for i in range(p)]) if m else np.zeros((p, d, 0))
    return mu, endo, exo


def gaussian_loglik(resid):
    """Concentrated Gaussian log-likelihood at the MLE covariance."""
    n, d = resid.shape
    sigma = resid.T @ resid / n
    sign, logdet = np.linalg.slogdet(sigma)
    if sign <= 0:
        return sigma, -math.inf if sign == 0 else float("nan")
    return sigma, -0.5 * n * (d * math.log(2 * math.pi) + logdet + d)


def fit(train: SampleSet, order_p: int, start=None, contemporaneous=False) -> VarxModel:
    """Equation-by-equation OLS.

    ``start`` fixes the first target index of every trajectory (defaults to
    ``order_p``); order scans pass a common start so all candidates share
    one estimation sample.
    """
    if order_p < 1:
        raise InvalidArgumentError("order_p must be >= 1")
    z, t = design(train, order_p, start, contemporaneous)
    if z.shape[0] <= z.shape[1]:
        raise IdentifiabilityError("fewer stacked observations than regressors")
    coef, _, rank, sv = np.linalg.lstsq(z, t, rcond=None)
    if rank < z.shape[1] or sv[-1] <= sv[0] * z.shape[0] * np.finfo(float).eps:
        raise SingularDesignError(f"regressor matrix rank {rank} < {z.shape[1]} columns")
    resid = t - z @ coef
    sigma, ll = gaussian_loglik(resid)
    d = t.shape[1]
    m = (z.shape[1] - 1) // order_p - d
    mu, endo, exo = _unpack(coef, order_p, d, m)
    first = train[0] if isinstance(train[0], Dataset) else None
    return VarxModel(
        order_p, mu, endo, exo, sigma, ll, z.shape[0],
        first.outputs.labels if first else (), first.inputs.labels if first else (),
        contemporaneous=contemporaneous,
    )


def fit_restricted_beta(train: SampleSet, order_p: int, bounds=(-10.0, 10.0)) -> VarxModel:
    """Variant with exogenous blocks tied to the endogenous ones, B_i = beta * A_i.

    Needs as many inputs as outputs.  For fixed beta the model is linear in
    (mu, A) with regressors ``y + beta * x``; beta is found by a bounded
    scalar search on the residual sum of squares.
    """
    pairs = [_arrays(ds) for ds in train]
    if pairs[0][1].shape[1] != pairs[0][0].shape[1]:
        raise InvalidArgumentError("restricted beta needs input_dim == output_dim")

    def build(beta):
        zs, ts = [], []
        for y, x in pairs:
            z, t = _lagged(y + beta * x, np.zeros((len(y), 0)), order_p, order_p)
            zs.append(z)
            ts.append(y[order_p:])
        return np.vstack(zs), np.vstack(ts)

    def rss(beta):
        z, t = build(beta)
        coef = np.linalg.lstsq(z, t, rcond=None)[0]
        return float(np.sum((t - z @ coef) ** 2))

    beta = float(minimize_scalar(rss, bounds=bounds, method="bounded").x)
    z, t = build(beta)
    coef, _, rank, _ = np.linalg.lstsq(z, t, rcond=None)
    if rank < z.shape[1]:
        raise SingularDesignError("restricted design is rank deficient")
    resid = t - z @ coef
    sigma, ll = gaussian_loglik(resid)
    d = t.shape[1]
    mu, endo, _ = _unpack(coef, order_p, d, 0)
    return VarxModel(order_p, mu, endo, beta * endo, sigma, ll, z.shape[0],
                     train[0].outputs.labels, train[0].inputs.labels, beta)


def fitted_values(model: VarxModel, ds) -> np.ndarray:
    """One-step-ahead predictions for targets ``t = p..T-1``."""
    y, x = _arrays(ds)
    z, _ = _lagged(y, x, model.order_p, model.order_p, model.contemporaneous)
    return z @ _coef_matrix(model)


def residuals(model, ds):
    y, _ = _arrays(ds)
    return y[model.order_p:] - fitted_values(model, ds)


def _coef_matrix(model):
    parts = [model.intercept_mu[None, :]]
    parts += [a.T for a in model.endo_coeffs]
    parts += [b.T for b in model.exo_coeffs]
    return np.vstack(parts)


def predict(model: VarxModel, history: Dataset, horizon: int, future_inputs=None) -> MultiSeries:
    """Recursive forecast of the ``horizon`` samples following ``history``.

    Lagged outputs come from the history and then from earlier forecasts;
    exogenous lags come from ``history.inputs`` followed by
    ``future_inputs`` (at least ``horizon - 1`` rows when the model has
    inputs, ``horizon`` rows for a contemporaneous model).  The noise term
    is set to its mean of zero.
    """
    y_hist, x_hist = _arrays(history)
    p, d, m = model.order_p, model.output_dim, model.input_dim
    if len(y_hist) < p:
        raise InsufficientHistoryError(f"history of {len(y_hist)} samples is shorter than p={p}")
    rate = history.outputs.sample_rate if isinstance(history, Dataset) else 1.0
    labels = model.output_labels or tuple(f"y{i}" for i in range(d))
    t0 = (history.outputs.t0 + len(y_hist) / rate) if isinstance(history, Dataset) else 0.0
    if horizon <= 0:
        return MultiSeries(rate, labels, np.zeros((0, d)), t0)
    c = 1 if model.contemporaneous else 0
    if m:
        fut = np.zeros((0, m)) if future_inputs is None else np.asarray(
            future_inputs.data if isinstance(future_inputs, MultiSeries) else future_inputs, float)
        if fut.shape[0] < horizon - 1 + c:
            raise InsufficientHistoryError("future exogenous inputs do not cover the horizon")
        x_all = np.vstack([x_hist[:len(y_hist)], fut[:horizon - 1 + c]])
    else:
        x_all = np.zeros((len(y_hist) + horizon, 0))
    y = np.vstack([y_hist, np.zeros((horizon, d))])
    n0 = len(y_hist)
    endo, exo, mu = model.endo_coeffs, model.exo_coeffs, model.intercept_mu
    for t in range(n0, n0 + horizon):
        acc = mu.copy()
        for i in range(p):
            acc += endo[i] @ y[t - 1 - i]
            if m:
                acc += exo[i] @ x_all[t - 1 - i + c]
        y[t] = acc
    return MultiSeries(rate, labels, y[n0:], t0)


# -- information criteria ------------------------------------------------------------

def aic(model):
    return 2.0 * model.n_params - 2.0 * model.fit_loglik


def bic(model):
    return model.n_params * math.log(model.n_eff) - 2.0 * model.fit_loglik


def hqic(model):
    return 2.0 * model.n_params * math.log(math.log(model.n_eff)) - 2.0 * model.fit_loglik


def fpe(model):
    n, m, d = model.n_eff, model.regressors_per_eq, model.output_dim
    if n <= m:
        raise UndefinedCriterionError(f"FPE undefined for N_eff={n} <= regressors={m}")
    return float(np.linalg.det(model.noise_cov)) * ((n + m) / (n - m)) ** d


_CRITERION_FN = {"aic": aic, "bic": bic, "hqic": hqic, "fpe": fpe}


def criterion_curves(train: SampleSet, p_max: int, criteria=CRITERIA, contemporaneous=False):
    """Criterion values for p = 1..p_max on a common estimation sample.

    Orders whose fit fails are recorded as NaN.
    """
    if p_max < 1:
        raise InvalidArgumentError("p_max must be >= 1")
    curves = {c: np.full(p_max, np.nan) for c in criteria}
    for p in range(1, p_max + 1):
        try:
            model = fit(train, p, start=p_max, contemporaneous=contemporaneous)
        except (SingularDesignError, IdentifiabilityError):
            continue
        for c in criteria:
            try:
                curves[c][p - 1] = _CRITERION_FN[c](model)
            except UndefinedCriterionError:
                pass
    return curves


def select_order_ic(train: SampleSet, p_max: int, criterion="aic", contemporaneous=False) -> int:
    """Order in 1..p_max minimizing ``criterion``; ties go to the smaller order."""
    if criterion not in _CRITERION_FN:
        raise InvalidArgumentError(f"unknown criterion {criterion!r}")
    curve = criterion_curves(train, p_max, (criterion,), contemporaneous)[criterion]
    if np.all(np.isnan(curve)):
        raise NoValidOrderError(f"no order in 1..{p_max} could be fitted")
    return int(np.nanargmin(curve)) + 1


def decay_series(model: VarxModel) -> np.ndarray:
    """``||A_i - A_{i-1}||_F`` for i = 2..p."""
    a = model.endo_coeffs
    return np.linalg.norm(a[1:] - a[:-1], axis=(1, 2))


def order_from_decay(model: VarxModel, epsilon: float) -> int:
    """Smallest i >= 2 with ``||A_i - A_{i-1}|| < epsilon * ||A_1||``, else p."""
    diffs = decay_series(model)
    ref = np.linalg.norm(model.endo_coeffs[0])
    hit = np.nonzero(diffs < epsilon * ref)[0] if math.isfinite(epsilon) else np.arange(len(diffs))
    return int(hit[0]) + 2 if hit.size else model.order_p


def select_order_decay(train: SampleSet, p_max: int, epsilon: float = 0.3,
                       contemporaneous=False) -> int:
    """Order at which the lag matrices of a VARX(p_max) fit stop changing."""
    if p_max < 2:
        raise InvalidArgumentError("p_max must be >= 2")
    return order_from_decay(fit(train, p_max, contemporaneous=contemporaneous), epsilon)


# -- lag diagnostic ----------------------------------------------------------------

@dataclass(eq=False)
class LagDiagnostic:
    """Partial correlations between lagged copies of two channels.

    ``inverse_corr_matrix[i, j]`` is the partial correlation of ``a_{t-i}``
    and ``b_{t-j}`` given all other lags of both channels, read off the
    inverse of the joint lagged correlation matrix.
    """

    labels: tuple
    inverse_corr_matrix: np.ndarray
    zero_threshold: float
    detected_lag: int
    strip: np.ndarray = None
    precision: np.ndarray = None

    def to_csv(self, path):
        n = self.inverse_corr_matrix.shape[0]
        lines = [",".join([f"{self.labels[0]}\\{self.labels[1]}"] + [f"lag{j}" for j in range(n)])]
        for i, row in enumerate(self.inverse_corr_matrix):
            lines.append(",".join([f"lag{i}"] + [repr(float(v)) for v in row]))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _lag_stack(x, lags):
    t = len(x)
    return np.column_stack([x[lags - i:t - i] for i in range(lags + 1)])


def strip_lag(strip, zero_threshold):
    """Last non-zero offset before the trailing run of zeros (0 if none)."""
    nonzero = np.nonzero(np.abs(strip) >= zero_threshold)[0]
    return int(nonzero[-1]) if nonzero.size else 0


def lag_diagnostic(a, b, max_lag: int, zero_threshold: float = 0.05, ridge: float = 1e-8,
                   labels=("a", "b")) -> LagDiagnostic:
    """Detect the lag range over which ``b`` depends on ``a`` (or vice versa).

    The joint correlation matrix of ``(a_t..a_{t-L}, b_t..b_{t-L})`` is
    inverted (with a small ridge) and normalized to partial correlations.
    Entries below ``zero_threshold`` times the largest magnitude (the unit
    diagonal) count as zero.  ``strip[k]`` is the largest cross entry with
    lag offset ``|i - j| = k``; the detected lag is the last non-zero offset.
    """
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    if max_lag < 1:
        raise InvalidArgumentError("max_lag must be >= 1")
    if len(a) != len(b) or len(a) < 10 * max_lag:
        raise InvalidArgumentError("series must have equal length >= 10 * max_lag")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        raise DiagnosticFailedError("constant channel: correlations undefined")
    n = max_lag + 1
    z = np.hstack([_lag_stack(a, max_lag), _lag_stack(b, max_lag)])
    corr = np.corrcoef(z, rowvar=False)
    if not np.all(np.isfinite(corr)):
        raise DiagnosticFailedError("constant channel: correlations undefined")
    eig_min = np.linalg.eigvalsh(corr)[0]
    if eig_min < 1e-10:
        warnings.warn("lagged correlation matrix is (near) singular; result is ridge-regularized",
                      RuntimeWarning, stacklevel=2)
    prec = np.linalg.inv(corr + ridge * np.eye(2 * n))
    if not np.all(np.isfinite(prec)):
        raise DiagnosticFailedError("inverse correlation matrix is not finite")
    scale = np.sqrt(np.diag(prec))
    partial = -prec / np.outer(scale, scale)
    np.fill_diagonal(partial, 1.0)
    cross = partial[:n, n:]
    thr = zero_threshold * np.max(np.abs(partial))
    strip = np.zeros(n)
    for i in range(n):
        for j in range(n):
            k = abs(i - j)
            strip[k] = max(strip[k], abs(cross[i, j]))
    return LagDiagnostic(tuple(labels), cross, zero_threshold, strip_lag(strip, thr), strip, partial)


def with_meta(model: VarxModel, **meta) -> VarxModel:
    return replace(model, meta={**model.meta, **meta})
