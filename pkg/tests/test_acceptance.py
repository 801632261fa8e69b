"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run under pytest (lines appear in the "acceptance criteria" summary section)
or directly with ``python tests/test_acceptance.py``.  Criteria 6 and 7 train
full-size models and take roughly half an hour together on one core.
"""

import functools
import hashlib
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent))

from genid import cli  # noqa: E402
from genid import experiment as ex  # noqa: E402
from genid import var  # noqa: E402
from genid.dataset import Direction, Role, make_sample_set  # noqa: E402
from genid.metrics import autocorrelation, nrmse, pearson, summarize  # noqa: E402
from genid.telegraph import TelegraphParams, sample_path  # noqa: E402
from oracles import (  # noqa: E402
    exact_varx2_set,
    lstm_gradient_error,
    planted_lag_pair,
    planted_var3,
)


def _coef_error(model, truth):
    mu, a, b = truth
    return math.sqrt(np.sum((model.endo_coeffs - a) ** 2) + np.sum((model.exo_coeffs - b) ** 2)
                     + np.sum((model.intercept_mu - mu) ** 2))


def telegraph_stationarity():
    t0 = time.perf_counter()
    # rates 0.03 / 0.02 per 0.1 s measurement step
    params = TelegraphParams.from_step_rates(lam=0.02, mu=0.03, time_unit=0.1)
    dt = 0.1
    n = 100_000
    x = sample_path(params, n, dt, np.random.default_rng(0)).astype(float)
    occ = x.mean()
    k_min = int(round(100 / dt))
    k_max = 2 * k_min
    r = autocorrelation(x, k_max)
    band = 3 / math.sqrt(n)
    tail = np.abs(r[k_min:])
    outside = int(np.sum(tail >= band))
    runtime = time.perf_counter() - t0
    ok_occ = abs(occ - 0.6) <= 0.02
    ok_band = outside == 0
    ok = ok_occ and ok_band and runtime < 5
    detail = (f"occupancy {occ:.4f} (0.6 +- 0.02: {'ok' if ok_occ else 'out'}); "
              f"|r_k| for k*dt in [100, 200] s: max {tail.max():.4f}, {outside}/{len(tail)} lags "
              f"outside band {band:.4f}; {runtime:.2f} s")
    return ok, detail


def varx_oracle_recovery():
    t0 = time.perf_counter()
    train, truth = exact_varx2_set(0, t_len=2000)
    exact = _coef_error(var.fit(train, 2), truth)
    train, truth = exact_varx2_set(0, t_len=2000, noise_sd=1e-3)
    noisy = _coef_error(var.fit(train, 2), truth)
    runtime = time.perf_counter() - t0
    ok = exact < 1e-8 and noisy < 1e-2 and runtime < 2
    return ok, f"noise-free error {exact:.2e} (< 1e-8), noisy error {noisy:.2e} (< 1e-2); {runtime:.2f} s"


def order_selection():
    t0 = time.perf_counter()
    hits = not_above = 0
    for seed in range(50):
        data = planted_var3(seed)
        p_aic = var.select_order_ic(data, 10, "aic")
        p_decay = var.select_order_decay(data, 10, 0.3)
        hits += p_aic == 3
        not_above += p_decay <= p_aic
    runtime = time.perf_counter() - t0
    ok = hits >= 45 and not_above >= 45 and runtime < 60
    return ok, (f"AIC picks 3 in {hits}/50, decay order <= AIC order in {not_above}/50 "
                f"(need 45); {runtime:.1f} s")


def lag_detection():
    t0 = time.perf_counter()
    lags = [var.lag_diagnostic(*planted_lag_pair(seed), 8).detected_lag for seed in range(20)]
    hits = sum(lag == 3 for lag in lags)
    runtime = time.perf_counter() - t0
    return hits >= 18 and runtime < 10, f"detected lag 3 in {hits}/20 (need 18); {runtime:.2f} s"


def lstm_gradient_check():
    t0 = time.perf_counter()
    worst = max(lstm_gradient_error(seed) for seed in range(20))
    runtime = time.perf_counter() - t0
    ok = worst < 1e-5 and runtime < 30
    return ok, f"max relative error {worst:.2e} over 20 instances (< 1e-5); {runtime:.1f} s"


@functools.lru_cache(maxsize=None)
def _pretrained(seed):
    cfg = ex.ExperimentConfig().replace(seed=seed, regime="regular")
    data = ex.build_data(cfg)
    model, st, _ = ex.lstm_pretrain(cfg, data)
    return cfg, data, model, st


def _regime_data(cfg, regime):
    cfg = cfg.replace(regime=regime)
    return cfg, ex.build_data(cfg, need_regular=False)


def _lstm_mean(model, st, series):
    return ex.lstm_evaluate(model, st, make_sample_set(series, Direction.VPHI_TO_PQ, Role.TEST)).mean


def table_ordering():
    t0 = time.perf_counter()
    cfg, data, base, st = _pretrained(0)
    a = _lstm_mean(base, st, data.regular_test)
    rcfg, rdata = _regime_data(cfg, "randomized")
    b = _lstm_mean(base, st, rdata.regime_test)
    tuned, _ = ex.lstm_finetune(rcfg, base, st, rdata.regime_train, data.valid)
    c = _lstm_mean(tuned, st, rdata.regime_test)
    runtime = time.perf_counter() - t0
    ok = a < 0.02 and b >= 3 * a and c <= 3 * a and a < c < b and runtime < 1800
    return ok, (f"(a) regular {100 * a:.3f}% (< 2%), (b) randomized without fine-tuning "
                f"{100 * b:.3f}% ({b / a:.1f}x, need >= 3x), (c) fine-tuned {100 * c:.3f}% "
                f"({c / a:.2f}x, need <= 3x); {runtime / 60:.1f} min")


def nonlinearity_gap():
    t0 = time.perf_counter()
    rows = []
    for seed in (0, 1, 2):
        cfg, data, base, st = _pretrained(seed)
        rcfg, rdata = _regime_data(cfg, "high_order_noise")
        var_mean = ex.var_evaluate(ex.var_select_and_fit(rcfg, rdata.regime_train),
                                   rdata.regime_test).mean
        tuned, _ = ex.lstm_finetune(rcfg, base, st, rdata.regime_train, data.valid)
        ft_mean = _lstm_mean(tuned, st, rdata.regime_test)
        rows.append((seed, ft_mean, var_mean, rdata.faults["regime"][0]))
    runtime = time.perf_counter() - t0
    ok = all(f < v for _, f, v, _ in rows) and runtime < 45 * 60
    parts = ", ".join(f"seed {s}: FT {100 * f:.3f}% vs VAR {100 * v:.3f}%" for s, f, v, _ in rows)
    return ok, f"fault resistance {rows[0][3]:g}; {parts}; {runtime / 60:.1f} min"


def metric_units():
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    x = rng.normal(size=(100, 2))
    ok_id = nrmse(x, x) == 0.0 and nrmse(x, np.zeros_like(x)) == 1.0
    worst = 0.0
    for _ in range(100):
        u, w = rng.normal(size=(2, 50))
        a = rng.uniform(0.1, 10) * rng.choice([-1, 1])
        worst = max(worst, abs(pearson(a * u + rng.normal(), w) - np.sign(a) * pearson(u, w)))
    p95 = summarize(np.random.default_rng(1).uniform(size=1000)).p95
    runtime = time.perf_counter() - t0
    ok = ok_id and worst <= 1e-12 and abs(p95 - 0.95) <= 0.02 and runtime < 1
    return ok, (f"nrmse identities {'ok' if ok_id else 'broken'}, pearson affine deviation "
                f"{worst:.1e} (<= 1e-12), p95 of 1000 uniforms {p95:.4f}; {runtime:.2f} s")


DETERMINISM_ARGS = ["--model", "ft-wd-lstm", "--regime", "randomized", "--seed", "7",
                    "--set", "data.n_train=20", "--set", "data.n_test=20",
                    "--set", "data.n_valid=5", "--set", "data.duration=30",
                    "--set", "lstm.hidden_dim=16", "--set", "lstm.epochs=2",
                    "--set", "ft.epochs=2", "--quiet"]


def end_to_end_determinism():
    t0 = time.perf_counter()
    digests = []
    codes = []
    with tempfile.TemporaryDirectory() as tmp:
        for name in ("first", "second"):
            out = Path(tmp) / name
            codes.append(cli.main(["experiment", "--out", str(out), *DETERMINISM_ARGS]))
            digests.append(hashlib.sha256((out / "metrics.json").read_bytes()).hexdigest())
    runtime = time.perf_counter() - t0
    ok = codes == [0, 0] and digests[0] == digests[1]
    return ok, (f"metrics.json sha256 {digests[0][:12]} vs {digests[1][:12]}; "
                f"{runtime / 2:.1f} s per run")


CRITERIA = [
    (1, "telegraph stationarity", telegraph_stationarity),
    (2, "VARX oracle recovery", varx_oracle_recovery),
    (3, "order selection", order_selection),
    (4, "lag diagnostic", lag_detection),
    (5, "LSTM gradient check", lstm_gradient_check),
    (6, "WD-LSTM / FT-WD-LSTM ordering", table_ordering),
    (7, "VAR vs FT-WD-LSTM on the most nonlinear regime", nonlinearity_gap),
    (8, "metric unit checks", metric_units),
    (9, "end-to-end determinism", end_to_end_determinism),
]


def _check(record, number):
    _, name, fn = CRITERIA[number - 1]
    ok, detail = fn()
    print(f"{'PASS' if ok else 'FAIL'} [{number}] {name}: {detail}")
    record(number, name, ok, detail)
    assert ok, detail


def test_criterion_1_telegraph_stationarity(record_criterion):
    _check(record_criterion, 1)


def test_criterion_2_varx_recovery(record_criterion):
    _check(record_criterion, 2)


def test_criterion_3_order_selection(record_criterion):
    _check(record_criterion, 3)


def test_criterion_4_lag_diagnostic(record_criterion):
    _check(record_criterion, 4)


def test_criterion_5_gradient_check(record_criterion):
    _check(record_criterion, 5)


def test_criterion_6_regime_ordering(record_criterion):
    _check(record_criterion, 6)


def test_criterion_7_nonlinearity_gap(record_criterion):
    _check(record_criterion, 7)


def test_criterion_8_metric_units(record_criterion):
    _check(record_criterion, 8)


def test_criterion_9_determinism(record_criterion):
    _check(record_criterion, 9)


if __name__ == "__main__":
    failed = 0
    for number, name, fn in CRITERIA:
        ok, detail = fn()
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'} [{number}] {name}: {detail}", flush=True)
    sys.exit(1 if failed else 0)
