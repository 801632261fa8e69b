"""Experiment orchestration: config, regime data, fitting, evaluation, manifests.

Every random stream is keyed by ``(seed, stream id)`` so a run is fully
determined by its config text.
"""

from __future__ import annotations

import hashlib
import json
import platform
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from . import lstm as lstm_mod
from . import var as var_mod
from .dataset import (
    Direction,
    Role,
    SampleSet,
    Standardizer,
    difference_set,
    generate_trajectories,
    load_set_csv,
    make_sample_set,
    save_set_csv,
    undifference,
    write_manifest,
)
from .errors import ConfigError, GenIdError, StageError
from .metrics import metrics_report, nrmse, regime_sweep, summarize, write_json
from .plant import PlantConfig, calibrate_fault_reactance, resistance_threshold
from .telegraph import FaultParams, TelegraphParams

REGIMES = ("regular", "randomized", "high_order_noise")
MODELS = ("var", "wd_lstm", "ft_wd_lstm")

# stream ids for the per-dataset random keys
STREAMS = {"regular_train": 1, "regular_test": 2, "regime_train": 3, "regime_test": 4,
           "valid": 5, "sweep": 6}

_PLANT_DEFAULTS = PlantConfig()
_TRAIN_DEFAULTS = lstm_mod.TrainConfig()

DEFAULTS = {
    "regime": "regular",
    "model": "wd_lstm",
    "seed": 0,
    "out": "runs/experiment",
    "data.n_train": 200,
    "data.n_test": 200,
    "data.n_valid": 20,
    "data.duration": 60.0,
    "data.fault_resistance": 0.01,
    # "auto" calibrates the reactance against the plant
    "data.fault_reactance": "auto",
    "data.fault_scale": 0.1,
    "data.plant_scale": 0.1,
    "data.high_order_factor": 1000.0,
    "data.save": True,
    "telegraph.lam": 0.02,
    "telegraph.mu": 0.03,
    "telegraph.time_unit": 0.1,
    "var.p_max": 48,
    "var.criterion": "aic",
    "var.order": 0,
    "var.decay_epsilon": 0.3,
    "var.contemporaneous": True,
    "lstm.hidden_dim": 64,
    "lstm.num_layers": 2,
    "lstm.init_seed": 0,
    "eval.nrmse_literal": False,
    "sweep.resistances": [10.0, 1.0, 0.1, 0.01],
    "sweep.reactance": 0.0,
    "sweep.n_train": 50,
    "sweep.n_test": 50,
}
for _f in fields(PlantConfig):
    _v = getattr(_PLANT_DEFAULTS, _f.name)
    DEFAULTS["plant." + _f.name] = list(_v) if isinstance(_v, tuple) else _v
for _f in fields(lstm_mod.TrainConfig):
    DEFAULTS["lstm." + _f.name] = getattr(_TRAIN_DEFAULTS, _f.name)
DEFAULTS["lstm.epochs"] = 20
for _f in fields(lstm_mod.TrainConfig):
    DEFAULTS["ft." + _f.name] = DEFAULTS["lstm." + _f.name]
DEFAULTS.update({"ft.epochs": 40, "ft.weight_drop_prob": 0.0, "ft.seed": 1, "ft.lr_scale": 1.0})


def _parse_value(text):
    try:
        return json.loads(text)
    except ValueError:
        return text


def _format_value(v):
    if isinstance(v, str) and v and v == v.strip() and _parse_value(v) == v:
        return v
    # quote strings that would otherwise read back as numbers, lists or padded text
    return json.dumps(v)


def _coerce(key, value):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return [float(v) for v in value]
    if key == "data.fault_reactance":
        if value == "auto":
            return value
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number or 'auto', got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(f"{key}: expected a string, got {value!r}")
    return value


@dataclass
class ExperimentConfig:
    """Flat ``section.key -> value`` mapping over :data:`DEFAULTS`."""

    values: dict = field(default_factory=lambda: dict(DEFAULTS))

    def __getitem__(self, key):
        return self.values[key]

    @property
    def regime(self):
        return self.values["regime"]

    @property
    def model(self):
        return self.values["model"]

    @property
    def seed(self):
        return self.values["seed"]

    @property
    def out(self):
        return Path(self.values["out"])

    def replace(self, **updates):
        vals = dict(self.values)
        for k, v in updates.items():
            key = k.replace("__", ".")
            if key not in DEFAULTS:
                raise ConfigError(f"unknown config key {key!r}")
            vals[key] = _coerce(key, v)
        return ExperimentConfig(vals).validate()

    def validate(self):
        v = self.values
        unknown = set(v) - set(DEFAULTS)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if v["regime"] not in REGIMES:
            raise ConfigError(f"regime must be one of {REGIMES}, got {v['regime']!r}")
        if v["model"] not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}, got {v['model']!r}")
        if v["var.criterion"] not in var_mod.CRITERIA:
            raise ConfigError(f"var.criterion must be one of {var_mod.CRITERIA}")
        for key in ("data.n_train", "data.n_test", "data.n_valid", "var.p_max",
                    "lstm.hidden_dim", "lstm.num_layers", "sweep.n_train", "sweep.n_test"):
            if v[key] < 1:
                raise ConfigError(f"{key} must be >= 1")
        if v["var.order"] < 0:
            raise ConfigError("var.order must be >= 0 (0 selects by criterion)")
        if v["data.duration"] <= 0 or v["data.high_order_factor"] < 1:
            raise ConfigError("data.duration > 0 and data.high_order_factor >= 1 required")
        try:
            self.plant_config()
            self.telegraph()
            self.base_fault(v["data.fault_reactance"] if v["data.fault_reactance"] != "auto"
                            else 1.0)
            self.train_config("lstm").validate()
            self.train_config("ft").validate()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        return self

    def plant_config(self):
        kw = {k[6:]: v for k, v in self.values.items() if k.startswith("plant.")}
        kw["line_reactances"] = tuple(kw["line_reactances"])
        cfg = PlantConfig(**kw)
        cfg.validate()
        return cfg

    def telegraph(self):
        v = self.values
        return TelegraphParams.from_step_rates(v["telegraph.lam"], v["telegraph.mu"],
                                          v["telegraph.time_unit"])

    def base_fault(self, reactance):
        return FaultParams(self.values["data.fault_resistance"], reactance)

    def train_config(self, section):
        names = {f.name for f in fields(lstm_mod.TrainConfig)}
        return lstm_mod.TrainConfig(**{n: self.values[f"{section}.{n}"] for n in names})


def parse_config(text: str, overrides=None) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.  Values are JSON
    literals or bare strings.  Unknown keys and bad enums are config errors."""
    vals = dict(DEFAULTS)
    seen = set()
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in DEFAULTS:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {n}: duplicate key {key!r}")
        seen.add(key)
        vals[key] = _coerce(key, _parse_value(value))
    for key, value in (overrides or {}).items():
        if key not in DEFAULTS:
            raise ConfigError(f"unknown key {key!r}")
        vals[key] = _coerce(key, value)
    return ExperimentConfig(vals).validate()


def serialize_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {_format_value(cfg.values[k])}\n" for k in sorted(cfg.values))


def load_config(path, overrides=None) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, overrides)


# -- manifests -----------------------------------------------------------------------

def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    config: str
    files: dict = field(default_factory=dict)
    wall_times: dict = field(default_factory=dict)
    versions: dict = field(default_factory=dict)
    complete: bool = False
    error: str | None = None
    results: dict = field(default_factory=dict)

    def to_dict(self):
        return {"config": self.config, "files": self.files, "wall_times": self.wall_times,
                "versions": self.versions, "complete": self.complete, "error": self.error,
                "results": self.results}

    def write(self, out_dir, name="manifest.json"):
        out_dir = Path(out_dir)
        self.files = {p.relative_to(out_dir).as_posix(): sha256_file(p)
                      for p in sorted(out_dir.rglob("*")) if p.is_file() and p.name != name}
        write_json(self.to_dict(), out_dir / name)
        return self


def versions():
    import scipy

    return {"genid": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}


class _Stages:
    """Times named stages and wraps failures as :class:`StageError`."""

    def __init__(self, manifest):
        self.manifest = manifest

    def run(self, name, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kw)
        except GenIdError as exc:
            raise StageError(name, exc) from exc
        finally:
            self.manifest.wall_times[name] = time.perf_counter() - t0


# -- regime data ------------------------------------------------------------------

@dataclass
class RegimeData:
    regular_train: list
    regular_test: list
    regime_train: list
    regime_test: list
    valid: list
    faults: dict


def regime_faults(cfg: ExperimentConfig):
    """Base fault of the training data and the fault of the regime's data."""
    plant = cfg.plant_config()
    v = cfg.values
    x = v["data.fault_reactance"]
    if x == "auto":
        x = calibrate_fault_reactance(plant, v["data.fault_resistance"])
    base = cfg.base_fault(x)
    regime = base
    if cfg.regime == "high_order_noise":
        target = base.resistance / v["data.high_order_factor"]
        floor = resistance_threshold(plant, reactance=x)
        regime = FaultParams(max(target, floor), x)
    return base, regime


def _generate(cfg, stream, n, fault, randomize, fault_scale):
    v = cfg.values
    return generate_trajectories(
        cfg.plant_config(), cfg.telegraph(), fault, n, v["data.duration"],
        (cfg.seed, STREAMS[stream]), randomize=randomize,
        plant_scale=v["data.plant_scale"], fault_scale=fault_scale,
    ).series


def _regime_sets(cfg):
    """(randomize_plant, fault_scale) of the regime's own data."""
    if cfg.regime == "regular":
        return False, 0.0
    if cfg.regime == "randomized":
        return True, cfg["data.fault_scale"]
    return False, cfg["data.fault_scale"]


def build_data(cfg: ExperimentConfig, need_regular=True) -> RegimeData:
    v = cfg.values
    base, regime_fault = regime_faults(cfg)
    reg_train = reg_test = valid = None
    if need_regular or cfg.regime == "regular":
        reg_train = _generate(cfg, "regular_train", v["data.n_train"], base, False, 0.0)
        reg_test = _generate(cfg, "regular_test", v["data.n_test"], base, False, 0.0)
        valid = _generate(cfg, "valid", v["data.n_valid"], base, False, 0.0)
    if cfg.regime == "regular":
        r_train, r_test = reg_train, reg_test
    else:
        randomize, fscale = _regime_sets(cfg)
        r_train = _generate(cfg, "regime_train", v["data.n_train"], regime_fault, randomize, fscale)
        r_test = _generate(cfg, "regime_test", v["data.n_test"], regime_fault, randomize, fscale)
    faults = {"base": [base.resistance, base.reactance],
              "regime": [regime_fault.resistance, regime_fault.reactance]}
    return RegimeData(reg_train, reg_test, r_train, r_test, valid, faults)


# -- VAR pipeline --------------------------------------------------------------------

def var_select_and_fit(cfg, train_series):
    v = cfg.values
    train = difference_set(make_sample_set(train_series, Direction.PQ_TO_VPHI), True)
    lag0 = v["var.contemporaneous"]
    order = v["var.order"] or var_mod.select_order_ic(train, v["var.p_max"], v["var.criterion"],
                                                      lag0)
    return var_mod.fit(train, order, contemporaneous=lag0)


def var_forecast(model, series):
    """Teacher-forced recursive forecast of one trajectory's (phi, V) levels.

    The first ``p`` increments seed the recursion; returns truth and forecast
    levels from sample ``p + 1`` on.
    """
    ds = make_sample_set([series], Direction.PQ_TO_VPHI)[0]
    diff = difference_set(SampleSet([ds]), True)[0]
    p = model.order_p
    hist = type(diff)(diff.inputs.window(0, p), diff.outputs.window(0, p), diff.transform,
                      diff.transform_stats)
    horizon = len(diff) - p
    pred_inc = var_mod.predict(model, hist, horizon, diff.inputs.data[p:])
    levels = undifference(pred_inc, ds.outputs.data[p])
    truth = ds.outputs.window(p + 1)
    return truth, levels.window(1)


def var_evaluate(model, test_series, literal=False):
    vals = []
    for s in test_series:
        truth, est = var_forecast(model, s)
        vals.append(nrmse(truth.data, est.data, literal=literal))
    return summarize(vals)


# -- LSTM pipeline ----------------------------------------------------------------

def lstm_sets(train_series, *others):
    """Standardize everything with the statistics of ``train_series``."""
    raw = [make_sample_set(train_series, Direction.VPHI_TO_PQ)]
    raw += [make_sample_set(o, Direction.VPHI_TO_PQ, Role.TEST) for o in others]
    st = Standardizer.fit(raw[0])
    return st, raw, [st.apply(r) for r in raw]


def lstm_predict(model, st, raw_set):
    x, _ = st.apply(raw_set).stacked()
    out = lstm_mod.predict_array(model, x)
    return [st.invert_outputs(d.outputs.with_data(out[:, j])) for j, d in enumerate(raw_set)]


def lstm_evaluate(model, st, raw_set, literal=False):
    preds = lstm_predict(model, st, raw_set)
    return summarize(nrmse(d.outputs.data, p.data, literal=literal) for d, p in zip(raw_set, preds))


def lstm_pretrain(cfg, data: RegimeData, log=None):
    """WD-LSTM trained on the regular data.

    Returns ``(model, standardizer, report)``; the standardizer carries the
    regular training statistics and is reused by any later fine-tuning.
    """
    v = cfg.values
    if data.valid is not None:
        st, _, (tr, va) = lstm_sets(data.regular_train, data.valid)
    else:
        st, _, (tr,) = lstm_sets(data.regular_train)
        va = None
    model = lstm_mod.LstmModel.init(2, v["lstm.hidden_dim"], v["lstm.num_layers"], 2,
                                    seed=v["lstm.init_seed"])
    model, report = lstm_mod.train(model, tr, va, cfg.train_config("lstm"), log=log)
    return model, st, report


def lstm_finetune(cfg, model, st, train_series, valid_series=None, log=None):
    """Continue training ``model`` on ``train_series`` (standardized with ``st``)."""
    ft_train = st.apply(make_sample_set(train_series, Direction.VPHI_TO_PQ))
    va = None
    if valid_series is not None:
        va = st.apply(make_sample_set(valid_series, Direction.VPHI_TO_PQ, Role.TEST))
    return lstm_mod.fine_tune(model, ft_train, cfg.train_config("ft"), va,
                              lr_scale=cfg["ft.lr_scale"], log=log)


def lstm_fit(cfg, data: RegimeData, log=None):
    """Pretrain on regular data; ``ft_wd_lstm`` then fine-tunes on the regime's train set.

    Returns ``(model, standardizer, reports)``.
    """
    model, st, report = lstm_pretrain(cfg, data, log)
    reports = {"pretrain": report.to_dict()}
    if cfg.model == "ft_wd_lstm":
        model, ft_report = lstm_finetune(cfg, model, st, data.regime_train, data.valid, log)
        reports["fine_tune"] = ft_report.to_dict()
    return model, st, reports


# -- experiment --------------------------------------------------------------------

def _write_report_csv(path, reports):
    lines = ["stage,epoch,train_mse,valid_mse"]
    for stage, rep in reports.items():
        for i, (a, b) in enumerate(zip(rep["train_mse"], rep["valid_mse"])):
            lines.append(f"{stage},{i + 1},{a!r},{b!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


DATA_SETS = ("regime_train", "regime_test", "regular_train", "regular_test", "valid")


def save_data(cfg, out, data: RegimeData):
    """CSV plus JSON manifest per generated set under ``out/data``."""
    ddir = Path(out) / "data"
    ddir.mkdir(parents=True, exist_ok=True)
    sets = {"regime_train": data.regime_train, "regime_test": data.regime_test,
            "valid": data.valid}
    if cfg.regime != "regular":
        sets.update(regular_train=data.regular_train, regular_test=data.regular_test)
    for name, series in sets.items():
        if series is None:
            continue
        save_set_csv(series, ddir / f"{name}.csv")
        write_manifest(ddir / f"{name}.json", seed=[cfg.seed, STREAMS[name]],
                       plant=cfg.plant_config(), telegraph=cfg.telegraph(), transform="raw",
                       role="test" if name.endswith("test") else "train",
                       extra={"n": len(series), "faults": data.faults, "regime": cfg.regime})


def load_data(cfg, data_dir) -> RegimeData:
    """Inverse of :func:`save_data`; missing regular sets fall back to the regime's."""
    ddir = Path(data_dir)
    if (ddir / "data").is_dir():
        ddir = ddir / "data"
    sets, faults = {}, {}
    for name in DATA_SETS:
        path = ddir / f"{name}.csv"
        if path.exists():
            sets[name] = load_set_csv(path)
            faults = json.loads((ddir / f"{name}.json").read_text(encoding="utf-8"))["faults"]
    if "regime_train" not in sets or "regime_test" not in sets:
        raise ConfigError(f"{ddir} holds no regime_train/regime_test CSV files")
    if cfg.regime == "regular":
        sets.setdefault("regular_train", sets["regime_train"])
        sets.setdefault("regular_test", sets["regime_test"])
    return RegimeData(sets.get("regular_train"), sets.get("regular_test"), sets["regime_train"],
                      sets["regime_test"], sets.get("valid"), faults)


@dataclass
class FittedModel:
    kind: str
    model: object
    standardizer: Standardizer | None = None
    reports: dict = field(default_factory=dict)


def fit_model(cfg: ExperimentConfig, data: RegimeData, log=None) -> FittedModel:
    if cfg.model == "var":
        return FittedModel("var", var_select_and_fit(cfg, data.regime_train))
    model, st, reports = lstm_fit(cfg, data, log)
    return FittedModel(cfg.model, model, st, reports)


def save_model(fitted: FittedModel, out, cfg: ExperimentConfig):
    out = Path(out)
    if fitted.kind == "var":
        fitted.model.save(out / "model.json")
        return out / "model.json"
    lstm_mod.save_checkpoint(fitted.model, out / "model.ckpt", config=serialize_config(cfg),
                             seed=cfg.seed, extra={"standardizer": fitted.standardizer.to_dict(),
                                                   "kind": fitted.kind})
    if fitted.reports:
        _write_report_csv(out / "training.csv", fitted.reports)
    return out / "model.ckpt"


def load_model(out) -> FittedModel:
    out = Path(out)
    if (out / "model.json").exists():
        return FittedModel("var", var_mod.VarxModel.load(out / "model.json"))
    if (out / "model.ckpt").exists():
        model, header = lstm_mod.load_checkpoint(out / "model.ckpt")
        extra = header.get("extra") or {}
        return FittedModel(extra.get("kind", "wd_lstm"), model,
                           Standardizer.from_dict(extra["standardizer"]))
    raise ConfigError(f"no model.json or model.ckpt in {out}")


def evaluate_model(cfg: ExperimentConfig, fitted: FittedModel, test_series):
    """Per-trajectory NRMSE summary and the metrics document."""
    literal = cfg["eval.nrmse_literal"]
    extra = {}
    if fitted.kind == "var":
        summary = var_evaluate(fitted.model, test_series, literal)
        extra["order_p"] = fitted.model.order_p
        extra["channels"] = list(Direction.PQ_TO_VPHI.channels[1])
    else:
        raw = make_sample_set(test_series, Direction.VPHI_TO_PQ, Role.TEST)
        summary = lstm_evaluate(fitted.model, fitted.standardizer, raw, literal)
        extra["channels"] = list(Direction.VPHI_TO_PQ.channels[1])
    extra["nrmse_literal"] = literal
    doc = metrics_report(fitted.kind, cfg.regime, summary, cfg.seed, extra)
    doc["values"] = summary.values
    return summary, doc


def _begin(cfg):
    cfg.validate()
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(serialize_config(cfg), encoding="utf-8")
    return out, RunManifest(serialize_config(cfg), versions=versions())


def run_experiment(cfg: ExperimentConfig, log=None, data: RegimeData | None = None) -> RunManifest:
    """Generate, fit, evaluate and write everything under ``cfg.out``.

    On failure the partial outputs stay on disk, the manifest is written with
    ``complete = false`` and a :class:`StageError` is raised.
    """
    out, manifest = _begin(cfg)
    stages = _Stages(manifest)
    try:
        if data is None:
            data = stages.run("generate", build_data, cfg, need_regular=cfg.model != "var")
            if cfg["data.save"]:
                stages.run("save_data", save_data, cfg, out, data)
        fitted = stages.run("fit", fit_model, cfg, data, log)
        save_model(fitted, out, cfg)
        _, doc = stages.run("evaluate", evaluate_model, cfg, fitted, data.regime_test)
        doc["faults"] = data.faults
        write_json(doc, out / "metrics.json")
        manifest.results = {k: doc[k] for k in ("mean", "median", "p95")}
        manifest.complete = True
    except StageError as exc:
        manifest.error = str(exc)
        manifest.write(out)
        raise
    manifest.write(out)
    return manifest


def run_stage(cfg: ExperimentConfig, stage: str, data_dir=None, log=None) -> RunManifest:
    """One pipeline step on its own: ``generate``, ``fit`` or ``evaluate``.

    ``fit`` and ``evaluate`` read the CSVs under ``data_dir`` when given and
    regenerate the (deterministic) data otherwise; ``evaluate`` loads the
    model written by ``fit`` into the same output directory.
    """
    out, manifest = _begin(cfg)
    stages = _Stages(manifest)
    try:
        if stage == "generate" or data_dir is None:
            data = stages.run("generate", build_data, cfg,
                              need_regular=stage == "generate" or cfg.model != "var")
        else:
            data = stages.run("load_data", load_data, cfg, data_dir)
        if stage == "generate":
            stages.run("save_data", save_data, cfg, out, data)
        elif stage == "fit":
            fitted = stages.run("fit", fit_model, cfg, data, log)
            save_model(fitted, out, cfg)
        elif stage == "evaluate":
            fitted = stages.run("load_model", load_model, out)
            _, doc = stages.run("evaluate", evaluate_model, cfg, fitted, data.regime_test)
            write_json(doc, out / "metrics.json")
            manifest.results = {k: doc[k] for k in ("mean", "median", "p95")}
        else:
            raise ConfigError(f"unknown stage {stage!r}")
        manifest.complete = True
    except StageError as exc:
        manifest.error = str(exc)
        manifest.write(out)
        raise
    manifest.write(out)
    return manifest


# -- diagnostics -------------------------------------------------------------------

DIAG_CHANNELS = ("P", "Q", "V", "phi")


def run_diagnostics(cfg: ExperimentConfig, series=None, max_lag=8, n_traj=20) -> RunManifest:
    """Lag heat maps for all channel pairs, criterion curves and decay series.

    Works on first differences of the regime's training data (or ``series``).
    """
    cfg.validate()
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(serialize_config(cfg), versions=versions())
    stages = _Stages(manifest)
    try:
        if series is None:
            data = stages.run("generate", build_data, cfg, need_regular=False)
            series = data.regime_train
        series = list(series)[:max(n_traj, 1)]
        diffs = {c: np.concatenate([np.diff(s[c]) for s in series]) for c in DIAG_CHANNELS}
        lag = {}

        def lag_maps():
            for i, a in enumerate(DIAG_CHANNELS):
                for b in DIAG_CHANNELS[i + 1:]:
                    diag = var_mod.lag_diagnostic(diffs[a], diffs[b], max_lag, labels=(a, b))
                    diag.to_csv(out / f"lag_{a}_{b}.csv")
                    lag[f"{a}_{b}"] = diag.detected_lag

        stages.run("lag_diagnostic", lag_maps)
        train = difference_set(make_sample_set(series, Direction.PQ_TO_VPHI), True)
        p_max = cfg["var.p_max"]
        lag0 = cfg["var.contemporaneous"]
        curves = stages.run("criteria", var_mod.criterion_curves, train, p_max, var_mod.CRITERIA,
                            lag0)
        lines = ["p," + ",".join(var_mod.CRITERIA)]
        for k in range(p_max):
            lines.append(f"{k + 1}," + ",".join(repr(float(curves[c][k])) for c in var_mod.CRITERIA))
        (out / "criteria.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        full = stages.run("decay", var_mod.fit, train, p_max, contemporaneous=lag0)
        decay = var_mod.decay_series(full)
        (out / "decay.csv").write_text(
            "i,norm\n" + "".join(f"{i + 2},{float(d)!r}\n" for i, d in enumerate(decay)),
            encoding="utf-8")
        manifest.results = {
            "detected_lags": lag,
            "orders": {c: int(np.nanargmin(curves[c])) + 1 for c in var_mod.CRITERIA},
            "decay_order": var_mod.order_from_decay(full, cfg["var.decay_epsilon"]),
        }
        manifest.complete = True
    except StageError as exc:
        manifest.error = str(exc)
        manifest.write(out)
        raise
    manifest.write(out)
    return manifest


# -- regime sweep --------------------------------------------------------------------

def sweep_cell(cfg: ExperimentConfig, resistance: float):
    """Train/test pair at one fault resistance, fit on the first, NRMSE on the second."""
    v = cfg.values
    fault = FaultParams(resistance, v["sweep.reactance"])
    key = (cfg.seed, STREAMS["sweep"], int(round(-np.log10(resistance) * 1000)) + 10_000)
    gen = dict(plant=cfg.plant_config(), telegraph=cfg.telegraph(), base_fault=fault,
               duration=v["data.duration"], fault_scale=v["data.fault_scale"])
    train = generate_trajectories(n=v["sweep.n_train"], seed=key + (0,), **gen).series
    test = generate_trajectories(n=v["sweep.n_test"], seed=key + (1,), **gen).series
    if cfg.model == "var":
        model = var_select_and_fit(cfg, train)
        return var_evaluate(model, test, cfg["eval.nrmse_literal"]).mean
    st, _, (tr,) = lstm_sets(train)
    model = lstm_mod.LstmModel.init(2, v["lstm.hidden_dim"], v["lstm.num_layers"], 2,
                                    seed=v["lstm.init_seed"])
    model, _ = lstm_mod.train(model, tr, None, cfg.train_config("lstm"))
    raw = make_sample_set(test, Direction.VPHI_TO_PQ, Role.TEST)
    return lstm_evaluate(model, st, raw, cfg["eval.nrmse_literal"]).mean


def run_sweep(cfg: ExperimentConfig):
    cfg.validate()
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    grid = regime_sweep(lambda r: sweep_cell(cfg, r), cfg["sweep.resistances"],
                        col_label="model", col_values=[0])
    grid.to_csv(out / "sweep.csv")
    write_json({"model": cfg.model, "failures": grid.failures,
                "resistances": grid.row_values,
                "nrmse": [None if np.isnan(x) else float(x) for x in grid.values[:, 0]]},
               out / "sweep.json")
    return grid
