"""Stacked LSTM sequence regressor with weight-dropped recurrent matrices.

Gate order inside every ``4H`` block is (input, forget, candidate, output):

    a_t = x_t W + h_{t-1} (U * M) + b
    i, f, o = sigmoid(a_i), sigmoid(a_f), sigmoid(a_o);  g = tanh(a_g)
    c_t = f * c_{t-1} + i * g;  h_t = o * tanh(c_t)

``M`` is an inverted-scaled DropConnect mask (entries 0 or 1/(1-p)) drawn
once per layer per batch.  The per-step output is an affine map of the top
layer's ``h_t``.  Arrays are time-major: ``(T, B, features)``.
"""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import SampleSet
from .errors import InvalidArgumentError, ShapeError, TrainingDivergedError

MAGIC = b"GENIDLSTM1\n"


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(eq=False)
class LstmModel:
    input_dim: int
    hidden_dim: int
    num_layers: int
    output_dim: int
    params: dict = field(default_factory=dict)

    @classmethod
    def init(cls, input_dim=2, hidden_dim=64, num_layers=2, output_dim=2, seed=0,
             forget_bias=1.0):
        """Uniform(-1/sqrt(H), 1/sqrt(H)) weights; forget-gate bias set to ``forget_bias``."""
        rng = np.random.default_rng(seed)
        h = hidden_dim
        k = 1.0 / math.sqrt(h)
        params = {}
        for layer in range(num_layers):
            n_in = input_dim if layer == 0 else h
            params[f"W{layer}"] = rng.uniform(-k, k, (n_in, 4 * h))
            params[f"U{layer}"] = rng.uniform(-k, k, (h, 4 * h))
            b = rng.uniform(-k, k, 4 * h)
            b[h:2 * h] = forget_bias
            params[f"b{layer}"] = b
        params["Wy"] = rng.uniform(-k, k, (h, output_dim))
        params["by"] = np.zeros(output_dim)
        return cls(input_dim, hidden_dim, num_layers, output_dim, params)

    def param_names(self):
        names = []
        for layer in range(self.num_layers):
            names += [f"W{layer}", f"U{layer}", f"b{layer}"]
        return names + ["Wy", "by"]

    def expected_shapes(self):
        h = self.hidden_dim
        shapes = {}
        for layer in range(self.num_layers):
            n_in = self.input_dim if layer == 0 else h
            shapes[f"W{layer}"] = (n_in, 4 * h)
            shapes[f"U{layer}"] = (h, 4 * h)
            shapes[f"b{layer}"] = (4 * h,)
        shapes["Wy"] = (h, self.output_dim)
        shapes["by"] = (self.output_dim,)
        return shapes

    def check(self):
        shapes = self.expected_shapes()
        if set(shapes) != set(self.params):
            raise ShapeError("parameter set does not match the architecture")
        for name, shape in shapes.items():
            if self.params[name].shape != shape:
                raise ShapeError(f"{name}: expected {shape}, got {self.params[name].shape}")
            if not np.all(np.isfinite(self.params[name])):
                raise InvalidArgumentError(f"{name} has non-finite entries")
        return self

    def copy(self):
        return LstmModel(self.input_dim, self.hidden_dim, self.num_layers, self.output_dim,
                         {k: v.copy() for k, v in self.params.items()})

    def flat(self):
        return np.concatenate([self.params[n].ravel() for n in self.param_names()])

    def n_params(self):
        return sum(v.size for v in self.params.values())


# -- forward / backward ------------------------------------------------------------

def drop_masks(model: LstmModel, p: float, rng):
    """One inverted-scaled DropConnect multiplier per recurrent matrix."""
    if not 0.0 <= p < 1.0:
        raise InvalidArgumentError("drop probability must be in [0, 1)")
    shape = (model.hidden_dim, 4 * model.hidden_dim)
    if p == 0.0:
        return None
    return [(rng.random(shape) >= p) / (1.0 - p) for _ in range(model.num_layers)]


def output_mask(model, p, batch, rng):
    if p == 0.0:
        return None
    return (rng.random((batch, model.hidden_dim)) >= p) / (1.0 - p)


def zero_state(model, batch):
    z = np.zeros((batch, model.hidden_dim))
    return [(z.copy(), z.copy()) for _ in range(model.num_layers)]


def forward(model: LstmModel, inputs, masks=None, state=None, out_mask=None):
    """Run the network over a window.

    ``inputs`` is ``(T, B, input_dim)`` or ``(T, input_dim)``.  Returns
    ``(outputs, final_state, cache)``; ``cache`` feeds :func:`backward`.
    """
    x = np.asarray(inputs, dtype=float)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[:, None, :]
    if x.ndim != 3 or x.shape[2] != model.input_dim:
        raise ShapeError(f"inputs must be (T, B, {model.input_dim}), got {np.shape(inputs)}")
    t_len, batch, _ = x.shape
    h_dim = model.hidden_dim
    if masks is not None:
        if len(masks) != model.num_layers or any(m.shape != (h_dim, 4 * h_dim) for m in masks):
            raise ShapeError("drop masks must match the recurrent matrices")
    state = zero_state(model, batch) if state is None else state
    layers = []
    layer_in = x
    final = []
    for layer in range(model.num_layers):
        w = model.params[f"W{layer}"]
        u = model.params[f"U{layer}"]
        u_eff = u * masks[layer] if masks is not None else u
        pre_x = layer_in @ w + model.params[f"b{layer}"]
        hs = np.empty((t_len + 1, batch, h_dim))
        cs = np.empty((t_len + 1, batch, h_dim))
        gates = np.empty((t_len, batch, 4 * h_dim))
        tanh_c = np.empty((t_len, batch, h_dim))
        hs[0], cs[0] = state[layer]
        for t in range(t_len):
            a = pre_x[t] + hs[t] @ u_eff
            g = gates[t]
            g[:, :2 * h_dim] = _sigmoid(a[:, :2 * h_dim])
            g[:, 2 * h_dim:3 * h_dim] = np.tanh(a[:, 2 * h_dim:3 * h_dim])
            g[:, 3 * h_dim:] = _sigmoid(a[:, 3 * h_dim:])
            cs[t + 1] = g[:, h_dim:2 * h_dim] * cs[t] + g[:, :h_dim] * g[:, 2 * h_dim:3 * h_dim]
            tanh_c[t] = np.tanh(cs[t + 1])
            hs[t + 1] = g[:, 3 * h_dim:] * tanh_c[t]
        layers.append({"x": layer_in, "u_eff": u_eff, "h": hs, "c": cs, "gates": gates,
                       "tanh_c": tanh_c})
        final.append((hs[-1].copy(), cs[-1].copy()))
        layer_in = hs[1:]
    top = layer_in * out_mask if out_mask is not None else layer_in
    y = top @ model.params["Wy"] + model.params["by"]
    cache = {"layers": layers, "top": top, "masks": masks, "out_mask": out_mask,
             "squeeze": squeeze}
    return (y[:, 0, :] if squeeze else y), final, cache


def mse(outputs, targets):
    return float(np.mean((np.asarray(outputs) - np.asarray(targets)) ** 2))


def backward(model: LstmModel, cache, outputs, targets, weight_decay=0.0):
    """Gradients of ``mean((outputs - targets)^2) + weight_decay * sum(w^2)``.

    The decay term covers the weight matrices (W, U, Wy) but not biases.
    """
    y = np.asarray(outputs, float)
    tgt = np.asarray(targets, float)
    if y.shape != tgt.shape:
        raise ShapeError(f"targets {tgt.shape} do not match outputs {y.shape}")
    if cache["squeeze"]:
        y, tgt = y[:, None, :], tgt[:, None, :]
    dy = 2.0 * (y - tgt) / y.size
    h_dim = model.hidden_dim
    grads = {}
    top = cache["top"]
    grads["Wy"] = top.reshape(-1, h_dim).T @ dy.reshape(-1, model.output_dim)
    grads["by"] = dy.sum(axis=(0, 1))
    dh_out = dy @ model.params["Wy"].T
    if cache["out_mask"] is not None:
        dh_out = dh_out * cache["out_mask"]
    for layer in reversed(range(model.num_layers)):
        lc = cache["layers"][layer]
        gates, cs, hs, tanh_c = lc["gates"], lc["c"], lc["h"], lc["tanh_c"]
        t_len, batch, _ = gates.shape
        u_eff_t = lc["u_eff"].T
        da = np.empty_like(gates)
        dh_next = np.zeros((batch, h_dim))
        dc_next = np.zeros((batch, h_dim))
        for t in reversed(range(t_len)):
            g = gates[t]
            gi, gf = g[:, :h_dim], g[:, h_dim:2 * h_dim]
            gg, go = g[:, 2 * h_dim:3 * h_dim], g[:, 3 * h_dim:]
            dh = dh_out[t] + dh_next
            tc = tanh_c[t]
            dc = dh * go * (1.0 - tc * tc) + dc_next
            d = da[t]
            d[:, :h_dim] = dc * gg * gi * (1.0 - gi)
            d[:, h_dim:2 * h_dim] = dc * cs[t] * gf * (1.0 - gf)
            d[:, 2 * h_dim:3 * h_dim] = dc * gi * (1.0 - gg * gg)
            d[:, 3 * h_dim:] = dh * tc * go * (1.0 - go)
            dc_next = dc * gf
            dh_next = d @ u_eff_t
        flat_da = da.reshape(-1, 4 * h_dim)
        x = lc["x"]
        grads[f"W{layer}"] = x.reshape(-1, x.shape[2]).T @ flat_da
        du = hs[:-1].reshape(-1, h_dim).T @ flat_da
        if cache["masks"] is not None:
            du = du * cache["masks"][layer]
        grads[f"U{layer}"] = du
        grads[f"b{layer}"] = flat_da.sum(axis=0)
        if layer > 0:
            dh_out = da @ model.params[f"W{layer}"].T
    if weight_decay:
        for name in grads:
            if not name.startswith("b"):
                grads[name] = grads[name] + 2.0 * weight_decay * model.params[name]
    return grads


def loss_and_grads(model, inputs, targets, masks=None, out_mask=None, weight_decay=0.0,
                   state=None):
    y, final, cache = forward(model, inputs, masks, state, out_mask)
    loss = mse(y, targets)
    if weight_decay:
        loss += weight_decay * sum(float(np.sum(model.params[n] ** 2))
                                   for n in model.params if not n.startswith("b"))
    return loss, backward(model, cache, y, targets, weight_decay), final


# -- training ----------------------------------------------------------------------

@dataclass
class TrainConfig:
    weight_drop_prob: float = 0.2
    output_dropout_prob: float = 0.0
    weight_decay: float = 1e-6
    base_window_len: int = 64
    window_len_jitter: int = 16
    learning_rate: float = 3e-3
    epochs: int = 60
    grad_clip_norm: float = 1.0
    seed: int = 0
    batch_size: int = 25
    final_lr_fraction: float = 0.1

    def validate(self):
        if not 0.0 <= self.weight_drop_prob < 1.0 or not 0.0 <= self.output_dropout_prob < 1.0:
            raise InvalidArgumentError("dropout probabilities must be in [0, 1)")
        if self.weight_decay < 0 or self.learning_rate < 0:
            raise InvalidArgumentError("weight_decay and learning_rate must be >= 0")
        if self.base_window_len - self.window_len_jitter < 2 or self.window_len_jitter < 0:
            raise InvalidArgumentError("base_window_len - window_len_jitter must be >= 2")
        if self.epochs < 0 or self.grad_clip_norm <= 0 or self.batch_size < 1:
            raise InvalidArgumentError("epochs >= 0, grad_clip_norm > 0, batch_size >= 1 required")
        if not 0.0 < self.final_lr_fraction <= 1.0:
            raise InvalidArgumentError("final_lr_fraction must be in (0, 1]")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainReport:
    train_mse: list = field(default_factory=list)
    valid_mse: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


class _Adam:
    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, params, grads, lr, weight_decay):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if weight_decay and not k.startswith("b"):
                update = update + 2.0 * weight_decay * params[k]
            params[k] -= lr * update


def _clip(grads, max_norm):
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] *= scale
    return norm


def predict_array(model, inputs, batch=512):
    """Deterministic full-sequence outputs for ``(T, N, in)`` inputs."""
    x = np.asarray(inputs, float)
    outs = [forward(model, x[:, i:i + batch])[0] for i in range(0, x.shape[1], batch)]
    return np.concatenate(outs, axis=1)


def evaluate_mse(model, sample_set: SampleSet):
    x, y = sample_set.stacked()
    return mse(predict_array(model, x), y)


def _lr_at(cfg, epoch):
    if cfg.epochs <= 1:
        return cfg.learning_rate
    frac = epoch / (cfg.epochs - 1)
    floor = cfg.final_lr_fraction
    return cfg.learning_rate * (floor + (1.0 - floor) * 0.5 * (1.0 + math.cos(math.pi * frac)))


def train(model: LstmModel, train_set: SampleSet, valid_set: SampleSet | None, cfg: TrainConfig,
          lr_scale=1.0, log=None):
    """Truncated BPTT with state carried across variable-length windows.

    Each epoch shuffles the trajectories into batches; every batch is swept
    from its start in windows of length ``base +- jitter`` with a fresh
    DropConnect mask per window.  Adam with decoupled weight decay, global
    gradient-norm clipping and a cosine learning-rate decay to
    ``final_lr_fraction``.  Returns a trained copy and the report.
    """
    cfg.validate()
    model = model.copy().check()
    x_all, y_all = train_set.stacked()
    if x_all.shape[2] != model.input_dim or y_all.shape[2] != model.output_dim:
        raise ShapeError("sample set channels do not match the model dimensions")
    rng = np.random.default_rng(cfg.seed)
    opt = _Adam(model.params)
    report = TrainReport()
    t_len, n_traj, _ = x_all.shape
    for epoch in range(cfg.epochs):
        t_start = time.perf_counter()
        lr = lr_scale * _lr_at(cfg, epoch)
        order = rng.permutation(n_traj)
        sq_err, count = 0.0, 0
        for b0 in range(0, n_traj, cfg.batch_size):
            idx = np.sort(order[b0:b0 + cfg.batch_size])
            xb, yb = x_all[:, idx], y_all[:, idx]
            state = zero_state(model, len(idx))
            t = 0
            while t < t_len:
                win = cfg.base_window_len + int(rng.integers(-cfg.window_len_jitter,
                                                             cfg.window_len_jitter + 1))
                stop = min(t_len, t + win)
                masks = drop_masks(model, cfg.weight_drop_prob, rng)
                om = output_mask(model, cfg.output_dropout_prob, len(idx), rng)
                y, state, cache = forward(model, xb[t:stop], masks, state, om)
                err = y - yb[t:stop]
                sq_err += float(np.sum(err * err))
                count += err.size
                grads = backward(model, cache, y, yb[t:stop])
                if not all(np.all(np.isfinite(g)) for g in grads.values()):
                    raise TrainingDivergedError(epoch)
                _clip(grads, cfg.grad_clip_norm)
                if lr > 0:
                    opt.step(model.params, grads, lr, cfg.weight_decay)
                t = stop
        train_mse = sq_err / max(count, 1)
        if not math.isfinite(train_mse):
            raise TrainingDivergedError(epoch)
        report.train_mse.append(train_mse)
        report.valid_mse.append(evaluate_mse(model, valid_set) if valid_set is not None
                                else float("nan"))
        report.wall_time.append(time.perf_counter() - t_start)
        if log is not None:
            log(f"epoch {epoch + 1}/{cfg.epochs} lr={lr:.2e} train={train_mse:.5f} "
                f"valid={report.valid_mse[-1]:.5f}")
    return model, report


def fine_tune(model: LstmModel, new_train: SampleSet, cfg: TrainConfig, valid_set=None,
              lr_scale=0.1, log=None):
    """Continue training on new data at ``lr_scale`` times the configured rate."""
    return train(model, new_train, valid_set, cfg, lr_scale=lr_scale, log=log)


# -- checkpoints -----------------------------------------------------------------

def save_checkpoint(model: LstmModel, path, config=None, seed=None, extra=None):
    """JSON header line followed by little-endian float64 weights.

    The header lists ``(name, shape)`` in payload order.
    """
    model.check()
    order = [[n, list(model.params[n].shape)] for n in model.param_names()]
    header = {
        "format": "genid-lstm",
        "version": 1,
        "dims": {"input_dim": model.input_dim, "hidden_dim": model.hidden_dim,
                 "num_layers": model.num_layers, "output_dim": model.output_dim},
        "dtype": "<f8",
        "order": order,
        "n_values": int(model.n_params()),
        "config": config,
        "seed": seed,
        "extra": extra,
    }
    payload = model.flat().astype("<f8").tobytes()
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(head)))
        fh.write(head)
        fh.write(payload)


def load_checkpoint(path):
    """Returns ``(model, header)``; dimensions are validated before the payload is read."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ShapeError("not an LSTM checkpoint")
        (n_head,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(n_head).decode("utf-8"))
        dims = header["dims"]
        skeleton = LstmModel(dims["input_dim"], dims["hidden_dim"], dims["num_layers"],
                             dims["output_dim"])
        expected = skeleton.expected_shapes()
        order = header["order"]
        if [n for n, _ in order] != skeleton.param_names():
            raise ShapeError("checkpoint parameter order does not match its dims")
        for name, shape in order:
            if tuple(shape) != expected[name]:
                raise ShapeError(f"{name}: header shape {shape} != expected {expected[name]}")
        n_values = sum(int(np.prod(expected[n])) for n, _ in order)
        if n_values != header["n_values"]:
            raise ShapeError("declared value count does not match the dims")
        payload = fh.read(8 * n_values)
        if len(payload) != 8 * n_values or fh.read(1):
            raise ShapeError("payload size does not match the header")
    flat = np.frombuffer(payload, dtype="<f8").astype(float)
    params, pos = {}, 0
    for name, shape in order:
        size = int(np.prod(shape))
        params[name] = flat[pos:pos + size].reshape(shape).copy()
        pos += size
    skeleton.params = params
    return skeleton.check(), header

