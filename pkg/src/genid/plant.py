"""Single-machine infinite-bus generator with telegraph-scheduled shunt faults.

Topology: internal EMF E' behind the transient reactance xd', terminal bus,
step-up transformer xt, bus 2, two parallel lines to an infinite bus.  A
shunt fault 1/(R + jX) sits at bus 2, the sending end of line 1.  The
machine is the classical constant-E' swing model

    d(delta)/dt = omega_b * dw
    d(dw)/dt    = (Pm - Pe(delta) - D * dw) / (2 H)

integrated with fixed-step RK4.  Terminal (P, Q, V, phi) are reported at the
sample cadence; phi is measured against the infinite bus.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import (
    InvalidArgumentError,
    NoEquilibriumError,
    RandomizationFailedError,
    SimulationDivergedError,
)
from .series import MultiSeries
from .telegraph import FaultParams, TelegraphParams, sample_fault_params, sample_path

CHANNELS = ("P", "Q", "V", "phi", "fault")
MAX_SPEED_DEVIATION = 0.2
RANDOMIZABLE = (
    "inertia_H",
    "damping_D",
    "transient_reactance_xd",
    "transformer_reactance_xt",
    "line_reactances",
)


@dataclass(frozen=True)
class PlantConfig:
    """Machine and network data in per-unit on the machine base.

    Defaults follow the classic one-machine example: four 555 MVA units
    lumped into one, H = 3.5 s, xd' = 0.3, xt = 0.15, lines of 0.5 and
    0.93, P = 0.9 at Et = 1.0.  ``damping_D`` is a lumped stand-in for the
    power system stabilizer.
    """

    inertia_H: float = 3.5
    damping_D: float = 20.0
    transient_reactance_xd: float = 0.3
    transformer_reactance_xt: float = 0.15
    line_reactances: tuple = (0.5, 0.93)
    infinite_bus_voltage: float = 0.90081
    mechanical_power: float = 0.9
    internal_emf: float = 1.1626
    base_frequency: float = 60.0
    fine_dt: float = 1e-3
    sample_dt: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "line_reactances", tuple(float(x) for x in self.line_reactances))

    def validate(self):
        if not self.inertia_H > 0:
            raise InvalidArgumentError("inertia_H must be > 0")
        if not self.damping_D >= 0:
            raise InvalidArgumentError("damping_D must be >= 0")
        xs = (self.transient_reactance_xd, self.transformer_reactance_xt, *self.line_reactances)
        if len(self.line_reactances) != 2 or not all(x > 0 for x in xs):
            raise InvalidArgumentError("all reactances must be > 0 (two line reactances)")
        if not self.infinite_bus_voltage > 0 or not self.internal_emf > 0:
            raise InvalidArgumentError("voltages must be > 0")
        if not (self.fine_dt > 0 and self.sample_dt > 0 and self.base_frequency > 0):
            raise InvalidArgumentError("time steps and base frequency must be > 0")
        ratio = self.sample_dt / self.fine_dt
        if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
            raise InvalidArgumentError("sample_dt must be an integer multiple of fine_dt")
        vals = np.array([getattr(self, k) for k in asdict(self) if k != "line_reactances"], float)
        if not np.all(np.isfinite(vals)):
            raise InvalidArgumentError("config values must be finite")
        return self

    @property
    def substeps(self):
        return int(round(self.sample_dt / self.fine_dt))

    @property
    def omega_b(self):
        return 2.0 * math.pi * self.base_frequency

    @property
    def line_parallel(self):
        a, b = self.line_reactances
        return a * b / (a + b)

    @property
    def total_reactance(self):
        return self.transient_reactance_xd + self.transformer_reactance_xt + self.line_parallel

    @property
    def max_power(self):
        return self.internal_emf * self.infinite_bus_voltage / self.total_reactance

    def to_dict(self):
        d = asdict(self)
        d["line_reactances"] = list(self.line_reactances)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class PlantState:
    rotor_angle_delta: float
    speed_deviation: float = 0.0
    fault_active: bool = False
    fault: FaultParams | None = None


# -- network algebra ---------------------------------------------------------

def _network(config, y_fault):
    """Reduced two-port seen from the internal EMF node.

    Returns ``(y11, y12, ya)`` with bus 2 eliminated; ``y_fault`` may be an
    array of complex shunt admittances (0 for no fault).
    """
    ya = 1.0 / (1j * (config.transient_reactance_xd + config.transformer_reactance_xt))
    yb = 1.0 / (1j * config.line_parallel)
    yj = ya + yb + y_fault
    return ya - ya * ya / yj, -ya * yb / yj, ya


def _power_coefficients(config, y_fault):
    """Pe(delta) = c0 + c1 cos(delta) + c2 sin(delta)."""
    y11, y12, _ = _network(config, y_fault)
    e, v = config.internal_emf, config.infinite_bus_voltage
    c0 = e * e * np.real(y11)
    c1 = e * v * np.real(y12)
    c2 = e * v * np.imag(y12)
    return c0, c1, c2


def terminal_quantities(config, delta, y_fault=0.0):
    """Terminal (P, Q, V, phi) for rotor angle(s) ``delta``."""
    y11, y12, _ = _network(config, y_fault)
    e = config.internal_emf * np.exp(1j * np.asarray(delta, dtype=float))
    current = y11 * e + y12 * config.infinite_bus_voltage
    vt = e - 1j * config.transient_reactance_xd * current
    s = vt * np.conj(current)
    return np.real(s), np.imag(s), np.abs(vt), np.angle(vt)


def solve_steady_state(config: PlantConfig) -> PlantState:
    """Unfaulted equilibrium: Pe(delta) = Pm with zero speed deviation."""
    config.validate()
    c0, c1, c2 = (float(c) for c in _power_coefficients(config, 0.0))
    amp = math.hypot(c1, c2)
    arg = (config.mechanical_power - c0) / amp
    if not -1.0 <= arg <= 1.0:
        raise NoEquilibriumError(
            f"mechanical power {config.mechanical_power} exceeds the transfer limit {amp + c0:.4f}"
        )
    delta = math.asin(arg) - math.atan2(c1, c2)
    residual = config.mechanical_power - (c0 + c1 * math.cos(delta) + c2 * math.sin(delta))
    if abs(residual) > 1e-10:
        raise NoEquilibriumError(f"equilibrium residual {residual:.3e}")
    return PlantState(delta, 0.0, False, None)


# -- fault schedules -----------------------------------------------------------

@dataclass
class FaultSchedule:
    """Per-sample fault status and shunt admittance for one trajectory."""

    active: np.ndarray
    admittance: np.ndarray
    params: list = field(default_factory=list)

    @classmethod
    def none(cls, n):
        return cls(np.zeros(n, bool), np.zeros(n, complex))

    @classmethod
    def constant(cls, n, fault):
        return cls(np.ones(n, bool), np.full(n, fault.admittance, complex), [fault])


def draw_schedule(n_samples, telegraph, base_fault, rng, sample_dt, fault_scale=0.1):
    """Fault status for samples ``0..n-1``; sample 0 is always clear.

    Impedance is redrawn at every onset via :func:`sample_fault_params`.
    """
    active = np.zeros(n_samples, bool)
    if n_samples > 1:
        active[1:] = sample_path(telegraph, n_samples - 1, sample_dt, rng)
    admittance = np.zeros(n_samples, complex)
    params = []
    current = None
    for k in range(n_samples):
        if active[k] and (k == 0 or not active[k - 1]):
            current = sample_fault_params(base_fault, rng, fault_scale)
            params.append(current)
        if active[k]:
            admittance[k] = current.admittance
    return FaultSchedule(active, admittance, params)


# -- integration -----------------------------------------------------------------

def _rk4_batch(configs, schedules, delta0, keep_fine=False):
    """Integrate a batch of trajectories sample interval by sample interval.

    Every config must share ``fine_dt`` and ``sample_dt``.  Returns the
    sample-time states ``(n, B)`` for delta and dw, the per-trajectory
    divergence time (nan if none), and optionally the fine-grid states.
    """
    b = len(configs)
    n = len(schedules[0].active)
    cfg0 = configs[0]
    h, m = cfg0.fine_dt, cfg0.substeps
    wb = np.array([c.omega_b for c in configs])
    two_h = np.array([2.0 * c.inertia_H for c in configs])
    damp = np.array([c.damping_D for c in configs])
    pm = np.array([c.mechanical_power for c in configs])

    coeffs = np.empty((3, n, b))
    for j, (c, s) in enumerate(zip(configs, schedules)):
        c0, c1, c2 = _power_coefficients(c, s.admittance)
        coeffs[0, :, j], coeffs[1, :, j], coeffs[2, :, j] = c0, c1, c2

    delta = np.array(delta0, dtype=float)
    dw = np.zeros(b)
    deltas = np.empty((n, b))
    dws = np.empty((n, b))
    fine_d = np.empty((n * m + 1, b)) if keep_fine else None
    fine_w = np.empty((n * m + 1, b)) if keep_fine else None
    diverged = np.full(b, np.nan)
    alive = np.ones(b, bool)

    def rhs(d, w, c0, c1, c2):
        pe = c0 + c1 * np.cos(d) + c2 * np.sin(d)
        return wb * w, (pm - pe - damp * w) / two_h

    for k in range(n):
        deltas[k], dws[k] = delta, dw
        bad = alive & (
            ~np.isfinite(delta) | ~np.isfinite(dw)
            | (np.abs(dw) > MAX_SPEED_DEVIATION) | (np.abs(delta) > math.pi)
        )
        if bad.any():
            diverged[bad] = k * cfg0.sample_dt
            alive &= ~bad
            delta = np.where(alive, delta, 0.0)
            dw = np.where(alive, dw, 0.0)
        c0, c1, c2 = coeffs[0, k], coeffs[1, k], coeffs[2, k]
        if keep_fine:
            fine_d[k * m], fine_w[k * m] = delta, dw
        if k == n - 1:
            break
        for i in range(m):
            k1d, k1w = rhs(delta, dw, c0, c1, c2)
            k2d, k2w = rhs(delta + 0.5 * h * k1d, dw + 0.5 * h * k1w, c0, c1, c2)
            k3d, k3w = rhs(delta + 0.5 * h * k2d, dw + 0.5 * h * k2w, c0, c1, c2)
            k4d, k4w = rhs(delta + h * k3d, dw + h * k3w, c0, c1, c2)
            delta = delta + (h / 6.0) * (k1d + 2.0 * k2d + 2.0 * k3d + k4d)
            dw = dw + (h / 6.0) * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
            if keep_fine:
                fine_d[k * m + i + 1], fine_w[k * m + i + 1] = delta, dw
    fine = (fine_d[: (n - 1) * m + 1], fine_w[: (n - 1) * m + 1]) if keep_fine else None
    return deltas, dws, diverged, fine


def _to_series(config, schedule, deltas):
    p, q, v, phi = terminal_quantities(config, deltas, schedule.admittance)
    return MultiSeries.from_channels(
        1.0 / config.sample_dt,
        [("P", p), ("Q", q), ("V", v), ("phi", phi), ("fault", schedule.active.astype(float))],
    )


def n_samples_for(duration, sample_dt):
    if not (math.isfinite(duration) and duration > 0):
        raise InvalidArgumentError("duration must be > 0")
    return int(round(duration / sample_dt)) + 1


def simulate_schedules(configs, schedules, on_diverge="raise", keep_fine=False):
    """Simulate pre-drawn fault schedules; one config per schedule.

    With ``on_diverge="return"`` a diverged trajectory yields its
    :class:`SimulationDivergedError` in place of a series.
    """
    if len(configs) != len(schedules) or not configs:
        raise InvalidArgumentError("need one config per schedule")
    steps = {(c.fine_dt, c.sample_dt) for c in configs}
    if len(steps) != 1:
        raise InvalidArgumentError("batched configs must share fine_dt and sample_dt")
    delta0 = [solve_steady_state(c).rotor_angle_delta for c in configs]
    deltas, _, diverged, fine = _rk4_batch(configs, schedules, delta0, keep_fine)
    out = []
    for j, (c, s) in enumerate(zip(configs, schedules)):
        if np.isfinite(diverged[j]):
            err = SimulationDivergedError(diverged[j], "loss of synchronism or speed limit exceeded")
            if on_diverge == "raise":
                raise err
            out.append(err)
        else:
            out.append(_to_series(c, s, deltas[:, j]))
    if keep_fine:
        return out, fine
    return out


def simulate(
    config: PlantConfig,
    telegraph: TelegraphParams,
    base_fault: FaultParams,
    duration: float,
    rng,
    fault_scale: float = 0.1,
) -> MultiSeries:
    """One trajectory of terminal telemetry plus the fault indicator.

    Randomness is consumed in a fixed order (telegraph path, then one
    impedance draw per onset), so a seeded ``rng`` gives bit-identical output.
    """
    config.validate()
    n = n_samples_for(duration, config.sample_dt)
    schedule = draw_schedule(n, telegraph, base_fault, rng, config.sample_dt, fault_scale)
    return simulate_schedules([config], [schedule])[0]


def simulate_many(configs, telegraph, base_fault, duration, seeds, fault_scale=0.1,
                  on_diverge="return", batch_size=256):
    """Batched :func:`simulate`; trajectory ``j`` uses ``default_rng(seeds[j])``.

    ``configs`` is either one config shared by every trajectory or a list.
    Each trajectory's schedule is drawn exactly as :func:`simulate` would.
    """
    if isinstance(configs, PlantConfig):
        configs = [configs] * len(seeds)
    for c in set(configs):
        c.validate()
    n = n_samples_for(duration, configs[0].sample_dt)
    schedules = []
    for c, seed in zip(configs, seeds):
        rng = np.random.default_rng(seed)
        schedules.append(draw_schedule(n, telegraph, base_fault, rng, c.sample_dt, fault_scale))
    out = []
    for i in range(0, len(schedules), batch_size):
        out.extend(simulate_schedules(configs[i:i + batch_size], schedules[i:i + batch_size],
                                      on_diverge=on_diverge))
    return out


# -- parameter randomization and calibration ---------------------------------------

def randomize_plant(config: PlantConfig, rng, scale: float = 0.1, max_attempts: int = 100) -> PlantConfig:
    """Redraw inertia, damping and reactances from N(v, scale * v).

    Draws violating the config invariants, or leaving no equilibrium, are
    rejected and redrawn.
    """
    config.validate()
    if scale == 0:
        return config
    for _ in range(max_attempts):
        changes = {}
        for name in RANDOMIZABLE:
            v = getattr(config, name)
            if isinstance(v, tuple):
                changes[name] = tuple(float(rng.normal(x, scale * abs(x))) for x in v)
            else:
                changes[name] = float(rng.normal(v, scale * abs(v)))
        candidate = replace(config, **changes)
        try:
            candidate.validate()
            solve_steady_state(candidate)
        except (InvalidArgumentError, NoEquilibriumError):
            continue
        return candidate
    raise RandomizationFailedError(f"{max_attempts} consecutive invalid draws")


def survives(config, fault, hold=5.0, recovery=5.0):
    """True if the plant rides through ``hold`` s of fault and ``recovery`` s after."""
    n_on = int(round(hold / config.sample_dt))
    n = n_on + int(round(recovery / config.sample_dt)) + 1
    active = np.zeros(n, bool)
    active[1:n_on + 1] = True
    schedule = FaultSchedule(active, np.where(active, fault.admittance, 0j), [fault])
    res = simulate_schedules([config], [schedule], on_diverge="return")[0]
    return not isinstance(res, SimulationDivergedError)


def calibrate_fault_reactance(config, resistance=0.01, grid=None, hold=5.0, margin=0.7):
    """Most severe grid reactance whose fault the plant survives with margin.

    A reactance X is accepted when the plant survives a ``hold``-second
    fault of impedance ``resistance + j * margin * X``; the margin leaves
    room for impedance randomization.  Returns the smallest accepted X.
    """
    grid = np.round(np.arange(1, 11) * 0.1, 10) if grid is None else grid
    for x in sorted(grid):
        if survives(config, FaultParams(resistance, margin * float(x)), hold):
            return float(x)
    raise NoEquilibriumError("plant does not survive any fault reactance on the grid")


def resistance_threshold(config, reactance=0.0, candidates=None, hold=5.0):
    """Smallest candidate fault resistance the plant survives for ``hold`` s."""
    candidates = [10.0 ** -k for k in range(0, 9)] if candidates is None else candidates
    ok = [r for r in candidates if survives(config, FaultParams(r, reactance), hold)]
    if not ok:
        raise NoEquilibriumError("no surviving fault resistance among candidates")
    return float(min(ok))
