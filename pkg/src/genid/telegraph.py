"""Two-state telegraph fault process and fault-impedance randomization.

The process toggles between ``FAULT`` and ``CLEAR``.  Its occupancy
probabilities obey

    d/dt p_fault = -rate_to_clear * p_fault + rate_to_fault * p_clear

whose solution from an initial distribution ``(pi_fault, pi_clear)`` is

    p_fault(t) = rf / s + (rc * pi_fault - rf * pi_clear) / s * exp(-s t),

with ``rf = rate_to_fault``, ``rc = rate_to_clear`` and ``s = rf + rc``.
Sampling at a fixed step uses this closed form conditioned on the current
state, so the discrete chain is exact for any step size.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgumentError

RESISTANCE_FLOOR = 1e-6


class FaultStatus(enum.Enum):
    FAULT = "fault"
    CLEAR = "clear"


@dataclass(frozen=True)
class TelegraphParams:
    """Switching rates in 1/s."""

    rate_to_fault: float
    rate_to_clear: float

    def __post_init__(self):
        for name in ("rate_to_fault", "rate_to_clear"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise InvalidArgumentError(f"{name} must be finite and >= 0, got {v}")

    @classmethod
    def from_step_rates(cls, lam=0.02, mu=0.03, time_unit=0.1):
        """Rates quoted per ``time_unit`` seconds.

        ``lam`` is the rate of leaving the fault state and ``mu`` the rate of
        entering it, so the stationary fault share is ``mu / (lam + mu)``.
        """
        return cls(rate_to_fault=mu / time_unit, rate_to_clear=lam / time_unit)

    @property
    def total_rate(self):
        return self.rate_to_fault + self.rate_to_clear

    @property
    def stationary_fault(self):
        s = self.total_rate
        return self.rate_to_fault / s if s > 0 else float("nan")


@dataclass(frozen=True)
class TelegraphState:
    prob_fault: float
    prob_clear: float
    current: FaultStatus = FaultStatus.CLEAR

    def __post_init__(self):
        pf, pc = self.prob_fault, self.prob_clear
        if not (0.0 <= pf <= 1.0 and 0.0 <= pc <= 1.0) or abs(pf + pc - 1.0) > 1e-12:
            raise InvalidArgumentError(f"invalid occupancy ({pf}, {pc})")

    @classmethod
    def clear(cls):
        return cls(0.0, 1.0, FaultStatus.CLEAR)

    @classmethod
    def faulted(cls):
        return cls(1.0, 0.0, FaultStatus.FAULT)

    @property
    def is_fault(self):
        return self.current is FaultStatus.FAULT


@dataclass(frozen=True)
class FaultParams:
    """Shunt fault impedance R + jX in per-unit."""

    resistance: float
    reactance: float

    def __post_init__(self):
        if not (math.isfinite(self.resistance) and math.isfinite(self.reactance)):
            raise InvalidArgumentError("fault impedance must be finite")
        if self.resistance < 0:
            raise InvalidArgumentError("fault resistance must be >= 0")
        if self.resistance == 0 and self.reactance == 0:
            raise InvalidArgumentError("fault impedance cannot be zero")

    @property
    def admittance(self):
        return 1.0 / complex(self.resistance, self.reactance)


def _fault_probability(params, pi_fault, t):
    rf, rc = params.rate_to_fault, params.rate_to_clear
    s = rf + rc
    if s == 0.0:
        return pi_fault
    pi_clear = 1.0 - pi_fault
    p = rf / s + (rc * pi_fault - rf * pi_clear) / s * math.exp(-s * t)
    return min(1.0, max(0.0, p))


def occupancy(params: TelegraphParams, initial: TelegraphState, t: float) -> TelegraphState:
    """Closed-form occupancy at time ``t`` starting from ``initial``.

    ``current`` is carried over unchanged.
    """
    if not math.isfinite(t) or t < 0:
        raise InvalidArgumentError(f"t must be finite and >= 0, got {t}")
    pf = _fault_probability(params, initial.prob_fault, t)
    return TelegraphState(pf, 1.0 - pf, initial.current)


def transition_probabilities(params: TelegraphParams, dt: float):
    """P(fault at t+dt | clear at t), P(fault at t+dt | fault at t)."""
    if not (math.isfinite(dt) and dt > 0):
        raise InvalidArgumentError(f"dt must be positive, got {dt}")
    return _fault_probability(params, 0.0, dt), _fault_probability(params, 1.0, dt)


def step(params: TelegraphParams, state: TelegraphState, dt: float, rng) -> TelegraphState:
    """Advance one step of ``dt`` seconds.

    The new status is a Bernoulli draw whose success probability is the
    occupancy after ``dt`` conditioned on the current status.  The occupancy
    fields track the unconditional distribution.
    """
    p_from_clear, p_from_fault = transition_probabilities(params, dt)
    p = p_from_fault if state.is_fault else p_from_clear
    current = FaultStatus.FAULT if rng.random() < p else FaultStatus.CLEAR
    marginal = occupancy(params, state, dt)
    return TelegraphState(marginal.prob_fault, marginal.prob_clear, current)


def sample_path(params, n_steps, dt, rng, initial=None, conditional=True):
    """Boolean fault indicator for ``n_steps`` consecutive steps after ``initial``.

    With ``conditional=True`` this is the Markov chain generated by repeated
    :func:`step` calls (same draws, same result).  With ``conditional=False``
    every step is an independent Bernoulli draw from the unconditional
    occupancy ``p_fault(k * dt)`` of the initial distribution.
    """
    initial = TelegraphState.clear() if initial is None else initial
    u = rng.random(n_steps)
    out = np.empty(n_steps, dtype=bool)
    if not conditional:
        for k in range(n_steps):
            out[k] = u[k] < _fault_probability(params, initial.prob_fault, (k + 1) * dt)
        return out
    p_from_clear, p_from_fault = transition_probabilities(params, dt)
    cur = initial.is_fault
    for k in range(n_steps):
        cur = bool(u[k] < (p_from_fault if cur else p_from_clear))
        out[k] = cur
    return out


def sample_fault_params(base: FaultParams, rng, scale: float = 0.1) -> FaultParams:
    """Draw each impedance component from N(v, scale * |v|).

    Resistance is floored at ``RESISTANCE_FLOOR``.  ``scale == 0`` returns
    ``base`` without consuming random numbers.
    """
    if scale == 0:
        return base
    r = rng.normal(base.resistance, scale * abs(base.resistance))
    x = rng.normal(base.reactance, scale * abs(base.reactance))
    return replace(base, resistance=max(float(r), RESISTANCE_FLOOR), reactance=float(x))
