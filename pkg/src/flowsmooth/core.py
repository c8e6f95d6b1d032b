"""Shared domain types: states, time grids, the field-evaluation contract,
trajectories and sampler configuration.

States are plain 1-D ``float64`` numpy arrays.  :func:`as_state` is the single
gate that enforces finiteness; every sampler step passes its output through it.
Times run backwards, ``1 = t_0 > t_1 > ... > t_K = 0``, and ``k`` counts
completed steps.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

import numpy as np


class InvalidArgument(ValueError):
    """Raised when an argument violates a documented precondition."""


class DomainError(ValueError):
    """Raised when a function is evaluated outside its mathematical domain."""


class NumericFailure(ArithmeticError):
    """A non-finite value appeared during sampling.

    ``step`` is the index of the step that produced it, or ``None`` when the
    failure happened outside a sampling loop.
    """

    def __init__(self, message: str, step: Optional[int] = None):
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)


def as_state(values, *, copy: bool = True) -> np.ndarray:
    """Return ``values`` as a finite, read-only 1-D float64 state vector."""
    arr = np.array(values, dtype=np.float64, ndmin=1) if copy else np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise InvalidArgument(f"state must be a non-empty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NumericFailure("state has non-finite coordinates")
    if copy:
        arr.flags.writeable = False
    return arr


# --------------------------------------------------------------------------- #
# time grids
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class TimeGrid:
    """Decreasing times with per-step time advances and scheduler step sizes.

    ``deltas[k] = times[k] - times[k+1]`` is how far the clock moves;
    ``step_sizes[k]`` is the magnitude the scheduler multiplies the velocity
    by.  The two coincide on uniform grids only.
    """

    times: np.ndarray
    deltas: np.ndarray
    step_sizes: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64)
        steps = np.asarray(self.step_sizes, dtype=np.float64)
        if times.ndim != 1 or times.size < 2:
            raise InvalidArgument("a time grid needs at least two times")
        if times[0] != 1.0 or times[-1] != 0.0:
            raise InvalidArgument("times must start at 1 and end at 0")
        deltas = times[:-1] - times[1:]
        if np.any(deltas <= 0):
            raise InvalidArgument("times must be strictly decreasing")
        if not np.array_equal(np.asarray(self.deltas, dtype=np.float64), deltas):
            raise InvalidArgument("deltas must equal consecutive time differences")
        if steps.shape != deltas.shape or np.any(~(steps > 0)):
            raise InvalidArgument("need one positive step size per step")
        for name, arr in (("times", times), ("deltas", deltas), ("step_sizes", steps)):
            arr = arr.copy()
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_steps(self) -> int:
        return self.deltas.size

    def __len__(self) -> int:
        return self.n_steps


def sigma_shift(t, shift: float):
    """Shifted noise level ``shift*t / (1 + (shift-1)*t)``; identity at shift=1."""
    return shift * t / (1.0 + (shift - 1.0) * t)


def make_time_grid(n_steps: int, kind: str = "uniform", shift: float = 1.0) -> TimeGrid:
    """Build a K-step grid on [0, 1].

    ``kind="uniform"`` uses step sizes equal to the time advances.
    ``kind="sigma_shift"`` keeps the uniform clock but takes step sizes from
    differences of the shifted noise level, so they no longer match the
    time advances.
    """
    if isinstance(n_steps, bool) or int(n_steps) != n_steps or n_steps < 1:
        raise InvalidArgument(f"n_steps must be a positive integer, got {n_steps!r}")
    n_steps = int(n_steps)
    times = 1.0 - np.arange(n_steps + 1, dtype=np.float64) / n_steps
    times[-1] = 0.0
    if kind == "uniform":
        step_sizes = times[:-1] - times[1:]
    elif kind == "sigma_shift":
        if not shift > 0 or not math.isfinite(shift):
            raise InvalidArgument(f"shift must be a positive real, got {shift!r}")
        sig = sigma_shift(times, float(shift))
        step_sizes = sig[:-1] - sig[1:]
    else:
        raise InvalidArgument(f"unknown grid kind {kind!r}")
    return TimeGrid(times=times, deltas=times[:-1] - times[1:], step_sizes=step_sizes)


# --------------------------------------------------------------------------- #
# field evaluation
# --------------------------------------------------------------------------- #

FIELD_KINDS = ("gaussian_rf", "linear_matrix", "stiff_tracking", "custom")


@dataclass(frozen=True)
class VelocityFieldSpec:
    """Name + parameters of an analytic velocity field.

    ``conditioning`` is carried through untouched; analytic fields ignore it.
    """

    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    conditioning: Any = None

    def __post_init__(self):
        if self.kind not in FIELD_KINDS:
            raise InvalidArgument(f"unknown field kind {self.kind!r}; expected one of {FIELD_KINDS}")

    def build(self):
        from .fields import field_from_spec

        return field_from_spec(self)


class CallCounter:
    """Thread-safe tally of velocity-field evaluations."""

    def __init__(self):
        self._n = 0
        self._lock = threading.Lock()

    def increment(self, n: int = 1) -> None:
        with self._lock:
            self._n += n

    @property
    def count(self) -> int:
        return self._n


def evaluate_field(field, z, t: float, counter: Optional[CallCounter] = None,
                   conditioning: Any = None) -> np.ndarray:
    """Evaluate ``v(z, t)`` and count it as one model call.

    ``field`` is a field object (anything with ``dim`` and ``velocity``) or a
    :class:`VelocityFieldSpec`.
    """
    if isinstance(field, VelocityFieldSpec):
        conditioning = field.conditioning if conditioning is None else conditioning
        field = field.build()
    if not 0.0 <= t <= 1.0:
        raise InvalidArgument(f"t must lie in [0, 1], got {t!r}")
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] != field.dim:
        raise InvalidArgument(f"state has shape {z.shape}, field expects ({field.dim},)")
    if counter is not None:
        counter.increment()
    with np.errstate(over="ignore", invalid="ignore"):
        v = np.asarray(field.velocity(z, t), dtype=np.float64)
    if v.shape != z.shape:
        raise InvalidArgument(f"field returned shape {v.shape} for state shape {z.shape}")
    if not np.all(np.isfinite(v)):
        raise NumericFailure(f"non-finite velocity at t={t!r}")
    return v


# --------------------------------------------------------------------------- #
# sampler configuration and trajectories
# --------------------------------------------------------------------------- #

ALGORITHMS = ("euler", "look_ahead", "look_back", "momentum")
PEEK_MODES = ("finite_difference", "model_eval")
DECAY_SIGNS = ("prose", "printed")

# (gamma_interp, tau_curv) and (lambda_blend, xi_star) per dataset.
LOOK_AHEAD_PRESETS = {"coco17": (0.9, 10.0), "cub200": (0.95, 1.0), "flickr30k": (0.9, 1.0)}
LOOK_BACK_PRESETS = {"coco17": (0.1, 0.0), "cub200": (0.1, 0.0), "flickr30k": (0.1, 0.25)}


def _parse_tau(value) -> float:
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinite", "infinity"):
            return math.inf
        raise InvalidArgument(f"tau_curv must be positive or 'inf', got {value!r}")
    return float(value)


@dataclass(frozen=True)
class SamplerConfig:
    """Algorithm selector plus every hyperparameter the four samplers use.

    ``tau_curv`` accepts ``math.inf`` or the string ``"inf"``; an infinite
    threshold accepts every step.  ``decay_sign="printed"`` flips the sign
    inside the Look-Back decay sigmoid (see :func:`flowsmooth.schedules.lookback_decay`).
    """

    algorithm: str = "euler"
    tau_curv: float = 1.0
    gamma_interp: float = 0.9
    lambda_blend: float = 0.1
    gamma_max: float = 0.9
    beta_steepness: float = 1.0
    xi_star: float = 0.0
    beta1: float = 0.8
    epsilon: float = 1e-8
    peek_mode: str = "finite_difference"
    decay_sign: str = "prose"

    def __post_init__(self):
        object.__setattr__(self, "tau_curv", _parse_tau(self.tau_curv))
        for name in ("gamma_interp", "lambda_blend", "gamma_max", "beta_steepness",
                     "xi_star", "beta1", "epsilon"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise InvalidArgument(f"{name} must be a real number, got {value!r}")
            object.__setattr__(self, name, float(value))

        if self.algorithm not in ALGORITHMS:
            raise InvalidArgument(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        if self.peek_mode not in PEEK_MODES:
            raise InvalidArgument(f"peek_mode must be one of {PEEK_MODES}, got {self.peek_mode!r}")
        if self.decay_sign not in DECAY_SIGNS:
            raise InvalidArgument(f"decay_sign must be one of {DECAY_SIGNS}, got {self.decay_sign!r}")
        if not self.tau_curv > 0:
            raise InvalidArgument(f"tau_curv must be > 0, got {self.tau_curv}")
        if not 0.0 < self.gamma_interp <= 1.0:
            raise InvalidArgument(f"gamma_interp must lie in (0, 1], got {self.gamma_interp}")
        if not 0.0 <= self.lambda_blend <= 1.0:
            raise InvalidArgument(f"lambda_blend must lie in [0, 1], got {self.lambda_blend}")
        if not 0.0 <= self.gamma_max < 1.0:
            raise InvalidArgument(f"gamma_max must lie in [0, 1), got {self.gamma_max}")
        if not (self.beta_steepness > 0 and math.isfinite(self.beta_steepness)):
            raise InvalidArgument(f"beta_steepness must be a positive real, got {self.beta_steepness}")
        if not math.isfinite(self.xi_star):
            raise InvalidArgument(f"xi_star must be finite, got {self.xi_star}")
        if not 0.0 <= self.beta1 < 1.0:
            raise InvalidArgument(f"beta1 must lie in [0, 1), got {self.beta1}")
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise InvalidArgument(f"epsilon must be a positive real, got {self.epsilon}")

    @property
    def calls_per_step(self) -> int:
        if self.algorithm == "look_ahead" and self.peek_mode == "model_eval":
            return 2
        return 1


@dataclass(frozen=True)
class StepRecord:
    """Diagnostics for one sampler step.

    ``kappa`` and ``accepted_full_step`` are set by Look-Ahead only;
    ``gamma_t`` by Look-Back only.
    """

    model_calls: int
    kappa: Optional[float] = None
    accepted_full_step: Optional[bool] = None
    gamma_t: Optional[float] = None


@dataclass(frozen=True)
class Trajectory:
    states: tuple
    times: np.ndarray
    step_records: tuple
    algorithm: str = "euler"

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "step_records", tuple(self.step_records))
        if len(self.states) != len(self.times):
            raise InvalidArgument("states and times must have equal length")
        if len(self.step_records) != len(self.states) - 1:
            raise InvalidArgument("need exactly one step record per step")

    @property
    def n_steps(self) -> int:
        return len(self.step_records)

    @property
    def total_calls(self) -> int:
        return sum(r.model_calls for r in self.step_records)

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]

    def as_array(self) -> np.ndarray:
        """States stacked into a ``(K+1, d)`` array."""
        return np.stack(self.states)


def stack_states(states: Sequence) -> np.ndarray:
    arrs = [np.asarray(s, dtype=np.float64) for s in states]
    if not arrs:
        raise InvalidArgument("need at least one state")
    dims = {a.shape for a in arrs}
    if len(dims) != 1:
        raise InvalidArgument(f"states have mismatched shapes {sorted(dims)}")
    return np.stack(arrs)
