"""Euler, Look-Ahead, Look-Back and Momentum samplers for backward flow ODEs.

All four share one loop (:func:`run_sampler`) and one step signature::

    step(state, k, grid, config, field, ...) -> (new_state, StepRecord)

Each step evaluates the velocity field through
:func:`flowsmooth.core.evaluate_field` so model calls are tallied per step.
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import (
    CallCounter,
    InvalidArgument,
    NumericFailure,
    SamplerConfig,
    StepRecord,
    TimeGrid,
    Trajectory,
    VelocityFieldSpec,
    as_state,
    evaluate_field,
)
from .schedules import RECTIFIED_FLOW, SnrSchedule, lookback_decay


@dataclass(frozen=True)
class SamplerState:
    """Current latent plus the per-algorithm memory.

    ``ema`` holds the running average from the previous step (Look-Back only);
    ``momentum`` the first-moment vector (Momentum only).
    """

    z: np.ndarray
    k: int = 0
    t: float = 1.0
    ema: Optional[np.ndarray] = None
    momentum: Optional[np.ndarray] = None


def initial_state(config: SamplerConfig, z_init) -> SamplerState:
    z = as_state(z_init)
    if config.algorithm == "look_back":
        return SamplerState(z=z, ema=z)
    if config.algorithm == "momentum":
        return SamplerState(z=z, momentum=as_state(np.zeros_like(z)))
    return SamplerState(z=z)


def _evaluate(field, z, t, counter, k):
    try:
        return evaluate_field(field, z, t, counter)
    except NumericFailure as exc:
        raise NumericFailure(str(exc), step=k) from None


def _finite(values, k, what="state"):
    try:
        return as_state(values, copy=False)
    except NumericFailure:
        raise NumericFailure(f"non-finite {what}", step=k) from None


def _check_step(k, grid):
    if not 0 <= k < grid.n_steps:
        raise InvalidArgument(f"step index {k} outside [0, {grid.n_steps})")


# --------------------------------------------------------------------------- #
# building blocks
# --------------------------------------------------------------------------- #

def euler_step(z, t_k: float, eta_k: float, field, counter: Optional[CallCounter] = None,
               k: Optional[int] = None) -> np.ndarray:
    """``z - eta_k * v(z, t_k)``; one model call."""
    if not eta_k > 0:
        raise InvalidArgument(f"eta_k must be > 0, got {eta_k}")
    v = _evaluate(field, z, t_k, counter, k)
    return _finite(np.asarray(z) - eta_k * v, k)


def scheduler_step(z, v, k: int, grid: TimeGrid):
    """The scheduler's native predictor: ``(z - eta_k v, t_k - delta_k)``.

    No model call; ``v`` is supplied by the caller.
    """
    _check_step(k, grid)
    z_tilde = np.asarray(z, dtype=np.float64) - grid.step_sizes[k] * np.asarray(v, dtype=np.float64)
    return z_tilde, float(grid.times[k] - grid.deltas[k])


def estimate_peek_velocity(z, z_tilde, delta_k: float) -> np.ndarray:
    """Finite-difference velocity implied by the predictor, ``(z - z_tilde) / delta_k``."""
    if not delta_k > 0:
        raise InvalidArgument(f"delta_k must be > 0, got {delta_k}")
    return (np.asarray(z, dtype=np.float64) - np.asarray(z_tilde, dtype=np.float64)) / delta_k


def curvature(v, v_tilde, z, z_tilde, epsilon: float = 1e-8) -> float:
    """Normalized directional deviation ``|v_tilde - v| / (|z_tilde - z| + epsilon)``."""
    if not epsilon > 0:
        raise InvalidArgument(f"epsilon must be > 0, got {epsilon}")
    num = np.linalg.norm(np.asarray(v_tilde, dtype=np.float64) - np.asarray(v, dtype=np.float64))
    den = np.linalg.norm(np.asarray(z_tilde, dtype=np.float64) - np.asarray(z, dtype=np.float64))
    return float(num / (den + epsilon))


def ema_update(ema_prev, z, gamma: float) -> np.ndarray:
    """``gamma * ema_prev + (1 - gamma) * z``."""
    return gamma * np.asarray(ema_prev) + (1.0 - gamma) * np.asarray(z)


def peek_blend(z, ema_prev, lam: float) -> np.ndarray:
    """``(1 - lam) * z + lam * ema_prev``."""
    return (1.0 - lam) * np.asarray(z) + lam * np.asarray(ema_prev)


# --------------------------------------------------------------------------- #
# per-algorithm steps
# --------------------------------------------------------------------------- #

def _advance(state: SamplerState, k: int, grid: TimeGrid, **changes) -> SamplerState:
    return replace(state, k=k + 1, t=float(grid.times[k] - grid.deltas[k]), **changes)


def plain_euler_step(state: SamplerState, k: int, grid: TimeGrid, config: SamplerConfig,
                     field, counter: Optional[CallCounter] = None):
    _check_step(k, grid)
    with _step_calls(counter) as local:
        z_next = euler_step(state.z, float(grid.times[k]), float(grid.step_sizes[k]), field, local, k)
    return _advance(state, k, grid, z=z_next), StepRecord(model_calls=local.count)


def look_ahead_step(state: SamplerState, k: int, grid: TimeGrid, config: SamplerConfig,
                    field, counter: Optional[CallCounter] = None):
    """Curvature-gated step.

    Takes the scheduler's predictor step, measures how far the implied
    velocity departs from the evaluated one, and accepts the full step when
    that deviation is within ``tau_curv``; otherwise moves only a fraction
    ``gamma_interp`` of the way.  The clock advances by ``delta_k`` either way.

    With ``peek_mode="finite_difference"`` the peek velocity comes from the
    predictor displacement (one call).  ``"model_eval"`` evaluates the field at
    the predicted point instead (two calls).
    """
    _check_step(k, grid)
    z, t_k = state.z, float(grid.times[k])
    with _step_calls(counter) as local:
        v = _evaluate(field, z, t_k, local, k)
        z_tilde, t_tilde = scheduler_step(z, v, k, grid)
        z_tilde = _finite(z_tilde, k, "predictor state")
        if config.peek_mode == "model_eval":
            v_tilde = _evaluate(field, z_tilde, max(t_tilde, 0.0), local, k)
        else:
            v_tilde = estimate_peek_velocity(z, z_tilde, float(grid.deltas[k]))
    kappa = curvature(v, v_tilde, z, z_tilde, config.epsilon)
    if not np.isfinite(kappa):
        raise NumericFailure("non-finite curvature", step=k)

    accepted = kappa <= config.tau_curv
    if accepted:
        z_next = z_tilde
    else:
        z_next = _finite(z + config.gamma_interp * (z_tilde - z), k)
    record = StepRecord(model_calls=local.count, kappa=kappa, accepted_full_step=bool(accepted))
    return _advance(state, k, grid, z=z_next), record


def look_back_step(state: SamplerState, k: int, grid: TimeGrid, config: SamplerConfig,
                   field, snr: SnrSchedule = RECTIFIED_FLOW,
                   counter: Optional[CallCounter] = None):
    """EMA-stabilized step.

    The velocity is evaluated at a blend of the current latent and the
    running average from the *previous* step; the running average is then
    advanced with the SNR-dependent decay.  ``lambda_blend=0`` is plain Euler.
    """
    _check_step(k, grid)
    if state.ema is None:
        raise InvalidArgument("look_back state needs an ema vector")
    z, t_k = state.z, float(grid.times[k])
    gamma_t = lookback_decay(snr, t_k, config.gamma_max, config.beta_steepness,
                             config.xi_star, sign=config.decay_sign)
    ema_next = _finite(ema_update(state.ema, z, gamma_t), k, "running average")
    z_peek = _finite(peek_blend(z, state.ema, config.lambda_blend), k, "peek latent")
    with _step_calls(counter) as local:
        v = _evaluate(field, z_peek, t_k, local, k)
    z_next = _finite(z - grid.step_sizes[k] * v, k)
    record = StepRecord(model_calls=local.count, gamma_t=gamma_t)
    return _advance(state, k, grid, z=z_next, ema=ema_next), record


def momentum_step(state: SamplerState, k: int, grid: TimeGrid, config: SamplerConfig,
                  field, counter: Optional[CallCounter] = None):
    """Heavy-ball step on the negated velocity; ``beta1=0`` is plain Euler."""
    _check_step(k, grid)
    if state.momentum is None:
        raise InvalidArgument("momentum state needs a momentum vector")
    with _step_calls(counter) as local:
        g = -_evaluate(field, state.z, float(grid.times[k]), local, k)
    m_next = _finite(config.beta1 * state.momentum + (1.0 - config.beta1) * g, k, "momentum")
    z_next = _finite(state.z + grid.step_sizes[k] * m_next, k)
    return _advance(state, k, grid, z=z_next, momentum=m_next), StepRecord(model_calls=local.count)


@contextmanager
def _step_calls(counter: Optional[CallCounter]):
    """Count one step's calls locally; forward them to ``counter`` even on failure."""
    local = CallCounter()
    try:
        yield local
    finally:
        if counter is not None:
            counter.increment(local.count)


# --------------------------------------------------------------------------- #
# driver
# --------------------------------------------------------------------------- #

def run_sampler(config: SamplerConfig, field, grid: TimeGrid, z_init,
                snr: SnrSchedule = RECTIFIED_FLOW,
                counter: Optional[CallCounter] = None) -> Trajectory:
    """Integrate from t=1 to t=0 over ``grid`` and return the full trajectory."""
    if isinstance(field, VelocityFieldSpec):
        field = field.build()
    if grid is None or grid.n_steps < 1:
        raise InvalidArgument("grid must contain at least one step")
    z0 = as_state(z_init)
    if z0.shape[0] != field.dim:
        raise InvalidArgument(f"z_init has dim {z0.shape[0]}, field has dim {field.dim}")

    state = initial_state(config, z0)
    states, records = [state.z], []
    for k in range(grid.n_steps):
        if config.algorithm == "euler":
            state, rec = plain_euler_step(state, k, grid, config, field, counter)
        elif config.algorithm == "look_ahead":
            state, rec = look_ahead_step(state, k, grid, config, field, counter)
        elif config.algorithm == "look_back":
            state, rec = look_back_step(state, k, grid, config, field, snr, counter)
        else:
            state, rec = momentum_step(state, k, grid, config, field, counter)
        states.append(state.z)
        records.append(rec)
    return Trajectory(states=states, times=grid.times, step_records=records,
                      algorithm=config.algorithm)
