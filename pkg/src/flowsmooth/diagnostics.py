"""Trajectory measurements: endpoint error, oscillation energy, ensemble
moments and model-call accounting."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .core import InvalidArgument, Trajectory, stack_states


@dataclass(frozen=True)
class TrajectoryReport:
    total_model_calls: int
    oscillation_energy: float
    path_length: float
    endpoint_error: Optional[float] = None
    kappa_stats: Optional[tuple] = None


def endpoint_error(traj: Trajectory | np.ndarray, oracle_z0) -> float:
    """Euclidean distance between the terminal state and ``oracle_z0``."""
    z_k = traj.endpoint if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.float64)
    ref = np.asarray(oracle_z0, dtype=np.float64)
    if z_k.shape != ref.shape:
        raise InvalidArgument(f"dimension mismatch: {z_k.shape} vs {ref.shape}")
    # hypot rescales internally, so tiny or huge gaps neither underflow nor overflow
    return math.hypot(*(z_k - ref).tolist())


def oscillation_energy(traj: Trajectory | np.ndarray) -> float:
    """Sum of squared second differences over interior states.

    Zero for any trajectory moving at constant velocity.
    """
    states = traj.as_array() if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.float64)
    if states.ndim == 1:
        states = states[:, None]
    if states.shape[0] < 3:
        raise InvalidArgument(f"need at least 3 states, got {states.shape[0]}")
    second = states[2:] - 2.0 * states[1:-1] + states[:-2]
    return float(np.sum(second * second))


def path_length(traj: Trajectory) -> float:
    states = traj.as_array()
    return float(np.sum(np.linalg.norm(np.diff(states, axis=0), axis=1)))


def ensemble_moments(endpoints: Iterable) -> tuple[np.ndarray, np.ndarray]:
    """Mean and unbiased (n-1) per-coordinate standard deviation."""
    endpoints = list(endpoints)
    if len(endpoints) < 2:
        raise InvalidArgument(f"need at least 2 endpoints, got {len(endpoints)}")
    arr = stack_states(endpoints)
    return arr.mean(axis=0), arr.std(axis=0, ddof=1)


def verify_call_budget(traj: Trajectory, expected_calls_per_step: int) -> bool:
    """True iff every step used exactly ``expected_calls_per_step`` field evaluations."""
    records = traj.step_records
    if any(r.model_calls != expected_calls_per_step for r in records):
        return False
    return traj.total_calls == len(records) * expected_calls_per_step


def kappa_stats(traj: Trajectory) -> Optional[tuple]:
    kappas = [r.kappa for r in traj.step_records if r.kappa is not None]
    if not kappas:
        return None
    return (min(kappas), max(kappas), sum(kappas) / len(kappas))


def summarize(traj: Trajectory, oracle_z0=None) -> TrajectoryReport:
    energy = oscillation_energy(traj) if len(traj.states) >= 3 else 0.0
    return TrajectoryReport(
        total_model_calls=traj.total_calls,
        oscillation_energy=energy,
        path_length=path_length(traj),
        endpoint_error=None if oracle_z0 is None else endpoint_error(traj, oracle_z0),
        kappa_stats=kappa_stats(traj),
    )
