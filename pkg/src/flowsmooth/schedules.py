"""Log-SNR and the SNR-gated decay used by Look-Back averaging."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .core import DomainError, InvalidArgument

T_FLOOR = 1e-6


@dataclass(frozen=True)
class SnrSchedule:
    """Signal-to-noise description of the forward noising path.

    ``rectified_flow`` uses signal/noise coefficients ``1-t`` and ``t``.
    ``diffusion`` interpolates a tabulated cumulative signal fraction
    ``alpha_bar`` (strictly decreasing, inside (0, 1)) at the given ``times``.
    """

    kind: str = "rectified_flow"
    times: Optional[np.ndarray] = None
    alpha_bar: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == "rectified_flow":
            return
        if self.kind != "diffusion":
            raise InvalidArgument(f"unknown SNR schedule kind {self.kind!r}")
        if self.times is None or self.alpha_bar is None:
            raise InvalidArgument("diffusion schedule needs tabulated times and alpha_bar")
        times = np.asarray(self.times, dtype=np.float64)
        abar = np.asarray(self.alpha_bar, dtype=np.float64)
        if times.ndim != 1 or times.shape != abar.shape or times.size < 2:
            raise InvalidArgument("times and alpha_bar must be 1-D of equal length >= 2")
        if np.any(np.diff(times) <= 0):
            raise InvalidArgument("tabulated times must be strictly increasing")
        if np.any(np.diff(abar) >= 0):
            raise InvalidArgument("alpha_bar must be strictly decreasing in t")
        if np.any((abar <= 0) | (abar >= 1)):
            raise InvalidArgument("alpha_bar must lie strictly inside (0, 1)")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "alpha_bar", abar)


RECTIFIED_FLOW = SnrSchedule()


def log_snr(schedule: SnrSchedule, t: float) -> float:
    """Log signal-to-noise ratio at time ``t``."""
    if schedule.kind == "rectified_flow":
        if not 0.0 < t < 1.0:
            raise DomainError(f"rectified-flow log-SNR is infinite at t={t!r}")
        return 2.0 * (math.log1p(-t) - math.log(t))
    lo, hi = schedule.times[0], schedule.times[-1]
    if not lo <= t <= hi:
        raise DomainError(f"t={t!r} outside tabulated range [{lo}, {hi}]")
    abar = float(np.interp(t, schedule.times, schedule.alpha_bar))
    return math.log(abar) - math.log1p(-abar)


def lookback_decay(schedule: SnrSchedule, t: float, gamma_max: float = 0.9,
                   beta: float = 1.0, xi_star: float = 0.0, *,
                   sign: str = "prose") -> float:
    """EMA decay ``gamma(t)`` as a logistic function of log-SNR.

    With the default ``sign="prose"`` the decay is
    ``gamma_max * sigmoid(beta * (xi_star - xi(t)))``: close to ``gamma_max``
    at low SNR (strong smoothing) and vanishing at high SNR, so the sampler
    reverts to plain Euler near t=0.  ``sign="printed"`` uses
    ``sigmoid(beta * (xi(t) - xi_star))`` instead, which has the opposite
    trend; it is kept only for side-by-side comparison.

    ``t`` is clamped to ``[1e-6, 1 - 1e-6]`` before evaluating the log-SNR.
    """
    if not 0.0 <= gamma_max < 1.0:
        raise InvalidArgument(f"gamma_max must lie in [0, 1), got {gamma_max}")
    if not beta > 0:
        raise InvalidArgument(f"beta must be > 0, got {beta}")
    if gamma_max == 0.0:
        return 0.0
    t = min(max(float(t), T_FLOOR), 1.0 - T_FLOOR)
    if schedule.kind == "diffusion":
        t = min(max(t, schedule.times[0]), schedule.times[-1])
    xi = log_snr(schedule, t)
    if sign == "prose":
        arg = beta * (xi_star - xi)
    elif sign == "printed":
        arg = beta * (xi - xi_star)
    else:
        raise InvalidArgument(f"sign must be 'prose' or 'printed', got {sign!r}")
    return gamma_max * float(expit(arg))
