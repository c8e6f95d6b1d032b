"""Analytic velocity fields with known (or brute-forced) flows.

These stand in for a learned velocity network so sampler behaviour can be
checked against exact answers.  Every ``velocity`` method broadcasts over
leading batch axes: ``z`` may be ``(d,)`` or ``(n, d)``.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .core import InvalidArgument, VelocityFieldSpec, as_state


@dataclass(frozen=True)
class GaussianRfField:
    """Marginal flow-matching velocity between N(0, s0^2 I) at t=0 and N(0, I) at t=1.

    Along the straight path ``z_t = (1-t) x0 + t eps`` the marginal scale is
    ``s_t^2 = (1-t)^2 s0^2 + t^2`` and the velocity is ``(s_t'/s_t) z``.
    """

    s0: float
    dim: int

    kind = "gaussian_rf"

    def __post_init__(self):
        if not (self.s0 > 0 and math.isfinite(self.s0)):
            raise InvalidArgument(f"s0 must be a positive real, got {self.s0!r}")
        _check_dim(self.dim)

    def scale(self, t):
        return np.sqrt((1.0 - t) ** 2 * self.s0**2 + t**2)

    def coefficient(self, t: float) -> float:
        s2 = (1.0 - t) ** 2 * self.s0**2 + t**2
        return (t - (1.0 - t) * self.s0**2) / s2

    def velocity(self, z, t):
        return self.coefficient(t) * np.asarray(z, dtype=np.float64)

    def key(self):
        return (self.kind, float(self.s0), int(self.dim))


@dataclass(frozen=True, eq=False)
class LinearMatrixField:
    """Time-independent linear field ``v(z, t) = A z``."""

    matrix: np.ndarray

    kind = "linear_matrix"

    def __post_init__(self):
        a = np.array(self.matrix, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise InvalidArgument(f"matrix must be square and non-empty, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise InvalidArgument("matrix entries must be finite")
        a.flags.writeable = False
        object.__setattr__(self, "matrix", a)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def velocity(self, z, t):
        return np.asarray(z, dtype=np.float64) @ self.matrix.T

    def key(self):
        return (self.kind, self.matrix.shape, self.matrix.tobytes())


@dataclass(frozen=True)
class StiffTrackingField:
    """Relaxation towards a rotating target, ``v = -stiffness * (z - g(t))``.

    ``g(t)`` alternates ``sin(2 pi t)`` and ``cos(2 pi t)`` across coordinates.
    Integrated backwards in time with a step of order ``1/stiffness`` the
    explicit update overshoots, which is the regime the smoothing samplers
    target.  No closed form is shipped; use :func:`reference_endpoint`.
    """

    stiffness: float
    dim: int = 2

    kind = "stiff_tracking"

    def __post_init__(self):
        if not (self.stiffness > 0 and math.isfinite(self.stiffness)):
            raise InvalidArgument(f"stiffness must be a positive real, got {self.stiffness!r}")
        _check_dim(self.dim)

    def target(self, t: float) -> np.ndarray:
        phase = 2.0 * math.pi * t
        g = np.empty(self.dim)
        g[0::2] = math.sin(phase)
        g[1::2] = math.cos(phase)
        return g

    def velocity(self, z, t):
        return -self.stiffness * (np.asarray(z, dtype=np.float64) - self.target(t))

    def key(self):
        return (self.kind, float(self.stiffness), int(self.dim))


@dataclass(frozen=True, eq=False)
class CustomField:
    """Wrap an arbitrary deterministic callable ``fn(z, t) -> v``."""

    fn: Callable
    dim: int

    kind = "custom"

    def __post_init__(self):
        _check_dim(self.dim)

    def velocity(self, z, t):
        return self.fn(np.asarray(z, dtype=np.float64), t)

    def key(self):
        return (self.kind, id(self.fn), int(self.dim))


def _check_dim(dim):
    if isinstance(dim, bool) or int(dim) != dim or dim < 1:
        raise InvalidArgument(f"dim must be a positive integer, got {dim!r}")


def rotation_matrix(rate: float) -> np.ndarray:
    """Generator ``rate * [[0, -1], [1, 0]]`` of planar rotation."""
    return rate * np.array([[0.0, -1.0], [1.0, 0.0]])


def field_from_spec(spec: VelocityFieldSpec):
    p = dict(spec.params)
    try:
        if spec.kind == "gaussian_rf":
            return GaussianRfField(s0=float(p.pop("s0")), dim=int(p.pop("dim")))
        if spec.kind == "linear_matrix":
            if "rotation_rate" in p:
                return LinearMatrixField(rotation_matrix(float(p.pop("rotation_rate"))))
            return LinearMatrixField(np.asarray(p.pop("matrix"), dtype=np.float64))
        if spec.kind == "stiff_tracking":
            return StiffTrackingField(stiffness=float(p.pop("stiffness")), dim=int(p.pop("dim", 2)))
        if spec.kind == "custom":
            return CustomField(fn=p.pop("fn"), dim=int(p.pop("dim")))
    except KeyError as exc:
        raise InvalidArgument(f"field {spec.kind!r} is missing parameter {exc.args[0]!r}") from None
    except InvalidArgument:
        raise
    except (TypeError, ValueError) as exc:
        raise InvalidArgument(f"bad parameters for field {spec.kind!r}: {exc}") from None
    raise InvalidArgument(f"unknown field kind {spec.kind!r}")


# --------------------------------------------------------------------------- #
# exact flows
# --------------------------------------------------------------------------- #

def _rotation_blocks(m: np.ndarray):
    """Return [(a, b), ...] if ``m`` is block-diagonal in [[a, -b], [b, a]] blocks."""
    n = m.shape[0]
    if n % 2 or n > 4:
        return None
    blocks = []
    expected = np.zeros_like(m)
    for i in range(0, n, 2):
        a, b = m[i, i], m[i + 1, i]
        expected[i:i + 2, i:i + 2] = [[a, -b], [b, a]]
        blocks.append((a, b))
    return blocks if np.array_equal(expected, m) else None


def matrix_exponential(m) -> np.ndarray:
    """``exp(m)``; closed trig form for rotation-block matrices, scipy otherwise."""
    m = np.asarray(m, dtype=np.float64)
    blocks = _rotation_blocks(m)
    if blocks is None:
        return scipy.linalg.expm(m)
    out = np.zeros_like(m)
    for j, (a, b) in enumerate(blocks):
        i = 2 * j
        r = math.exp(a)
        c, s = math.cos(b), math.sin(b)
        out[i:i + 2, i:i + 2] = [[r * c, -r * s], [r * s, r * c]]
    return out


def exact_flow(field, z, t_from: float, t_to: float) -> np.ndarray:
    """Exact solution map of ``dz/dt = v(z, t)`` from ``t_from`` to ``t_to``."""
    z = np.asarray(z, dtype=np.float64)
    if isinstance(field, GaussianRfField):
        return z * (field.scale(t_to) / field.scale(t_from))
    if isinstance(field, LinearMatrixField):
        return z @ matrix_exponential(field.matrix * (t_to - t_from)).T
    raise InvalidArgument(f"no closed-form flow for field kind {getattr(field, 'kind', field)!r}")


def exact_endpoint(field, z1) -> np.ndarray:
    """Exact state at t=0 reached from ``z1`` at t=1."""
    if isinstance(field, VelocityFieldSpec):
        field = field.build()
    z1 = as_state(z1)
    if z1.shape[0] != field.dim:
        raise InvalidArgument(f"z1 has dim {z1.shape[0]}, field has dim {field.dim}")
    return as_state(exact_flow(field, z1, 1.0, 0.0))


def has_closed_form(field) -> bool:
    return isinstance(field, (GaussianRfField, LinearMatrixField))


# --------------------------------------------------------------------------- #
# brute-force reference
# --------------------------------------------------------------------------- #

REFERENCE_STEPS = 100_000
_reference_cache: dict = {}
_reference_lock = threading.Lock()


def euler_reference(field, z1, n_steps: int = REFERENCE_STEPS) -> np.ndarray:
    """Plain uniform Euler from t=1 to t=0 on a batch of initial states.

    Used as a high-resolution oracle where no closed form exists.  ``z1`` may
    be ``(d,)`` or ``(n, d)``; each row is integrated independently.
    """
    z = np.array(z1, dtype=np.float64)
    h = 1.0 / n_steps
    if isinstance(field, StiffTrackingField):
        return _stiff_euler_closed_sum(field, z, n_steps)
    for k in range(n_steps):
        z = z - h * field.velocity(z, 1.0 - k * h)
    return z


def _stiff_euler_closed_sum(field: StiffTrackingField, z: np.ndarray, n_steps: int) -> np.ndarray:
    # Same recurrence as the loop, unrolled:
    # z_{k+1} = a z_k - b g(t_k), a = 1 + h*stiffness, b = h*stiffness
    # => z_K = a^K z_0 - b * sum_k a^(K-1-k) g(t_k)
    h = 1.0 / n_steps
    b = h * field.stiffness
    a = 1.0 + b
    k = np.arange(n_steps)
    weights = np.exp((n_steps - 1 - k) * math.log(a))
    phase = 2.0 * math.pi * (1.0 - k * h)
    forcing = np.empty(field.dim)
    forcing[0::2] = weights @ np.sin(phase)
    forcing[1::2] = weights @ np.cos(phase)
    return math.exp(n_steps * math.log(a)) * z - b * forcing


def reference_endpoint(field, z1, n_steps: int = REFERENCE_STEPS) -> np.ndarray:
    """Cached :func:`euler_reference`; computed once per (field, z1, n_steps)."""
    z1 = np.asarray(z1, dtype=np.float64)
    key = (field.key(), z1.shape, z1.tobytes(), int(n_steps))
    with _reference_lock:
        hit = _reference_cache.get(key)
    if hit is None:
        hit = euler_reference(field, z1, n_steps)
        hit.flags.writeable = False
        with _reference_lock:
            _reference_cache[key] = hit
    return hit


def oracle_endpoint(field, z1) -> np.ndarray:
    """Closed-form endpoint when available, brute-force reference otherwise."""
    if has_closed_form(field):
        return exact_flow(field, np.asarray(z1, dtype=np.float64), 1.0, 0.0)
    return reference_endpoint(field, z1)
