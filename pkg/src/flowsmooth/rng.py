"""Seeded, order-independent Gaussian draws for ensemble members.

Stream rule
-----------
Ensemble member ``i`` of an experiment with seed ``s`` owns the Philox4x64-10
stream keyed by the two 64-bit words ``(s, i)``, counter starting at zero.
Raw 64-bit outputs ``r`` become uniforms ``u = ((r >> 11) + 0.5) * 2**-53``,
which lie strictly inside (0, 1).  Consecutive uniforms ``(u1, u2)`` become two
standard normals by Box-Muller::

    rho = sqrt(-2 ln u1)
    n1, n2 = rho cos(2 pi u2), rho sin(2 pi u2)

A d-dimensional draw consumes ``2 * ceil(d / 2)`` raw outputs and keeps the
first ``d`` normals.  Because the key depends only on ``(s, i)``, adding or
reordering samplers never changes any member's initial latent.
"""
from __future__ import annotations

import numpy as np

from .core import InvalidArgument

U64_MAX = 2**64 - 1


def member_bit_generator(seed: int, index: int) -> np.random.Philox:
    for name, value in (("seed", seed), ("index", index)):
        if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or not 0 <= value <= U64_MAX:
            raise InvalidArgument(f"{name} must be an unsigned 64-bit integer, got {value!r}")
    return np.random.Philox(key=np.array([seed, index], dtype=np.uint64))


def uniforms(bitgen: np.random.Philox, n: int) -> np.ndarray:
    raw = bitgen.random_raw(n)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def standard_normal(seed: int, index: int, dim: int) -> np.ndarray:
    """The ``dim``-vector of N(0, 1) draws belonging to ensemble member ``index``."""
    n_pairs = (dim + 1) // 2
    u = uniforms(member_bit_generator(seed, index), 2 * n_pairs).reshape(n_pairs, 2)
    rho = np.sqrt(-2.0 * np.log(u[:, 0]))
    angle = 2.0 * np.pi * u[:, 1]
    out = np.empty((n_pairs, 2))
    out[:, 0] = rho * np.cos(angle)
    out[:, 1] = rho * np.sin(angle)
    return out.reshape(-1)[:dim]


def ensemble_normals(seed: int, size: int, dim: int) -> np.ndarray:
    """``(size, dim)`` array; row ``i`` is ``standard_normal(seed, i, dim)``."""
    return np.stack([standard_normal(seed, i, dim) for i in range(size)])
