"""Shared small helpers: lattice norms, enumeration, toroidal distance.

Norm conventions, stated once and used everywhere: integer lattice vectors
carry the sum-norm |k| = sum_i |k_i|; real/complex vectors carry the
max-norm.  Mixing these up silently breaks every divisor estimate, so all
modules import these helpers instead of re-deriving them.
"""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

TWO_PI = 2.0 * math.pi


def sum_norm(k) -> int:
    """Sum-norm |k| of an integer vector."""
    return int(np.abs(np.asarray(k, dtype=np.int64)).sum())


def max_norm(v) -> float:
    """Max-norm of a real or complex vector (componentwise modulus)."""
    a = np.asarray(v)
    if a.size == 0:
        return 0.0
    return float(np.abs(a).max())


def iter_shell(n: int, m: int) -> Iterator[tuple[int, ...]]:
    """Yield all integer n-vectors with sum-norm exactly m.

    Deterministic lexicographic-ish order; m = 0 yields the zero vector.
    """
    if n == 1:
        if m == 0:
            yield (0,)
        else:
            yield (-m,)
            yield (m,)
        return
    for j in range(-m, m + 1):
        for rest in iter_shell(n - 1, m - abs(j)):
            yield (j,) + rest


def lattice_ball(n: int, K: int, include_zero: bool = False) -> np.ndarray:
    """All integer n-vectors with 0 < sum-norm <= K, as an (M, n) int array.

    With ``include_zero`` the origin is prepended.  Rows are ordered by
    shell, then lexicographically within a shell, so reductions over the
    result are deterministic.
    """
    rows: list[tuple[int, ...]] = []
    if include_zero:
        rows.append((0,) * n)
    for m in range(1, K + 1):
        rows.extend(sorted(iter_shell(n, m)))
    if not rows:
        return np.zeros((0, n), dtype=np.int64)
    return np.array(rows, dtype=np.int64)


def torus_distance(x, y) -> float:
    """Max over components of the distance on the circle of circumference 2*pi.

    Invariant under adding multiples of 2*pi to any coordinate of either
    argument.
    """
    d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float)) % TWO_PI
    d = np.minimum(d, TWO_PI - d)
    return float(d.max()) if d.size else 0.0


def wrap_angles(theta) -> np.ndarray:
    """Reduce angles componentwise into [0, 2*pi)."""
    return np.mod(np.asarray(theta, dtype=float), TWO_PI)


def exp_weight(knorm: float, s: float) -> float:
    """e^(|k| s) with overflow mapped to +inf rather than an exception."""
    x = knorm * s
    if x > 709.0:
        return math.inf
    return math.exp(x)
