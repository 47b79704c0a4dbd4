"""Ergodic averaging operators and their convergence diagnostics.

Operators are finitely supported weight functions on Z^d: cube averages,
spherical shells in Z^3, uniformly random small subsets of a ball, plus
adjoint/composition algebra and the L^p machinery around them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .space import DimensionMismatch, SpaceError, integrate, make_observable

WEIGHT_TOL = 1e-12


class OperatorError(ValueError):
    pass


@dataclass(frozen=True)
class WeightedOperator:
    """Convex combination sum_z w_z T^z with finite support in Z^d."""

    support: np.ndarray  # (k, d) int array, lexicographically sorted
    weights: np.ndarray  # (k,) positive floats summing to 1
    dimension: int

    @classmethod
    def from_pairs(cls, pairs, dimension):
        zs = np.asarray([z for z, _ in pairs], dtype=np.int64).reshape(-1, dimension)
        ws = np.asarray([w for _, w in pairs], dtype=float)
        return cls._build(zs, ws, dimension)

    @classmethod
    def _build(cls, zs, ws, dimension):
        if np.any(ws <= 0):
            raise OperatorError("weights must be positive")
        order = np.lexsort(zs.T[::-1])
        zs, ws = zs[order], ws[order]
        if len(zs) > 1 and np.any(np.all(zs[1:] == zs[:-1], axis=1)):
            raise OperatorError("duplicate support vectors")
        if abs(ws.sum() - 1.0) > WEIGHT_TOL * max(1, len(ws)):
            raise OperatorError(f"weights sum to {ws.sum()}, expected 1")
        zs.flags.writeable = False
        ws.flags.writeable = False
        return cls(zs, ws, dimension)

    def __len__(self):
        return len(self.weights)


def point_mass(z):
    z = np.atleast_1d(np.asarray(z, dtype=np.int64))
    return WeightedOperator._build(z.reshape(1, -1), np.array([1.0]), len(z))


def cube_operator(N, d):
    """Uniform average over the cube with coordinates 1..N in each axis."""
    if N < 1 or d < 1:
        raise OperatorError("need N >= 1 and d >= 1")
    axes = [np.arange(1, N + 1)] * d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    w = np.full(len(grid), float(N) ** (-d))
    return WeightedOperator._build(grid.astype(np.int64), w, d)


def shell_operator(j, c, d=3):
    """Uniform average over lattice points with j < |z| < j + c (Euclidean)."""
    if c <= 0:
        raise OperatorError("shell thickness c must be positive")
    r = int(np.floor(j + c))
    axes = [np.arange(-r, r + 1)] * d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    norm2 = (grid.astype(float) ** 2).sum(axis=1)
    mask = (norm2 > j * j) & (norm2 < (j + c) ** 2)
    pts = grid[mask]
    if len(pts) == 0:
        raise OperatorError(f"empty shell for j={j}, c={c}")
    w = np.full(len(pts), 1.0 / len(pts))
    return WeightedOperator._build(pts.astype(np.int64), w, d)


def random_subset_operator(j, d=3, seed=0):
    """Uniform weights on a uniformly random j-subset of the ball |z| <= j."""
    axes = [np.arange(-j, j + 1)] * d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    ball = grid[(grid.astype(float) ** 2).sum(axis=1) <= j * j]
    if len(ball) < j:
        raise OperatorError(f"ball has {len(ball)} points, cannot pick {j}")
    rng = np.random.default_rng(seed)
    picked = ball[rng.choice(len(ball), size=j, replace=False)]
    w = np.full(j, 1.0 / j)
    return WeightedOperator._build(picked.astype(np.int64), w, d)


def adjoint(P):
    """(T^z)* = T^{-z} for measure-preserving T, so negate the support."""
    return WeightedOperator._build(-P.support, P.weights.copy(), P.dimension)


def compose(P, Q):
    """Operator product: convolution of the weight functions."""
    if P.dimension != Q.dimension:
        raise DimensionMismatch("operator dimensions differ")
    sums = (P.support[:, None, :] + Q.support[None, :, :]).reshape(-1, P.dimension)
    prods = (P.weights[:, None] * Q.weights[None, :]).ravel()
    uniq, inv = np.unique(sums, axis=0, return_inverse=True)
    merged = np.zeros(len(uniq))
    np.add.at(merged, inv, prods)
    return WeightedOperator._build(uniq, merged, P.dimension)


def operator_power(P, n, support_cap=10**6):
    """P^n by repeated squaring, guarding against support blow-up."""
    result = None
    base = P
    while n:
        if n & 1:
            result = base if result is None else compose(result, base)
            if len(result) > support_cap:
                raise OperatorError(f"support exceeded cap {support_cap}")
        n >>= 1
        if n:
            base = compose(base, base)
            if len(base) > support_cap:
                raise OperatorError(f"support exceeded cap {support_cap}")
    return result if result is not None else point_mass(np.zeros(P.dimension, dtype=int))


def _cube_side(P):
    """N if P is exactly cube_operator(N, d), else None."""
    k = len(P)
    N = round(k ** (1.0 / P.dimension))
    if N**P.dimension != k:
        return None
    if np.any(P.support[0] != 1) or np.any(P.support[-1] != N):
        return None
    if not np.allclose(P.weights, 1.0 / k, rtol=0, atol=WEIGHT_TOL):
        return None
    if np.any(P.support < 1) or np.any(P.support > N):
        return None
    return N


def _circular_window_sum(arr, N, axis):
    """sum_{i=1..N} arr(x + i) along a circular axis, via doubled cumsum."""
    period = arr.shape[axis]
    full, rem = divmod(N, period)
    total = arr.sum(axis=axis, keepdims=True)
    if rem == 0:
        return np.broadcast_to(full * total, arr.shape).copy()
    ext = np.concatenate([arr, arr], axis=axis)
    cs = np.cumsum(ext, axis=axis)
    # cs[x+rem] - cs[x] = sum of ext over positions x+1 .. x+rem
    hi = np.take(cs, np.arange(period) + rem, axis=axis)
    lo = np.take(cs, np.arange(period), axis=axis)
    return hi - lo + full * total


def _torus_cube_average(system, f, N):
    arr = np.asarray(f, dtype=float).reshape(system.dims)
    for axis in range(system.dimension):
        arr = _circular_window_sum(arr, N, axis) / N
    return arr.reshape(-1)


def apply_operator(P, system, f):
    """(Pf)(x) = sum_z w_z f(T^z x)."""
    if P.dimension != system.dimension:
        raise DimensionMismatch("operator/system dimension mismatch")
    f = np.asarray(f, dtype=float)
    N = _cube_side(P)
    if N is not None and system.dims is not None and all(
        system._is_torus_axis(a) for a in range(system.dimension)
    ):
        return _torus_cube_average(system, f, N)
    out = np.zeros_like(f)
    for z, w in zip(P.support, P.weights):
        out += w * f[system.apply_map(z)]
    return out


def to_dense_matrix(P, system):
    """Explicit M x M matrix of P; oracle for small systems."""
    M = system.atom_count
    A = np.zeros((M, M))
    for z, w in zip(P.support, P.weights):
        A[np.arange(M), system.apply_map(z)] += w
    return A


def lp_norm(system, f, p):
    f = np.asarray(f, dtype=float)
    if p == 1:
        return float(np.abs(f) @ system.weights)
    if p == 2:
        return float(np.sqrt((f * f) @ system.weights))
    if p in ("inf", np.inf):
        return float(np.max(np.abs(f))) if len(f) else 0.0
    raise OperatorError(f"unsupported p={p}")


def inner(system, f, h):
    return float((np.asarray(f) * np.asarray(h)) @ system.weights)


def mean_projection(system, f):
    """Constant observable at the space mean of f."""
    return np.full(system.atom_count, integrate(system, f))


def commutator_defect(P, g, system, f):
    """||T^g (Pf) - Pf||_2."""
    pf = apply_operator(P, system, f)
    shifted = pf[system.apply_map(g)]  # Koopman convention: (T^g h)(x) = h(T^g x)
    return lp_norm(system, shifted - pf, 2)


def power_correlation(P, g, k, system, f, h, support_cap=10**6):
    """<T^g (P*P)^{2^k} f, h> - (int f)(int h)."""
    PP = compose(adjoint(P), P)
    Q = operator_power(PP, 2**k, support_cap=support_cap)
    Qf = apply_operator(Q, system, f)
    shifted = Qf[system.apply_map(g)]
    return inner(system, shifted, h) - integrate(system, f) * integrate(system, h)


def convergence_sweep(system, f, N_list, d=None, family=cube_operator):
    """Rows (N, l1_dev, l2_dev, sup_dev) of ||P_N f - int f||."""
    d = d if d is not None else system.dimension
    mean = integrate(system, f)
    rows = []
    for N in N_list:
        dev = apply_operator(family(N, d), system, f) - mean
        rows.append(
            (
                int(N),
                lp_norm(system, dev, 1),
                lp_norm(system, dev, 2),
                lp_norm(system, dev, "inf"),
            )
        )
    return rows
