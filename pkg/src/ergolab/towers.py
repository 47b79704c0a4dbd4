"""Kakutani skyscrapers, Rokhlin towers for d=1, and iterative tower
merging for Z^d torus actions.

A tower is a base set B together with a cube of offsets {0..N-1}^d whose
translates of B are pairwise disjoint; the uncovered remainder is the
residual. Kakutani partitions organize a d=1 system into first-return
columns over a base set D.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .space import (
    AtomSet,
    FiniteSystem,
    SpaceError,
    difference,
    intersection,
    translate_set,
    union,
)


class TowerError(ValueError):
    pass


@dataclass(frozen=True)
class KakutaniPartition:
    """Columns over a base D, keyed by first-return height."""

    base: AtomSet
    columns: dict  # height h -> AtomSet (column base D_h)
    system: FiniteSystem

    def heights(self):
        return sorted(self.columns)

    def floor_sets(self):
        """All floors T^i D_h, 0 <= i < h, as (h, i, AtomSet)."""
        out = []
        for h in self.heights():
            D_h = self.columns[h]
            for i in range(h):
                out.append((h, i, translate_set(self.system, [i], D_h)))
        return out


@dataclass(frozen=True)
class Tower:
    """Disjoint translates T^z B over the offset cube {0..N-1}^d."""

    base: AtomSet
    side: int
    system: FiniteSystem

    @property
    def dimension(self):
        return self.system.dimension

    def offsets(self):
        d = self.dimension
        axes = [np.arange(self.side)] * d
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)

    def floor_count(self):
        return self.side**self.dimension

    def covered_set(self):
        sys_ = self.system
        if sys_.dims is not None and all(
            sys_._is_torus_axis(a) for a in range(sys_.dimension)
        ):
            dims = np.array(sys_.dims)
            coords = np.stack(
                np.unravel_index(self.base.members, sys_.dims), axis=-1
            )  # (k, d)
            shifted = (coords[None, :, :] + self.offsets()[:, None, :]) % dims
            members = np.ravel_multi_index(
                tuple(shifted.reshape(-1, sys_.dimension).T), sys_.dims
            )
            return AtomSet.from_indices(sys_, members)
        parts = [
            self.system.apply_map(z)[self.base.members] for z in self.offsets()
        ]
        members = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
        return AtomSet.from_indices(self.system, members)

    def measure(self):
        # disjoint floors, measure-preserving translates
        return self.base.measure * self.floor_count()

    def residual(self):
        covered = self.covered_set()
        all_atoms = np.arange(self.system.atom_count)
        rest = np.setdiff1d(all_atoms, covered.members)
        return AtomSet.from_indices(self.system, rest)

    def verify_disjoint(self):
        covered = self.covered_set()
        expected = self.floor_count() * len(self.base)
        if len(covered) != expected:
            raise TowerError(
                f"floors overlap: {len(covered)} covered atoms, expected {expected}"
            )
        return True


def _orbit_positions(system):
    """Map atom -> position along the single cycle (d=1 ergodic only).

    For the canonical cycle backend this is the identity; otherwise the
    cycle is walked once.
    """
    if system.dimension != 1:
        raise TowerError("orbit positions need a d=1 system")
    if not system.ergodic:
        raise TowerError("system is not ergodic (multiple orbits)")
    g = system.generators[0]
    M = system.atom_count
    if np.array_equal(g, (np.arange(M) + 1) % M):
        order = np.arange(M)
        pos = np.arange(M)
        return order, pos
    order = np.empty(M, dtype=np.int64)
    x = 0
    glist = g  # local ref
    for i in range(M):
        order[i] = x
        x = glist[x]
    pos = np.empty(M, dtype=np.int64)
    pos[order] = np.arange(M)
    return order, pos


def kakutani_partition(system, D):
    """First-return partition of a d=1 ergodic system over base D."""
    if len(D) == 0:
        raise TowerError("empty base set")
    order, pos = _orbit_positions(system)
    M = system.atom_count
    P = np.sort(pos[D.members])  # base positions along the cycle
    nxt = np.roll(P, -1)
    heights = (nxt - P) % M
    heights[-1] = (P[0] + M) - P[-1]  # wrap-around return
    cols = {}
    for h in np.unique(heights):
        atoms = order[P[heights == h]]
        cols[int(h)] = AtomSet.from_indices(system, atoms)
    return KakutaniPartition(D, cols, system)


def kakutani_verify(partition):
    """Exact check that the floors tile the space; returns per-atom height map."""
    system = partition.system
    M = system.atom_count
    seen = np.zeros(M, dtype=np.int64)
    for _, _, floor in partition.floor_sets():
        seen[floor.members] += 1
    if not np.all(seen == 1):
        raise TowerError("Kakutani floors do not partition the space")
    return True


def rokhlin_tower_1d(system, n, eps, base_atom=0):
    """Tower of height n with residual measure below eps, on a d=1 cycle.

    A singleton Kakutani base gives one column spanning the whole cycle;
    the tower base collects every n-th floor below the column top.
    """
    if n < 1:
        raise TowerError("height must be >= 1")
    M = system.atom_count
    if system.dimension != 1 or not system.ergodic:
        raise TowerError("need an ergodic d=1 system")
    k = M  # single column of full height from a singleton base
    if n > M:
        raise TowerError(f"height {n} exceeds atom count {M}")
    resid = (M % n) / M
    if resid >= eps:
        raise TowerError(
            f"infeasible: residual {resid:.3g} >= eps {eps:.3g} for n={n}, M={M}"
        )
    order, pos = _orbit_positions(system)
    base_positions = np.arange(0, M - n + 1, n)
    start = pos[base_atom]
    base_atoms = order[(base_positions + start) % M]
    tower = Tower(AtomSet.from_indices(system, base_atoms), n, system)
    tower.verify_disjoint()
    return tower


def tower_exists(system, N):
    """Positive-measure tower witness: a single-atom base always works."""
    if system.dims is None:
        if system.dimension != 1:
            raise TowerError("need torus dims for d > 1")
        dims = (system.atom_count,)
    else:
        dims = system.dims
    if any(N > p for p in dims):
        raise TowerError(f"side {N} exceeds a torus period {dims}")
    t = Tower(AtomSet.from_indices(system, [0]), N, system)
    t.verify_disjoint()
    return t


def _tower_indicator(tower):
    ind = np.zeros(tower.system.atom_count, dtype=bool)
    ind[tower.covered_set().members] = True
    return ind


def overlap_shift_search(system, U, V, delta, max_candidates=None):
    """Find z with mu(U_set intersect T^z V_set) < mu(U) mu(V) + delta.

    All torus shifts are scanned at once via FFT cross-correlation of the
    indicator functions; the winner is re-verified by exact set algebra.
    """
    if delta <= 0:
        raise TowerError("delta must be positive")
    if system.dims is None:
        dims = (system.atom_count,)
    else:
        dims = system.dims
    u_set = U.covered_set()
    v_set = V.covered_set()
    uv = U.measure() * V.measure()
    if len(v_set) == 0 or len(u_set) == 0:
        return np.zeros(system.dimension, dtype=np.int64)
    iu = np.zeros(system.atom_count)
    iv = np.zeros(system.atom_count)
    iu[u_set.members] = 1.0
    iv[v_set.members] = 1.0
    A = iu.reshape(dims)
    B = iv.reshape(dims)
    # overlap(z) = sum_x 1_U(x) 1_{T^z V}(x); T^z V shifts coordinates by +z
    corr = np.fft.ifftn(np.fft.fftn(A) * np.conj(np.fft.fftn(B))).real
    counts = np.round(corr).astype(np.int64)
    weights_uniform = np.allclose(system.weights, 1.0 / system.atom_count)
    if not weights_uniform:
        raise TowerError("shift search requires uniform weights")
    overlaps = counts / system.atom_count
    flat_order = np.argsort(overlaps.reshape(-1), kind="stable")
    cap = max_candidates or len(flat_order)
    best_overlap = None
    for idx in flat_order[:cap]:
        z = np.array(np.unravel_index(idx, dims), dtype=np.int64)
        shifted = translate_set(system, z, v_set)
        exact = intersection(system, u_set, shifted).measure
        if best_overlap is None or exact < best_overlap:
            best_overlap = exact
        if exact < uv + delta:
            return z
    raise TowerError(
        f"no shift with overlap below {uv + delta:.3g}; minimum found {best_overlap:.3g}"
    )


def tower_merge_step(system, U, V, z):
    """Merge tower V (shifted by z) into U, removing U-columns that collide.

    V's height H must be a multiple of U's height N; V is re-based as an
    N-tower by block-splitting each H-cube into (H/N)^d N-cubes.
    Returns (new_tower, ledger dict).
    """
    N, H = U.side, V.side
    if H % N != 0:
        raise TowerError(f"V height {H} is not a multiple of U height {N}")
    v_base_shifted = translate_set(system, z, V.base)
    v_shifted = Tower(v_base_shifted, H, system)
    v_set = v_shifted.covered_set()
    v_ind = np.zeros(system.atom_count, dtype=bool)
    v_ind[v_set.members] = True

    # U-columns whose N-cube touches the shifted V tower
    keep_mask = np.ones(len(U.base), dtype=bool)
    for off in U.offsets():
        mapped = system.apply_map(off)[U.base.members]
        keep_mask &= ~v_ind[mapped]
    kept_base = AtomSet.from_indices(system, U.base.members[keep_mask])
    removed_measure = U.measure() - kept_base.measure * U.floor_count()

    # re-base shifted V as an N-tower: block anchors at multiples of N
    m = H // N
    d = system.dimension
    axes = [np.arange(m) * N] * d
    anchors = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    parts = [system.apply_map(a)[v_base_shifted.members] for a in anchors]
    new_v_base = AtomSet.from_indices(system, np.concatenate(parts))

    merged_base = union(system, kept_base, new_v_base)
    merged = Tower(merged_base, N, system)
    merged.verify_disjoint()
    ledger = {
        "removed": removed_measure,
        "added": v_shifted.measure(),
        "mu_before": U.measure(),
        "mu_after": merged.measure(),
    }
    return merged, ledger


def _divisible_lattice_tower(system, N):
    """Exact full-measure tower when N divides every torus period."""
    dims = system.dims if system.dims is not None else (system.atom_count,)
    coords = np.unravel_index(np.arange(system.atom_count), dims)
    mask = np.ones(system.atom_count, dtype=bool)
    for c in coords:
        mask &= c % N == 0
    t = Tower(AtomSet.from_indices(system, np.flatnonzero(mask)), N, system)
    t.verify_disjoint()
    return t


def build_tower_zd(system, N, eps, H=None, max_iters=200, delta=None, seed=0):
    """Iterate shift search + merge until the N-tower has measure > 1 - eps.

    Returns (tower, trace) where trace rows are (iter, mu, removed, added).
    """
    dims = system.dims if system.dims is not None else (system.atom_count,)
    if all(p % N == 0 for p in dims):
        t = _divisible_lattice_tower(system, N)
        return t, [(0, t.measure(), 0.0, t.measure())]
    if H is None:
        H = N * max(2, int(np.ceil(10.0 / eps)))
        H = min(H, (min(dims) // N) * N)
    if H % N != 0 or H < N:
        raise TowerError(f"auxiliary height {H} must be a positive multiple of {N}")
    if delta is None:
        delta = eps / 10.0
    # auxiliary tower: greedy lattice of H-cubes (large fixed measure)
    anchors_axes = [np.arange(0, (p // H) * H, H) for p in dims]
    grid = np.stack(
        np.meshgrid(*[a for a in anchors_axes], indexing="ij"), axis=-1
    ).reshape(-1, len(dims))
    v_base_atoms = np.ravel_multi_index(tuple(grid.T), dims)
    V = Tower(AtomSet.from_indices(system, v_base_atoms), H, system)
    V.verify_disjoint()

    U = tower_exists(system, N)
    trace = [(0, U.measure(), 0.0, U.measure())]
    best = U
    for it in range(1, max_iters + 1):
        if U.measure() > 1 - eps:
            break
        z = overlap_shift_search(system, U, V, delta)
        U, ledger = tower_merge_step(system, U, V, z)
        trace.append((it, ledger["mu_after"], ledger["removed"], ledger["added"]))
        if U.measure() > best.measure():
            best = U
    return best, trace
