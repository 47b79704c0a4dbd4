"""Finite measure-preserving models of Z^d actions.

Two backends behind one interface: an explicit permutation for d=1, and a
box torus Z_{M1} x ... x Z_{Md} with unit-translation generators for any d.
Atoms are integers 0..M-1; for the torus they index coordinates row-major.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EQ_TOL = 1e-12

# exhaustive commutativity / measure checks up to this size, sampled above
_EXHAUSTIVE_CHECK_LIMIT = 10**4
_SAMPLE_CHECK_SIZE = 10**4


class SpaceError(ValueError):
    """Invalid system construction or mismatched arguments."""


class DimensionMismatch(SpaceError):
    pass


class SystemMismatch(SpaceError):
    pass


class FiniteSystem:
    """Probability space on M atoms with d commuting measure-preserving bijections.

    generators[i] is an int array of length M mapping atom x to T_i x.
    """

    def __init__(self, generators, weights=None, dims=None):
        gens = [np.asarray(g, dtype=np.int64) for g in generators]
        if not gens:
            raise SpaceError("need at least one generator")
        M = len(gens[0])
        if M < 1:
            raise SpaceError("empty atom set")
        for g in gens:
            if len(g) != M:
                raise SpaceError("generators act on different atom counts")
            if not _is_permutation(g, M):
                raise SpaceError("generator is not a bijection of 0..M-1")

        if weights is None:
            w = np.full(M, 1.0 / M)
        else:
            w = np.asarray(weights, dtype=float)
            if len(w) != M or np.any(w < 0):
                raise SpaceError("weights must be M nonnegative reals")
            if abs(w.sum() - 1.0) > EQ_TOL * M:
                raise SpaceError("weights must sum to 1")
        for g in gens:
            if not np.allclose(w[g], w, rtol=0, atol=EQ_TOL):
                raise SpaceError("generator does not preserve the measure")

        _check_commuting(gens, M)

        self.dimension = len(gens)
        self.atom_count = M
        self.weights = w
        self.weights.flags.writeable = False
        self.generators = gens
        self._inverses = [_invert(g) for g in gens]
        for g, gi in zip(self.generators, self._inverses):
            g.flags.writeable = False
            gi.flags.writeable = False
        self.dims = tuple(dims) if dims is not None else None
        self.orbit_count, self._orbit_labels = _orbit_labels(gens, M)
        self.ergodic = self.orbit_count == 1

    # -- constructors -------------------------------------------------------

    @classmethod
    def cycle(cls, M):
        """Single M-cycle x -> x+1 mod M (d=1, ergodic)."""
        return cls([np.roll(np.arange(M), -1)], dims=(M,))

    @classmethod
    def permutation(cls, perm, weights=None):
        """Arbitrary d=1 system from an explicit permutation."""
        return cls([np.asarray(perm, dtype=np.int64)], weights=weights)

    @classmethod
    def torus(cls, dims):
        """Box torus Z_{M1} x ... x Z_{Md} with unit translation per axis."""
        dims = tuple(int(m) for m in dims)
        if any(m < 1 for m in dims):
            raise SpaceError("torus dims must be positive")
        M = int(np.prod(dims))
        coords = np.unravel_index(np.arange(M), dims)
        gens = []
        for axis, period in enumerate(dims):
            shifted = list(coords)
            shifted[axis] = (coords[axis] + 1) % period
            gens.append(np.ravel_multi_index(tuple(shifted), dims).astype(np.int64))
        return cls(gens, dims=dims)

    @classmethod
    def from_config(cls, cfg):
        """Build from {backend, dims, permutation?, weights?} mapping."""
        backend = cfg.get("backend")
        if backend == "cycle":
            (M,) = cfg["dims"]
            return cls.cycle(int(M))
        if backend == "permutation":
            return cls.permutation(cfg["permutation"], weights=cfg.get("weights"))
        if backend == "torus":
            return cls.torus(cfg["dims"])
        raise SpaceError(f"unknown backend {backend!r}")

    # -- action -------------------------------------------------------------

    def apply(self, z, x):
        """T^z x for a single atom x."""
        z = self._check_element(z)
        if not (0 <= x < self.atom_count):
            raise SpaceError(f"atom index {x} out of range")
        for axis, k in enumerate(z):
            x = self._power_map(axis, int(k))[x]
        return int(x)

    def apply_map(self, z):
        """Full atom map of T^z as an int array of length M."""
        z = self._check_element(z)
        out = np.arange(self.atom_count)
        for axis, k in enumerate(z):
            out = self._power_map(axis, int(k))[out]
        return out

    def _power_map(self, axis, k):
        """Map of generator axis raised to power k (k may be negative)."""
        key = (axis, k)
        cache = getattr(self, "_map_cache", None)
        if cache is None:
            cache = self._map_cache = {}
        hit = cache.get(key)
        if hit is not None:
            return hit
        if self.dims is not None and self.dims[axis] > 0 and len(self.generators) == len(self.dims):
            # torus backend: translation by k is a roll, O(M) regardless of k
            if self._is_torus_axis(axis):
                out = self._torus_shift_map(axis, k)
                if len(cache) < self._cache_cap():
                    cache[key] = out
                return out
        base = self.generators[axis] if k >= 0 else self._inverses[axis]
        out = np.arange(self.atom_count)
        n = abs(k)
        # binary powering on maps
        while n:
            if n & 1:
                out = base[out]
            base = base[base]
            n >>= 1
        if len(cache) < self._cache_cap():
            cache[key] = out
        return out

    def _cache_cap(self):
        # keep the power-map cache under ~256 MB
        return max(4, min(4096, (256 * 2**20) // (8 * self.atom_count)))

    def _is_torus_axis(self, axis):
        flag = getattr(self, "_torus_axes", None)
        if flag is None:
            flag = self._torus_axes = {}
        if axis not in flag:
            if self.dims is None or len(self.dims) != self.dimension:
                flag[axis] = False
            else:
                flag[axis] = np.array_equal(
                    self.generators[axis], self._torus_shift_map(axis, 1)
                )
        return flag[axis]

    def _torus_shift_map(self, axis, k):
        dims = self.dims
        coords = list(np.unravel_index(np.arange(self.atom_count), dims))
        coords[axis] = (coords[axis] + k) % dims[axis]
        return np.ravel_multi_index(tuple(coords), dims).astype(np.int64)

    def _check_element(self, z):
        z = np.atleast_1d(np.asarray(z, dtype=np.int64))
        if len(z) != self.dimension:
            raise DimensionMismatch(
                f"group element has length {len(z)}, system dimension is {self.dimension}"
            )
        return z

    # -- diagnostics --------------------------------------------------------

    def orbit_partition_check(self):
        """Ergodicity report: orbit count and transitivity flag."""
        return {
            "orbits": self.orbit_count,
            "transitive": self.ergodic,
            "atom_count": self.atom_count,
        }

    def freeness_audit(self, max_coord=None):
        """Period lattice report: per-axis minimal k>0 with T_i^k = id.

        Finite models cannot be free; the periods quantify the defect.
        """
        periods = []
        for axis in range(self.dimension):
            g = self.generators[axis]
            cur = g.copy()
            k = 1
            cap = max_coord or self.atom_count
            while k <= cap and not np.array_equal(cur, np.arange(self.atom_count)):
                cur = g[cur]
                k += 1
            periods.append(k if k <= cap else None)
        return {"periods": periods}

    def measure(self, members):
        return float(self.weights[np.asarray(members, dtype=np.int64)].sum())

    def __repr__(self):
        kind = f"torus{self.dims}" if self.dims else "perm"
        return f"FiniteSystem(d={self.dimension}, M={self.atom_count}, {kind})"


@dataclass(frozen=True)
class AtomSet:
    """Measurable set: sorted duplicate-free atom indices with cached measure."""

    members: np.ndarray
    measure: float

    @classmethod
    def from_indices(cls, system, indices):
        m = np.unique(np.asarray(indices, dtype=np.int64))
        if len(m) and (m[0] < 0 or m[-1] >= system.atom_count):
            raise SpaceError("atom index out of range")
        return cls(m, system.measure(m) if len(m) else 0.0)

    @classmethod
    def full(cls, system):
        return cls(np.arange(system.atom_count), 1.0)

    @classmethod
    def empty(cls, system):
        return cls(np.empty(0, dtype=np.int64), 0.0)

    def __len__(self):
        return len(self.members)

    def indicator(self, system):
        ind = np.zeros(system.atom_count, dtype=bool)
        ind[self.members] = True
        return ind

    def validate(self, system):
        recomputed = system.measure(self.members) if len(self.members) else 0.0
        if abs(recomputed - self.measure) > 1e-12 * max(1, len(self.members)):
            raise SpaceError("cached measure stale")


def translate_set(system, z, S):
    """Image T^z S; preserves measure and cardinality."""
    if len(S) == 0:
        return S
    mapped = system.apply_map(z)[S.members]
    return AtomSet(np.sort(mapped), S.measure)


def union(system, a, b):
    return AtomSet.from_indices(system, np.concatenate([a.members, b.members]))


def intersection(system, a, b):
    return AtomSet.from_indices(system, np.intersect1d(a.members, b.members))


def difference(system, a, b):
    return AtomSet.from_indices(system, np.setdiff1d(a.members, b.members))


def symmetric_difference(system, a, b):
    return AtomSet.from_indices(system, np.setxor1d(a.members, b.members))


def integrate(system, f, S=None):
    """Sum of f(x) weight(x) over S (whole space when S is None)."""
    f = np.asarray(f, dtype=float)
    if S is None:
        return float(f @ system.weights)
    idx = S.members
    return float(f[idx] @ system.weights[idx])


def make_observable(system, values):
    v = np.asarray(values, dtype=float)
    if len(v) != system.atom_count:
        raise SpaceError("observable length mismatch")
    if not np.all(np.isfinite(v)):
        raise SpaceError("observable must be finite")
    return v


# -- internals --------------------------------------------------------------


def _is_permutation(g, M):
    if np.any(g < 0) or np.any(g >= M):
        return False
    seen = np.zeros(M, dtype=bool)
    seen[g] = True
    return bool(seen.all())


def _invert(g):
    inv = np.empty_like(g)
    inv[g] = np.arange(len(g))
    return inv


def _check_commuting(gens, M):
    if M <= _EXHAUSTIVE_CHECK_LIMIT:
        idx = np.arange(M)
    else:
        rng = np.random.default_rng(0)
        idx = rng.integers(0, M, size=_SAMPLE_CHECK_SIZE)
    for i in range(len(gens)):
        for j in range(i + 1, len(gens)):
            gi, gj = gens[i], gens[j]
            if not np.array_equal(gi[gj[idx]], gj[gi[idx]]):
                raise SpaceError(f"generators {i} and {j} do not commute")


def _cycle_labels(g):
    """Canonical (min-element) cycle label per atom, by pointer doubling."""
    M = len(g)
    labels = np.minimum(np.arange(M), g)
    jump = g[g]
    steps = 2
    while steps < M:
        labels = np.minimum(labels, labels[jump])
        jump = jump[jump]
        steps *= 2
    return labels


def _orbit_labels(gens, M):
    """Orbit partition of the group generated by commuting permutations.

    Inverses are forward powers on a finite set, so single-generator cycle
    labels followed by cross-generator label merging covers the full group.
    """
    labels = _cycle_labels(gens[0])
    for g in gens[1:]:
        other = _cycle_labels(g)
        # merge the two cycle partitions: propagate min label across both
        while True:
            merged = labels.copy()
            for lab in (labels, other):
                # all atoms sharing a lab-class take that class's min merged label
                order = np.argsort(lab, kind="stable")
                sorted_lab = lab[order]
                group_start = np.concatenate(([True], sorted_lab[1:] != sorted_lab[:-1]))
                group_id = np.cumsum(group_start) - 1
                mins = np.full(group_id[-1] + 1, M, dtype=np.int64)
                np.minimum.at(mins, group_id, merged[order])
                merged[order] = mins[group_id]
            if np.array_equal(merged, labels):
                break
            labels = merged
    uniq, relabeled = np.unique(labels, return_inverse=True)
    return len(uniq), relabeled
