"""Value distributions of observables and weak-* distances.

Laws are finitely supported probability measures on R (or R^2 for joint
laws). The bounded-Lipschitz metric operationalizes weak-* closeness; the
Wasserstein-1 distance is the exact companion metric used in golden tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MASS_TOL = 1e-12
VALUE_MERGE_TOL = 1e-12


class DistributionError(ValueError):
    pass


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Finitely supported law: values (k,) or (k, 2), masses (k,) summing to 1."""

    values: np.ndarray
    masses: np.ndarray

    @property
    def ndim(self):
        return 1 if self.values.ndim == 1 else 2

    @classmethod
    def from_atoms(cls, values, masses):
        v = np.asarray(values, dtype=float)
        m = np.asarray(masses, dtype=float)
        if not np.all(np.isfinite(v)):
            raise DistributionError("values must be finite")
        if np.any(m < 0):
            raise DistributionError("masses must be nonnegative")
        # accumulation noise scales with the number of input atoms
        if abs(m.sum() - 1.0) > MASS_TOL * max(1, len(m)):
            raise DistributionError(f"masses sum to {m.sum()}, expected 1")
        keep = m > 0
        v, m = v[keep], m[keep]
        v, m = _merge_close(v, m)
        m = m / m.sum()
        v.flags.writeable = False
        m.flags.writeable = False
        return cls(v, m)

    @classmethod
    def point_mass(cls, value):
        v = np.asarray(value, dtype=float)
        return cls.from_atoms(v.reshape(1, -1) if v.ndim else v.reshape(1), [1.0])

    def __len__(self):
        return len(self.masses)


def _merge_close(v, m):
    """Group values equal within tolerance, summing masses; sort 1-d output."""
    if len(v) == 0:
        raise DistributionError("empty distribution")
    if v.ndim == 1:
        order = np.argsort(v, kind="stable")
        v, m = v[order], m[order]
        new_group = np.concatenate(([True], np.diff(v) > VALUE_MERGE_TOL))
    else:
        order = np.lexsort((v[:, 1], v[:, 0]))
        v, m = v[order], m[order]
        new_group = np.concatenate(
            ([True], np.any(np.abs(np.diff(v, axis=0)) > VALUE_MERGE_TOL, axis=1))
        )
    gid = np.cumsum(new_group) - 1
    k = gid[-1] + 1
    mv = np.zeros((k,) + v.shape[1:])
    mm = np.zeros(k)
    np.add.at(mm, gid, m)
    # representative value: first of each group
    first = np.flatnonzero(new_group)
    mv[:] = v[first]
    return mv, mm


def law(system, f):
    """Pushforward of the atom weights under f."""
    return EmpiricalDistribution.from_atoms(np.asarray(f, dtype=float), system.weights)


def joint_law(system, f, g):
    """Joint pushforward of (f, g): a law on R^2."""
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if len(f) != system.atom_count or len(g) != system.atom_count:
        raise DistributionError("observable length mismatch")
    return EmpiricalDistribution.from_atoms(
        np.column_stack([f, g]), system.weights
    )


def product(law_f, law_g):
    """Product measure of two 1-d laws, as a 2-d law."""
    if law_f.ndim != 1 or law_g.ndim != 1:
        raise DistributionError("product needs 1-d marginals")
    vf, vg = law_f.values, law_g.values
    pairs = np.column_stack(
        [np.repeat(vf, len(vg)), np.tile(vg, len(vf))]
    )
    masses = np.outer(law_f.masses, law_g.masses).ravel()
    return EmpiricalDistribution.from_atoms(pairs, masses)


def marginals(joint):
    if joint.ndim != 2:
        raise DistributionError("need a 2-d law")
    mx = EmpiricalDistribution.from_atoms(joint.values[:, 0], joint.masses)
    my = EmpiricalDistribution.from_atoms(joint.values[:, 1], joint.masses)
    return mx, my


def _cdf_breakpoints(mu, nu):
    """Merged support with both CDFs evaluated on it."""
    pts = np.union1d(mu.values, nu.values)
    F = np.zeros(len(pts))
    G = np.zeros(len(pts))
    F[np.searchsorted(pts, mu.values)] = mu.masses
    G[np.searchsorted(pts, nu.values)] = nu.masses
    return pts, np.cumsum(F), np.cumsum(G)


def w1_distance(mu, nu):
    """Exact Wasserstein-1: integral of |F_mu - F_nu| over R."""
    if mu.ndim != 1 or nu.ndim != 1:
        raise DistributionError("w1_distance is 1-d only")
    pts, F, G = _cdf_breakpoints(mu, nu)
    if len(pts) == 1:
        return 0.0
    return float(np.sum(np.abs(F[:-1] - G[:-1]) * np.diff(pts)))


def quantile(nu, r):
    """Generalized inverse CDF: least value v with F(v) >= r."""
    if nu.ndim != 1:
        raise DistributionError("quantile is 1-d only")
    if not (0.0 < r < 1.0):
        raise DistributionError(f"rank {r} outside (0, 1)")
    cdf = np.cumsum(nu.masses)
    idx = int(np.searchsorted(cdf, r, side="left"))
    idx = min(idx, len(nu.values) - 1)
    return float(nu.values[idx])


def bl_distance(mu, nu):
    """Bounded-Lipschitz metric.

    1-d: the CDF-difference integral truncated at total variation 2
    (any test function is bounded by 1, so no pair is farther than 2).
    2-d: lower-bound estimate from a fixed dictionary of clipped ramp
    test functions; conclusions drawn from it are comparative only.
    """
    if mu.ndim != nu.ndim:
        raise DistributionError("dimensionality mismatch")
    if mu.ndim == 1:
        return min(2.0, w1_distance(mu, nu))
    return _bl_distance_2d(mu, nu)


_RAMP_OFFSETS = 33
_RAMP_DIRECTIONS = 8
_RAMP_SLOPES = (0.25, 0.5, 1.0)


def _bl_distance_2d(mu, nu):
    """Best clipped-ramp test function g(x) = clip(a u.x - b, -1, 1)."""
    best = 0.0
    angles = np.pi * np.arange(_RAMP_DIRECTIONS) / _RAMP_DIRECTIONS
    for theta in angles:
        u = np.array([np.cos(theta), np.sin(theta)])
        pm, pn = mu.values @ u, nu.values @ u
        lo = min(pm.min(), pn.min())
        hi = max(pm.max(), pn.max())
        for a in _RAMP_SLOPES:  # slope a <= 1 keeps Lip(g) <= 1
            offsets = np.linspace(a * lo - 1, a * hi + 1, _RAMP_OFFSETS)
            gm = np.clip(a * pm[None, :] - offsets[:, None], -1.0, 1.0)
            gn = np.clip(a * pn[None, :] - offsets[:, None], -1.0, 1.0)
            vals = np.abs(gm @ mu.masses - gn @ nu.masses)
            best = max(best, float(vals.max()))
    return best
