"""Heavy-orbit selection and covering machinery behind the pointwise
ergodic arguments.

A point x is s-heavy at scale L when the forward average of f over the
cube {1..L}^d at x exceeds s; the covered block is exactly the averaged
atoms, so the mean of f over every selected block exceeds s by
construction. Selection is greedy: leftmost (lexicographic) admissible
anchor first, disjoint blocks only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .space import AtomSet, integrate, symmetric_difference, translate_set
from .towers import Tower, TowerError, _orbit_positions


class CoveringError(ValueError):
    pass


@dataclass
class CoveringResult:
    selected: list  # (anchor, side) pairs; anchor = first covered cell
    covered: object  # AtomSet or index array, depending on context
    fraction: float
    window_size: int


def first_passage(system, f, x, s, L_cap):
    """Minimal L <= L_cap with the cube average of f at x above s.

    Average is over {T^z x : z in {1..L}^d}. Returns None when no such L.
    """
    f = np.asarray(f, dtype=float)
    d = system.dimension
    if d == 1:
        g = system.generators[0]
        y = int(g[x])
        total = 0.0
        for L in range(1, L_cap + 1):
            total += f[y]
            if total > s * L:
                return L
            y = int(g[y])
        return None
    # d >= 2: grow the cube sum incrementally by adding the new shell
    total = 0.0
    for L in range(1, L_cap + 1):
        shell = _cube_shell(d, L)
        for z in shell:
            total += f[system.apply(z, x)]
        if total > s * L**d:
            return L
    return None


def _cube_shell(d, L):
    """Lattice points of {1..L}^d with max coordinate exactly L."""
    axes = [np.arange(1, L + 1)] * d
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    return grid[grid.max(axis=1) == L]


def _sliding_forward_max(cs, W):
    """out[i] = max(cs[i+1 .. min(i+W, n-1)]) for i in 0..n-2, -inf pad.

    Block prefix/suffix maxima give each window maximum in O(1).
    """
    n = len(cs)
    pad = (-((n + W) // -W)) * W  # ceil so every window stays full-width
    ext = np.full(pad, -np.inf)
    ext[:n] = cs
    blocks = ext.reshape(-1, W)
    pref = np.maximum.accumulate(blocks, axis=1).reshape(-1)
    suf = np.maximum.accumulate(blocks[:, ::-1], axis=1)[:, ::-1].reshape(-1)
    lo = np.arange(n - 1) + 1
    hi = lo + W - 1
    return np.maximum(suf[lo], pref[hi])


def candidate_start_mask(window_values, s, L_cap, L_min=1):
    """Block starts w whose first-passage length lands in [L_min, L_cap].

    Block (w, L) covers window positions w .. w+L-1; its average exceeds s
    iff cs[w+L] > cs[w] for cs the prefix sums of (values - s). A start is
    a candidate when no L < L_min qualifies but some L in [L_min, L_cap]
    (fitting inside the window) does; both conditions reduce to
    sliding-window maxima of cs. Start 0 is excluded: blocks begin one
    step into the walk.
    """
    v = np.asarray(window_values, dtype=float)
    H = len(v)
    cs = np.concatenate(([0.0], np.cumsum(v - s)))  # len H+1
    W2 = L_cap - L_min + 1
    if W2 < 1:
        return cs, np.zeros(H, dtype=bool)
    f2 = _sliding_forward_max(cs, W2)  # f2[t] = max cs[t+1 .. t+W2]
    reach = np.full(H, -np.inf)
    idx = np.arange(H) + L_min - 1
    ok = idx < len(f2)
    reach[ok] = f2[idx[ok]]  # max cs[w+L_min .. w+L_cap], window-truncated
    if L_min > 1:
        f1 = _sliding_forward_max(cs, L_min - 1)
        early = f1[:H]  # max cs[w+1 .. w+L_min-1]
    else:
        early = np.full(H, -np.inf)
    mask = (early <= cs[:H]) & (reach > cs[:H])
    mask[0] = False
    return cs, mask


def greedy_heavy_partition_1d(window_values, s, L_cap, L_min=1):
    """Greedy leftmost selection of disjoint heavy blocks in one window.

    Returns CoveringResult with blocks as (start, L) in window coordinates;
    block (start, L) covers positions start .. start+L-1, its first-passage
    length L lies in [L_min, L_cap], and its average exceeds s. The walk
    advances to the block end after each selection and stops when no block
    fits before the window top.
    """
    v = np.asarray(window_values, dtype=float)
    H = len(v)
    if H < 1:
        raise CoveringError("window shorter than 1")
    cs, mask = candidate_start_mask(v, s, L_cap, L_min=L_min)
    starts = np.flatnonzero(mask)
    blocks = []
    covered_count = 0
    i = 1
    for w in starts:
        if w < i:
            continue
        w = int(w)
        hi = min(w + L_cap, H)
        # first-passage length, known to exist in [L_min, hi - w]
        L = L_min + int(np.argmax(cs[w + L_min : hi + 1] > cs[w]))
        blocks.append((w, L))
        covered_count += L
        i = w + L
    frac = covered_count / H
    return CoveringResult(blocks, None, frac, H)


def greedy_cube_selection(window_shape, candidates):
    """Greedy disjoint selection among candidate cubes in a d-cube window.

    candidates: iterable of (anchor tuple, side); a candidate whose cube
    leaves the window is discarded. Scan order is lexicographic by anchor.
    """
    shape = tuple(window_shape)
    d = len(shape)
    occupied = np.zeros(shape, dtype=bool)
    selected = []
    covered = 0
    for anchor, L in sorted(candidates):
        anchor = tuple(anchor)
        if any(a < 0 or a + L > s_ for a, s_ in zip(anchor, shape)):
            continue
        sl = tuple(slice(a, a + L) for a in anchor)
        if occupied[sl].any():
            continue
        occupied[sl] = True
        selected.append((anchor, L))
        covered += L**d
    total = int(np.prod(shape))
    return CoveringResult(selected, occupied, covered / total, total)


def random_cover_instance(window_shape, rng, L_max=None):
    """Random candidate cubes drawn until they cover the whole window.

    The covering hypothesis is what the selection guarantee is about:
    sparse candidate families promise nothing.
    """
    shape = tuple(window_shape)
    d = len(shape)
    side = min(shape)
    if L_max is None:
        L_max = max(1, side // 2)
    L_max = min(L_max, side)
    covered = np.zeros(shape, dtype=bool)
    cands = []
    while not covered.all():
        L = int(rng.integers(1, L_max + 1))
        anchor = tuple(int(rng.integers(0, s_ - L + 1)) for s_ in shape)
        cands.append((anchor, L))
        covered[tuple(slice(a, a + L) for a in anchor)] = True
    return cands


def max_disjoint_fraction(window_shape, candidates):
    """Exact maximum covered fraction over disjoint subfamilies.

    Brute-force branch and bound on cell bitmasks; only for tiny windows.
    """
    shape = tuple(window_shape)
    total = int(np.prod(shape))
    if total > 64:
        raise CoveringError("exact search limited to 64-cell windows")
    masks = set()
    for anchor, L in sorted(set((tuple(a), L) for a, L in candidates)):
        if any(a < 0 or a + L > s_ for a, s_ in zip(anchor, shape)):
            continue
        grid = np.zeros(shape, dtype=bool)
        grid[tuple(slice(a, a + L) for a in anchor)] = True
        m = 0
        for idx in np.flatnonzero(grid.reshape(-1)):
            m |= 1 << int(idx)
        masks.add(m)
    masks = sorted(masks)
    # candidates touching each cell, for first-free-cell branching
    by_cell = [[m for m in masks if m >> c & 1] for c in range(total)]
    memo = {}

    def rec(avail):
        if avail == 0:
            return 0
        hit = memo.get(avail)
        if hit is not None:
            return hit
        c = (avail & -avail).bit_length() - 1
        # either cell c stays uncovered, or some available cube covers it
        best = rec(avail & ~(1 << c))
        for m in by_cell[c]:
            if m & ~avail:
                continue
            got = bin(m).count("1") + rec(avail & ~m)
            if got > best:
                best = got
        memo[avail] = best
        return best

    return rec((1 << total) - 1) / total


def build_Y_N(system, f, s, N, tower, L_min=None):
    """Union of greedy heavy blocks over all tower columns (d=1).

    Returns (Y: AtomSet, report dict). The mean of f over Y exceeds s
    whenever Y is nonempty, exactly.
    """
    if system.dimension != 1:
        raise CoveringError("build_Y_N implemented for d=1 systems")
    if L_min is None:
        L_min = max(1, N // 10)
    f = np.asarray(f, dtype=float)
    order, pos = _orbit_positions(system)
    H = tower.side
    base_pos = np.sort(pos[tower.base.members])
    M = system.atom_count
    covered_atoms = []
    n_blocks = 0
    cand_count = 0
    win_count = 0
    for p0 in base_pos:
        window_atoms = order[(p0 + np.arange(H)) % M]
        wv = f[window_atoms]
        _, mask = candidate_start_mask(wv, s, N, L_min=L_min)
        cand_count += int(mask.sum())
        win_count += H
        res = greedy_heavy_partition_1d(wv, s, N, L_min=L_min)
        n_blocks += len(res.selected)
        for start, L in res.selected:
            covered_atoms.append(window_atoms[start : start + L])
    if covered_atoms:
        Y = AtomSet.from_indices(system, np.concatenate(covered_atoms))
    else:
        Y = AtomSet.empty(system)
    mean_on_Y = integrate(system, f, Y) / Y.measure if len(Y) else float("nan")
    report = {
        "mu_Y": Y.measure,
        "mean_on_Y": mean_on_Y,
        "blocks": n_blocks,
        "uncovered_mass": 1.0 - Y.measure,
        "candidate_fraction": cand_count / win_count if win_count else 0.0,
        "L_min": L_min,
        "N": N,
    }
    return Y, report


def almost_invariance_profile(system, Y, shifts):
    """Rows (z, mu(Y symm-diff T^z Y)), exact."""
    rows = []
    for z in shifts:
        shifted = translate_set(system, z, Y)
        rows.append((tuple(np.atleast_1d(z)), symmetric_difference(system, Y, shifted).measure))
    return rows


def heavy_scale_coverage(system, f, s, N, L_min=1, sample=None, seed=0):
    """Fraction of atoms with a heavy scale in [L_min, N]; diagnostic for
    choosing the scale floor."""
    M = system.atom_count
    if sample is None or sample >= M:
        xs = np.arange(M)
    else:
        xs = np.random.default_rng(seed).choice(M, size=sample, replace=False)
    hits = 0
    for x in xs:
        L = first_passage(system, f, int(x), s, N)
        if L is not None and L >= L_min:
            hits += 1
    return hits / len(xs)


def birkhoff_contradiction_experiment(
    system, f, s, N_schedule, tower_height_factor=20, tower_eps=0.5
):
    """Per-N report rows exhibiting the heavy-mean / almost-invariance
    tension: nonempty Y_N has mean above s, while the Y_N family thins out
    as N grows.
    """
    from .towers import rokhlin_tower_1d

    f = np.asarray(f, dtype=float)
    if abs(integrate(system, f)) > 1e-10:
        raise CoveringError("f must have zero mean")
    if not system.ergodic:
        raise CoveringError("system must be ergodic")
    M = system.atom_count
    rows = []
    for N in N_schedule:
        H = min(tower_height_factor * N, M // 2)
        tower = rokhlin_tower_1d(system, H, max(tower_eps, (M % H) / M + 1e-12))
        Y, report = build_Y_N(system, f, s, N, tower)
        if len(Y):
            profile = almost_invariance_profile(system, Y, [[1]])
            sym1 = profile[0][1]
            norm_int = report["mean_on_Y"]
        else:
            sym1 = 0.0
            norm_int = float("nan")
        rows.append(
            {
                "N": N,
                "H": H,
                "mu_Y": report["mu_Y"],
                "normalized_integral": norm_int,
                "sym_diff_gen1": sym1,
                "blocks": report["blocks"],
                "L_min": report["L_min"],
            }
        )
    return rows
