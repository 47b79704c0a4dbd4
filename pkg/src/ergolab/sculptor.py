"""Staged construction of observables whose normalized ergodic averages
realize prescribed value distributions.

The composite f = sum_j f_j is built stage by stage. Each stage function
is constant on equal-measure blocks of a Rokhlin tower, with the block
values taken from quantiles of the target law, and is exactly periodic
along the orbit with period n_j = subtower_count * h_j. Periods are
chosen nested (n_k divides the averaging scale N_j for k < j), so cube
averages at scale N_j annihilate every earlier stage exactly; amplitudes
decay geometrically so later stages are negligible at scale N_j. The
normalized average P_{N_j} f / ||P_{N_j} f||_1 then reproduces the
stage-j block pattern, and a recorded affine map on the value line
carries it back onto the target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .averaging import apply_operator, cube_operator, lp_norm
from .distributions import (
    EmpiricalDistribution,
    bl_distance,
    joint_law,
    law,
    marginals,
    product,
    quantile,
    w1_distance,
)
from .space import AtomSet, integrate
from .towers import TowerError, _orbit_positions, rokhlin_tower_1d

ZERO_MEAN_TOL = 1e-10
DEGENERATE_L1 = 1e-14


class SculptError(ValueError):
    pass


@dataclass
class StageSpec:
    """One stage: a tower split into equal subtowers carrying constant values."""

    j: int
    height: int  # subtower height h_j
    subtower_count: int
    amplitude: float
    values: np.ndarray  # constant per subtower, amplitude included
    residual_value: float
    residual_set: AtomSet
    N: int  # averaging scale
    R: int  # plateau end scale
    period: int  # subtower_count * height
    grid_step: int  # scale grid granularity (lcm of earlier periods)
    function: np.ndarray  # the stage observable
    tower_columns: int  # full periods laid along the orbit
    choice_report: dict = field(default_factory=dict)


@dataclass
class SculptPlan:
    system: object
    target: EmpiricalDistribution
    stages: list
    f: np.ndarray  # composite observable
    value_scale: float  # affine map back to target units
    value_shift: float
    degenerate: bool
    stage_reports: list = field(default_factory=list)


def quantile_pattern(target, count, normalize=True):
    """Midpoint-rank quantile discretization of the target.

    Returns (values, scale, shift): with normalize, values are centered
    and L1-normalized and v -> scale*v + shift recovers the raw quantiles.
    """
    if count < 1:
        raise SculptError("need at least one subtower")
    q = np.array([quantile(target, (i + 0.5) / count) for i in range(count)])
    if not normalize:
        return q, 1.0, 0.0
    shift = float(q.mean())
    centered = q - shift
    scale = float(np.abs(centered).mean())
    if scale < DEGENERATE_L1:
        return np.zeros(count), 1.0, shift
    return centered / scale, scale, shift


def build_stage(
    system,
    j,
    height,
    target,
    count=None,
    amplitude=1.0,
    residual="withhold",
    normalize=False,
    residual_cap=None,
):
    """Stage function on a height-(count*height) tower of equal subtowers.

    Subtower i carries the target quantile at rank (i+0.5)/count (scaled by
    amplitude; centered/L1-normalized when normalize is set); the residual
    carries the constant closing the zero-mean identity. residual modes:
    'none' demands an exactly tiling tower (exact periodicity, empty
    residual), 'remainder' takes the natural leftover, 'withhold' keeps one
    tower column out when the tower would otherwise fill the space.
    """
    if system.dimension != 1:
        raise SculptError("stage construction implemented for d=1 systems")
    if count is None:
        count = j**system.dimension
    if height < 1:
        raise SculptError("subtower height must be >= 1")
    n = count * height
    M = system.atom_count
    columns = M // n
    if columns < 1:
        raise SculptError(f"stage {j}: period {n} exceeds atom count {M}")
    natural_resid = M % n

    if residual == "none":
        if natural_resid != 0:
            raise SculptError(
                f"stage {j}: period {n} does not divide M={M}, cannot tile exactly"
            )
        used_columns = columns
    elif residual == "remainder":
        used_columns = columns
    elif residual == "withhold":
        if natural_resid == 0:
            if columns < 2:
                raise SculptError(
                    f"stage {j}: single exactly-tiling column, no residual obtainable"
                )
            used_columns = columns - 1
        else:
            used_columns = columns
    else:
        raise SculptError(f"unknown residual mode {residual!r}")

    tower = rokhlin_tower_1d(system, n, max((natural_resid / M) * 2, 1e-9))
    order, pos = _orbit_positions(system)

    pattern, scale, shift = quantile_pattern(target, count, normalize=normalize)
    values = amplitude * pattern

    covered = used_columns * n
    resid_atoms = order[covered:] if covered < M else np.empty(0, dtype=np.int64)
    E = AtomSet.from_indices(system, resid_atoms)

    # zero-mean identity: sum(subtower masses * values) + mu(E) c = 0
    subtower_mass = used_columns * height / M
    total = subtower_mass * values.sum()
    if len(E):
        c = -total / E.measure
    else:
        if abs(total) > ZERO_MEAN_TOL:
            raise SculptError(
                f"stage {j}: empty residual cannot absorb mean {total:.3g}"
            )
        c = 0.0

    f = np.empty(M)
    p = np.arange(covered)
    f[order[p]] = values[(p % n) // height]
    if covered < M:
        f[order[np.arange(covered, M)]] = c
    if abs(integrate(system, f)) > ZERO_MEAN_TOL:
        raise SculptError(f"stage {j}: zero-mean identity violated")

    spec = StageSpec(
        j=j,
        height=height,
        subtower_count=count,
        amplitude=amplitude,
        values=values,
        residual_value=c,
        residual_set=E,
        N=0,
        R=0,
        period=n,
        grid_step=1,
        function=f,
        tower_columns=used_columns,
    )
    return spec


def choose_N_j(
    system,
    earlier_functions,
    f_j,
    height,
    grid=None,
    eta=0.01,
    plateau_safety=0.01,
):
    """Smallest grid scale where earlier stages are eta-suppressed.

    Returns (N, report). Constraints: ||P_N sum(earlier)||_1 <= eta ||f_j||_1
    and N <= plateau_safety * height; error when no grid point meets both.
    """
    cap = plateau_safety * height
    if cap < 1:
        raise SculptError(
            f"plateau_safety * height = {cap:.3g} < 1: no admissible scale"
        )
    if grid is None:
        grid = []
        N = 1
        while N <= cap:
            grid.append(N)
            N *= 2
    fj_l1 = lp_norm(system, f_j, 1)
    earlier = [g for g in earlier_functions if np.any(g)]
    total_earlier = np.sum(earlier, axis=0) if earlier else None
    best = None
    for N in sorted(set(int(n) for n in grid)):
        if N < 1 or N > cap:
            continue
        if total_earlier is None:
            leak = 0.0
        else:
            leak = lp_norm(
                system,
                apply_operator(cube_operator(N, system.dimension), system, total_earlier),
                1,
            )
        if leak <= eta * fj_l1:
            best = (N, leak)
            break
    if best is None:
        raise SculptError(
            f"no admissible N: suppression <= {eta:.3g}*||f_j||_1 unreachable "
            f"below the plateau cap {cap:.3g}"
        )
    N, leak = best
    return N, {
        "N": N,
        "leak_l1": leak,
        "leak_bound": eta * fj_l1,
        "plateau_cap": cap,
    }


def tail_bound(plan, j):
    """||P_{N_j} (sum of later stages)||_1 / ||P_{N_j} f_j||_1."""
    stages = plan.stages
    if not 1 <= j <= len(stages):
        raise SculptError(f"stage index {j} out of range")
    st = stages[j - 1]
    tail = [s.function for s in stages[j:]]
    if not tail:
        return 0.0
    tail_sum = np.sum(tail, axis=0)
    if not np.any(tail_sum):
        return 0.0
    P = cube_operator(st.N, plan.system.dimension)
    num = lp_norm(plan.system, apply_operator(P, plan.system, tail_sum), 1)
    den = lp_norm(plan.system, apply_operator(P, plan.system, st.function), 1)
    if den < DEGENERATE_L1:
        raise SculptError(f"stage {j}: degenerate own average")
    return num / den


def normalized_average(plan, n):
    """P_n f / ||P_n f||_1, or None when degenerate."""
    g = apply_operator(
        cube_operator(int(n), plan.system.dimension), plan.system, plan.f
    )
    l1 = lp_norm(plan.system, g, 1)
    if l1 < DEGENERATE_L1:
        return None
    return g / l1


def mapped_law(plan, n):
    """Law of the normalized average, sent back to target units by the
    plan's recorded affine map."""
    g = normalized_average(plan, n)
    if g is None:
        return None
    return law(plan.system, plan.value_scale * g + plan.value_shift)


def sculpt(system, target, J, config=None):
    """Full pipeline: stages smallest-j first, geometric amplitude decay,
    scales from choose_N_j on the nested-period grid, composite assembled.

    config keys (all optional except heights): heights (list of J subtower
    heights), counts (int or list; default j^d), amplitude, decay_ratio,
    eta, plateau_safety, plateau_factor, distance ('w1' | 'bl').
    """
    cfg = dict(config or {})
    heights = cfg.pop("heights", None)
    if heights is None or len(heights) != J:
        raise SculptError("config must pin 'heights', one per stage")
    counts = cfg.pop("counts", None)
    if counts is None:
        counts = [j**system.dimension for j in range(1, J + 1)]
    elif np.isscalar(counts):
        counts = [int(counts)] * J
    amplitude = float(cfg.pop("amplitude", 1.0))
    decay = float(cfg.pop("decay_ratio", 0.01))
    if not 0 < decay < 1:
        raise SculptError("decay_ratio must lie in (0,1)")
    eta = float(cfg.pop("eta", 0.01))
    plateau_safety = float(cfg.pop("plateau_safety", 0.01))
    plateau_factor = float(cfg.pop("plateau_factor", 10.0))
    metric = cfg.pop("distance", "w1")
    if cfg:
        raise SculptError(f"unknown config keys {sorted(cfg)}")

    _, value_scale, value_shift = quantile_pattern(target, int(counts[-1]))
    degenerate = all(
        abs(quantile(target, (i + 0.5) / c)) < DEGENERATE_L1
        for c in map(int, counts)
        for i in range(int(c))
    )

    stages = []
    for j in range(1, J + 1):
        a_j = amplitude * decay ** (j - 1)
        mode = "none" if j < J else "withhold"
        try:
            st = build_stage(
                system,
                j,
                int(heights[j - 1]),
                target,
                count=int(counts[j - 1]),
                amplitude=a_j,
                residual=mode,
                normalize=True,
            )
        except (SculptError, TowerError) as e:
            raise SculptError(f"stage {j} failed: {e}") from e
        step = math.lcm(*(s.period for s in stages)) if stages else 1
        cap = plateau_safety * st.height
        grid = []
        N = step
        while N <= cap:
            grid.append(N)
            N *= 2
        try:
            N_j, report = choose_N_j(
                system,
                [s.function for s in stages],
                st.function,
                st.height,
                grid=grid or None,
                eta=eta,
                plateau_safety=plateau_safety,
            )
        except SculptError as e:
            raise SculptError(f"stage {j} failed: {e}") from e
        st.N = N_j
        st.R = int(min(plateau_factor * N_j, plateau_safety * st.height))
        st.grid_step = step
        st.choice_report = report
        stages.append(st)

    f = np.sum([s.function for s in stages], axis=0)
    plan = SculptPlan(
        system=system,
        target=target,
        stages=stages,
        f=f,
        value_scale=value_scale,
        value_shift=value_shift,
        degenerate=degenerate,
    )
    if abs(integrate(system, f)) > ZERO_MEAN_TOL * J:
        raise SculptError("composite mean drifted from zero")

    dist_fn = w1_distance if metric == "w1" else bl_distance
    for j, st in enumerate(stages, start=1):
        if degenerate:
            plan.stage_reports.append(
                {"j": j, "N": st.N, "degenerate": True}
            )
            continue
        nu = mapped_law(plan, st.N)
        row = {
            "j": j,
            "N": st.N,
            "degenerate": nu is None,
            "tail_ratio": tail_bound(plan, j),
        }
        if nu is not None:
            row["dist_to_target"] = dist_fn(nu, target)
        plan.stage_reports.append(row)
    return plan


def plateau_profile(plan, k, samples=8):
    """Rows (n, BL distance of the normalized-average law at n to the one
    at N_k), n log-spaced in [N_k, R_k] on the stage's scale grid.

    Scales are rounded to multiples of the grid step (earlier-stage
    periods), where earlier stages stay exactly suppressed.
    """
    if not 1 <= k <= len(plan.stages):
        raise SculptError(f"stage index {k} out of range")
    st = plan.stages[k - 1]
    if st.R < st.N:
        raise SculptError(f"empty plateau range [{st.N}, {st.R}]")
    if samples < 1:
        raise SculptError("need at least one sample")
    step = st.grid_step
    raw = np.exp(np.linspace(np.log(st.N), np.log(st.R), samples))
    ns = np.clip(np.round(raw / step) * step, st.N, max(st.N, (st.R // step) * step))
    ns = np.unique(ns.astype(np.int64))
    base_g = normalized_average(plan, st.N)
    if base_g is None:
        raise SculptError("degenerate composite: no normalized law")
    base_law = law(plan.system, base_g)
    rows = []
    for n in ns:
        g = normalized_average(plan, int(n))
        if g is None:
            raise SculptError(f"degenerate average at n={n}")
        rows.append((int(n), bl_distance(law(plan.system, g), base_law)))
    return rows


def _quantize(g, bins):
    lo, hi = float(g.min()), float(g.max())
    if hi - lo < DEGENERATE_L1:
        return np.full_like(g, lo)
    step = (hi - lo) / bins
    return lo + np.round((g - lo) / step) * step


def independence_probe(plan, k, j, bins=64):
    """2-d BL distance between the joint law of the stage-k and stage-j
    normalized averages and the product of their marginals.

    Values are coarsened to a grid before building the joint, keeping the
    product law tractable; the probe is comparative, not absolute.
    """
    if k == j:
        raise SculptError("independence probe needs distinct stages")
    for idx in (k, j):
        if not 1 <= idx <= len(plan.stages):
            raise SculptError(f"stage index {idx} out of range")
    gk = normalized_average(plan, plan.stages[k - 1].N)
    gj = normalized_average(plan, plan.stages[j - 1].N)
    if gk is None or gj is None:
        raise SculptError("degenerate composite: no normalized law")
    if np.ptp(gk) < DEGENERATE_L1 or np.ptp(gj) < DEGENERATE_L1:
        return 0.0
    qk = _quantize(gk, bins)
    qj = _quantize(gj, bins)
    joint = joint_law(plan.system, qk, qj)
    mk, mj = marginals(joint)
    return bl_distance(joint, product(mk, mj))


def pair_probe(plan, k, shift):
    """Control probe: stage-k average against its own translate by T^shift.

    A strongly dependent pair for calibrating independence_probe readings.
    """
    g = normalized_average(plan, plan.stages[k - 1].N)
    if g is None:
        raise SculptError("degenerate composite: no normalized law")
    if np.ptp(g) < DEGENERATE_L1:
        return 0.0
    shifted = g[plan.system.apply_map([shift])]
    q = _quantize(g, 64)
    qs = _quantize(shifted, 64)
    joint = joint_law(plan.system, q, qs)
    mk, mj = marginals(joint)
    return bl_distance(joint, product(mk, mj))
