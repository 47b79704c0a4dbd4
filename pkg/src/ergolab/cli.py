"""Config-driven experiment runner.

One experiment per invocation: `ergolab <kind> --config cfg.json
[--seed S] [--out DIR]`. Writes report.json (provenance: config echo,
hash, versions, timings) plus one CSV per experiment kind. Outputs are
deterministic given (config, seed).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time

import numpy as np

from . import __version__
from .averaging import (
    apply_operator,
    convergence_sweep,
    cube_operator,
    lp_norm,
    random_subset_operator,
    shell_operator,
)
from .covering import (
    birkhoff_contradiction_experiment,
    greedy_cube_selection,
    max_disjoint_fraction,
    random_cover_instance,
)
from .distributions import EmpiricalDistribution
from .sculptor import (
    independence_probe,
    pair_probe,
    plateau_profile,
    sculpt,
)
from .space import FiniteSystem, integrate
from .towers import (
    build_tower_zd,
    kakutani_partition,
    kakutani_verify,
    rokhlin_tower_1d,
)

SCHEMA_VERSION = 1

KINDS = (
    "average",
    "shells",
    "randomsets",
    "kakutani",
    "tower",
    "tower-zd",
    "cover",
    "birkhoff",
    "sculpt",
    "plateau",
    "independence",
)

# kinds whose outputs depend on pseudo-randomness: seed is mandatory
RANDOMIZED = {
    "average",
    "shells",
    "randomsets",
    "kakutani",
    "cover",
    "birkhoff",
}

_SYSTEM_FIELDS = {"backend", "dims", "permutation", "weights"}

_KIND_FIELDS = {
    "average": {"system", "N_list"},
    "shells": {"system", "j_list", "c"},
    "randomsets": {"system", "j_list"},
    "kakutani": {"system", "base_size", "base"},
    "tower": {"system", "n", "eps"},
    "tower-zd": {"system", "N", "eps", "H", "max_iters", "delta"},
    "cover": {"instances", "d", "window", "L_max"},
    "birkhoff": {"system", "s", "N_list", "height_factor"},
    "sculpt": {"system", "target", "J", "plan"},
    "plateau": {"system", "target", "J", "plan", "k", "samples"},
    "independence": {"system", "target", "J", "plan", "k", "j", "control_shift"},
}

_NEEDS_SYSTEM = {k for k, v in _KIND_FIELDS.items() if "system" in v}


class ConfigError(ValueError):
    pass


def validate(kind, cfg):
    """All diagnostics for a config, not just the first."""
    diags = []
    if kind not in KINDS:
        return [f"unknown experiment kind {kind!r}"]
    if not isinstance(cfg, dict):
        return ["config must be a mapping"]
    allowed = _KIND_FIELDS[kind] | {"seed"}
    for key in cfg:
        if key not in allowed:
            diags.append(f"unknown field {key!r} for kind {kind!r}")
    if kind in RANDOMIZED and cfg.get("seed") is None:
        diags.append(f"kind {kind!r} is randomized: 'seed' is mandatory")
    if "seed" in cfg and not isinstance(cfg["seed"], int):
        diags.append("'seed' must be an integer")
    if kind in _NEEDS_SYSTEM:
        sysc = cfg.get("system")
        if sysc is None:
            diags.append("missing field 'system'")
        elif not isinstance(sysc, dict):
            diags.append("'system' must be a mapping")
        else:
            for key in sysc:
                if key not in _SYSTEM_FIELDS:
                    diags.append(f"unknown system field {key!r}")
            if sysc.get("backend") not in ("cycle", "permutation", "torus"):
                diags.append(f"unknown system backend {sysc.get('backend')!r}")
    for field in ("eps", "c", "s", "delta"):
        if field in cfg and field in _KIND_FIELDS[kind]:
            v = cfg[field]
            if not isinstance(v, (int, float)) or v <= 0:
                diags.append(f"{field!r} must be a positive number")
    for field in ("n", "N", "J", "k", "j", "instances", "base_size"):
        if field in cfg and field in _KIND_FIELDS[kind]:
            v = cfg[field]
            if not isinstance(v, int) or v < 1:
                diags.append(f"{field!r} must be a positive integer")
    for field in ("N_list", "j_list"):
        if field in _KIND_FIELDS[kind]:
            v = cfg.get(field)
            if v is None:
                diags.append(f"missing field {field!r}")
            elif not (
                isinstance(v, list)
                and v
                and all(isinstance(x, int) and x >= 1 for x in v)
            ):
                diags.append(f"{field!r} must be a nonempty list of positive integers")
    if kind in ("sculpt", "plateau", "independence"):
        for field in ("target", "J", "plan"):
            if field not in cfg:
                diags.append(f"missing field {field!r}")
        if "target" in cfg:
            diags.extend(_validate_target(cfg["target"]))
    if kind == "tower" and "n" not in cfg:
        diags.append("missing field 'n'")
    if kind == "tower" and "eps" not in cfg:
        diags.append("missing field 'eps'")
    if kind == "tower-zd":
        for field in ("N", "eps"):
            if field not in cfg:
                diags.append(f"missing field {field!r}")
    if kind == "birkhoff" and "s" not in cfg:
        diags.append("missing field 's'")
    if kind == "plateau" and "k" not in cfg:
        diags.append("missing field 'k'")
    if kind == "independence":
        for field in ("k", "j"):
            if field not in cfg:
                diags.append(f"missing field {field!r}")
    return diags


def _validate_target(tc):
    if not isinstance(tc, dict):
        return ["'target' must be a mapping"]
    kind = tc.get("kind")
    if kind == "finite":
        if "values" not in tc or "masses" not in tc:
            return ["finite target needs 'values' and 'masses'"]
        return []
    if kind == "rademacher":
        return []
    if kind == "uniform":
        out = []
        if not isinstance(tc.get("lo", 0), (int, float)):
            out.append("'lo' must be a number")
        if not isinstance(tc.get("hi", 1), (int, float)):
            out.append("'hi' must be a number")
        return out
    return [f"unknown target kind {kind!r}"]


def make_target(tc):
    """EmpiricalDistribution from a target config mapping.

    Continuous targets are represented by a fine midpoint discretization.
    """
    kind = tc["kind"]
    if kind == "rademacher":
        return EmpiricalDistribution.from_atoms([-1.0, 1.0], [0.5, 0.5])
    if kind == "finite":
        return EmpiricalDistribution.from_atoms(tc["values"], tc["masses"])
    if kind == "uniform":
        lo, hi = float(tc.get("lo", 0.0)), float(tc.get("hi", 1.0))
        pts = int(tc.get("points", 2000))
        grid = lo + (hi - lo) * (np.arange(pts) + 0.5) / pts
        return EmpiricalDistribution.from_atoms(grid, np.full(pts, 1.0 / pts))
    raise ConfigError(f"unknown target kind {kind!r}")


def _zero_mean_observable(system, rng):
    f = rng.standard_normal(system.atom_count)
    return f - integrate(system, f)


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".12g")
    return str(x)


def _write_csv(path, header, rows):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


# -- experiment bodies: return (csv name, header, rows, summary) ------------


def _run_average(cfg, seed):
    system = FiniteSystem.from_config(cfg["system"])
    rng = np.random.default_rng(seed)
    f = _zero_mean_observable(system, rng)
    rows = convergence_sweep(system, f, cfg["N_list"])
    return "average.csv", ("N", "l1_dev", "l2_dev", "sup_dev"), rows, {
        "final_l2": rows[-1][2]
    }


def _run_shells(cfg, seed):
    system = FiniteSystem.from_config(cfg["system"])
    rng = np.random.default_rng(seed)
    f = _zero_mean_observable(system, rng)
    c = float(cfg["c"])
    rows = []
    for j in cfg["j_list"]:
        P = shell_operator(j, c, d=system.dimension)
        dev = apply_operator(P, system, f)
        rows.append((j, c, len(P), lp_norm(system, dev, 2)))
    return "shells.csv", ("j", "c", "support", "l2_dev"), rows, {
        "final_l2": rows[-1][3]
    }


def _run_randomsets(cfg, seed):
    system = FiniteSystem.from_config(cfg["system"])
    rng = np.random.default_rng(seed)
    f = _zero_mean_observable(system, rng)
    rows = []
    for i, j in enumerate(cfg["j_list"]):
        P = random_subset_operator(j, d=system.dimension, seed=seed + i)
        dev = apply_operator(P, system, f)
        rows.append((j, len(P), lp_norm(system, dev, 2)))
    return "randomsets.csv", ("j", "support", "l2_dev"), rows, {
        "final_l2": rows[-1][2]
    }


def _run_kakutani(cfg, seed):
    from .space import AtomSet

    system = FiniteSystem.from_config(cfg["system"])
    if "base" in cfg:
        D = AtomSet.from_indices(system, cfg["base"])
    else:
        size = int(cfg.get("base_size", max(1, system.atom_count // 10)))
        rng = np.random.default_rng(seed)
        D = AtomSet.from_indices(
            system, rng.choice(system.atom_count, size=size, replace=False)
        )
    part = kakutani_partition(system, D)
    kakutani_verify(part)
    rows = [
        (h, len(part.columns[h]), h * part.columns[h].measure)
        for h in part.heights()
    ]
    return "kakutani.csv", ("height", "columns", "mass"), rows, {
        "base_size": len(D),
        "heights": len(rows),
    }


def _run_tower(cfg, seed):
    system = FiniteSystem.from_config(cfg["system"])
    t = rokhlin_tower_1d(system, int(cfg["n"]), float(cfg["eps"]))
    resid = t.residual()
    rows = [(t.side, len(t.base), t.measure(), resid.measure)]
    return "tower.csv", ("n", "columns", "mu_tower", "mu_residual"), rows, {
        "mu_residual": resid.measure
    }


def _run_tower_zd(cfg, seed):
    system = FiniteSystem.from_config(cfg["system"])
    t, trace = build_tower_zd(
        system,
        int(cfg["N"]),
        float(cfg["eps"]),
        H=cfg.get("H"),
        max_iters=int(cfg.get("max_iters", 200)),
        delta=cfg.get("delta"),
        seed=seed or 0,
    )
    return "tower_zd.csv", ("iter", "mu", "removed", "added"), trace, {
        "final_mu": t.measure(),
        "iterations": len(trace) - 1,
    }


def _run_cover(cfg, seed):
    rng = np.random.default_rng(seed)
    d = int(cfg.get("d", 2))
    side = int(cfg.get("window", 8))
    n_inst = int(cfg.get("instances", 50))
    L_max = int(cfg.get("L_max", max(2, side // 2)))
    shape = (side,) * d
    floor = 3.0 ** (-d)
    rows = []
    for i in range(n_inst):
        cands = random_cover_instance(shape, rng, L_max=L_max)
        k = len(cands)
        res = greedy_cube_selection(shape, cands)
        exact = (
            max_disjoint_fraction(shape, cands) if side**d <= 64 else float("nan")
        )
        rows.append((i, k, res.fraction, exact, floor))
    return "cover.csv", (
        "instance",
        "candidates",
        "greedy_fraction",
        "exact_fraction",
        "floor",
    ), rows, {"instances": n_inst}


def _run_birkhoff(cfg, seed):
    system = FiniteSystem.from_config(cfg["system"])
    rng = np.random.default_rng(seed)
    f = _zero_mean_observable(system, rng)
    out = birkhoff_contradiction_experiment(
        system,
        f,
        float(cfg["s"]),
        cfg["N_list"],
        tower_height_factor=int(cfg.get("height_factor", 20)),
    )
    cols = (
        "N",
        "H",
        "mu_Y",
        "normalized_integral",
        "sym_diff_gen1",
        "blocks",
        "L_min",
    )
    rows = [tuple(r[c] for c in cols) for r in out]
    return "birkhoff.csv", cols, rows, {
        "final_mu_Y": rows[-1][2],
        "final_sym_diff": rows[-1][4],
    }


def _build_plan(cfg):
    system = FiniteSystem.from_config(cfg["system"])
    target = make_target(cfg["target"])
    return sculpt(system, target, int(cfg["J"]), dict(cfg["plan"]))


def _run_sculpt(cfg, seed):
    plan = _build_plan(cfg)
    rows = []
    for rep in plan.stage_reports:
        rows.append(
            (
                rep["j"],
                rep["N"],
                rep.get("dist_to_target", float("nan")),
                rep.get("tail_ratio", float("nan")),
                rep["degenerate"],
            )
        )
    return "sculpt.csv", ("j", "N", "dist_to_target", "tail_ratio", "degenerate"), rows, {
        "degenerate": plan.degenerate,
        "value_scale": plan.value_scale,
        "value_shift": plan.value_shift,
    }


def _run_plateau(cfg, seed):
    plan = _build_plan(cfg)
    rows = plateau_profile(plan, int(cfg["k"]), samples=int(cfg.get("samples", 8)))
    return "plateau.csv", ("n", "bl_to_Nk"), rows, {
        "max_bl": max(r[1] for r in rows)
    }


def _run_independence(cfg, seed):
    plan = _build_plan(cfg)
    k, j = int(cfg["k"]), int(cfg["j"])
    probe = independence_probe(plan, k, j)
    control = pair_probe(plan, k, int(cfg.get("control_shift", 1)))
    rows = [("probe", k, j, probe), ("control", k, k, control)]
    return "independence.csv", ("label", "k", "j", "value"), rows, {
        "probe": probe,
        "control": control,
    }


_RUNNERS = {
    "average": _run_average,
    "shells": _run_shells,
    "randomsets": _run_randomsets,
    "kakutani": _run_kakutani,
    "tower": _run_tower,
    "tower-zd": _run_tower_zd,
    "cover": _run_cover,
    "birkhoff": _run_birkhoff,
    "sculpt": _run_sculpt,
    "plateau": _run_plateau,
    "independence": _run_independence,
}


def run(kind, cfg, out_dir=".", seed_override=None):
    """Execute one experiment; returns (exit_code, report dict)."""
    import os

    cfg = dict(cfg)
    if seed_override is not None:
        cfg["seed"] = int(seed_override)
    diags = validate(kind, cfg)
    if diags:
        return 2, {
            "schema_version": SCHEMA_VERSION,
            "kind": kind,
            "error": "config validation failed",
            "diagnostics": diags,
        }
    seed = cfg.get("seed")
    t0 = time.perf_counter()
    try:
        csv_name, header, rows, summary = _RUNNERS[kind](cfg, seed)
    except Exception as e:  # infeasibility propagated from modules
        return 1, {
            "schema_version": SCHEMA_VERSION,
            "kind": kind,
            "config": cfg,
            "config_hash": _config_hash(cfg),
            "error": f"{type(e).__name__}: {e}",
        }
    elapsed = time.perf_counter() - t0
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, csv_name)
    _write_csv(csv_path, header, rows)
    report = {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "config": cfg,
        "config_hash": _config_hash(cfg),
        "seed": seed,
        "versions": {
            "package": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        "timing_seconds": round(elapsed, 6),
        "outputs": [csv_name],
        "summary": summary,
    }
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0, report


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="ergolab", description="run one reproducible experiment"
    )
    parser.add_argument("kind", choices=KINDS)
    parser.add_argument("--config", required=True, help="path to JSON config")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=".")
    args = parser.parse_args(argv)
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        print(json.dumps({"error": f"cannot read config: {e}"}), file=sys.stderr)
        return 2
    code, report = run(args.kind, cfg, out_dir=args.out, seed_override=args.seed)
    if code != 0:
        print(json.dumps(report, indent=2, sort_keys=True), file=sys.stderr)
    else:
        print(
            json.dumps(
                {"kind": args.kind, "summary": report["summary"]}, sort_keys=True
            )
        )
    return code


if __name__ == "__main__":
    sys.exit(main())
