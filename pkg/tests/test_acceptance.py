"""End-to-end acceptance suite.

Each test class pins one advertised guarantee of the package at desk
scale: exactness of full-cycle averages, the commutator bound, mean
ergodic decay against golden files, tower constructions, the covering
constant, the heavy-set experiments, sculptor fidelity with plateau and
independence diagnostics, distribution metric axioms, and CLI
determinism.
"""

import json

import numpy as np
import pytest

from ergolab.averaging import (
    apply_operator,
    commutator_defect,
    convergence_sweep,
    cube_operator,
    lp_norm,
)
from ergolab.cli import run
from ergolab.covering import (
    birkhoff_contradiction_experiment,
    greedy_cube_selection,
    max_disjoint_fraction,
    random_cover_instance,
)
from ergolab.distributions import (
    EmpiricalDistribution,
    bl_distance,
    w1_distance,
)
from ergolab.sculptor import plateau_profile, sculpt
from ergolab.space import AtomSet, FiniteSystem, integrate
from ergolab.towers import (
    build_tower_zd,
    kakutani_partition,
    kakutani_verify,
    rokhlin_tower_1d,
)

from conftest import load_golden, zero_mean

M_BIG = 10**6

SCULPT_TARGETS = {
    "rademacher": (
        EmpiricalDistribution.from_atoms([-1.0, 1.0], [0.5, 0.5]),
        {"heights": [25, 6250, 499968], "counts": 2},
    ),
    "uniform": (
        EmpiricalDistribution.from_atoms(
            -1.0 + 2.0 * (np.arange(2000) + 0.5) / 2000, np.full(2000, 1 / 2000)
        ),
        {"heights": [5, 500, 62496], "counts": 16},
    ),
    "three_point": (
        EmpiricalDistribution.from_atoms([-1.0, 0.0, 2.0], [0.5, 0.3, 0.2]),
        {"heights": [10, 1000, 99990], "counts": 10},
    ),
}


def _sculpt_plan(name):
    target, cfg = SCULPT_TARGETS[name]
    plan_cfg = dict(cfg)
    plan_cfg.update({"decay_ratio": 0.0078125, "plateau_safety": 0.2})
    return sculpt(FiniteSystem.cycle(M_BIG), target, 3, plan_cfg)


@pytest.fixture(scope="module")
def rademacher_plan():
    return _sculpt_plan("rademacher")


@pytest.fixture(scope="module")
def birkhoff_rows():
    s = FiniteSystem.cycle(M_BIG)
    f = zero_mean(s, 7)
    return birkhoff_contradiction_experiment(s, f, 0.1, [10, 100, 1000, 10000])


class TestFullCycleExactness:
    @pytest.mark.parametrize("M", [10**3, 10**5])
    def test_full_average_is_integral(self, M):
        s = FiniteSystem.cycle(M)
        P = cube_operator(M, 1)
        rng = np.random.default_rng(100 + M)
        for _ in range(100):
            f = rng.standard_normal(M)
            out = apply_operator(P, s, f)
            assert np.max(np.abs(out - integrate(s, f))) <= 1e-10


class TestCommutatorBound:
    def test_two_over_n(self):
        s = FiniteSystem.cycle(2**16)
        rng = np.random.default_rng(2)
        for N in (4, 16, 64, 256, 1024):
            P = cube_operator(N, 1)
            for _ in range(20):
                f = rng.standard_normal(2**16)
                defect = commutator_defect(P, [1], s, f)
                assert defect <= (2 / N) * lp_norm(s, f, 2) + 1e-10


class TestMeanErgodicDecay:
    @pytest.mark.parametrize("name", ["cycle", "torus"])
    def test_golden_locked_decay(self, name):
        golden = load_golden("mean_ergodic_decay.json")[name]
        if name == "cycle":
            system = FiniteSystem.cycle(2**16)
        else:
            system = FiniteSystem.torus((128, 127))
        f = zero_mean(system, 42)
        rows = convergence_sweep(system, f, golden["N"])
        l2 = [r[2] for r in rows]
        assert all(a > b for a, b in zip(l2, l2[1:]))
        assert l2[-1] <= 0.05 * lp_norm(system, f, 2)
        assert np.allclose(l2, golden["l2"], rtol=1e-9)


class TestKakutaniExact:
    def test_fifty_random_instances(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            M = int(rng.integers(20, 2000))
            s = FiniteSystem.cycle(M)
            size = int(rng.integers(1, max(2, M // 4)))
            D_atoms = np.sort(rng.choice(M, size=size, replace=False))
            part = kakutani_partition(s, AtomSet.from_indices(s, D_atoms))
            kakutani_verify(part)
            # brute-force first-return oracle
            in_D = np.zeros(M, dtype=bool)
            in_D[D_atoms] = True
            heights = {}
            for x in D_atoms:
                y, h = (x + 1) % M, 1
                while not in_D[y]:
                    y, h = (y + 1) % M, h + 1
                heights.setdefault(h, []).append(int(x))
            assert sorted(heights) == part.heights()
            for h, atoms in heights.items():
                assert sorted(atoms) == sorted(part.columns[h].members.tolist())


class TestRokhlinTower:
    @pytest.mark.parametrize("n,eps", [(37, 0.01), (1000, 0.001)])
    def test_residual_below_eps(self, n, eps):
        s = FiniteSystem.cycle(M_BIG)
        t = rokhlin_tower_1d(s, n, eps)
        t.verify_disjoint()
        assert t.residual().measure < eps


class TestZdTower:
    def test_torus_101x103(self):
        t, trace = build_tower_zd(FiniteSystem.torus((101, 103)), 4, 0.1)
        assert t.measure() > 0.9
        t.verify_disjoint()

    def test_d1_consistency(self):
        s = FiniteSystem.cycle(10**5)
        exact = rokhlin_tower_1d(s, 7, 0.05)
        built, _ = build_tower_zd(s, 7, 0.05)
        assert built.measure() > 0.95
        assert built.measure() >= exact.measure() - 0.05


class TestCoveringConstant:
    def test_d1_floor(self):
        for seed in range(100):
            rng = np.random.default_rng(1000 + seed)
            side = int(rng.integers(4, 65))
            cands = random_cover_instance((side,), rng)
            res = greedy_cube_selection((side,), cands)
            assert res.fraction >= 1 / 3 - 1e-12

    def test_d2_floor_and_oracle(self):
        for seed in range(100):
            rng = np.random.default_rng(2000 + seed)
            cands = random_cover_instance((6, 6), rng)
            res = greedy_cube_selection((6, 6), cands)
            assert res.fraction >= 1 / 9 - 1e-12
            oracle = max_disjoint_fraction((6, 6), cands)
            assert res.fraction >= oracle / 9 - 1e-12


class TestHeavySetMean:
    def test_nonempty_means_exceed_threshold(self, birkhoff_rows):
        for row in birkhoff_rows:
            if row["mu_Y"] > 0:
                assert row["normalized_integral"] > 0.1


class TestBirkhoffTension:
    def test_almost_invariance_dies_out(self, birkhoff_rows):
        sym = [r["sym_diff_gen1"] for r in birkhoff_rows]
        assert all(a >= b for a, b in zip(sym, sym[1:]))
        assert sym[-1] <= 0.1 * max(sym)

    def test_mu_trend_golden(self, birkhoff_rows):
        golden = load_golden("birkhoff_trend.json")
        mu = [r["mu_Y"] for r in birkhoff_rows]
        assert np.allclose(mu, golden["mu_Y"], atol=1e-12)
        assert all(a >= b for a, b in zip(mu, mu[1:]))


class TestSculptorFidelity:
    @pytest.mark.parametrize("name", sorted(SCULPT_TARGETS))
    def test_three_stage_distances(self, name, rademacher_plan):
        plan = rademacher_plan if name == "rademacher" else _sculpt_plan(name)
        assert not plan.degenerate
        assert len(plan.stage_reports) == 3
        for row in plan.stage_reports:
            assert row["dist_to_target"] <= 0.05
            assert row["tail_ratio"] <= 0.01


class TestPlateau:
    def test_stage2_plateau_flat(self, rademacher_plan):
        st = rademacher_plan.stages[1]
        assert st.R == 10 * st.N
        rows = plateau_profile(rademacher_plan, 2, samples=8)
        assert max(v for _, v in rows) <= 0.1


class TestDistributionMetricAxioms:
    @staticmethod
    def _random_law(rng):
        k = int(rng.integers(1, 8))
        v = rng.standard_normal(k) * rng.uniform(0.1, 3)
        m = rng.random(k) + 0.05
        return EmpiricalDistribution.from_atoms(v, m / m.sum())

    @pytest.mark.parametrize("dist", [bl_distance, w1_distance])
    def test_metric_axioms(self, dist):
        rng = np.random.default_rng(12)
        for _ in range(100):
            a, b, c = (self._random_law(rng) for _ in range(3))
            assert dist(a, a) <= 1e-12
            assert dist(a, b) == pytest.approx(dist(b, a), abs=1e-9)
            assert dist(a, c) <= dist(a, b) + dist(b, c) + 1e-9

    def test_bl_dominated(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            a, b = self._random_law(rng), self._random_law(rng)
            assert bl_distance(a, b) <= min(2.0, w1_distance(a, b)) + 1e-12


class TestCliDeterminism:
    CASES = [
        (
            "average",
            {"system": {"backend": "cycle", "dims": [4096]}, "N_list": [4, 64], "seed": 5},
        ),
        (
            "shells",
            {
                "system": {"backend": "torus", "dims": [12, 12, 12]},
                "j_list": [1, 2],
                "c": 1.5,
                "seed": 5,
            },
        ),
        (
            "randomsets",
            {
                "system": {"backend": "torus", "dims": [12, 12, 12]},
                "j_list": [2, 4],
                "seed": 5,
            },
        ),
        (
            "kakutani",
            {"system": {"backend": "cycle", "dims": [500]}, "base_size": 17, "seed": 5},
        ),
        ("tower", {"system": {"backend": "cycle", "dims": [500]}, "n": 7, "eps": 0.1}),
        (
            "tower-zd",
            {"system": {"backend": "torus", "dims": [21, 22]}, "N": 3, "eps": 0.3},
        ),
        ("cover", {"instances": 10, "d": 2, "window": 6, "seed": 5}),
        (
            "birkhoff",
            {
                "system": {"backend": "cycle", "dims": [20000]},
                "s": 0.1,
                "N_list": [5, 50],
                "seed": 5,
            },
        ),
    ]

    @pytest.mark.parametrize("kind,cfg", CASES, ids=[k for k, _ in CASES])
    def test_byte_identical_reruns(self, kind, cfg, tmp_path):
        code1, r1 = run(kind, cfg, out_dir=str(tmp_path / "a"))
        code2, r2 = run(kind, cfg, out_dir=str(tmp_path / "b"))
        assert code1 == code2 == 0
        assert r1["outputs"] == r2["outputs"]
        for name in r1["outputs"]:
            a = (tmp_path / "a" / name).read_bytes()
            b = (tmp_path / "b" / name).read_bytes()
            assert a == b

    def test_sculpt_pipeline_determinism(self, tmp_path):
        import os

        demo = os.path.join(os.path.dirname(__file__), "..", "configs", "sculpt_demo.json")
        with open(demo) as fh:
            cfg = json.load(fh)
        run("sculpt", cfg, out_dir=str(tmp_path / "a"))
        run("sculpt", cfg, out_dir=str(tmp_path / "b"))
        a = (tmp_path / "a" / "sculpt.csv").read_bytes()
        assert a == (tmp_path / "b" / "sculpt.csv").read_bytes()
