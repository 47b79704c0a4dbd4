import numpy as np
import pytest

from ergolab.covering import (
    CoveringError,
    birkhoff_contradiction_experiment,
    build_Y_N,
    candidate_start_mask,
    first_passage,
    greedy_cube_selection,
    greedy_heavy_partition_1d,
    almost_invariance_profile,
    heavy_scale_coverage,
    max_disjoint_fraction,
    random_cover_instance,
)
from ergolab.space import AtomSet, FiniteSystem, integrate
from ergolab.towers import rokhlin_tower_1d

from conftest import zero_mean


class TestFirstPassage:
    def test_immediate_hit(self):
        s = FiniteSystem.cycle(5)
        f = np.array([0.0, 1.0, 0.0, 0.0, 0.0])
        assert first_passage(s, f, 0, 0.5, 4) == 1

    def test_zero_function_none(self):
        s = FiniteSystem.cycle(5)
        assert first_passage(s, np.zeros(5), 0, 0.1, 4) is None

    def test_z8_hand_prefix_sums(self):
        s = FiniteSystem.cycle(8)
        f = np.array([0.0, -1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        # P_1 f(0) = f(1) = -1; P_2 f(0) = (-1 + 2)/2 = 0.5 > 0.4
        assert first_passage(s, f, 0, 0.4, 8) == 2

    def test_torus_2d(self):
        t = FiniteSystem.torus((6, 6))
        f = np.zeros(36)
        f[t.apply([1, 1], 0)] = 5.0
        assert first_passage(t, f, 0, 1.0, 4) == 1

    def test_naive_oracle_random(self):
        rng = np.random.default_rng(17)
        s = FiniteSystem.cycle(200)
        for _ in range(300):
            f = rng.standard_normal(200)
            x = int(rng.integers(0, 200))
            thr = float(rng.uniform(0.0, 1.0))
            L_cap = int(rng.integers(1, 40))
            got = first_passage(s, f, x, thr, L_cap)
            expect = None
            for L in range(1, L_cap + 1):
                avg = np.mean([f[(x + i) % 200] for i in range(1, L + 1)])
                if avg > thr:
                    expect = L
                    break
            assert got == expect


class TestGreedy1d:
    def test_no_heavy_points(self):
        res = greedy_heavy_partition_1d(np.zeros(10), 0.5, 4)
        assert res.selected == []
        assert res.fraction == 0.0

    def test_everything_heavy(self):
        res = greedy_heavy_partition_1d(np.full(10, 2.0), 0.5, 4)
        assert res.fraction == pytest.approx(0.9)  # blocks start at position 1
        assert all(L == 1 for _, L in res.selected)

    def test_hand_traced_selection(self):
        v = np.zeros(20)
        v[4] = 2.0  # makes the walk from 2 first-passage at length 3
        v[9] = 0.4
        v[10] = 1.0  # with v[9] gives first-passage 2 from 9
        res = greedy_heavy_partition_1d(v, 0.5, 5)
        assert res.selected == [(2, 3), (9, 2)]

    def test_blocks_disjoint_and_heavy(self):
        rng = np.random.default_rng(5)
        v = rng.standard_normal(500)
        thr = 0.3
        res = greedy_heavy_partition_1d(v, thr, 20, L_min=3)
        seen = np.zeros(500, dtype=bool)
        for w, L in res.selected:
            assert 3 <= L <= 20
            assert not seen[w : w + L].any()
            seen[w : w + L] = True
            assert v[w : w + L].mean() > thr

    def test_matches_naive_greedy(self):
        rng = np.random.default_rng(23)
        for _ in range(100):
            H = int(rng.integers(5, 60))
            v = rng.standard_normal(H)
            thr = float(rng.uniform(-0.2, 0.6))
            L_cap = int(rng.integers(1, 12))
            L_min = int(rng.integers(1, L_cap + 1))
            res = greedy_heavy_partition_1d(v, thr, L_cap, L_min=L_min)
            # naive walk: leftmost start whose first-passage lies in range
            blocks = []
            i = 1
            while i < H:
                cs0 = 0.0
                L_found = None
                for L in range(1, min(L_cap, H - i) + 1):
                    cs0 += v[i + L - 1] - thr
                    if cs0 > 0:
                        L_found = L
                        break
                if L_found is not None and L_found >= L_min:
                    blocks.append((i, L_found))
                    i += L_found
                else:
                    i += 1
            assert res.selected == blocks

    def test_empty_window_rejected(self):
        with pytest.raises(CoveringError):
            greedy_heavy_partition_1d(np.array([]), 0.5, 2)


class TestCubeSelection:
    def test_single_covering_candidate(self):
        res = greedy_cube_selection((4, 4), [((0, 0), 4)])
        assert res.fraction == 1.0

    def test_d1_tiling(self):
        cands = [((i,), 2) for i in range(10)]
        res = greedy_cube_selection((10,), cands)
        assert res.selected == [((i,), 2) for i in range(0, 10, 2)]
        assert res.fraction == 1.0

    def test_overflow_discarded(self):
        res = greedy_cube_selection((4,), [((3,), 2), ((0,), 2)])
        assert res.selected == [((0,), 2)]

    def test_disjointness(self):
        rng = np.random.default_rng(9)
        cands = random_cover_instance((8, 8), rng)
        res = greedy_cube_selection((8, 8), cands)
        grid = np.zeros((8, 8), dtype=int)
        for (a, b), L in res.selected:
            grid[a : a + L, b : b + L] += 1
        assert grid.max() <= 1

    def test_vitali_floor_on_covering_instances(self):
        floor = 1 / 9  # 3^{-d}, d = 2
        for seed in range(50):
            rng = np.random.default_rng(seed)
            cands = random_cover_instance((6, 6), rng)
            res = greedy_cube_selection((6, 6), cands)
            assert res.fraction >= floor - 1e-12
            oracle = max_disjoint_fraction((6, 6), cands)
            assert res.fraction >= oracle / 9 - 1e-12

    def test_oracle_refuses_large_windows(self):
        with pytest.raises(CoveringError):
            max_disjoint_fraction((9, 9), [])

    def test_oracle_simple_exact(self):
        # two overlapping 2-cubes plus singles: best is one 2-cube + 2 cells
        cands = [((0,), 2), ((1,), 2), ((3,), 1), ((0,), 1)]
        assert max_disjoint_fraction((4,), cands) == pytest.approx(1.0)


class TestBuildYN:
    def test_constant_above_threshold(self):
        s = FiniteSystem.cycle(1000)
        tower = rokhlin_tower_1d(s, 100, 0.5)
        f = np.full(1000, 1.0)
        Y, report = build_Y_N(s, f, 0.5, 10, tower, L_min=1)
        assert report["mu_Y"] > 0.9
        assert report["mean_on_Y"] == pytest.approx(1.0)

    def test_no_heavy_points_empty(self):
        s = FiniteSystem.cycle(1000)
        tower = rokhlin_tower_1d(s, 100, 0.5)
        Y, report = build_Y_N(s, np.zeros(1000), 0.5, 10, tower)
        assert len(Y) == 0
        assert report["mu_Y"] == 0.0

    def test_mean_property_random(self):
        s = FiniteSystem.cycle(10**5)
        f = zero_mean(s, 77)
        tower = rokhlin_tower_1d(s, 1000, 0.5)
        thr = 0.2
        Y, report = build_Y_N(s, f, thr, 50, tower)
        assert len(Y) > 0
        assert integrate(s, f, Y) > thr * Y.measure

    def test_d2_rejected(self):
        t = FiniteSystem.torus((8, 8))
        from ergolab.towers import tower_exists

        tower = tower_exists(t, 2)
        with pytest.raises(CoveringError):
            build_Y_N(t, np.zeros(64), 0.1, 2, tower)


class TestAlmostInvariance:
    def test_full_space_zero(self):
        s = FiniteSystem.cycle(50)
        rows = almost_invariance_profile(s, AtomSet.full(s), [[1], [7]])
        assert all(v == 0.0 for _, v in rows)

    def test_empty_zero(self):
        s = FiniteSystem.cycle(50)
        rows = almost_invariance_profile(s, AtomSet.empty(s), [[1]])
        assert rows[0][1] == 0.0

    def test_interval_boundary(self):
        s = FiniteSystem.cycle(100)
        Y = AtomSet.from_indices(s, range(50))
        rows = almost_invariance_profile(s, Y, [[1]])
        assert rows[0][1] == pytest.approx(2 / 100, abs=1e-12)


class TestHeavyScaleCoverage:
    def test_constant_full_coverage(self):
        s = FiniteSystem.cycle(100)
        assert heavy_scale_coverage(s, np.ones(100), 0.5, 5) == 1.0

    def test_zero_no_coverage(self):
        s = FiniteSystem.cycle(100)
        assert heavy_scale_coverage(s, np.zeros(100), 0.5, 5) == 0.0


class TestBirkhoffExperiment:
    def test_zero_function_all_empty(self):
        s = FiniteSystem.cycle(2000)
        rows = birkhoff_contradiction_experiment(s, np.zeros(2000), 0.1, [5, 10])
        assert all(r["mu_Y"] == 0.0 for r in rows)

    def test_empty_schedule(self):
        s = FiniteSystem.cycle(2000)
        assert birkhoff_contradiction_experiment(s, np.zeros(2000), 0.1, []) == []

    def test_nonzero_mean_rejected(self):
        s = FiniteSystem.cycle(100)
        with pytest.raises(CoveringError):
            birkhoff_contradiction_experiment(s, np.ones(100), 0.1, [5])

    def test_heavy_mean_and_sym_diff_bound(self):
        s = FiniteSystem.cycle(20000)
        f = zero_mean(s, 3)
        rows = birkhoff_contradiction_experiment(s, f, 0.1, [10, 100])
        for r in rows:
            if r["mu_Y"] > 0:
                assert r["normalized_integral"] > 0.1
                # boundary bound: two boundary atoms per block
                assert r["sym_diff_gen1"] <= 2 * r["blocks"] / 20000 + 1e-12
