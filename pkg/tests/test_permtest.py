import itertools
import math

import numpy as np
import pytest

from treegate.permtest import (
    Block,
    DegenerateBlockError,
    PermTestError,
    TestSpec,
    block_statistic,
    energy_scores,
    permutation_pvalue,
    total_assignments,
)


def make_block(outcome, treated_idx, block_id="b"):
    outcome = np.asarray(outcome, dtype=float)
    treatment = np.zeros(outcome.size, dtype=np.int8)
    treatment[list(treated_idx)] = 1
    return Block(block_id, treatment, outcome)


def null_blocks(rng, n_blocks=3, n=8, m=4):
    blocks = []
    for i in range(n_blocks):
        outcome = rng.normal(size=n)
        treated = rng.permutation(n)[:m]
        blocks.append(make_block(outcome, treated, f"b{i}"))
    return blocks


class TestEnergyScores:
    def test_reference_values(self):
        scores = energy_scores([1.0, 2.0, 3.0])
        unit1 = scores[0]
        assert unit1[1] == 1.0                      # rank
        assert unit1[2] == pytest.approx(1.5)       # mean |y_i - y_j|, j != i
        assert unit1[4] == pytest.approx(2.0)       # max distance
        assert unit1[5] == pytest.approx(0.76159, abs=1e-5)

    def test_constant_outcomes(self):
        scores = energy_scores([5.0, 5.0, 5.0])
        assert np.all(scores[:, 2] == 0.0)
        assert np.all(scores[:, 4] == 0.0)
        assert np.all(scores[:, 1] == 2.0)          # mean rank on ties

    def test_two_point_case(self):
        scores = energy_scores([0.0, 10.0])
        assert np.all(scores[:, 2] == 10.0)
        assert np.all(scores[:, 4] == 10.0)

    def test_too_small_rejected(self):
        with pytest.raises(PermTestError):
            energy_scores([1.0])

    def test_rank_columns_invariant_to_monotone_transform(self):
        rng = np.random.default_rng(2)
        y = rng.normal(size=9)
        warped = np.exp(y)
        base, stretched = energy_scores(y), energy_scores(warped)
        np.testing.assert_array_equal(base[:, 1], stretched[:, 1])
        np.testing.assert_allclose(base[:, 3], stretched[:, 3])


class TestBlockStatistic:
    def test_mean_diff_example(self):
        block = make_block([1.0, 2.0, 3.0, 4.0], [2, 3])
        spec = TestSpec(statistic="mean_diff")
        assert block_statistic([block], spec) == pytest.approx(2.0)

    def test_swapping_groups_negates(self):
        spec = TestSpec(statistic="mean_diff")
        block = make_block([1.0, 5.0, 2.0, 7.0], [0, 1])
        flipped = make_block([1.0, 5.0, 2.0, 7.0], [2, 3])
        assert block_statistic([block], spec) == pytest.approx(
            -block_statistic([flipped], spec)
        )

    def test_constant_outcomes_give_zero(self):
        spec = TestSpec(statistic="rank")
        block = make_block([3.0] * 6, [0, 1, 2])
        assert block_statistic([block], spec) == pytest.approx(0.0)

    def test_block_weighting(self):
        spec = TestSpec(statistic="mean_diff")
        big = make_block([0.0, 0.0, 2.0, 2.0, 0.0, 0.0, 2.0, 2.0], [2, 3, 6, 7], "big")
        small = make_block([0.0, 4.0], [1], "small")
        # weights 8/10 and 2/10 on within-block differences 2 and 4
        assert block_statistic([big, small], spec) == pytest.approx(
            0.8 * 2.0 + 0.2 * 4.0
        )

    def test_degenerate_block_rejected(self):
        block = Block("b", np.ones(4, dtype=np.int8), np.arange(4.0))
        with pytest.raises(DegenerateBlockError) as err:
            block_statistic([block], TestSpec(statistic="mean_diff"))
        assert err.value.block_ids == ["b"]

    def test_explicit_assignment_overrides_recorded_one(self):
        block = make_block([1.0, 2.0, 3.0, 4.0], [2, 3])
        spec = TestSpec(statistic="mean_diff")
        swapped = {"b": np.array([1, 1, 0, 0], dtype=np.int8)}
        assert block_statistic([block], spec, assignment=swapped) == pytest.approx(-2.0)

    def test_energy_statistic_is_six_vector(self):
        block = make_block([0.4, 1.2, -0.3, 2.0, 0.9, -1.1], [0, 2, 4])
        stat = block_statistic([block], TestSpec(statistic="energy"))
        assert stat.shape == (6,)


class TestExactMode:
    def test_strict_maximum_has_smallest_grid_pvalue(self):
        block = make_block([1.0, 2.0, 3.0, 4.0], [2, 3])
        spec = TestSpec(statistic="mean_diff", sides="one")
        assert permutation_pvalue([block], spec) == pytest.approx(1 / 6)

    def test_constant_outcomes_give_one(self):
        block = make_block([2.0] * 4, [0, 1])
        for stat in ("mean_diff", "rank", "energy"):
            spec = TestSpec(statistic=stat)
            assert permutation_pvalue([block], spec) == 1.0

    @pytest.mark.parametrize("stat", ["mean_diff", "rank", "energy"])
    def test_pvalues_on_exact_grid(self, stat):
        rng = np.random.default_rng(7)
        blocks = [
            make_block(rng.normal(size=6), [0, 1, 2], "b0"),
            make_block(rng.normal(size=4), [0, 1], "b1"),
        ]
        M = total_assignments(blocks)
        assert M == math.comb(6, 3) * math.comb(4, 2)
        spec = TestSpec(statistic=stat)
        p = permutation_pvalue(blocks, spec)
        j = p * M
        assert j == pytest.approx(round(j), abs=1e-9)
        assert 1 <= round(j) <= M

    def test_exact_matches_brute_force(self):
        block = make_block([0.3, 1.9, -0.4, 2.2, 0.1], [1, 3])
        spec = TestSpec(statistic="mean_diff", sides="two")
        outcome = block.outcome
        obs = outcome[[1, 3]].mean() - outcome[[0, 2, 4]].mean()
        stats = []
        for combo in itertools.combinations(range(5), 2):
            rest = [i for i in range(5) if i not in combo]
            stats.append(outcome[list(combo)].mean() - outcome[rest].mean())
        expected = np.mean(np.abs(stats) >= abs(obs) - 1e-12)
        assert permutation_pvalue([block], spec) == pytest.approx(expected)

    def test_forced_exact_above_cap_rejected(self):
        rng = np.random.default_rng(0)
        blocks = [make_block(rng.normal(size=20), range(10), f"b{i}") for i in range(3)]
        spec = TestSpec(statistic="mean_diff", exact=True, exact_cap=1000)
        with pytest.raises(PermTestError, match="cap"):
            permutation_pvalue(blocks, spec)

    def test_rank_pvalue_invariant_to_monotone_transform(self):
        rng = np.random.default_rng(3)
        outcome = rng.normal(size=7)
        block = make_block(outcome, [0, 2, 5])
        warped = make_block(np.exp(outcome) + outcome ** 3, [0, 2, 5])
        spec = TestSpec(statistic="rank")
        assert permutation_pvalue([block], spec) == permutation_pvalue([warped], spec)


class TestMonteCarloMode:
    def test_fixed_seed_reproducible(self):
        rng = np.random.default_rng(11)
        blocks = null_blocks(rng, n_blocks=4, n=12, m=6)
        spec = TestSpec(statistic="rank", n_perms=250, exact=False, seed=42)
        p1 = permutation_pvalue(blocks, spec, stream_key="nodeX")
        p2 = permutation_pvalue(blocks, spec, stream_key="nodeX")
        assert p1 == p2
        p3 = permutation_pvalue(blocks, spec, stream_key="nodeY")
        assert p3 != p1  # different stream, almost surely different draw

    def test_addone_estimator_range(self):
        rng = np.random.default_rng(5)
        blocks = null_blocks(rng)
        spec = TestSpec(statistic="mean_diff", n_perms=199, exact=False, seed=1)
        p = permutation_pvalue(blocks, spec)
        assert 1 / 200 <= p <= 1.0

    def test_min_perms_enforced(self):
        with pytest.raises(PermTestError):
            TestSpec(statistic="rank", n_perms=50)

    @pytest.mark.parametrize("stat", ["mean_diff", "rank", "energy"])
    def test_subuniform_under_sham_treatment(self, stat):
        # quick version of the validity check; the acceptance suite runs the
        # full 2000-replicate version
        replicates = 400
        hits = {0.01: 0, 0.05: 0, 0.1: 0}
        spec = TestSpec(statistic=stat, n_perms=199, exact=False, seed=0)
        for rep in range(replicates):
            rng = np.random.default_rng(np.random.SeedSequence([101, rep]))
            blocks = null_blocks(rng, n_blocks=2, n=8, m=3)
            p = permutation_pvalue(blocks, spec, stream_key=f"rep{rep}")
            for a in hits:
                hits[a] += p <= a
        for a, count in hits.items():
            se = math.sqrt(a * (1 - a) / replicates)
            assert count / replicates <= a + 3 * se


class TestEnergyPvalue:
    def test_energy_detects_scale_shift_two_sided(self):
        rng = np.random.default_rng(21)
        n = 40
        outcome = np.concatenate([rng.normal(0, 0.3, n // 2), rng.normal(0, 3.0, n // 2)])
        treated = range(n // 2, n)
        block = make_block(outcome, treated)
        spec = TestSpec(statistic="energy", n_perms=400, exact=False, seed=9)
        assert permutation_pvalue([block], spec) < 0.05

    def test_chi2_approximation_close_to_resampled(self):
        rng = np.random.default_rng(13)
        blocks = null_blocks(rng, n_blocks=3, n=20, m=10)
        mc = TestSpec(statistic="energy", n_perms=2000, exact=False, seed=4)
        approx = TestSpec(
            statistic="energy", n_perms=2000, exact=False, seed=4, chi2_approx=True
        )
        p_mc = permutation_pvalue(blocks, mc, stream_key="n")
        p_chi = permutation_pvalue(blocks, approx, stream_key="n")
        assert abs(p_mc - p_chi) < 0.12

    def test_rank_deficiency_handled(self):
        # two outcome values make several scores perfectly collinear
        block = make_block([0.0, 0.0, 1.0, 1.0, 0.0, 1.0], [0, 2, 4])
        spec = TestSpec(statistic="energy")
        p = permutation_pvalue([block], spec)
        assert 0.0 < p <= 1.0


def test_spec_validation():
    with pytest.raises(PermTestError):
        TestSpec(statistic="median")
    with pytest.raises(PermTestError):
        TestSpec(sides="three")


def test_power_at_reference_design_point():
    # mean-shift detection rate near the classical two-sample t benchmark
    replicates = 300
    hits = 0
    spec = TestSpec(statistic="mean_diff", n_perms=199, exact=False, seed=0)
    for rep in range(replicates):
        rng = np.random.default_rng(np.random.SeedSequence([77, rep]))
        outcome = rng.normal(size=50)
        treated = rng.permutation(50)[:25]
        outcome[treated] += 0.8
        block = make_block(outcome, treated)
        hits += permutation_pvalue([block], spec, stream_key=str(rep)) <= 0.05
    assert hits / replicates == pytest.approx(0.79, abs=0.08)
