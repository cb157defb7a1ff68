import itertools
import math

import numpy as np
import pytest

from biobo import (
    ContingencyTable,
    EnrichmentRow,
    GenePool,
    PathwayDB,
    bonferroni,
    build_prior,
    combined_score,
    hypergeom_p,
    odds_ratio,
    run_enrichment,
    top_fraction,
)
from biobo.genepool import PoolState


def enumerate_tail(universe: int, pathway_size: int, sample_size: int, overlap: int) -> float:
    """Exhaustive oracle: fraction of size-|S| subsets with >= overlap hits."""
    marked = set(range(pathway_size))
    hits = total = 0
    for subset in itertools.combinations(range(universe), sample_size):
        total += 1
        if len(marked.intersection(subset)) >= overlap:
            hits += 1
    return hits / total


class TestHypergeomP:
    def test_tail_from_zero_is_one(self):
        assert hypergeom_p(10, 4, 5, 0) == 1.0

    def test_known_tail_three_of_four(self):
        # enumeration: 66 of the 252 subsets have >= 3 hits
        assert enumerate_tail(10, 4, 5, 3) == 66 / 252
        assert hypergeom_p(10, 4, 5, 3) == pytest.approx(66 / 252, abs=1e-12)

    def test_known_tail_complete_overlap(self):
        assert enumerate_tail(5, 2, 2, 2) == 1 / 10
        assert hypergeom_p(5, 2, 2, 2) == pytest.approx(0.1, abs=1e-12)

    def test_matches_enumeration_small_universes(self):
        for g in range(1, 10):
            for p_size in range(0, g + 1):
                for s_size in range(0, g + 1):
                    for a in range(0, min(p_size, s_size) + 1):
                        expected = enumerate_tail(g, p_size, s_size, a)
                        assert hypergeom_p(g, p_size, s_size, a) == pytest.approx(
                            expected, abs=1e-12
                        ), (g, p_size, s_size, a)

    def test_monotone_in_overlap(self):
        values = [hypergeom_p(40, 12, 15, a) for a in range(0, 13)]
        assert all(x >= y for x, y in zip(values, values[1:]))

    def test_matches_scipy_at_scale(self):
        # enumeration is infeasible here; scipy's survival function is an
        # independent second route
        from scipy.stats import hypergeom as scipy_hypergeom

        rng = np.random.default_rng(8)
        for _ in range(50):
            g = int(rng.integers(100, 20_000))
            p_size = int(rng.integers(1, g + 1))
            s_size = int(rng.integers(1, g + 1))
            a = int(rng.integers(0, min(p_size, s_size) + 1))
            expected = float(scipy_hypergeom.sf(a - 1, g, p_size, s_size))
            got = hypergeom_p(g, p_size, s_size, a)
            assert got == pytest.approx(min(max(expected, 5e-324), 1.0), rel=1e-9, abs=1e-300)

    def test_stable_in_deep_tail(self):
        # genome-scale universe with an extreme overlap: the log-space sum
        # must stay finite and inside (0, 1]
        p = hypergeom_p(20_000, 200, 2_000, 190)
        assert 0.0 < p <= 1.0
        assert p < 1e-100

    @pytest.mark.parametrize(
        "args",
        [(10, 11, 5, 0), (10, 4, 11, 0), (10, 4, 5, 5), (10, 4, 5, -1), (0, 0, 0, 0)],
    )
    def test_bounds(self, args):
        with pytest.raises(ValueError):
            hypergeom_p(*args)


class TestOddsRatio:
    def test_plain(self):
        assert odds_ratio(ContingencyTable(3, 2, 1, 4)) == pytest.approx(6.0)

    def test_symmetric_table(self):
        assert odds_ratio(ContingencyTable(2, 2, 2, 2)) == pytest.approx(1.0)

    def test_haldane_anscombe_on_zero_cell(self):
        # (2.5 * 5.5) / (0.5 * 1.5) = 55/3
        assert odds_ratio(ContingencyTable(2, 0, 1, 5)) == pytest.approx(55 / 3)

    def test_negative_cell_rejected(self):
        with pytest.raises(ValueError):
            ContingencyTable(1, -1, 2, 2)


class TestBonferroni:
    def test_single(self):
        assert bonferroni([0.01]) == [0.01]

    def test_pair(self):
        assert bonferroni([0.01, 0.2]) == [0.02, 0.4]

    def test_clamped(self):
        assert bonferroni([0.6, 0.7]) == [1.0, 1.0]

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            bonferroni([0.0])


class TestCombinedScore:
    def test_hand_value(self):
        p = 66 / 252
        assert combined_score(6.0, p) == pytest.approx(-6.0 * math.log(p), abs=1e-12)
        assert combined_score(6.0, p) == pytest.approx(8.0386, abs=1e-3)

    def test_p_one_gives_zero(self):
        assert combined_score(123.0, 1.0) == 0.0

    def test_zero_odds_gives_zero(self):
        assert combined_score(0.0, 0.01) == 0.0

    def test_monotone(self):
        assert combined_score(3.0, 0.01) > combined_score(2.0, 0.01)
        assert combined_score(2.0, 0.001) > combined_score(2.0, 0.01)


def _uniform_pool(n: int) -> GenePool:
    ids = tuple(f"g{i:03d}" for i in range(n))
    return GenePool(ids, {}, {g: 0.0 for g in ids})


class TestRunEnrichment:
    def test_self_pathway(self):
        pool = _uniform_pool(20)
        sample = set(pool.ids[:4])
        db = PathwayDB({"self": sample})
        rows = run_enrichment(sample, pool, db)
        assert len(rows) == 1
        row = rows[0]
        assert row.overlap == 4 and row.pathway_size == 4
        assert row.p_value == pytest.approx(1.0 / math.comb(20, 4), rel=1e-12)

    def test_disjoint_pathway_skipped_and_uncounted(self):
        pool = _uniform_pool(20)
        sample = set(pool.ids[:4])
        db = PathwayDB({"hit": sample, "miss": set(pool.ids[10:14])})
        rows = run_enrichment(sample, pool, db)
        assert [r.pathway for r in rows] == ["hit"]
        # Bonferroni m counts only the tested pathway, so p_adjusted == p_value
        assert rows[0].p_adjusted == rows[0].p_value

    def test_tie_ordered_by_name(self):
        pool = _uniform_pool(20)
        sample = set(pool.ids[:4])
        half_a = set(pool.ids[:2]) | set(pool.ids[10:12])
        half_b = set(pool.ids[2:4]) | set(pool.ids[12:14])
        rows = run_enrichment(sample, pool, PathwayDB({"zzz": half_a, "aaa": half_b}))
        assert rows[0].combined_score == rows[1].combined_score
        assert [r.pathway for r in rows] == ["aaa", "zzz"]

    def test_empty_sample(self):
        pool = _uniform_pool(10)
        with pytest.raises(ValueError):
            run_enrichment(set(), pool, PathwayDB({}))


class TestTopFraction:
    def _state(self, values: dict) -> PoolState:
        return PoolState(labeled=dict(values), unlabeled=[], cycle=0)

    def test_ceiling_of_twenty(self):
        state = self._state({f"g{i:02d}": float(i) for i in range(20)})
        top = top_fraction(state, 0.1)
        assert top == {"g19", "g18"}

    def test_ceiling_of_five(self):
        state = self._state({f"g{i}": float(i) for i in range(5)})
        assert top_fraction(state, 0.1) == {"g4"}

    def test_tie_prefers_smaller_id(self):
        state = self._state({"a": 1.0, "b": 1.0, "c": 0.0})
        assert top_fraction(state, 1 / 3) == {"a"}

    def test_no_labels(self):
        with pytest.raises(ValueError):
            top_fraction(self._state({}), 0.1)

    def test_fraction_bounds(self):
        with pytest.raises(ValueError):
            top_fraction(self._state({"a": 1.0}), 0.0)


def _row(name: str, c: float, p_adjusted: float | None = None, p: float = 0.001) -> EnrichmentRow:
    """Build a consistent row whose combined score is (floating-point) c."""
    odds = c / -math.log(p)
    return EnrichmentRow(
        pathway=name,
        overlap=1,
        pathway_size=2,
        p_value=p,
        p_adjusted=p_adjusted if p_adjusted is not None else p,
        odds_ratio=odds,
        combined_score=-odds * math.log(p),
    )


class TestBuildPrior:
    def _state(self, unlabeled, labeled=("x",)):
        return PoolState(
            labeled={g: 1.0 for g in labeled}, unlabeled=list(unlabeled), cycle=1
        )

    def test_uniform_fallback_exact(self):
        state = self._state(["a", "b", "c", "d"])
        prior = build_prior(state, [], PathwayDB({}), temperature=0.1, agg="mean")
        np.testing.assert_array_equal(prior.prob, [0.25, 0.25, 0.25, 0.25])

    def test_insignificant_rows_fall_back_to_uniform(self):
        state = self._state(["a", "b"])
        rows = [_row("p", 2.0, p_adjusted=0.5)]
        prior = build_prior(state, rows, PathwayDB({"p": {"b"}}), 0.1, "mean")
        np.testing.assert_array_equal(prior.prob, [0.5, 0.5])

    def test_two_candidate_softmax(self):
        # member gene is 1/t * c = 20 score units above the non-member
        state = self._state(["a", "b"])
        rows = [_row("p", 2.0, p_adjusted=0.01)]
        prior = build_prior(state, rows, PathwayDB({"p": {"b"}}), temperature=0.1, agg="mean")
        s_a, s_b = prior.score
        assert s_a == pytest.approx(0.0, abs=1e-12)  # logit(1/2)
        assert s_b - s_a == pytest.approx(rows[0].combined_score / 0.1, rel=1e-12)
        expected_b = math.exp(20.0) / (1.0 + math.exp(20.0))
        assert prior.prob[1] == pytest.approx(expected_b, abs=1e-9)
        assert prior.prob[0] == pytest.approx(1.0 - expected_b, rel=1e-6)

    def test_aggregation_mean_vs_max(self):
        state = self._state(["a", "b"])
        rows = [_row("p1", 1.0, p_adjusted=0.01), _row("p2", 3.0, p_adjusted=0.01)]
        db = PathwayDB({"p1": {"b"}, "p2": {"b"}})
        t = 1.0
        mean_prior = build_prior(state, rows, db, temperature=t, agg="mean")
        max_prior = build_prior(state, rows, db, temperature=t, agg="max")
        c1, c2 = rows[0].combined_score, rows[1].combined_score
        assert mean_prior.score[1] - mean_prior.score[0] == pytest.approx((c1 + c2) / 2)
        assert max_prior.score[1] - max_prior.score[0] == pytest.approx(max(c1, c2))

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(5)
        for trial in range(10):
            n = int(rng.integers(2, 40))
            ids = [f"g{i}" for i in range(n)]
            member = set(rng.choice(ids, size=max(1, n // 3), replace=False))
            state = self._state(ids)
            rows = [_row("p", float(rng.uniform(0.5, 50.0)), p_adjusted=0.01)]
            prior = build_prior(state, rows, PathwayDB({"p": member}), 0.1, "mean")
            assert abs(prior.prob.sum() - 1.0) <= 1e-12
            assert np.all(prior.prob > 0)

    def test_softmax_shift_invariance(self):
        # adding any constant to every score cannot change the probabilities;
        # the shared logit(1/U) term is exactly such a constant
        state = self._state(["a", "b", "c"])
        rows = [_row("p", 1.5, p_adjusted=0.01)]
        db = PathwayDB({"p": {"c"}})
        prior = build_prior(state, rows, db, temperature=1.0, agg="mean")
        shifted = prior.score + 123.456
        z = np.exp(shifted - shifted.max())
        np.testing.assert_allclose(z / z.sum(), prior.prob, atol=1e-15)

    def test_requires_two_unlabeled(self):
        with pytest.raises(ValueError):
            build_prior(self._state(["a"]), [], PathwayDB({}), 0.1, "mean")

    def test_extreme_scores_stay_positive(self):
        # huge combined scores underflow the softmax tail; the floor keeps
        # every probability strictly positive and the ratio finite
        state = self._state([f"g{i}" for i in range(5)])
        rows = [_row("p", 1e5, p_adjusted=0.01)]
        prior = build_prior(state, rows, PathwayDB({"p": {"g0"}}), 0.1, "mean")
        assert np.all(prior.prob > 0)
        assert math.isfinite(prior.prob.max() / prior.prob.min())
