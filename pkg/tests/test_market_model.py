"""Outcome-space validation, dependence classification, and market reduction."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from arbscan.market_model import (
    Condition,
    Dependence,
    DependentSubsets,
    InvalidSpaceError,
    Market,
    MarketKind,
    OutcomeSpace,
    classify_pair,
    find_dependent_subsets,
    full_product_space,
    reduce_market,
    validate_single_market,
)

from conftest import cond, negrisk_market, space


class TestDomainTypes:
    def test_condition_rejects_equal_tokens(self):
        with pytest.raises(ValueError, match="must differ"):
            Condition("0xc", "q?", yes_token="t", no_token="t")

    def test_condition_rejects_negative_volume(self):
        with pytest.raises(ValueError, match="negative volume"):
            Condition("0xc", "q?", yes_token="y", no_token="n", total_volume=-1.0)

    def test_market_kind_follows_condition_count(self):
        assert negrisk_market(0, 3).kind is MarketKind.NEG_RISK
        single = Market(conditions=(cond(1),))
        assert single.kind is MarketKind.SINGLE
        assert single.key == cond(1).condition_id

    def test_multi_condition_market_needs_id(self):
        with pytest.raises(ValueError, match="market_id"):
            Market(conditions=(cond(1), cond(2)))

    def test_outcome_space_dedupes_and_sorts(self):
        s = OutcomeSpace(vectors=((True, False), (True, False), (False, True)),
                         arity=(2,))
        assert s.vectors == ((False, True), (True, False))

    def test_outcome_space_rejects_width_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            OutcomeSpace(vectors=((True, False, False),), arity=(2,))


class TestValidateSingleMarket:
    def test_exhaustive_basis_is_valid(self):
        report = validate_single_market(space(["100", "010", "001"], (3,)), n=3)
        assert report.valid
        assert report.violations == ()

    def test_two_true_bits_invalid(self):
        report = validate_single_market(space(["110", "010", "001"], (3,)), n=3)
        assert not report.valid
        assert any("2 true bits" in v for v in report.violations)

    def test_wrong_cardinality_invalid(self):
        report = validate_single_market(space(["100", "010"], (3,)), n=3)
        assert not report.valid
        assert any("expected 3 vectors, got 2" in v for v in report.violations)

    def test_all_violations_listed(self):
        report = validate_single_market(space(["110", "000"], (3,)), n=3)
        assert len(report.violations) == 3  # cardinality + two bad vectors

    def test_empty_space_is_structural_error(self):
        with pytest.raises(ValueError, match="empty"):
            validate_single_market(OutcomeSpace(vectors=(), arity=(3,)), n=3)

    def test_width_mismatch_is_structural_error(self):
        with pytest.raises(ValueError, match="width"):
            validate_single_market(space(["10", "01"], (2,)), n=3)


class TestClassifyPair:
    def test_full_product_independent(self):
        assert classify_pair(full_product_space(2, 2), 2, 2) is Dependence.INDEPENDENT

    def test_missing_vector_dependent(self):
        s = space(["1010", "1001", "0101"], (2, 2))
        assert classify_pair(s, 2, 2) is Dependence.DEPENDENT

    def test_two_by_three_with_one_contradiction_removed(self):
        # Winner market (A, B) against margin market (A by 2+, A by 1,
        # B margin); dropping the (A wins, B margin) joint leaves 5 of 6.
        full = full_product_space(2, 3)
        contradiction = (True, False, False, False, True)
        remaining = tuple(v for v in full.vectors if v != contradiction)
        assert len(remaining) == 5
        s = OutcomeSpace(vectors=remaining, arity=(2, 3))
        assert classify_pair(s, 2, 3) is Dependence.DEPENDENT

    def test_oversized_space_raises(self):
        vectors = tuple(
            (a, not a, b, not b) for a in (True, False) for b in (True, False)
        ) + ((True, True, True, False),)
        s = OutcomeSpace(vectors=vectors, arity=(2, 2))
        with pytest.raises(InvalidSpaceError):
            classify_pair(s, 2, 2)


class TestFindDependentSubsets:
    def test_independent_product_has_none(self):
        assert find_dependent_subsets(full_product_space(2, 2)) == []

    def test_aligned_two_by_two(self):
        # Winner/margin structure: either both first conditions resolve
        # true or both second ones do.
        s = space(["1010", "0101"], (2, 2))
        assert find_dependent_subsets(s) == [DependentSubsets(s1=(0,), s2=(0,))]

    def test_two_by_three_winner_forces_margin(self):
        # A-wins aligns with the two A-margin conditions; B-wins with the
        # B-margin condition. Expected pairs verified by the brute force
        # scan below.
        s = space(["11000", "10100", "01001"], (2, 3))
        result = find_dependent_subsets(s)
        assert DependentSubsets(s1=(0,), s2=(0, 1)) in result
        assert result == sorted(set(result))
        assert result == _brute_force_canonical(s)

    def test_dependent_by_cardinality_may_have_no_subsets(self):
        # One deleted joint breaks the product count without creating a
        # clean partition.
        full = full_product_space(2, 3)
        s = OutcomeSpace(vectors=full.vectors[1:], arity=(2, 3))
        assert classify_pair(s, 2, 3) is Dependence.DEPENDENT
        assert find_dependent_subsets(s) == []

    def test_requires_joint_space(self):
        with pytest.raises(ValueError, match="joint"):
            find_dependent_subsets(space(["10", "01"], (2,)))

    def test_canonical_variant_has_smaller_first_subset(self):
        s = space(["100100", "010010", "001001"], (3, 3))
        for pair in find_dependent_subsets(s):
            assert len(pair.s1) <= 3 - len(pair.s1) or pair.s1 < tuple(
                i for i in range(3) if i not in pair.s1
            )

    @settings(max_examples=50, deadline=None)
    @given(st.randoms(use_true_random=False))
    def test_permutation_invariance(self, rnd):
        """Shuffling condition order only relabels indices in the output."""
        full = full_product_space(3, 3)
        kept = [v for v in full.vectors if rnd.random() < 0.7] or [full.vectors[0]]
        s = OutcomeSpace(vectors=tuple(kept), arity=(3, 3))
        base = find_dependent_subsets(s)

        perm1 = list(range(3))
        perm2 = list(range(3))
        rnd.shuffle(perm1)
        rnd.shuffle(perm2)
        shuffled = OutcomeSpace(
            vectors=tuple(
                tuple(v[perm1[i]] for i in range(3))
                + tuple(v[3 + perm2[j]] for j in range(3))
                for v in s.vectors
            ),
            arity=(3, 3),
        )
        mapped = find_dependent_subsets(shuffled)

        # map shuffled-space indices back to the originals and compare
        inv1 = {new: perm1[new] for new in range(3)}
        inv2 = {new: perm2[new] for new in range(3)}
        remapped = {
            _canon(tuple(sorted(inv1[i] for i in p.s1)),
                   tuple(sorted(inv2[j] for j in p.s2)), 3, 3)
            for p in mapped
        }
        assert remapped == set(base)


def _canon(s1, s2, n, m) -> DependentSubsets:
    c1 = tuple(i for i in range(n) if i not in set(s1))
    c2 = tuple(j for j in range(m) if j not in set(s2))
    if (len(s1), s1) <= (len(c1), c1):
        return DependentSubsets(s1, s2)
    return DependentSubsets(c1, c2)


def _brute_force_canonical(s: OutcomeSpace) -> list[DependentSubsets]:
    """Independent oracle: scan every subset pair, then canonicalize."""
    import itertools

    n, m = s.arity
    hits = set()
    for r1 in range(1, n):
        for s1 in itertools.combinations(range(n), r1):
            for r2 in range(1, m):
                for s2 in itertools.combinations(range(m), r2):
                    if all(
                        sum(v[i] for i in s1) == sum(v[n + j] for j in s2)
                        for v in s.vectors
                    ):
                        hits.add(_canon(s1, s2, n, m))
    return sorted(hits)


class TestReduceMarket:
    def test_small_market_unchanged(self):
        market = negrisk_market(0, 3, volumes=[5.0, 3.0, 1.0])
        reduced = reduce_market(market, k=4)
        assert reduced.kept == market.conditions
        assert reduced.catch_all is None
        assert reduced.dropped == ()

    def test_keeps_top_volume_conditions(self):
        market = negrisk_market(0, 6, volumes=[100, 90, 80, 70, 5, 5])
        reduced = reduce_market(market, k=4)
        assert [c.total_volume for c in reduced.kept] == [100, 90, 80, 70]
        assert reduced.catch_all is not None
        assert len(reduced.conditions) == 5
        assert reduced.catch_all_index == 4
        dropped_qs = [c.question for c in reduced.dropped]
        for q in dropped_qs:
            assert q in reduced.catch_all.question
        assert reduced.catch_all.question.startswith("OTHER: ")
        assert " OR " in reduced.catch_all.question

    def test_volume_tie_breaks_by_condition_id(self):
        market = negrisk_market(0, 6, volumes=[100, 70, 70, 70, 70, 70])
        first = reduce_market(market, k=4)
        second = reduce_market(market, k=4)
        assert first == second
        kept_ids = [c.condition_id for c in first.kept]
        # five conditions tie at 70; the three lowest ids join the keep set
        assert kept_ids == [market.conditions[i].condition_id for i in (0, 1, 2, 3)]

    def test_coverage_is_preserved(self):
        market = negrisk_market(0, 7, volumes=[7, 6, 5, 4, 3, 2, 1])
        reduced = reduce_market(market, k=4)
        original = {c.condition_id for c in market.conditions}
        assert reduced.covered_ids == original

    def test_catch_all_question_truncated(self):
        conditions = tuple(
            Condition(f"0xc{i}", "Will " + "x" * 200 + f" happen {i}?", f"y{i}", f"n{i}",
                      total_volume=float(10 - i))
            for i in range(6)
        )
        market = Market(conditions=conditions, market_id="0xm")
        reduced = reduce_market(market, k=4)
        assert len(reduced.catch_all.question) <= 512

    def test_randomized_reduction_is_deterministic(self):
        rnd = random.Random(4)
        for _ in range(50):
            n = rnd.randint(1, 9)
            volumes = [float(rnd.randint(0, 5)) for _ in range(n)]
            market = negrisk_market(1, n, volumes=volumes) if n > 1 else None
            if market is None:
                continue
            a, b = reduce_market(market), reduce_market(market)
            assert a == b
            assert len(a.kept) <= 4
            assert (a.catch_all is not None) == (n > 4)
