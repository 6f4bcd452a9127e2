"""Detection rules for the three opportunity classes, plus sizing."""

import pytest

from arbscan.detect import (
    DetectParams,
    Leg,
    Opportunity,
    OpportunityKind,
    detect_combinatorial,
    detect_condition_rebalance,
    detect_market_rebalance,
    figure5_params,
    short_profit_from_no,
    size_opportunity,
)
from arbscan.market_model import DependentSubsets

from conftest import series

P = DetectParams()


class TestDetectParams:
    def test_defaults(self):
        assert P.determined_threshold == 0.95
        assert P.min_profit_per_dollar == 0.05
        assert P.min_prob_for_sizing == 0.02
        assert P.window == 1

    def test_figure5_preset_loosens_profit_bound(self):
        assert figure5_params().min_profit_per_dollar == 0.02

    def test_bounds_validated(self):
        with pytest.raises(ValueError):
            DetectParams(min_profit_per_dollar=0.0)
        with pytest.raises(ValueError):
            DetectParams(min_prob_for_sizing=0.96)


class TestConditionRebalance:
    def test_sum_below_one_is_long(self):
        out = detect_condition_rebalance(
            series("y", [(10, 0.60)]), series("n", [(10, 0.35)]), P, "c")
        assert len(out) == 1
        opp = out[0]
        assert opp.kind is OpportunityKind.COND_REBALANCE_LONG
        assert opp.deviation == pytest.approx(0.05)
        assert [l.direction for l in opp.legs] == ["buy", "buy"]

    def test_sum_of_one_is_quiet(self):
        out = detect_condition_rebalance(
            series("y", [(10, 0.60)]), series("n", [(10, 0.40)]), P, "c")
        assert out == []

    def test_extreme_discount_regime(self):
        out = detect_condition_rebalance(
            series("y", [(10, 0.009)]), series("n", [(10, 0.012)]), P, "c")
        assert out[0].deviation == pytest.approx(0.979)

    def test_sum_above_one_is_short_split_and_sell(self):
        out = detect_condition_rebalance(
            series("y", [(10, 0.70)]), series("n", [(10, 0.40)]), P, "c")
        assert out[0].kind is OpportunityKind.COND_REBALANCE_SHORT
        assert [l.direction for l in out[0].legs] == ["sell", "sell"]

    def test_determined_side_masks_block(self):
        out = detect_condition_rebalance(
            series("y", [(10, 0.96)]), series("n", [(10, 0.01)]), P, "c")
        assert out == []

    def test_missing_price_is_not_free_money(self):
        # NO token starts trading later; until then the condition cannot
        # participate even though YES alone sums to 0.6.
        out = detect_condition_rebalance(
            series("y", [(10, 0.60)]), series("n", [(50, 0.35)]), P, "c")
        assert all(o.block >= 50 for o in out)

    def test_carry_spans_the_gap(self):
        out = detect_condition_rebalance(
            series("y", [(10, 0.60)]), series("n", [(10, 0.35)]), P, "c")
        assert len(out) == 1  # only block 10 exists in the scope range
        out = detect_condition_rebalance(
            series("y", [(10, 0.60), (15, 0.65)]), series("n", [(10, 0.35), (15, 0.35)]), P, "c")
        assert [o.block for o in out] == [10, 11, 12, 13, 14]


class TestMarketRebalance:
    def test_long_deviation(self):
        yes = [series("y1", [(10, 0.50)]), series("y2", [(10, 0.30)]),
               series("y3", [(10, 0.10)])]
        out = detect_market_rebalance(yes, P, "m")
        assert out[0].kind is OpportunityKind.MARKET_REBALANCE_LONG
        assert out[0].deviation == pytest.approx(0.10)

    def test_short_deviation_matches_no_price_identity(self):
        yes_prices = [0.50, 0.40, 0.20]
        yes = [series(f"y{i}", [(10, p)]) for i, p in enumerate(yes_prices)]
        out = detect_market_rebalance(yes, P, "m")
        assert out[0].kind is OpportunityKind.MARKET_REBALANCE_SHORT
        assert out[0].deviation == pytest.approx(0.10)
        no_prices = [1.0 - p for p in yes_prices]
        assert short_profit_from_no(no_prices) == pytest.approx(out[0].deviation)

    def test_determined_market_masked(self):
        yes = [series("y1", [(10, 0.97)]), series("y2", [(10, 0.02)]),
               series("y3", [(10, 0.01)])]
        assert detect_market_rebalance(yes, P, "m") == []

    def test_needs_two_conditions(self):
        with pytest.raises(ValueError, match="two conditions"):
            detect_market_rebalance([series("y1", [(10, 0.5)])], P, "m")

    def test_unpriced_condition_skips_block(self):
        yes = [series("y1", [(10, 0.50)]), series("y2", [(20, 0.30)])]
        from arbscan.detect import ScanStats
        stats = ScanStats()
        out = detect_market_rebalance(yes, P, "m", stats=stats)
        assert out and min(o.block for o in out) == 20
        assert stats.blocks_skipped_unpriced == 10

    def test_at_most_one_rebalance_per_block(self):
        yes = [series("y1", [(10, 0.50), (12, 0.70)]),
               series("y2", [(10, 0.30), (12, 0.50)])]
        out = detect_market_rebalance(yes, P, "m")
        by_block: dict[int, int] = {}
        for o in out:
            by_block[o.block] = by_block.get(o.block, 0) + 1
        assert all(v == 1 for v in by_block.values())


class TestCombinatorial:
    SUBSETS = DependentSubsets(s1=(0,), s2=(0,))

    def _pair_series(self, a: float, b: float):
        m1 = [series("m1y0", [(10, a)]), series("m1y1", [(10, 1.0 - a)])]
        m2 = [series("m2y0", [(10, b)]), series("m2y1", [(10, 1.0 - b)])]
        return m1, m2

    def test_gap_detected_with_cheap_side_legs(self):
        m1, m2 = self._pair_series(0.40, 0.52)
        out = detect_combinatorial(self.SUBSETS, m1, m2, P, "p")
        assert len(out) == 1
        opp = out[0]
        assert opp.kind is OpportunityKind.COMBINATORIAL
        assert opp.deviation == pytest.approx(0.12)
        # cheap side: YES on market-1 subset, YES on market-2 complement
        assert {l.token for l in opp.legs} == {"m1y0", "m2y1"}
        assert all(l.direction == "buy" for l in opp.legs)

    def test_equal_sums_quiet(self):
        m1, m2 = self._pair_series(0.45, 0.45)
        assert detect_combinatorial(self.SUBSETS, m1, m2, P, "p") == []

    def test_mirror_gap_buys_other_complement(self):
        m1, m2 = self._pair_series(0.55, 0.45)
        out = detect_combinatorial(self.SUBSETS, m1, m2, P, "p")
        assert {l.token for l in out[0].legs} == {"m1y1", "m2y0"}

    def test_any_unpriced_leg_skips_block(self):
        m1 = [series("m1y0", [(10, 0.40)]), series("m1y1", [(10, 0.60)])]
        m2 = [series("m2y0", [(10, 0.52)]), series("m2y1", [(30, 0.48)])]
        out = detect_combinatorial(self.SUBSETS, m1, m2, P, "p")
        assert all(o.block >= 30 for o in out)

    def test_determined_leg_masks_pair(self):
        m1 = [series("m1y0", [(10, 0.02)]), series("m1y1", [(10, 0.97)])]
        m2 = [series("m2y0", [(10, 0.30)]), series("m2y1", [(10, 0.70)])]
        assert detect_combinatorial(self.SUBSETS, m1, m2, P, "p") == []


def _opp(deviation: float, legs: list[tuple[str, float]]) -> Opportunity:
    return Opportunity(
        kind=OpportunityKind.MARKET_REBALANCE_LONG, block=1, scope_id="m",
        deviation=deviation,
        legs=tuple(Leg(token, price, "buy") for token, price in legs),
    )


class TestSizeOpportunity:
    def test_min_supply_rule(self):
        opp = _opp(0.10, [("a", 0.5), ("b", 0.3), ("c", 0.1)])
        supplies = {"a": 1000.0, "b": 500.0, "c": 800.0}
        assert size_opportunity(opp, supplies) == pytest.approx(50.0)

    def test_low_probability_leg_excluded_from_min(self):
        opp = _opp(0.10, [("a", 0.5), ("b", 0.01)])
        supplies = {"a": 1000.0, "b": 10.0}
        assert size_opportunity(opp, supplies) == pytest.approx(100.0)

    def test_all_legs_below_floor_sizes_zero(self):
        opp = _opp(0.98, [("a", 0.01), ("b", 0.096 / 10)])
        assert size_opportunity(opp, {"a": 10.0, "b": 10.0}) == 0.0

    def test_budget_cap_bounds_profit(self):
        opp = _opp(0.10, [("a", 0.5)])
        sized = size_opportunity(opp, {"a": 5000.0}, budget_cap=100.0)
        assert sized == pytest.approx(10.0)
        assert sized <= 100.0 * opp.deviation

    def test_exact_floor_excluded(self):
        opp = _opp(0.10, [("a", 0.02), ("b", 0.5)])
        assert size_opportunity(opp, {"a": 1.0, "b": 30.0}) == pytest.approx(3.0)


class TestShortProfitIdentity:
    def test_exact_on_complementary_prices(self):
        yes = [0.5, 0.4, 0.2]
        no = [1.0 - p for p in yes]
        assert short_profit_from_no(no) == pytest.approx(sum(yes) - 1.0, abs=1e-12)
