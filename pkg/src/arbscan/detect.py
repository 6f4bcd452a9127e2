"""Arbitrage scanning over aligned price series.

Three opportunity classes: a single condition whose YES+NO drifts from
$1, a multi-condition market whose YES prices sum away from $1, and a
certified dependent market pair whose subset sums diverge. Scans are
per block: every block in a scope's traded range is evaluated against
the same rules a naive rescan would apply, just vectorized.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .market_model import DependentSubsets, Market, MarketKind
from .pricing import (
    DEFAULT_DETERMINED_THRESHOLD,
    PriceSeries,
    SupplySeries,
    determined_array,
)

DEFAULT_MIN_PROFIT = 0.05
FIGURE5_MIN_PROFIT = 0.02  # the looser 2-cent bound used for sensitivity runs
DEFAULT_SIZING_FLOOR = 0.02


class OpportunityKind(Enum):
    COND_REBALANCE_LONG = "CondRebalanceLong"
    COND_REBALANCE_SHORT = "CondRebalanceShort"
    MARKET_REBALANCE_LONG = "MarketRebalanceLong"
    MARKET_REBALANCE_SHORT = "MarketRebalanceShort"
    COMBINATORIAL = "Combinatorial"


@dataclass(frozen=True)
class DetectParams:
    determined_threshold: float = DEFAULT_DETERMINED_THRESHOLD
    min_profit_per_dollar: float = DEFAULT_MIN_PROFIT
    min_prob_for_sizing: float = DEFAULT_SIZING_FLOOR
    window: int = 1

    def __post_init__(self) -> None:
        for name in ("determined_threshold", "min_profit_per_dollar", "min_prob_for_sizing"):
            value = getattr(self, name)
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {value}")
        if self.min_prob_for_sizing >= self.determined_threshold:
            raise ValueError("min_prob_for_sizing must be below determined_threshold")
        if self.window < 1:
            raise ValueError("window must be a positive block count")


def figure5_params(**overrides) -> DetectParams:
    """Preset with the 2-cent profit bound instead of the default 5 cents."""
    return DetectParams(min_profit_per_dollar=FIGURE5_MIN_PROFIT, **overrides)


@dataclass(frozen=True)
class Leg:
    token: str
    price: float
    direction: str  # "buy" | "sell"


@dataclass(frozen=True)
class Opportunity:
    kind: OpportunityKind
    block: int
    scope_id: str
    deviation: float  # profit per dollar at this block
    legs: tuple[Leg, ...]
    max_profit: float = 0.0

    def legs_json(self) -> str:
        return json.dumps(
            [{"token": l.token, "price": l.price, "direction": l.direction} for l in self.legs],
            separators=(",", ":"),
        )


@dataclass
class ScanStats:
    blocks_scanned: int = 0
    blocks_skipped_unpriced: int = 0
    blocks_masked_determined: int = 0


def _scope_range(series: Sequence[PriceSeries]) -> np.ndarray:
    start = min(s.first_block for s in series)
    end = max(s.last_block for s in series)
    return np.arange(start, end + 1, dtype=np.int64)


def short_profit_from_no(no_prices: Sequence[float]) -> float:
    """Guaranteed profit of buying every NO leg: (n - 1) payout minus cost.

    With complementary pricing (NO = 1 - YES) this equals the YES-sum
    excess over 1, which is how short deviations are recorded.
    """
    n = len(no_prices)
    total = 0.0
    for p in no_prices:
        total += p
    return (n - 1) - total


def detect_condition_rebalance(
    yes: PriceSeries,
    no: PriceSeries,
    params: DetectParams,
    scope_id: str = "",
    stats: ScanStats | None = None,
) -> list[Opportunity]:
    """Scan one condition's YES/NO pair for |1 - (yes + no)| deviations.

    A block participates only when both sides have a price and neither
    exceeds the determined threshold. Sum below 1 means buy both sides;
    above 1 means split and sell both sides.
    """
    scope_id = scope_id or yes.token
    query = _scope_range([yes, no])
    py = yes.prices_at(query)
    pn = no.prices_at(query)

    priced = ~(np.isnan(py) | np.isnan(pn))
    live = priced & ~((py > params.determined_threshold) | (pn > params.determined_threshold))
    total = py + pn
    deviation = np.abs(1.0 - total)
    hits = live & (deviation >= params.min_profit_per_dollar)

    if stats is not None:
        stats.blocks_scanned += len(query)
        stats.blocks_skipped_unpriced += int((~priced).sum())
        stats.blocks_masked_determined += int((priced & ~live).sum())

    out: list[Opportunity] = []
    for i in np.flatnonzero(hits):
        long_side = total[i] < 1.0
        kind = (OpportunityKind.COND_REBALANCE_LONG if long_side
                else OpportunityKind.COND_REBALANCE_SHORT)
        direction = "buy" if long_side else "sell"
        out.append(Opportunity(
            kind=kind,
            block=int(query[i]),
            scope_id=scope_id,
            deviation=float(deviation[i]),
            legs=(
                Leg(yes.token, float(py[i]), direction),
                Leg(no.token, float(pn[i]), direction),
            ),
        ))
    return out


def detect_market_rebalance(
    yes_series: Sequence[PriceSeries],
    params: DetectParams,
    scope_id: str,
    stats: ScanStats | None = None,
) -> list[Opportunity]:
    """Scan a multi-condition market for YES-sum deviations from $1.

    Blocks where any condition has no price yet are skipped rather than
    imputed to zero; imputing would manufacture long arbitrage out of
    thin air. Determined blocks (some YES above threshold) are masked.
    """
    if len(yes_series) < 2:
        raise ValueError("market rebalance scan needs at least two conditions")
    query = _scope_range(yes_series)
    prices = [s.prices_at(query) for s in yes_series]

    priced = ~np.isnan(prices[0])
    for p in prices[1:]:
        priced &= ~np.isnan(p)
    masked = determined_array(yes_series, params.determined_threshold, query)
    live = priced & ~masked

    # Accumulate in condition order so results match a scalar re-scan bit
    # for bit.
    total = prices[0].copy()
    for p in prices[1:]:
        total += p

    long_dev = 1.0 - total
    short_dev = total - 1.0
    threshold = params.min_profit_per_dollar
    hits = live & ((long_dev >= threshold) | (short_dev >= threshold))

    if stats is not None:
        stats.blocks_scanned += len(query)
        stats.blocks_skipped_unpriced += int((~priced).sum())
        stats.blocks_masked_determined += int((priced & masked).sum())

    out: list[Opportunity] = []
    for i in np.flatnonzero(hits):
        if long_dev[i] >= threshold:
            kind = OpportunityKind.MARKET_REBALANCE_LONG
            deviation = float(long_dev[i])
            direction = "buy"
        else:
            kind = OpportunityKind.MARKET_REBALANCE_SHORT
            deviation = float(short_dev[i])
            direction = "sell"  # split every condition, sell the YES side
        out.append(Opportunity(
            kind=kind,
            block=int(query[i]),
            scope_id=scope_id,
            deviation=deviation,
            legs=tuple(
                Leg(s.token, float(prices[j][i]), direction)
                for j, s in enumerate(yes_series)
            ),
        ))
    return out


def detect_combinatorial(
    subsets: DependentSubsets,
    series1: Sequence[PriceSeries],
    series2: Sequence[PriceSeries],
    params: DetectParams,
    scope_id: str,
    stats: ScanStats | None = None,
) -> list[Opportunity]:
    """Scan a certified dependent pair for subset-sum divergence.

    ``series1``/``series2`` are each market's YES series in condition
    order. At each live block compare the YES sum over subsets s1 and
    s2; the cheaper side plus the dearer side's complement pays $1
    guaranteed, so the gap is the profit per dollar.
    """
    all_series = list(series1) + list(series2)
    query = _scope_range(all_series)
    p1 = [s.prices_at(query) for s in series1]
    p2 = [s.prices_at(query) for s in series2]

    priced = ~np.isnan(p1[0])
    for p in p1[1:]:
        priced &= ~np.isnan(p)
    for p in p2:
        priced &= ~np.isnan(p)
    masked = determined_array(all_series, params.determined_threshold, query)
    live = priced & ~masked

    sum1 = p1[subsets.s1[0]].copy()
    for j in subsets.s1[1:]:
        sum1 += p1[j]
    sum2 = p2[subsets.s2[0]].copy()
    for j in subsets.s2[1:]:
        sum2 += p2[j]

    deviation = np.abs(sum1 - sum2)
    hits = live & (deviation >= params.min_profit_per_dollar)

    if stats is not None:
        stats.blocks_scanned += len(query)
        stats.blocks_skipped_unpriced += int((~priced).sum())
        stats.blocks_masked_determined += int((priced & masked).sum())

    s1 = set(subsets.s1)
    s2 = set(subsets.s2)
    comp1 = [j for j in range(len(series1)) if j not in s1]
    comp2 = [j for j in range(len(series2)) if j not in s2]

    out: list[Opportunity] = []
    for i in np.flatnonzero(hits):
        if sum1[i] < sum2[i]:
            buy1, buy2 = sorted(s1), comp2
        else:
            buy1, buy2 = comp1, sorted(s2)
        legs = tuple(
            [Leg(series1[j].token, float(p1[j][i]), "buy") for j in buy1]
            + [Leg(series2[j].token, float(p2[j][i]), "buy") for j in buy2]
        )
        out.append(Opportunity(
            kind=OpportunityKind.COMBINATORIAL,
            block=int(query[i]),
            scope_id=scope_id,
            deviation=float(deviation[i]),
            legs=legs,
        ))
    return out


def size_opportunity(
    opp: Opportunity,
    supplies: Mapping[str, float],
    sizing_floor: float = DEFAULT_SIZING_FLOOR,
    budget_cap: float | None = None,
) -> float:
    """Maximum profit: deviation times the units actually assemblable.

    Units are capped by the smallest supply among legs priced above the
    sizing floor; legs at 2% or less are near-free lottery tickets and
    ignored for sizing. ``budget_cap`` optionally limits deployed
    capital (a unit of payout costs about $1 to assemble).
    """
    participating = [leg for leg in opp.legs if leg.price > sizing_floor]
    if not participating:
        return 0.0
    units = min(supplies.get(leg.token, 0.0) for leg in participating)
    if budget_cap is not None:
        units = min(units, budget_cap)
    return opp.deviation * max(units, 0.0)


@dataclass(frozen=True)
class CertifiedPair:
    """A dependent market pair with its certified subsets, ready to scan."""

    market1: Market
    market2: Market
    subsets: DependentSubsets

    @property
    def pair_id(self) -> str:
        return f"{self.market1.key}|{self.market2.key}"


@dataclass
class ScanReport:
    opportunities: list[Opportunity]
    stats: ScanStats = field(default_factory=ScanStats)


def scan_markets(
    markets: Iterable[Market],
    series: Mapping[str, PriceSeries],
    params: DetectParams,
    pairs: Iterable[CertifiedPair] = (),
    supply: Mapping[str, SupplySeries] | None = None,
    budget_cap: float | None = None,
) -> ScanReport:
    """Run all three scans and merge results in (scope, block) order.

    When supply series are given, every opportunity is sized at its
    block; otherwise max_profit stays 0.
    """
    stats = ScanStats()
    found: list[Opportunity] = []

    market_list = list(markets)
    for market in market_list:
        yes_list = []
        for c in market.conditions:
            if c.yes_token in series and c.no_token in series:
                found.extend(detect_condition_rebalance(
                    series[c.yes_token], series[c.no_token], params,
                    scope_id=c.condition_id, stats=stats,
                ))
            if c.yes_token in series:
                yes_list.append(series[c.yes_token])
        if market.kind is MarketKind.NEG_RISK and len(yes_list) == market.n_conditions:
            found.extend(detect_market_rebalance(
                yes_list, params, scope_id=market.key, stats=stats,
            ))

    for pair in pairs:
        s1 = [series.get(c.yes_token) for c in pair.market1.conditions]
        s2 = [series.get(c.yes_token) for c in pair.market2.conditions]
        if any(s is None for s in s1) or any(s is None for s in s2):
            continue  # a never-traded leg cannot anchor a pair scan
        found.extend(detect_combinatorial(
            pair.subsets, s1, s2, params, scope_id=pair.pair_id, stats=stats,
        ))

    if supply is not None:
        token_to_cond: dict[str, str] = {}
        for market in market_list:
            for c in market.conditions:
                token_to_cond[c.yes_token] = c.condition_id
                token_to_cond[c.no_token] = c.condition_id

        def supply_at(token: str, block: int) -> float:
            s = supply.get(token_to_cond.get(token, ""))
            return s.supply_at(block) if s is not None else 0.0

        found = [
            replace(opp, max_profit=size_opportunity(
                opp,
                {leg.token: supply_at(leg.token, opp.block) for leg in opp.legs},
                params.min_prob_for_sizing,
                budget_cap,
            ))
            for opp in found
        ]

    found.sort(key=lambda o: (o.scope_id, o.block, o.kind.value))
    return ScanReport(opportunities=found, stats=stats)
