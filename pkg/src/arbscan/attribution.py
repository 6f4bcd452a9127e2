"""Per-account position reconstruction and realized arbitrage profit.

Bids are grouped into episodes (gap-chained within a block window), a
FIFO ledger replays each episode against a scope (one condition, one
market, or a certified pair), and profit is the guaranteed payout of
the minimum covered leg minus what those units cost. Fees are zero;
the venue does not charge per trade.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum
from statistics import median_low
from typing import Callable, Iterable, Mapping, Sequence

from .ingest import EventKind, Side, TradeEvent
from .market_model import Condition, DependentSubsets, Market, MarketKind

DEFAULT_EPISODE_WINDOW = 950  # blocks, about one hour
DEFAULT_MIN_EPISODE_PROFIT = 1.0  # dollars; smaller wins are noise
_EPS = 1e-12

# price estimator for legs the account never touched: (token, block) -> price
PriceLookup = Callable[[str, int], "float | None"]


class StrategyLabel(Enum):
    YES_BUY = "YesBuy"
    YES_SELL = "YesSell"
    NO_BUY = "NoBuy"
    NO_SELL = "NoSell"
    REBALANCE = "Rebalance"


@dataclass
class Episode:
    """One account's bids with no internal gap above the window."""

    account: str
    bids: list[TradeEvent]
    window: int

    @property
    def first_block(self) -> int:
        return self.bids[0].block

    @property
    def last_block(self) -> int:
        return self.bids[-1].block

    @property
    def median_block(self) -> int:
        return median_low(ev.block for ev in self.bids)


def group_user_bids(events: Iterable[TradeEvent],
                    window: int = DEFAULT_EPISODE_WINDOW) -> list[Episode]:
    """Chain each account's bids into episodes split at gaps over ``window``.

    Chaining is transitive: bids at 0, 900, 1800 form one episode with a
    950-block window even though the endpoints are 1800 apart.
    """
    open_episodes: dict[str, Episode] = {}
    done: list[Episode] = []
    for ev in events:
        ep = open_episodes.get(ev.account)
        if ep is None or ev.block - ep.last_block > window:
            if ep is not None:
                done.append(ep)
            open_episodes[ev.account] = Episode(ev.account, [ev], window)
        else:
            ep.bids.append(ev)
    done.extend(open_episodes.values())
    done.sort(key=lambda e: (e.account, e.first_block))
    return done


@dataclass(frozen=True)
class Scope:
    """What an episode ledger covers and which legs make a sure payout."""

    kind: str  # "condition" | "market" | "pair"
    scope_id: str
    conditions: tuple[Condition, ...]
    split_point: int = 0  # pair scopes: count of first-market conditions
    subsets: DependentSubsets | None = None


def condition_scope(condition: Condition) -> Scope:
    return Scope("condition", condition.condition_id, (condition,))


def market_scope(market: Market) -> Scope:
    return Scope("market", market.key, market.conditions)


def pair_scope(market1: Market, market2: Market, subsets: DependentSubsets) -> Scope:
    return Scope(
        "pair",
        f"{market1.key}|{market2.key}",
        market1.conditions + market2.conditions,
        split_point=len(market1.conditions),
        subsets=subsets,
    )


class _Lot:
    __slots__ = ("units", "unit_cost", "counterpart")

    def __init__(self, units: float, unit_cost: float, counterpart: "_Lot | None" = None):
        self.units = units
        self.unit_cost = unit_cost
        self.counterpart = counterpart


class _Position:
    """FIFO lot queue for one token."""

    __slots__ = ("lots", "head", "units")

    def __init__(self):
        self.lots: list[_Lot] = []
        self.head = 0
        self.units = 0.0

    def add(self, units: float, unit_cost: float, counterpart: _Lot | None = None) -> _Lot:
        lot = _Lot(units, unit_cost, counterpart)
        self.lots.append(lot)
        self.units += units
        return lot

    def basis_of(self, units: float) -> float:
        """Cost of the oldest ``units`` without consuming them."""
        remaining = units
        total = 0.0
        i = self.head
        while remaining > _EPS and i < len(self.lots):
            lot = self.lots[i]
            take = min(lot.units, remaining)
            total += take * lot.unit_cost
            remaining -= take
            i += 1
        return total


@dataclass
class PositionLedger:
    """Rolling inventory, realized cash, and flow tallies for one scope."""

    scope: Scope
    positions: dict[str, _Position] = field(default_factory=dict)
    realized: float = 0.0
    spent: float = 0.0
    received: float = 0.0
    external_sell_units: float = 0.0   # sells beyond held inventory
    external_sell_events: int = 0
    # flow notionals for strategy classification
    flow_yes_buy: float = 0.0
    flow_no_buy: float = 0.0
    flow_yes_sell: float = 0.0
    flow_no_sell: float = 0.0
    cond_yes_acq: dict[str, float] = field(default_factory=dict)
    cond_no_acq: dict[str, float] = field(default_factory=dict)

    def units_of(self, token: str) -> float:
        pos = self.positions.get(token)
        return pos.units if pos else 0.0

    def basis_of(self, token: str, units: float) -> float:
        pos = self.positions.get(token)
        return pos.basis_of(units) if pos else 0.0

    def residual_basis(self) -> float:
        return sum(p.basis_of(p.units) for p in self.positions.values())


def build_ledger(episode: Episode, scope: Scope) -> PositionLedger:
    """Replay an episode's in-scope events through FIFO lot accounting.

    Rules: a buy adds a lot at its fill price; a sell relieves FIFO; a
    split mints a YES/NO pair at a combined dollar of cost; selling one
    side of a live split re-prices the retained side to 1 minus the sale
    price; a merge burns a YES/NO pair and returns a dollar. Sells past
    held inventory are pre-episode holdings: flagged, excluded, counted.
    """
    token_info: dict[str, tuple[str, bool]] = {}  # token -> (condition_id, is_yes)
    cond_tokens: dict[str, tuple[str, str]] = {}
    for c in scope.conditions:
        token_info[c.yes_token] = (c.condition_id, True)
        token_info[c.no_token] = (c.condition_id, False)
        cond_tokens[c.condition_id] = (c.yes_token, c.no_token)

    ledger = PositionLedger(scope=scope)
    positions = ledger.positions

    def position(token: str) -> _Position:
        pos = positions.get(token)
        if pos is None:
            pos = positions[token] = _Position()
        return pos

    def record_acq(cid: str, is_yes: bool, notional: float) -> None:
        if is_yes:
            ledger.flow_yes_buy += notional
            ledger.cond_yes_acq[cid] = ledger.cond_yes_acq.get(cid, 0.0) + notional
        else:
            ledger.flow_no_buy += notional
            ledger.cond_no_acq[cid] = ledger.cond_no_acq.get(cid, 0.0) + notional

    def consume(pos: _Position, quantity: float, sale_price: float | None,
                cid: str, is_yes: bool) -> float:
        """Relieve ``quantity`` units FIFO; returns their cost basis.

        With ``sale_price`` set, chunks from live split lots re-price the
        retained side to 1 minus the sale price and carry the sale price
        as their own basis (the sale itself realizes nothing).
        """
        remaining = quantity
        relief = 0.0
        while remaining > _EPS and pos.head < len(pos.lots):
            lot = pos.lots[pos.head]
            if lot.units <= _EPS:
                pos.head += 1
                continue
            take = min(lot.units, remaining)
            plain = take
            counterpart = lot.counterpart
            if sale_price is not None and counterpart is not None and counterpart.units > _EPS:
                moved = min(take, counterpart.units)
                counterpart.units -= moved
                other_token = cond_tokens[cid][1] if is_yes else cond_tokens[cid][0]
                other_pos = position(other_token)
                other_pos.units -= moved
                other_pos.add(moved, 1.0 - sale_price)
                record_acq(cid, not is_yes, moved * (1.0 - sale_price))
                relief += moved * sale_price
                plain = take - moved
            if plain > _EPS:
                relief += plain * lot.unit_cost
                if sale_price is not None:
                    ledger.realized += plain * (sale_price - lot.unit_cost)
                    if is_yes:
                        ledger.flow_yes_sell += plain * sale_price
                    else:
                        ledger.flow_no_sell += plain * sale_price
            lot.units -= take
            pos.units -= take
            remaining -= take
            if lot.units <= _EPS:
                pos.head += 1
        return relief

    for ev in episode.bids:
        if ev.kind is EventKind.ORDER_FILLED:
            info = token_info.get(ev.token)
            if info is None or ev.tokens <= 0.0:
                continue
            cid, is_yes = info
            price = ev.usdc / ev.tokens
            pos = position(ev.token)
            if ev.side is Side.BUY:
                pos.add(ev.tokens, price)
                ledger.spent += ev.usdc
                record_acq(cid, is_yes, ev.usdc)
            else:
                covered = min(ev.tokens, pos.units)
                excess = ev.tokens - covered
                if excess > _EPS:
                    ledger.external_sell_units += excess
                    ledger.external_sell_events += 1
                if covered > _EPS:
                    ledger.received += covered * price
                    consume(pos, covered, price, cid, is_yes)
        elif ev.kind is EventKind.POSITION_SPLIT:
            pair = cond_tokens.get(ev.condition_id)
            if pair is None or ev.tokens <= 0.0:
                continue
            yes_pos = position(pair[0])
            no_pos = position(pair[1])
            yes_lot = yes_pos.add(ev.tokens, 0.5)
            no_lot = no_pos.add(ev.tokens, 0.5, counterpart=yes_lot)
            yes_lot.counterpart = no_lot
            ledger.spent += ev.usdc
        elif ev.kind is EventKind.POSITIONS_MERGE:
            pair = cond_tokens.get(ev.condition_id)
            if pair is None or ev.tokens <= 0.0:
                continue
            yes_pos = position(pair[0])
            no_pos = position(pair[1])
            mergeable = min(ev.tokens, yes_pos.units, no_pos.units)
            excess = ev.tokens - mergeable
            if excess > _EPS:
                ledger.external_sell_units += excess
                ledger.external_sell_events += 1
            if mergeable > _EPS:
                cid = ev.condition_id
                relief = consume(yes_pos, mergeable, None, cid, True)
                relief += consume(no_pos, mergeable, None, cid, False)
                ledger.received += mergeable * 1.0
                ledger.realized += mergeable * 1.0 - relief
    return ledger


@dataclass(frozen=True)
class ProfitBreakdown:
    profit: float
    guaranteed_units: float
    realized: float
    held_profit: float


def _portfolio_profit(
    ledger: PositionLedger,
    tokens: Sequence[str],
    payout_per_unit: float,
    price_lookup: PriceLookup | None,
    block: int | None,
) -> tuple[float, float]:
    """Profit of holding every leg in ``tokens``: (profit, guaranteed units).

    A portfolio missing legs is worth nothing unless a price estimator is
    supplied; estimated legs are charged at their estimated price and
    qualify the portfolio, but its units are no longer guaranteed.
    """
    held = [(t, ledger.units_of(t)) for t in tokens]
    missing = [t for t, u in held if u <= _EPS]
    live = [(t, u) for t, u in held if u > _EPS]
    if not live:
        return 0.0, 0.0
    units = min(u for _, u in live)
    if missing:
        if price_lookup is None or block is None:
            return 0.0, 0.0
        estimated = 0.0
        for t in missing:
            price = price_lookup(t, block)
            if price is None:
                return 0.0, 0.0
            estimated += price
        cost = sum(ledger.basis_of(t, units) for t, _ in live) + units * estimated
        return units * payout_per_unit - cost, 0.0
    cost = sum(ledger.basis_of(t, units) for t, _ in live)
    return units * payout_per_unit - cost, units


def episode_profit(
    ledger: PositionLedger,
    price_lookup: PriceLookup | None = None,
    block: int | None = None,
) -> ProfitBreakdown:
    """Realized cash plus the guaranteed value of what is still held.

    Condition scopes pay $1 per matched YES/NO unit. Market scopes pay
    $1 per all-YES unit set and n-1 per all-NO set. Pair scopes pay $1
    per unit of YES(s1) with YES(complement of s2), and of the mirror.
    """
    scope = ledger.scope
    held = 0.0
    units = 0.0
    if scope.kind == "condition":
        c = scope.conditions[0]
        p, u = _portfolio_profit(ledger, (c.yes_token, c.no_token), 1.0, None, None)
        held, units = p, u
    elif scope.kind == "market":
        n = len(scope.conditions)
        yes_tokens = [c.yes_token for c in scope.conditions]
        no_tokens = [c.no_token for c in scope.conditions]
        p1, u1 = _portfolio_profit(ledger, yes_tokens, 1.0, price_lookup, block)
        p2, u2 = _portfolio_profit(ledger, no_tokens, float(n - 1), price_lookup, block)
        held, units = p1 + p2, u1 + u2
    elif scope.kind == "pair":
        assert scope.subsets is not None
        conds1 = scope.conditions[: scope.split_point]
        conds2 = scope.conditions[scope.split_point:]
        s1 = set(scope.subsets.s1)
        s2 = set(scope.subsets.s2)
        basket_a = [conds1[i].yes_token for i in sorted(s1)] + [
            c.yes_token for j, c in enumerate(conds2) if j not in s2
        ]
        basket_b = [c.yes_token for i, c in enumerate(conds1) if i not in s1] + [
            conds2[j].yes_token for j in sorted(s2)
        ]
        p1, u1 = _portfolio_profit(ledger, basket_a, 1.0, price_lookup, block)
        p2, u2 = _portfolio_profit(ledger, basket_b, 1.0, price_lookup, block)
        held, units = p1 + p2, u1 + u2
    else:
        raise ValueError(f"unknown scope kind {scope.kind!r}")
    return ProfitBreakdown(
        profit=ledger.realized + held,
        guaranteed_units=units,
        realized=ledger.realized,
        held_profit=held,
    )


def classify_strategy(ledger: PositionLedger) -> StrategyLabel:
    """Label an episode-scope by its dominant notional flow.

    Matched both-side buying within single conditions counts double as
    rebalancing flow; any exact tie at the top resolves to Rebalance.
    """
    rebalance = 0.0
    for cid, yes_acq in ledger.cond_yes_acq.items():
        no_acq = ledger.cond_no_acq.get(cid, 0.0)
        rebalance += 2.0 * min(yes_acq, no_acq)
    scores = (
        (StrategyLabel.REBALANCE, rebalance),
        (StrategyLabel.YES_BUY, ledger.flow_yes_buy),
        (StrategyLabel.NO_BUY, ledger.flow_no_buy),
        (StrategyLabel.YES_SELL, ledger.flow_yes_sell),
        (StrategyLabel.NO_SELL, ledger.flow_no_sell),
    )
    top = max(score for _, score in scores)
    winners = [label for label, score in scores if score == top]
    return winners[0] if len(winners) == 1 else StrategyLabel.REBALANCE


@dataclass(frozen=True)
class ScoredEpisode:
    account: str
    episode_index: int  # per-account ordinal, shared across its scopes
    scope_kind: str
    scope_id: str
    strategy: StrategyLabel
    profit: float
    guaranteed_units: float
    bids: int
    first_block: int
    last_block: int


@dataclass(frozen=True)
class LeaderboardRow:
    rank: int
    account: str
    total_profit: float
    bids: int


def leaderboard(rows: Iterable[ScoredEpisode]) -> list[LeaderboardRow]:
    """Per-account totals, descending by profit, stable ties by account.

    Bid counts add each contributing episode once even when it scored on
    several scopes.
    """
    profit: dict[str, float] = {}
    episode_bids: dict[tuple[str, int], int] = {}
    for row in rows:
        profit[row.account] = profit.get(row.account, 0.0) + row.profit
        episode_bids[(row.account, row.episode_index)] = row.bids
    bids: dict[str, int] = {}
    for (account, _), count in episode_bids.items():
        bids[account] = bids.get(account, 0) + count
    ordered = sorted(profit.items(), key=lambda kv: (-kv[1], kv[0]))
    return [
        LeaderboardRow(rank=i + 1, account=account, total_profit=total, bids=bids[account])
        for i, (account, total) in enumerate(ordered)
    ]


@dataclass(frozen=True)
class PairSpec:
    market1: Market
    market2: Market
    subsets: DependentSubsets


@dataclass
class AttributionReport:
    rows: list[ScoredEpisode]
    board: list[LeaderboardRow]
    episodes_total: int = 0
    scopes_scored: int = 0
    negative_excluded: int = 0
    external_sell_events: int = 0


def attribute(
    events: Iterable[TradeEvent],
    markets: Sequence[Market],
    pairs: Sequence[PairSpec] = (),
    window: int = DEFAULT_EPISODE_WINDOW,
    min_profit: float = DEFAULT_MIN_EPISODE_PROFIT,
    price_lookup: PriceLookup | None = None,
) -> AttributionReport:
    """Score every episode against every scope it touches.

    ``events`` must already be dust-filtered and sorted. An episode
    yields one row per scope clearing ``min_profit``; overlapping scopes
    are all reported.
    """
    cond_by_id: dict[str, Condition] = {}
    market_of_cond: dict[str, Market] = {}
    token_cond: dict[str, str] = {}
    for market in markets:
        for c in market.conditions:
            cond_by_id[c.condition_id] = c
            market_of_cond[c.condition_id] = market
            token_cond[c.yes_token] = c.condition_id
            token_cond[c.no_token] = c.condition_id

    pair_index: dict[str, list[PairSpec]] = {}
    for spec in pairs:
        for c in itertools.chain(spec.market1.conditions, spec.market2.conditions):
            pair_index.setdefault(c.condition_id, []).append(spec)

    episodes = group_user_bids(events, window=window)
    report = AttributionReport(rows=[], board=[], episodes_total=len(episodes))

    account_counters: dict[str, int] = {}
    for episode in episodes:
        index = account_counters.get(episode.account, 0)
        account_counters[episode.account] = index + 1

        touched: set[str] = set()
        for ev in episode.bids:
            cid = ev.condition_id if ev.condition_id else token_cond.get(ev.token)
            if cid in cond_by_id:
                touched.add(cid)
        if not touched:
            continue

        scopes: list[Scope] = [condition_scope(cond_by_id[cid]) for cid in sorted(touched)]
        seen_markets: set[str] = set()
        for cid in sorted(touched):
            market = market_of_cond[cid]
            if market.kind is not MarketKind.NEG_RISK or market.key in seen_markets:
                continue
            seen_markets.add(market.key)
            touched_here = sum(1 for c in market.conditions if c.condition_id in touched)
            if touched_here >= 2 or price_lookup is not None:
                scopes.append(market_scope(market))
        seen_pairs: set[str] = set()
        for cid in sorted(touched):
            for spec in pair_index.get(cid, ()):
                pid = f"{spec.market1.key}|{spec.market2.key}"
                if pid in seen_pairs:
                    continue
                seen_pairs.add(pid)
                side1 = any(c.condition_id in touched for c in spec.market1.conditions)
                side2 = any(c.condition_id in touched for c in spec.market2.conditions)
                if side1 and side2:
                    scopes.append(pair_scope(spec.market1, spec.market2, spec.subsets))

        block = episode.median_block
        for scope in scopes:
            ledger = build_ledger(episode, scope)
            report.external_sell_events += ledger.external_sell_events
            breakdown = episode_profit(ledger, price_lookup=price_lookup, block=block)
            if breakdown.profit > min_profit:
                report.scopes_scored += 1
                report.rows.append(ScoredEpisode(
                    account=episode.account,
                    episode_index=index,
                    scope_kind=scope.kind,
                    scope_id=scope.scope_id,
                    strategy=classify_strategy(ledger),
                    profit=breakdown.profit,
                    guaranteed_units=breakdown.guaranteed_units,
                    bids=len(episode.bids),
                    first_block=episode.first_block,
                    last_block=episode.last_block,
                ))
            elif breakdown.profit < 0.0:
                report.negative_excluded += 1

    report.rows.sort(key=lambda r: (r.account, r.episode_index, r.scope_kind, r.scope_id))
    report.board = leaderboard(report.rows)
    return report
