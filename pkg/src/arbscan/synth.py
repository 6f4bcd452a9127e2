"""Deterministic synthetic markets, event logs, and planted arbitrage.

Noise traders anchor every token of a market at the same block with
prices that sum to $1, so carried-forward sums never drift and a clean
run detects nothing. Planted episodes are the only deviations: a bot
trades a mispriced basket at one block and a make-up anchor lands on
the next block, so each plant is exactly one detectable opportunity
whose realized profit is recorded in a sidecar manifest.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass, field
from datetime import date, timedelta
from typing import Iterator

from .dependency import ReplayOracle, build_prompt, prompt_key
from .ingest import EXCHANGE, EventKind, MarketDescriptor, Side, TradeEvent
from .market_model import Condition, DependentSubsets, Market, reduce_market

PLANT_COND_LONG = "cond_rebalance_long"
PLANT_COND_SHORT = "cond_rebalance_short"
PLANT_MARKET_LONG = "market_rebalance_long"
PLANT_MARKET_SHORT = "market_rebalance_short"
PLANT_COMBINATORIAL = "combinatorial"
PLANT_KINDS = (
    PLANT_COND_LONG, PLANT_COND_SHORT, PLANT_MARKET_LONG,
    PLANT_MARKET_SHORT, PLANT_COMBINATORIAL,
)

_BASE_DATE = date(2024, 6, 1)

_QUESTION_TEMPLATES = {
    "Sports": "Will team {name} win the championship match {tag}?",
    "Politics": "Will candidate {name} win the election for seat {tag}?",
    "Crypto": "Will bitcoin close above level {name} in window {tag}?",
    "Economy": "Will inflation print {name} land in band {tag}?",
}


class SynthError(ValueError):
    """Inconsistent synthetic configuration."""


@dataclass(frozen=True)
class Plant:
    kind: str
    block: int
    magnitude: float  # deviation per dollar at the planted block
    units: float = 50.0

    def __post_init__(self) -> None:
        if self.kind not in PLANT_KINDS:
            raise SynthError(f"unknown plant kind {self.kind!r}")
        if not 0.05 <= self.magnitude <= 0.30:
            raise SynthError("plant magnitude must lie in [0.05, 0.30]")
        if self.units <= 0:
            raise SynthError("plant units must be positive")


@dataclass(frozen=True)
class SynthConfig:
    n_single: int = 6
    n_negrisk: int = 3
    negrisk_conditions: int = 3
    dependent_pair: bool = True
    n_noise_traders: int = 12
    noise_fills: int = 8000
    start_block: int = 1000
    block_span: int = 80000
    max_anchor_gap: int = 4000  # must stay under the price carry limit
    plants: tuple[Plant, ...] = ()


@dataclass(frozen=True)
class PlantRecord:
    """Manifest entry: what was planted, where, and the exact profit."""

    type: str
    block: int
    market_id: str
    scope_id: str
    magnitude_usd: float
    account: str
    deviation: float
    units: float
    detect_kind: str

    def to_json(self) -> dict:
        return {
            "type": self.type,
            "block": self.block,
            "market_id": self.market_id,
            "scope_id": self.scope_id,
            "magnitude_usd": self.magnitude_usd,
            "account": self.account,
            "deviation": self.deviation,
            "units": self.units,
            "detect_kind": self.detect_kind,
        }


# One scheduled row: (kind, account, counterparty, token, condition_id,
# usdc, tokens, side). Blocks and tx indexes are assigned at merge time.
_Row = tuple[EventKind, str, str, str, str, float, float, Side]


def _round6(x: float) -> float:
    return round(x, 6)


@dataclass
class _Source:
    """Fill schedule for one market (or the aligned dependent pair)."""

    seed: str
    markets: list[Market]
    anchors: list[int]
    accounts: list[str]
    plant: Plant | None = None
    plant_rows: list[_Row] = field(default_factory=list)
    mirrored: bool = False  # pair source: market 2 copies market 1 prices

    def rounds(self) -> Iterator[tuple[int, str, list[_Row]]]:
        rng = random.Random(self.seed)
        conds = [c for m in self.markets for c in m.conditions]
        lead = self.markets[0].conditions
        prices = [1.0 / len(lead)] * len(lead)
        plant_block = self.plant.block if self.plant is not None else None

        for block in self.anchors:
            if block == plant_block:
                yield block, self.seed, list(self.plant_rows)
                continue
            prices = _walk(rng, prices)
            full = prices + prices if self.mirrored else prices
            account = self.accounts[rng.randrange(len(self.accounts))]
            units = _round6(rng.uniform(4.0, 20.0))
            rows: list[_Row] = []
            for c, p in zip(conds, full):
                rows.append((EventKind.ORDER_FILLED, account, EXCHANGE, c.yes_token,
                             "", _round6(p * units), units, Side.BUY))
                rows.append((EventKind.ORDER_FILLED, account, EXCHANGE, c.no_token,
                             "", _round6((1.0 - p) * units), units, Side.BUY))
            yield block, self.seed, rows


def _walk(rng: random.Random, prices: list[float]) -> list[float]:
    """One random-walk step that keeps the vector summing to 1.

    Clipping to [0.06, 0.86] before renormalizing bounds every price
    well under the determined cutoff even after division.
    """
    if len(prices) == 1:
        p = min(0.86, max(0.08, prices[0] + rng.uniform(-0.01, 0.01)))
        return [p]
    proposed = [min(0.86, max(0.06, p + rng.uniform(-0.01, 0.01))) for p in prices]
    total = sum(proposed)
    return [p / total for p in proposed]


@dataclass
class SynthBundle:
    """Everything one seed produces; ``events()`` re-streams deterministically."""

    config: SynthConfig
    seed: int
    descriptors: list[MarketDescriptor]
    markets: list[Market]
    manifest: list[PlantRecord]
    oracle_responses: dict[str, str]
    pair_markets: tuple[Market, Market] | None
    pair_subsets: DependentSubsets | None
    _sources: list[_Source] = field(default_factory=list, repr=False)

    def events(self) -> Iterator[TradeEvent]:
        streams = [src.rounds() for src in self._sources]
        merged = heapq.merge(*streams, key=lambda item: (item[0], item[1]))
        current = -1
        tx = 0
        for block, _, rows in merged:
            if block != current:
                current = block
                tx = 0
            for kind, account, counterparty, token, cid, usdc, tokens, side in rows:
                yield TradeEvent(block, tx, kind, account, counterparty,
                                 token, cid, usdc, tokens, side)
                tx += 1

    def oracle(self) -> ReplayOracle:
        return ReplayOracle(self.oracle_responses)


def _make_market(index: int, topic: str, n_conditions: int, end: date,
                 market_prefix: str) -> Market:
    template = _QUESTION_TEMPLATES.get(topic, _QUESTION_TEMPLATES["Sports"])
    conds = tuple(
        _condition(
            f"0x{market_prefix}{index:03d}c{j}",
            template.format(name=f"{index}-{j}", tag=index),
            end,
        )
        for j in range(n_conditions)
    )
    market_id = f"0x{market_prefix}{index:03d}" if n_conditions > 1 else None
    return Market(conditions=conds, market_id=market_id, canonical_end_date=end)


def _condition(cid: str, question: str, end: date) -> Condition:
    return Condition(
        condition_id=cid,
        question=question,
        yes_token=f"{cid}y",
        no_token=f"{cid}n",
        end_date=end,
    )


def _descriptor(c, market: Market) -> MarketDescriptor:
    return MarketDescriptor(
        condition_id=c.condition_id,
        question=c.question,
        end_date_iso=market.canonical_end_date,
        yes_token=c.yes_token,
        no_token=c.no_token,
        neg_risk_market_id=market.market_id,
    )


def _anchor_blocks(config: SynthConfig, per_market_fills: int, n_sources: int,
                   phase: int) -> list[int]:
    total_weight = per_market_fills * n_sources
    rounds = max(2, -(-config.noise_fills // max(1, total_weight)))
    gap = config.block_span // rounds
    if gap > config.max_anchor_gap:
        rounds = -(-config.block_span // config.max_anchor_gap)
        gap = config.block_span // rounds
    if gap < 1:
        raise SynthError("block_span too small for the requested fill count")
    start = config.start_block + (phase % gap)
    return [start + j * gap for j in range(rounds)
            if start + j * gap < config.start_block + config.block_span]


def _plant_cond_rows(plant: Plant, market: Market, account: str) -> tuple[list[_Row], float]:
    c = market.conditions[0]
    u = plant.units
    if plant.kind == PLANT_COND_LONG:
        py = _round6(0.48 - plant.magnitude / 2)
        pn = _round6(0.52 - plant.magnitude / 2)
        uy, un = _round6(py * u), _round6(pn * u)
        rows: list[_Row] = [
            (EventKind.ORDER_FILLED, account, EXCHANGE, c.yes_token, "", uy, u, Side.BUY),
            (EventKind.ORDER_FILLED, account, EXCHANGE, c.no_token, "", un, u, Side.BUY),
        ]
        profit = u * 1.0 - (uy + un)
        return rows, profit
    # short: split the condition, then sell both sides above a dollar
    py = _round6(0.52 + plant.magnitude / 2)
    pn = _round6(0.48 + plant.magnitude / 2)
    uy, un = _round6(py * u), _round6(pn * u)
    rows = [
        (EventKind.POSITION_SPLIT, account, EXCHANGE, "", c.condition_id, u, u, Side.NA),
        (EventKind.ORDER_FILLED, account, EXCHANGE, c.yes_token, "", uy, u, Side.SELL),
        (EventKind.ORDER_FILLED, account, EXCHANGE, c.no_token, "", un, u, Side.SELL),
    ]
    profit = (uy + un) - u * 1.0
    return rows, profit


def _plant_market_rows(plant: Plant, market: Market, account: str,
                       shadow_account: str) -> tuple[list[_Row], float]:
    n = market.n_conditions
    u = plant.units
    rows: list[_Row] = []
    if plant.kind == PLANT_MARKET_LONG:
        leg_price = _round6((1.0 - plant.magnitude) / n)
        spent = 0.0
        for c in market.conditions:
            usdc = _round6(leg_price * u)
            spent += usdc
            rows.append((EventKind.ORDER_FILLED, account, EXCHANGE, c.yes_token,
                         "", usdc, u, Side.BUY))
            # shadow keeps each condition's YES+NO at exactly one dollar
            rows.append((EventKind.ORDER_FILLED, shadow_account, EXCHANGE, c.no_token,
                         "", _round6((1.0 - leg_price) * u), u, Side.BUY))
        return rows, u * 1.0 - spent
    leg_price = _round6((1.0 + plant.magnitude) / n)
    received = 0.0
    for c in market.conditions:
        rows.append((EventKind.POSITION_SPLIT, account, EXCHANGE, "",
                     c.condition_id, u, u, Side.NA))
    for c in market.conditions:
        usdc = _round6(leg_price * u)
        received += usdc
        rows.append((EventKind.ORDER_FILLED, account, EXCHANGE, c.yes_token,
                     "", usdc, u, Side.SELL))
        rows.append((EventKind.ORDER_FILLED, shadow_account, EXCHANGE, c.no_token,
                     "", _round6((1.0 - leg_price) * u), u, Side.BUY))
    return rows, received - u * 1.0


def _plant_pair_rows(plant: Plant, m1: Market, m2: Market, account: str,
                     shadow_account: str) -> tuple[list[_Row], float]:
    # Subsets are ({0}, {0}): the bot buys YES of market 1's condition 0
    # cheap and YES of market 2's condition 1 at fair value; shadows pin
    # every other sum at a dollar so only the pair gap deviates.
    u = plant.units
    mag = plant.magnitude
    a_price = _round6(0.5 - mag)
    c10, c11 = m1.conditions
    c20, c21 = m2.conditions
    u_a = _round6(a_price * u)
    u_b = _round6(0.5 * u)
    rows: list[_Row] = [
        (EventKind.ORDER_FILLED, account, EXCHANGE, c10.yes_token, "", u_a, u, Side.BUY),
        (EventKind.ORDER_FILLED, account, EXCHANGE, c21.yes_token, "", u_b, u, Side.BUY),
        (EventKind.ORDER_FILLED, shadow_account, EXCHANGE, c10.no_token, "",
         _round6((0.5 + mag) * u), u, Side.BUY),
        (EventKind.ORDER_FILLED, shadow_account, EXCHANGE, c11.yes_token, "",
         _round6((0.5 + mag) * u), u, Side.BUY),
        (EventKind.ORDER_FILLED, shadow_account, EXCHANGE, c11.no_token, "",
         _round6((0.5 - mag) * u), u, Side.BUY),
        (EventKind.ORDER_FILLED, shadow_account, EXCHANGE, c20.yes_token, "",
         _round6(0.5 * u), u, Side.BUY),
        (EventKind.ORDER_FILLED, shadow_account, EXCHANGE, c20.no_token, "",
         _round6(0.5 * u), u, Side.BUY),
        (EventKind.ORDER_FILLED, shadow_account, EXCHANGE, c21.no_token, "",
         _round6(0.5 * u), u, Side.BUY),
    ]
    profit = u * 1.0 - (u_a + u_b)
    return rows, profit


_DETECT_KIND = {
    PLANT_COND_LONG: "CondRebalanceLong",
    PLANT_COND_SHORT: "CondRebalanceShort",
    PLANT_MARKET_LONG: "MarketRebalanceLong",
    PLANT_MARKET_SHORT: "MarketRebalanceShort",
    PLANT_COMBINATORIAL: "Combinatorial",
}


def generate_synthetic(config: SynthConfig, seed: int) -> SynthBundle:
    """Build markets, plants, manifest, and a re-streamable event schedule.

    Identical (config, seed) pairs produce byte-identical logs. Raises
    SynthError when plants do not fit the configured market shapes.
    """
    rng = random.Random(f"{seed}/structure")
    topics = ("Sports", "Politics", "Crypto", "Economy")

    singles: list[Market] = []
    for i in range(config.n_single):
        end = _BASE_DATE + timedelta(days=i)
        singles.append(_make_market(i, topics[i % len(topics)], 1, end, "s"))
    negrisk: list[Market] = []
    for i in range(config.n_negrisk):
        end = _BASE_DATE + timedelta(days=100 + i)
        negrisk.append(_make_market(i, topics[i % len(topics)], config.negrisk_conditions,
                                    end, "m"))

    pair_markets: tuple[Market, Market] | None = None
    pair_subsets: DependentSubsets | None = None
    if config.dependent_pair:
        end = _BASE_DATE + timedelta(days=200)
        d1 = Market(
            conditions=(
                _condition("0xp000c0", "Will team Hawks win the championship match P?", end),
                _condition("0xp000c1", "Will team Owls win the championship match P?", end),
            ),
            market_id="0xp000", canonical_end_date=end,
        )
        d2 = Market(
            conditions=(
                _condition("0xp001c0",
                           "Will team Hawks lead the championship match P final score?", end),
                _condition("0xp001c1",
                           "Will team Owls lead the championship match P final score?", end),
            ),
            market_id="0xp001", canonical_end_date=end,
        )
        pair_markets = (d1, d2)
        pair_subsets = DependentSubsets(s1=(0,), s2=(0,))

    markets = singles + negrisk + (list(pair_markets) if pair_markets else [])
    accounts = [f"0xnoise{i:03d}" for i in range(max(1, config.n_noise_traders))]

    # Assign plants to hosts: condition plants take singles in order,
    # market plants take plain NegRisk markets, combinatorial takes the pair.
    plant_of_market: dict[str, Plant] = {}
    single_cursor = 0
    negrisk_cursor = 0
    pair_plant: Plant | None = None
    for plant in config.plants:
        if plant.kind in (PLANT_COND_LONG, PLANT_COND_SHORT):
            if single_cursor >= len(singles):
                raise SynthError("not enough single markets for condition plants")
            plant_of_market[singles[single_cursor].key] = plant
            single_cursor += 1
        elif plant.kind in (PLANT_MARKET_LONG, PLANT_MARKET_SHORT):
            if negrisk_cursor >= len(negrisk):
                raise SynthError("not enough NegRisk markets for market plants")
            plant_of_market[negrisk[negrisk_cursor].key] = plant
            negrisk_cursor += 1
        elif plant.kind == PLANT_COMBINATORIAL:
            if pair_markets is None:
                raise SynthError("combinatorial plant requires dependent_pair=true")
            if pair_plant is not None:
                raise SynthError("only one combinatorial plant is supported")
            pair_plant = plant
        lo = config.start_block + 2
        hi = config.start_block + config.block_span - 2
        if not lo <= plant.block <= hi:
            raise SynthError(f"plant block {plant.block} outside ({lo}, {hi})")

    fills_per_round = 2  # single market: YES + NO
    n_sources = len(singles) + len(negrisk) + (1 if pair_markets else 0)
    manifest: list[PlantRecord] = []
    sources: list[_Source] = []
    bot_counter = 0

    def bot_name() -> str:
        nonlocal bot_counter
        name = f"0xbot{bot_counter:02d}"
        bot_counter += 1
        return name

    def with_plant(anchors: list[int], plant: Plant | None) -> list[int]:
        if plant is None:
            return anchors
        keep = [b for b in anchors if b not in (plant.block, plant.block + 1)]
        return sorted(keep + [plant.block, plant.block + 1])

    for i, market in enumerate(singles):
        plant = plant_of_market.get(market.key)
        anchors = _anchor_blocks(config, fills_per_round, n_sources, phase=i * 37)
        record_rows: list[_Row] = []
        if plant is not None:
            account = bot_name()
            record_rows, profit = _plant_cond_rows(plant, market, account)
            manifest.append(PlantRecord(
                type=plant.kind, block=plant.block, market_id=market.key,
                scope_id=market.conditions[0].condition_id,
                magnitude_usd=profit, account=account,
                deviation=plant.magnitude, units=plant.units,
                detect_kind=_DETECT_KIND[plant.kind],
            ))
        sources.append(_Source(
            seed=f"{seed}/noise/s{i}", markets=[market],
            anchors=with_plant(anchors, plant), accounts=accounts,
            plant=plant, plant_rows=record_rows,
        ))

    for i, market in enumerate(negrisk):
        plant = plant_of_market.get(market.key)
        per_round = 2 * market.n_conditions
        anchors = _anchor_blocks(config, per_round, n_sources, phase=1000 + i * 53)
        record_rows = []
        if plant is not None:
            account = bot_name()
            shadow = accounts[0]
            record_rows, profit = _plant_market_rows(plant, market, account, shadow)
            manifest.append(PlantRecord(
                type=plant.kind, block=plant.block, market_id=market.key,
                scope_id=market.key, magnitude_usd=profit, account=account,
                deviation=plant.magnitude, units=plant.units,
                detect_kind=_DETECT_KIND[plant.kind],
            ))
        sources.append(_Source(
            seed=f"{seed}/noise/m{i}", markets=[market],
            anchors=with_plant(anchors, plant), accounts=accounts,
            plant=plant, plant_rows=record_rows,
        ))

    oracle_responses: dict[str, str] = {}
    if pair_markets is not None:
        d1, d2 = pair_markets
        anchors = _anchor_blocks(config, 8, n_sources, phase=2000)
        record_rows = []
        if pair_plant is not None:
            account = bot_name()
            record_rows, profit = _plant_pair_rows(pair_plant, d1, d2, account, accounts[0])
            manifest.append(PlantRecord(
                type=pair_plant.kind, block=pair_plant.block,
                market_id=f"{d1.key}|{d2.key}", scope_id=f"{d1.key}|{d2.key}",
                magnitude_usd=profit, account=account,
                deviation=pair_plant.magnitude, units=pair_plant.units,
                detect_kind=_DETECT_KIND[pair_plant.kind],
            ))
        sources.append(_Source(
            seed=f"{seed}/noise/pair", markets=[d1, d2],
            anchors=with_plant(anchors, pair_plant), accounts=accounts,
            plant=pair_plant, plant_rows=record_rows, mirrored=True,
        ))

        # Canned oracle reply certifying the aligned two-by-two structure.
        questions = (
            [c.question for c in reduce_market(d1).conditions]
            + [c.question for c in reduce_market(d2).conditions]
        )
        reply = (
            "```json\n"
            '{"valid_combinations": [[true, false, true, false], '
            "[false, true, false, true]]}\n"
            "```"
        )
        oracle_responses[prompt_key(build_prompt(questions))] = reply

    descriptors = [_descriptor(c, m) for m in markets for c in m.conditions]
    manifest.sort(key=lambda r: (r.block, r.scope_id))
    rng.random()  # reserve a draw so future structure knobs stay additive
    return SynthBundle(
        config=config,
        seed=seed,
        descriptors=descriptors,
        markets=markets,
        manifest=manifest,
        oracle_responses=oracle_responses,
        pair_markets=pair_markets,
        pair_subsets=pair_subsets,
        _sources=sources,
    )
