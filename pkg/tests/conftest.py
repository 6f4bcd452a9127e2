"""Shared builders for compact test fixtures."""

from __future__ import annotations

from datetime import date

import numpy as np
import pytest

from arbscan.ingest import EventKind, Side, TradeEvent
from arbscan.market_model import Condition, Market, OutcomeSpace
from arbscan.pricing import PriceSeries


def cond(i: int, volume: float = 0.0, question: str | None = None) -> Condition:
    return Condition(
        condition_id=f"0xc{i:03d}",
        question=question or f"Will outcome {i} happen?",
        yes_token=f"0xc{i:03d}y",
        no_token=f"0xc{i:03d}n",
        end_date=date(2024, 11, 5),
        total_volume=volume,
    )


def single_market(i: int, **kwargs) -> Market:
    return Market(conditions=(cond(i, **kwargs),), canonical_end_date=date(2024, 11, 5))


def negrisk_market(i: int, n: int, volumes: list[float] | None = None) -> Market:
    conditions = tuple(
        cond(100 * i + j, volume=(volumes[j] if volumes else 0.0)) for j in range(n)
    )
    return Market(conditions=conditions, market_id=f"0xm{i:03d}",
                  canonical_end_date=date(2024, 11, 5))


def space(bit_strings: list[str], arity: tuple[int, ...]) -> OutcomeSpace:
    vectors = tuple(tuple(ch == "1" for ch in s) for s in bit_strings)
    return OutcomeSpace(vectors=vectors, arity=arity)


_TX = {"n": 0}


def fill(block: int, token: str, usdc: float, tokens: float,
         side: str = "Buy", account: str = "0xtrader") -> TradeEvent:
    _TX["n"] += 1
    return TradeEvent(
        block=block, tx_index=_TX["n"], kind=EventKind.ORDER_FILLED,
        account=account, counterparty="EXCHANGE", token=token, condition_id="",
        usdc=usdc, tokens=tokens, side=Side.BUY if side == "Buy" else Side.SELL,
    )


def split(block: int, condition_id: str, units: float,
          account: str = "0xtrader") -> TradeEvent:
    _TX["n"] += 1
    return TradeEvent(
        block=block, tx_index=_TX["n"], kind=EventKind.POSITION_SPLIT,
        account=account, counterparty="EXCHANGE", token="", condition_id=condition_id,
        usdc=units, tokens=units, side=Side.NA,
    )


def merge(block: int, condition_id: str, units: float,
          account: str = "0xtrader") -> TradeEvent:
    _TX["n"] += 1
    return TradeEvent(
        block=block, tx_index=_TX["n"], kind=EventKind.POSITIONS_MERGE,
        account=account, counterparty="EXCHANGE", token="", condition_id=condition_id,
        usdc=units, tokens=units, side=Side.NA,
    )


def series(token: str, points: list[tuple[int, float]],
           carry_limit: int = 5000) -> PriceSeries:
    blocks = np.asarray([b for b, _ in points], dtype=np.int64)
    vwaps = np.asarray([p for _, p in points], dtype=np.float64)
    return PriceSeries(token=token, blocks=blocks, vwaps=vwaps,
                       volumes=np.ones(len(points)), carry_limit=carry_limit)


@pytest.fixture(autouse=True)
def _reset_tx_counter():
    _TX["n"] = 0
    yield
