"""Block-indexed VWAP price series with bounded carry-forward.

Each traded block window gets one volume-weighted price per token. A
token keeps its last price for up to ``carry_limit`` blocks after its
last trade, then drops to 0 (an untraded token is effectively worthless).
Blocks before a token's first trade have no price at all, which is
distinct from 0: detection treats "no price yet" as non-participating.
"""

from __future__ import annotations

from array import array
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

DEFAULT_WINDOW = 1
DEFAULT_CARRY_LIMIT = 5000
DEFAULT_DETERMINED_THRESHOLD = 0.95


@dataclass
class PriceSeries:
    """Per-token prices keyed by block bucket, plus carry-forward lookup."""

    token: str
    blocks: np.ndarray  # int64 bucket starts, strictly increasing
    vwaps: np.ndarray   # float64, one price per bucket
    volumes: np.ndarray  # float64 token volume per bucket
    carry_limit: int = DEFAULT_CARRY_LIMIT
    skipped_zero_token_fills: int = 0

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def first_block(self) -> int:
        return int(self.blocks[0])

    @property
    def last_block(self) -> int:
        return int(self.blocks[-1])

    def price_at(self, block: int) -> float | None:
        """Price at ``block``: None before the first trade, 0.0 past carry."""
        i = bisect_right(self.blocks, block) - 1
        if i < 0:
            return None
        if block - int(self.blocks[i]) <= self.carry_limit:
            return float(self.vwaps[i])
        return 0.0

    def prices_at(self, query: np.ndarray) -> np.ndarray:
        """Vectorized ``price_at``; NaN stands for "no price yet"."""
        idx = np.searchsorted(self.blocks, query, side="right") - 1
        out = np.full(len(query), np.nan)
        has = idx >= 0
        hit = idx[has]
        within = (query[has] - self.blocks[hit]) <= self.carry_limit
        out[has] = np.where(within, self.vwaps[hit], 0.0)
        return out


class _Accumulator:
    """Streaming per-token VWAP aggregation into fixed block buckets."""

    __slots__ = ("token", "window", "anchor", "bucket", "usdc", "tokens",
                 "blocks", "vwaps", "volumes", "skipped")

    def __init__(self, token: str, window: int):
        self.token = token
        self.window = window
        self.anchor = -1      # first observed block, bucket grid origin
        self.bucket = -1      # current bucket start
        self.usdc = 0.0
        self.tokens = 0.0
        self.blocks = array("q")
        self.vwaps = array("d")
        self.volumes = array("d")
        self.skipped = 0

    def add(self, block: int, usdc: float, tokens: float) -> None:
        if tokens <= 0.0:
            self.skipped += 1
            return
        if self.anchor < 0:
            self.anchor = block
        window = self.window
        bucket = self.anchor + ((block - self.anchor) // window) * window
        if bucket != self.bucket:
            if self.bucket >= 0:
                self._flush()
            self.bucket = bucket
            self.usdc = 0.0
            self.tokens = 0.0
        self.usdc += usdc
        self.tokens += tokens

    def _flush(self) -> None:
        self.blocks.append(self.bucket)
        self.vwaps.append(self.usdc / self.tokens)
        self.volumes.append(self.tokens)

    def finish(self, carry_limit: int) -> PriceSeries:
        if self.bucket >= 0:
            self._flush()
        return PriceSeries(
            token=self.token,
            blocks=np.frombuffer(self.blocks, dtype=np.int64),
            vwaps=np.frombuffer(self.vwaps, dtype=np.float64),
            volumes=np.frombuffer(self.volumes, dtype=np.float64),
            carry_limit=carry_limit,
            skipped_zero_token_fills=self.skipped,
        )


def vwap_series(events, window: int = DEFAULT_WINDOW,
                carry_limit: int = DEFAULT_CARRY_LIMIT) -> PriceSeries:
    """Build the price series for a single token from its sorted fills.

    Bucket VWAP is total USDC over total tokens. Buckets are aligned to
    ``[b, b + window)`` starting at the token's first observed block.
    Fills with zero token amount are skipped and counted.
    """
    acc: _Accumulator | None = None
    for ev in events:
        if acc is None:
            acc = _Accumulator(ev.token, window)
        elif ev.token != acc.token:
            raise ValueError(f"mixed tokens in fill stream: {acc.token} vs {ev.token}")
        acc.add(ev.block, ev.usdc, ev.tokens)
    if acc is None:
        raise ValueError("no fills provided")
    return acc.finish(carry_limit)


def build_price_series(events, window: int = DEFAULT_WINDOW,
                       carry_limit: int = DEFAULT_CARRY_LIMIT) -> dict[str, PriceSeries]:
    """Single pass over a sorted event stream, aggregating fills per token.

    Only order fills carry prices; splits and merges pass through here
    untouched. Memory is bounded by the number of (token, bucket) pairs.
    """
    accs: dict[str, _Accumulator] = {}
    for ev in events:
        if not ev.token:  # split/merge rows carry a condition_id instead
            continue
        acc = accs.get(ev.token)
        if acc is None:
            acc = accs[ev.token] = _Accumulator(ev.token, window)
        acc.add(ev.block, ev.usdc, ev.tokens)
    return {token: acc.finish(carry_limit) for token, acc in accs.items()}


def determined_array(series: Sequence[PriceSeries], threshold: float,
                     query: np.ndarray) -> np.ndarray:
    """Boolean mask over ``query`` blocks where any series price exceeds threshold."""
    mask = np.zeros(len(query), dtype=bool)
    for s in series:
        prices = s.prices_at(query)
        # NaN (no price yet) compares False, so unpriced tokens never mask.
        mask |= prices > threshold
    return mask


def determined_mask(series: Sequence[PriceSeries],
                    blocks: Iterable[int],
                    threshold: float = DEFAULT_DETERMINED_THRESHOLD) -> set[int]:
    """Blocks excluded from detection: some YES price is strictly above threshold.

    A market with a near-certain outcome is already resolving naturally;
    those blocks are not arbitrage.
    """
    query = np.fromiter(blocks, dtype=np.int64)
    excluded = determined_array(series, threshold, query)
    return {int(b) for b in query[excluded]}


@dataclass
class SupplySeries:
    """Outstanding token units per condition: cumulative splits minus merges."""

    condition_id: str
    blocks: np.ndarray
    supply: np.ndarray

    def supply_at(self, block: int) -> float:
        i = bisect_right(self.blocks, block) - 1
        return float(self.supply[i]) if i >= 0 else 0.0


def build_supply_series(events) -> dict[str, SupplySeries]:
    """Track outstanding units per condition from split/merge flow.

    This is an upper bound on what an arbitrageur could buy: tokens that
    exist, not resting order depth.
    """
    state: dict[str, tuple[array, array, float]] = {}
    for ev in events:
        kind_name = ev.kind.value
        if kind_name == "PositionSplit":
            delta = ev.tokens
        elif kind_name == "PositionsMerge":
            delta = -ev.tokens
        else:
            continue
        entry = state.get(ev.condition_id)
        if entry is None:
            entry = state[ev.condition_id] = (array("q"), array("d"), 0.0)
        blocks, supply, _ = entry
        running = (supply[-1] if supply else 0.0) + delta
        if blocks and blocks[-1] == ev.block:
            supply[-1] = running
        else:
            blocks.append(ev.block)
            supply.append(running)
        state[ev.condition_id] = (blocks, supply, running)

    return {
        cid: SupplySeries(
            condition_id=cid,
            blocks=np.frombuffer(blocks, dtype=np.int64),
            supply=np.frombuffer(supply, dtype=np.float64),
        )
        for cid, (blocks, supply, _) in state.items()
    }


def iter_series_rows(series: dict[str, PriceSeries]) -> Iterator[tuple[str, int, float, float]]:
    """Flatten series to (token, block, vwap, volume) rows for the CSV dump."""
    for token in sorted(series):
        s = series[token]
        for i in range(len(s)):
            yield token, int(s.blocks[i]), float(s.vwaps[i]), float(s.volumes[i])
