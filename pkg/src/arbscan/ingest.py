"""Trade-event log parsing, market descriptors, and bid filtering.

The event log is a plain CSV export of on-chain order-book activity:
order fills plus position splits/merges. Parsing is a strict streaming
pass; logs of tens of millions of rows go through in bounded memory.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Iterator

from .market_model import Condition, Market

EXCHANGE = "EXCHANGE"  # counterparty sentinel for mint/burn legs
MIN_BID_USDC = 2.00

CSV_COLUMNS = (
    "block", "tx_index", "kind", "account", "counterparty",
    "token", "condition_id", "usdc", "tokens", "side",
)
CSV_HEADER = ",".join(CSV_COLUMNS)


class EventKind(Enum):
    ORDER_FILLED = "OrderFilled"
    POSITION_SPLIT = "PositionSplit"
    POSITIONS_MERGE = "PositionsMerge"


class Side(Enum):
    BUY = "Buy"
    SELL = "Sell"
    NA = "NA"


_KIND_BY_NAME = {k.value: k for k in EventKind}
_SIDE_BY_NAME = {s.value: s for s in Side}


def parse_iso_date(text: str) -> date:
    """Accept plain dates and full ISO timestamps, keep the date part."""
    text = text.strip()
    try:
        return date.fromisoformat(text[:10]) if len(text) >= 10 else date.fromisoformat(text)
    except ValueError:
        return datetime.fromisoformat(text).date()


@dataclass(slots=True)
class TradeEvent:
    """One normalized on-chain record: a fill, split, or merge."""

    block: int
    tx_index: int
    kind: EventKind
    account: str
    counterparty: str
    token: str         # empty for split/merge
    condition_id: str  # empty for fills
    usdc: float
    tokens: float
    side: Side


@dataclass(frozen=True)
class ErrorRecord:
    line_no: int
    message: str
    raw: str


class ParseError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass
class ParseStats:
    lines: int = 0
    events: int = 0
    errors: list[ErrorRecord] = field(default_factory=list)


def _check_row(kind: EventKind, token: str, condition_id: str, usdc: float,
               tokens: float, side: Side) -> str | None:
    if not (usdc >= 0.0) or not (tokens >= 0.0):
        return "usdc and tokens must be finite and non-negative"
    if math.isinf(usdc) or math.isinf(tokens):
        return "usdc and tokens must be finite and non-negative"
    if kind is EventKind.ORDER_FILLED:
        if not token:
            return "OrderFilled requires a token id"
        if side is Side.NA:
            return "OrderFilled requires side Buy or Sell"
    else:
        if not condition_id:
            return f"{kind.value} requires a condition_id"
        if side is not Side.NA:
            return f"{kind.value} requires side NA"
    return None


def parse_event_log(source: str | Path | IO[str], strict: bool = True,
                    stats: ParseStats | None = None) -> Iterator[TradeEvent]:
    """Stream TradeEvents from a CSV log in (block, tx_index) order.

    Malformed or out-of-order lines raise ParseError in strict mode; in
    lenient mode they are skipped and recorded on ``stats``.
    """
    own = isinstance(source, (str, Path))
    fh: IO[str] = open(source, "r", encoding="utf-8", newline="") if own else source
    if stats is None:
        stats = ParseStats()
    try:
        header = fh.readline().rstrip("\r\n")
        if header != CSV_HEADER:
            raise ParseError(1, f"unexpected header: {header!r}")

        kinds = _KIND_BY_NAME
        sides = _SIDE_BY_NAME
        make = TradeEvent
        last_key = (-1, -1)
        line_no = 1
        for line in fh:
            line_no += 1
            stats.lines += 1
            parts = line.rstrip("\r\n").split(",")
            try:
                if len(parts) != 10:
                    raise ValueError(f"expected 10 fields, got {len(parts)}")
                block = int(parts[0])
                tx_index = int(parts[1])
                kind = kinds[parts[2]]
                usdc = float(parts[7])
                tokens = float(parts[8])
                side = sides[parts[9]]
                problem = _check_row(kind, parts[5], parts[6], usdc, tokens, side)
                if problem is not None:
                    raise ValueError(problem)
                if block < 0:
                    raise ValueError("negative block")
                key = (block, tx_index)
                if key <= last_key:
                    raise ValueError(f"events out of order at block {block} tx {tx_index}")
            except (ValueError, KeyError) as exc:
                msg = str(exc) if str(exc) else exc.__class__.__name__
                if strict:
                    raise ParseError(line_no, msg) from exc
                stats.errors.append(ErrorRecord(line_no, msg, line.rstrip("\r\n")))
                continue
            last_key = key
            stats.events += 1
            yield make(block, tx_index, kind, parts[3], parts[4],
                       parts[5], parts[6], usdc, tokens, side)
    finally:
        if own:
            fh.close()


def format_amount(x: float) -> str:
    """Up to 6 fractional digits, trailing zeros stripped."""
    s = f"{x:.6f}".rstrip("0").rstrip(".")
    return s if s else "0"


def event_to_row(ev: TradeEvent) -> str:
    return (
        f"{ev.block},{ev.tx_index},{ev.kind.value},{ev.account},{ev.counterparty},"
        f"{ev.token},{ev.condition_id},{format_amount(ev.usdc)},"
        f"{format_amount(ev.tokens)},{ev.side.value}"
    )


def write_event_log(target: str | Path | IO[str], events: Iterable[TradeEvent]) -> int:
    """Serialize events to the CSV wire format; returns the row count."""
    own = isinstance(target, (str, Path))
    fh: IO[str] = open(target, "w", encoding="utf-8", newline="") if own else target
    count = 0
    try:
        fh.write(CSV_HEADER + "\n")
        for ev in events:
            fh.write(event_to_row(ev) + "\n")
            count += 1
    finally:
        if own:
            fh.close()
    return count


def filter_bids(events: Iterable[TradeEvent],
                min_usdc: float = MIN_BID_USDC) -> Iterator[TradeEvent]:
    """Drop dust fills below ``min_usdc`` (inclusive boundary keeps $2.00).

    Splits and merges always pass through: they anchor position-ledger
    accounting and dropping them breaks cash conservation.
    """
    for ev in events:
        if ev.kind is not EventKind.ORDER_FILLED or ev.usdc >= min_usdc:
            yield ev


@dataclass(frozen=True)
class MarketDescriptor:
    """One condition's metadata row as exported from the market registry."""

    condition_id: str
    question: str
    end_date_iso: date
    yes_token: str
    no_token: str
    neg_risk_market_id: str | None = None
    yes_winner: bool | None = None
    total_volume: float = 0.0

    def __post_init__(self) -> None:
        if self.yes_token == self.no_token:
            raise ValueError(f"descriptor {self.condition_id}: token ids must differ")


def descriptor_from_json(obj: dict) -> MarketDescriptor:
    tokens = obj.get("tokens", [])
    yes_token = no_token = ""
    yes_winner: bool | None = None
    for tok in tokens:
        outcome = str(tok.get("outcome", "")).lower()
        if outcome == "yes":
            yes_token = str(tok.get("token_id", ""))
            if "winner" in tok:
                yes_winner = bool(tok["winner"])
        elif outcome == "no":
            no_token = str(tok.get("token_id", ""))
    neg = obj.get("neg_risk_market_id")
    return MarketDescriptor(
        condition_id=str(obj["condition_id"]),
        question=str(obj.get("question", "")),
        end_date_iso=parse_iso_date(str(obj["end_date_iso"])),
        yes_token=yes_token,
        no_token=no_token,
        neg_risk_market_id=str(neg) if neg else None,
        yes_winner=yes_winner,
        total_volume=float(obj.get("total_volume", 0.0)),
    )


def descriptor_to_json(d: MarketDescriptor) -> dict:
    obj: dict = {
        "condition_id": d.condition_id,
        "question": d.question,
        "end_date_iso": d.end_date_iso.isoformat(),
        "neg_risk_market_id": d.neg_risk_market_id,
        "tokens": [
            {"token_id": d.yes_token, "outcome": "Yes", "winner": d.yes_winner},
            {"token_id": d.no_token, "outcome": "No",
             "winner": None if d.yes_winner is None else not d.yes_winner},
        ],
    }
    if d.total_volume:
        obj["total_volume"] = d.total_volume
    return obj


def load_descriptors(source: str | Path | IO[str]) -> list[MarketDescriptor]:
    """Read line-delimited JSON descriptor rows."""
    own = isinstance(source, (str, Path))
    fh: IO[str] = open(source, "r", encoding="utf-8") if own else source
    try:
        out = []
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(descriptor_from_json(json.loads(line)))
            except (KeyError, ValueError, TypeError) as exc:
                raise ParseError(line_no, f"bad descriptor: {exc}") from exc
        return out
    finally:
        if own:
            fh.close()


def canonical_end_date(descriptors: list[MarketDescriptor]) -> date:
    """Modal end date across a market's descriptors; latest wins a tie.

    Registry exports disagree on end dates within one market even though
    all its conditions resolve together, so the mode is taken as truth.
    """
    if not descriptors:
        raise ValueError("canonical_end_date requires at least one descriptor")
    counts = Counter(d.end_date_iso for d in descriptors)
    top = max(counts.values())
    return max(d for d, c in counts.items() if c == top)


def condition_volumes(events: Iterable[TradeEvent],
                      token_to_condition: dict[str, str]) -> dict[str, float]:
    """Total fill USDC per condition, combining YES and NO token flow."""
    volumes: dict[str, float] = {}
    for ev in events:
        if ev.kind is not EventKind.ORDER_FILLED:
            continue
        cid = token_to_condition.get(ev.token)
        if cid is not None:
            volumes[cid] = volumes.get(cid, 0.0) + ev.usdc
    return volumes


def build_markets(descriptors: list[MarketDescriptor],
                  volumes: dict[str, float] | None = None) -> list[Market]:
    """Group descriptors into markets with canonical end dates.

    Descriptors sharing a neg_risk_market_id form one multi-condition
    market; the rest are single-condition markets keyed by condition_id.
    File order is preserved within each market.
    """
    volumes = volumes or {}
    grouped: dict[str, list[MarketDescriptor]] = {}
    singles: list[MarketDescriptor] = []
    order: list[tuple[str, bool]] = []  # (key, is_group) in first-seen order
    for d in descriptors:
        if d.neg_risk_market_id:
            if d.neg_risk_market_id not in grouped:
                order.append((d.neg_risk_market_id, True))
            grouped.setdefault(d.neg_risk_market_id, []).append(d)
        else:
            order.append((d.condition_id, False))
            singles.append(d)
    single_by_id = {d.condition_id: d for d in singles}

    def to_condition(d: MarketDescriptor) -> Condition:
        return Condition(
            condition_id=d.condition_id,
            question=d.question,
            yes_token=d.yes_token,
            no_token=d.no_token,
            end_date=d.end_date_iso,
            total_volume=volumes.get(d.condition_id, d.total_volume),
        )

    markets: list[Market] = []
    for key, is_group in order:
        if is_group:
            group = grouped[key]
            markets.append(Market(
                conditions=tuple(to_condition(d) for d in group),
                market_id=key,
                canonical_end_date=canonical_end_date(group),
            ))
        else:
            d = single_by_id[key]
            markets.append(Market(
                conditions=(to_condition(d),),
                market_id=None,
                canonical_end_date=d.end_date_iso,
            ))
    return markets


def token_condition_map(markets: Iterable[Market]) -> dict[str, str]:
    out: dict[str, str] = {}
    for market in markets:
        for c in market.conditions:
            out[c.yes_token] = c.condition_id
            out[c.no_token] = c.condition_id
    return out
