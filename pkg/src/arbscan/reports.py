"""Report emission: liquidity concentration, CSV/JSONL artifacts, atomic writes."""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .attribution import AttributionReport
from .detect import Opportunity
from .dependency import PairResult
from .ingest import format_amount
from .market_model import Market, MarketKind
from .pricing import PriceSeries, iter_series_rows


@dataclass(frozen=True)
class LiquidityRank:
    rank: int  # 1-based condition rank by volume
    mean_share: float
    mean_cumulative: float


def liquidity_concentration(markets: Sequence[Market],
                            max_rank: int | None = None) -> list[LiquidityRank]:
    """Average cumulative volume share by condition rank across markets.

    Within each multi-condition market, conditions are ranked by traded
    volume; rank r's cumulative share is how much of the market's volume
    the top r conditions hold. Markets with fewer conditions than a rank
    count as fully covered there, so the averaged curve is monotone.
    """
    multi = [m for m in markets if m.kind is MarketKind.NEG_RISK]
    if not multi:
        return []
    widest = max(m.n_conditions for m in multi)
    if max_rank is not None:
        widest = min(widest, max_rank)

    shares: list[list[float]] = []
    for market in multi:
        volumes = sorted((c.total_volume for c in market.conditions), reverse=True)
        total = sum(volumes)
        if total <= 0:
            continue
        shares.append([v / total for v in volumes])
    if not shares:
        return []

    out: list[LiquidityRank] = []
    cumulative = [0.0] * len(shares)
    for rank in range(1, widest + 1):
        step = [
            row[rank - 1] if rank <= len(row) else 0.0
            for row in shares
        ]
        cumulative = [c + s for c, s in zip(cumulative, step)]
        out.append(LiquidityRank(
            rank=rank,
            mean_share=sum(step) / len(step),
            mean_cumulative=sum(cumulative) / len(cumulative),
        ))
    return out


def atomic_write_text(path: Path, text: str) -> None:
    """Write via a temp file and rename, so readers never see partial output."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_jsonl(path: Path, records: Iterable[dict]) -> int:
    lines = [json.dumps(rec, sort_keys=True, default=str) for rec in records]
    atomic_write_text(path, "".join(line + "\n" for line in lines))
    return len(lines)


def write_opportunities_csv(path: Path, opportunities: Sequence[Opportunity]) -> int:
    rows = ["kind,block,scope_id,deviation,max_profit,legs_json"]
    for o in opportunities:
        legs = o.legs_json().replace('"', '""')
        rows.append(
            f"{o.kind.value},{o.block},{o.scope_id},{o.deviation:.6f},"
            f"{o.max_profit:.6f},\"{legs}\""
        )
    atomic_write_text(path, "\n".join(rows) + "\n")
    return len(rows) - 1


def write_prices_csv(path: Path, series: dict[str, PriceSeries]) -> int:
    count = 0
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write("token,block,vwap,volume\n")
            for token, block, vwap, volume in iter_series_rows(series):
                fh.write(f"{token},{block},{vwap:.8f},{format_amount(volume)}\n")
                count += 1
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return count


def read_prices_csv(path: Path) -> dict[str, PriceSeries]:
    """Rebuild series from a prices dump (inverse of write_prices_csv)."""
    import numpy as np

    tokens: dict[str, tuple[list[int], list[float], list[float]]] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != "token,block,vwap,volume":
            raise ValueError(f"unexpected prices header: {header!r}")
        for line in fh:
            token, block, vwap, volume = line.rstrip("\n").split(",")
            entry = tokens.get(token)
            if entry is None:
                entry = tokens[token] = ([], [], [])
            entry[0].append(int(block))
            entry[1].append(float(vwap))
            entry[2].append(float(volume))
    return {
        token: PriceSeries(
            token=token,
            blocks=np.asarray(blocks, dtype=np.int64),
            vwaps=np.asarray(vwaps, dtype=np.float64),
            volumes=np.asarray(volumes, dtype=np.float64),
        )
        for token, (blocks, vwaps, volumes) in tokens.items()
    }


def write_attribution_csv(path: Path, report: AttributionReport) -> int:
    rows = ["account,scope_kind,scope_id,strategy,profit,bids,first_block,last_block"]
    for r in report.rows:
        rows.append(
            f"{r.account},{r.scope_kind},{r.scope_id},{r.strategy.value},"
            f"{r.profit:.6f},{r.bids},{r.first_block},{r.last_block}"
        )
    atomic_write_text(path, "\n".join(rows) + "\n")
    return len(rows) - 1


def write_leaderboard_csv(path: Path, report: AttributionReport) -> int:
    rows = ["rank,account,total_profit,bids"]
    for r in report.board:
        rows.append(f"{r.rank},{r.account},{r.total_profit:.6f},{r.bids}")
    atomic_write_text(path, "\n".join(rows) + "\n")
    return len(rows) - 1


def pair_result_record(result: PairResult) -> dict:
    return {
        "pair_id": result.pair_id,
        "market1": result.market1_key,
        "market2": result.market2_key,
        "n": result.n,
        "m": result.m,
        "verdict": result.verdict.value,
        "vectors": [list(v) for v in result.vectors] if result.vectors is not None else None,
        "dependent_subsets": [
            {"s1": list(s.s1), "s2": list(s.s2)} for s in result.dependent_subsets
        ],
        "involves_catch_all": result.involves_catch_all,
        "review_flags": list(result.review_flags),
        "error": result.error,
    }


def write_liquidity_csv(path: Path, ranks: Sequence[LiquidityRank]) -> int:
    rows = ["rank,mean_share,mean_cumulative"]
    for r in ranks:
        rows.append(f"{r.rank},{r.mean_share:.6f},{r.mean_cumulative:.6f}")
    atomic_write_text(path, "\n".join(rows) + "\n")
    return len(rows) - 1
