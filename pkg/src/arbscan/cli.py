"""Batch pipeline commands: synth, ingest, topics, pairs, discover, prices,
detect, attribute, report.

Each command reads upstream artifacts from the output directory, writes
its own, and drops a stage manifest (config hash, input/output digests,
counts). Reruns with identical inputs reproduce byte-identical outputs,
so threshold experiments can iterate on one stage without re-ingesting.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from datetime import date
from pathlib import Path
from typing import Sequence

import yaml

from . import attribution, dependency, detect, ingest, pricing, reports, synth
from .market_model import Condition, DependentSubsets, Market

log = logging.getLogger("arbscan")

_ORACLE_ENV_VARS = (
    "ARBSCAN_ORACLE_URL", "ARBSCAN_ORACLE_MODEL", "ARBSCAN_ORACLE_TIMEOUT",
    "ARBSCAN_ORACLE_RETRIES", "ARBSCAN_EMBED_URL",
)


class StageError(SystemExit):
    def __init__(self, message: str):
        super().__init__(f"arbscan: {message}")


@dataclasses.dataclass
class RunConfig:
    events: str = ""
    descriptors: str = ""
    out: str = "out"
    determined_threshold: float = pricing.DEFAULT_DETERMINED_THRESHOLD
    min_profit_per_dollar: float = detect.DEFAULT_MIN_PROFIT
    min_prob_for_sizing: float = detect.DEFAULT_SIZING_FLOOR
    window: int = 1
    carry_limit: int = pricing.DEFAULT_CARRY_LIMIT
    episode_window: int = attribution.DEFAULT_EPISODE_WINDOW
    min_episode_profit: float = attribution.DEFAULT_MIN_EPISODE_PROFIT
    budget_cap: float | None = None
    strict_parse: bool = True
    estimate_missing: bool = False
    seed: int = 7
    oracle_fixture: str = ""
    oracle_parallel: int = 4
    synth: dict = dataclasses.field(default_factory=dict)

    def detect_params(self) -> detect.DetectParams:
        return detect.DetectParams(
            determined_threshold=self.determined_threshold,
            min_profit_per_dollar=self.min_profit_per_dollar,
            min_prob_for_sizing=self.min_prob_for_sizing,
            window=self.window,
        )

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def load_config(path: str | None) -> RunConfig:
    config = RunConfig()
    if not path:
        return config
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    paths = data.pop("paths", {})
    for key in ("events", "descriptors", "out"):
        if key in paths:
            setattr(config, key, str(paths[key]))
    detect_section = data.pop("detect", {})
    for key in ("determined_threshold", "min_profit_per_dollar",
                "min_prob_for_sizing", "window"):
        if key in detect_section:
            setattr(config, key, detect_section[key])
    for key, value in data.items():
        if not hasattr(config, key):
            raise StageError(f"unknown config key {key!r}")
        setattr(config, key, value)
    return config


def apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    if getattr(args, "preset", None) == "figure5":
        config.min_profit_per_dollar = detect.FIGURE5_MIN_PROFIT
    mapping = {
        "events": "events", "descriptors": "descriptors", "out": "out",
        "min_profit": "min_profit_per_dollar", "window": "window",
        "carry_limit": "carry_limit", "episode_window": "episode_window",
        "determined_threshold": "determined_threshold",
        "sizing_floor": "min_prob_for_sizing", "budget_cap": "budget_cap",
        "seed": "seed", "oracle_fixture": "oracle_fixture",
    }
    for arg_name, field_name in mapping.items():
        value = getattr(args, arg_name, None)
        if value is not None:
            setattr(config, field_name, value)
    if getattr(args, "lenient", False):
        config.strict_parse = False
    if getattr(args, "estimate_missing", False):
        config.estimate_missing = True
    return config


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _config_hash(config: RunConfig) -> str:
    canonical = json.dumps(config.to_json(), sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def write_stage_manifest(stage_dir: Path, stage: str, config: RunConfig,
                         inputs: dict[str, Path], counts: dict[str, int]) -> None:
    outputs = {
        p.name: _sha256(p)
        for p in sorted(stage_dir.iterdir())
        if p.is_file() and p.name != "manifest.json"
    }
    manifest = {
        "stage": stage,
        "config_hash": _config_hash(config),
        "inputs": {name: _sha256(path) for name, path in sorted(inputs.items())},
        "outputs": outputs,
        "counts": counts,
        "env": {name: ("set" if os.environ.get(name) else "unset")
                for name in _ORACLE_ENV_VARS},
    }
    reports.atomic_write_text(stage_dir / "manifest.json",
                              json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise StageError(f"missing {path}; run `arbscan {producer}` first")
    return path


# ---------------------------------------------------------------------------
# market table serialization shared by the stages

def market_to_json(market: Market) -> dict:
    return {
        "market_id": market.market_id,
        "topic": market.topic,
        "canonical_end_date": (
            market.canonical_end_date.isoformat() if market.canonical_end_date else None
        ),
        "conditions": [
            {
                "condition_id": c.condition_id,
                "question": c.question,
                "yes_token": c.yes_token,
                "no_token": c.no_token,
                "end_date": c.end_date.isoformat() if c.end_date else None,
                "total_volume": c.total_volume,
            }
            for c in market.conditions
        ],
    }


def market_from_json(obj: dict) -> Market:
    return Market(
        conditions=tuple(
            Condition(
                condition_id=c["condition_id"],
                question=c["question"],
                yes_token=c["yes_token"],
                no_token=c["no_token"],
                end_date=date.fromisoformat(c["end_date"]) if c.get("end_date") else None,
                total_volume=float(c.get("total_volume", 0.0)),
            )
            for c in obj["conditions"]
        ),
        market_id=obj.get("market_id"),
        topic=obj.get("topic"),
        canonical_end_date=(
            date.fromisoformat(obj["canonical_end_date"])
            if obj.get("canonical_end_date") else None
        ),
    )


def load_markets(path: Path) -> list[Market]:
    with open(path, "r", encoding="utf-8") as fh:
        return [market_from_json(obj) for obj in json.load(fh)]


def _save_markets(path: Path, markets: Sequence[Market]) -> None:
    payload = json.dumps([market_to_json(m) for m in markets], indent=2, sort_keys=True)
    reports.atomic_write_text(path, payload + "\n")


def _load_topics(path: Path) -> dict[str, str]:
    topics: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                topics[obj["market_id"]] = obj["topic"]
    return topics


def _markets_with_topics(out_dir: Path) -> list[Market]:
    markets = load_markets(_require(out_dir / "markets.json", "ingest"))
    topics = _load_topics(_require(out_dir / "topics.jsonl", "topics"))
    return [dataclasses.replace(m, topic=topics.get(m.key)) for m in markets]


def _load_pair_specs(out_dir: Path, markets: Sequence[Market]) -> list[attribution.PairSpec]:
    """Certified dependent pairs from the discovery artifact, first subsets each."""
    discovery = out_dir / "discovery.jsonl"
    if not discovery.exists():
        return []
    by_key = {m.key: m for m in markets}
    specs: list[attribution.PairSpec] = []
    with open(discovery, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj.get("verdict") != "Dependent" or not obj.get("dependent_subsets"):
                continue
            m1 = by_key.get(obj["market1"])
            m2 = by_key.get(obj["market2"])
            if m1 is None or m2 is None:
                continue
            subset = obj["dependent_subsets"][0]
            specs.append(attribution.PairSpec(
                market1=m1, market2=m2,
                subsets=DependentSubsets(
                    s1=tuple(subset["s1"]), s2=tuple(subset["s2"]),
                ),
            ))
    return specs


# ---------------------------------------------------------------------------
# commands

def cmd_synth(config: RunConfig) -> int:
    out_dir = Path(config.out) / "synth"
    out_dir.mkdir(parents=True, exist_ok=True)
    synth_kwargs = dict(config.synth)
    plants = tuple(synth.Plant(**p) for p in synth_kwargs.pop("plants", []))
    bundle = synth.generate_synthetic(
        synth.SynthConfig(plants=plants, **synth_kwargs), seed=config.seed,
    )

    events_path = out_dir / "events.csv"
    tmp = events_path.with_name(".events.csv.tmp")
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        count = ingest.write_event_log(fh, bundle.events())
    os.replace(tmp, events_path)
    reports.write_jsonl(out_dir / "descriptors.jsonl",
                        (ingest.descriptor_to_json(d) for d in bundle.descriptors))
    reports.write_jsonl(out_dir / "planted.jsonl",
                        (r.to_json() for r in bundle.manifest))
    reports.write_jsonl(out_dir / "oracle_fixture.jsonl",
                        ({"key": k, "text": v} for k, v in sorted(bundle.oracle_responses.items())))
    write_stage_manifest(out_dir, "synth", config, {}, {
        "events": count,
        "markets": len(bundle.markets),
        "planted": len(bundle.manifest),
    })
    log.info("synth: %d events, %d markets, %d plants -> %s",
             count, len(bundle.markets), len(bundle.manifest), out_dir)
    return 0


def cmd_ingest(config: RunConfig) -> int:
    events_path = Path(config.events or "")
    descriptors_path = Path(config.descriptors or "")
    if not events_path.is_file():
        raise StageError(f"events file not found: {events_path}")
    if not descriptors_path.is_file():
        raise StageError(f"descriptors file not found: {descriptors_path}")
    out_dir = Path(config.out) / "ingest"
    out_dir.mkdir(parents=True, exist_ok=True)

    descriptors = ingest.load_descriptors(descriptors_path)
    markets = ingest.build_markets(descriptors)
    token_map = ingest.token_condition_map(markets)

    stats = ingest.ParseStats()
    volumes = ingest.condition_volumes(
        ingest.parse_event_log(events_path, strict=config.strict_parse, stats=stats),
        token_map,
    )
    markets = ingest.build_markets(descriptors, volumes)
    _save_markets(out_dir / "markets.json", markets)
    if stats.errors:
        reports.write_jsonl(out_dir / "parse_errors.jsonl", (
            {"line": e.line_no, "message": e.message, "raw": e.raw}
            for e in stats.errors
        ))
    write_stage_manifest(out_dir, "ingest", config, {
        "events": events_path, "descriptors": descriptors_path,
    }, {
        "events": stats.events, "parse_errors": len(stats.errors),
        "markets": len(markets),
    })
    log.info("ingest: %d events, %d markets (%d parse errors)",
             stats.events, len(markets), len(stats.errors))
    return 0


def cmd_topics(config: RunConfig) -> int:
    out_dir = Path(config.out) / "ingest"
    markets = load_markets(_require(out_dir / "markets.json", "ingest"))
    embed_url = os.environ.get("ARBSCAN_EMBED_URL")
    embedder = (dependency.HttpEmbedder(embed_url) if embed_url
                else dependency.KeywordEmbedder())
    assignments = dependency.assign_topics(markets, embedder)
    reports.write_jsonl(out_dir / "topics.jsonl", (
        {"market_id": a.market_id, "topic": a.topic, "score": round(a.score, 6)}
        for a in assignments
    ))
    write_stage_manifest(out_dir, "topics", config,
                         {"markets.json": out_dir / "markets.json"},
                         {"markets": len(assignments)})
    log.info("topics: %d markets assigned", len(assignments))
    return 0


def cmd_pairs(config: RunConfig) -> int:
    out_dir = Path(config.out) / "ingest"
    markets = _markets_with_topics(out_dir)
    pairs = dependency.candidate_pairs(markets)
    reports.write_jsonl(out_dir / "pairs.jsonl", (
        {
            "pair_id": dependency.pair_id(m1, m2),
            "market1": m1.key, "market2": m2.key,
            "topic": m1.topic,
            "end_date": m1.canonical_end_date.isoformat(),
        }
        for m1, m2 in pairs
    ))
    write_stage_manifest(out_dir, "pairs", config, {
        "markets.json": out_dir / "markets.json",
        "topics.jsonl": out_dir / "topics.jsonl",
    }, {"pairs": len(pairs)})
    log.info("pairs: %d candidates", len(pairs))
    return 0


def _make_oracle(config: RunConfig) -> dependency.Oracle:
    if config.oracle_fixture:
        return dependency.ReplayOracle.from_jsonl(config.oracle_fixture)
    endpoint = dependency.OracleEndpoint.from_env(dict(os.environ))
    if endpoint is None:
        raise StageError(
            "no oracle configured: set oracle_fixture in the config or "
            "ARBSCAN_ORACLE_URL in the environment"
        )
    return dependency.HttpOracle(endpoint)


def cmd_discover(config: RunConfig) -> int:
    out_dir = Path(config.out) / "ingest"
    _require(out_dir / "pairs.jsonl", "pairs")
    markets = _markets_with_topics(out_dir)
    pairs = dependency.candidate_pairs(markets)
    oracle = _make_oracle(config)
    results = dependency.discover_pairs(pairs, oracle, max_parallel=config.oracle_parallel)

    records = [reports.pair_result_record(r) for r in results]
    reports.write_jsonl(out_dir / "discovery.jsonl", records)
    review = [r for r in records if r["review_flags"] or r["involves_catch_all"]]
    if review:
        reports.write_jsonl(out_dir / "review_queue.jsonl", review)
    failures = [r for r in records if r["error"] and r["verdict"] == "NoParse"]
    if failures:
        reports.write_jsonl(out_dir / "discover_failures.jsonl", failures)
    counts = {
        "pairs": len(records),
        "dependent": sum(1 for r in records if r["verdict"] == "Dependent"),
        "independent": sum(1 for r in records if r["verdict"] == "Independent"),
        "no_parse": sum(1 for r in records if r["verdict"] == "NoParse"),
        "invalid_shape": sum(1 for r in records if r["verdict"] == "InvalidShape"),
    }
    write_stage_manifest(out_dir, "discover", config,
                         {"pairs.jsonl": out_dir / "pairs.jsonl"}, counts)
    log.info("discover: %s", counts)
    return 0


def cmd_prices(config: RunConfig) -> int:
    events_path = Path(config.events or "")
    if not events_path.is_file():
        raise StageError(f"events file not found: {events_path}")
    out_dir = Path(config.out) / "prices"
    out_dir.mkdir(parents=True, exist_ok=True)
    series = pricing.build_price_series(
        ingest.parse_event_log(events_path, strict=config.strict_parse),
        window=config.window, carry_limit=config.carry_limit,
    )
    rows = reports.write_prices_csv(out_dir / "prices.csv", series)
    write_stage_manifest(out_dir, "prices", config, {"events": events_path},
                         {"tokens": len(series), "rows": rows})
    log.info("prices: %d tokens, %d rows", len(series), rows)
    return 0


def cmd_detect(config: RunConfig) -> int:
    events_path = Path(config.events or "")
    if not events_path.is_file():
        raise StageError(f"events file not found: {events_path}")
    out_root = Path(config.out)
    prices_path = _require(out_root / "prices" / "prices.csv", "prices")
    markets = load_markets(_require(out_root / "ingest" / "markets.json", "ingest"))
    out_dir = out_root / "detect"
    out_dir.mkdir(parents=True, exist_ok=True)

    series = reports.read_prices_csv(prices_path)
    for s in series.values():
        s.carry_limit = config.carry_limit
    supply = pricing.build_supply_series(
        ingest.parse_event_log(events_path, strict=config.strict_parse))
    pair_specs = _load_pair_specs(out_root / "ingest", markets)
    certified = [
        detect.CertifiedPair(market1=p.market1, market2=p.market2, subsets=p.subsets)
        for p in pair_specs
    ]
    report = detect.scan_markets(
        markets, series, config.detect_params(), pairs=certified,
        supply=supply, budget_cap=config.budget_cap,
    )
    rows = reports.write_opportunities_csv(out_dir / "opportunities.csv",
                                           report.opportunities)
    write_stage_manifest(out_dir, "detect", config, {
        "prices.csv": prices_path,
        "markets.json": out_root / "ingest" / "markets.json",
    }, {
        "opportunities": rows,
        "blocks_scanned": report.stats.blocks_scanned,
        "blocks_skipped_unpriced": report.stats.blocks_skipped_unpriced,
        "blocks_masked_determined": report.stats.blocks_masked_determined,
    })
    log.info("detect: %d opportunities", rows)
    return 0


def cmd_attribute(config: RunConfig) -> int:
    events_path = Path(config.events or "")
    if not events_path.is_file():
        raise StageError(f"events file not found: {events_path}")
    out_root = Path(config.out)
    markets = load_markets(_require(out_root / "ingest" / "markets.json", "ingest"))
    out_dir = out_root / "attribute"
    out_dir.mkdir(parents=True, exist_ok=True)

    price_lookup = None
    if config.estimate_missing:
        prices_path = _require(out_root / "prices" / "prices.csv", "prices")
        series = reports.read_prices_csv(prices_path)

        def price_lookup(token: str, block: int) -> float | None:
            s = series.get(token)
            return s.price_at(block) if s is not None else None

    pair_specs = _load_pair_specs(out_root / "ingest", markets)
    filtered = ingest.filter_bids(
        ingest.parse_event_log(events_path, strict=config.strict_parse))
    report = attribution.attribute(
        filtered, markets, pairs=pair_specs,
        window=config.episode_window, min_profit=config.min_episode_profit,
        price_lookup=price_lookup,
    )
    rows = reports.write_attribution_csv(out_dir / "attribution.csv", report)
    board = reports.write_leaderboard_csv(out_dir / "leaderboard.csv", report)
    write_stage_manifest(out_dir, "attribute", config, {
        "events": events_path,
        "markets.json": out_root / "ingest" / "markets.json",
    }, {
        "episodes": report.episodes_total,
        "scored": rows,
        "accounts": board,
        "negative_excluded": report.negative_excluded,
        "external_sell_events": report.external_sell_events,
    })
    log.info("attribute: %d scored rows, %d accounts", rows, board)
    return 0


def cmd_report(config: RunConfig) -> int:
    out_root = Path(config.out)
    markets = load_markets(_require(out_root / "ingest" / "markets.json", "ingest"))
    out_dir = out_root / "report"
    out_dir.mkdir(parents=True, exist_ok=True)

    ranks = reports.liquidity_concentration(markets)
    reports.write_liquidity_csv(out_dir / "liquidity.csv", ranks)

    summary: dict = {
        "markets": len(markets),
        "conditions": sum(m.n_conditions for m in markets),
        "liquidity_top4_share": (
            round(ranks[min(3, len(ranks) - 1)].mean_cumulative, 6) if ranks else None
        ),
    }
    opportunities = out_root / "detect" / "opportunities.csv"
    if opportunities.exists():
        with open(opportunities, "r", encoding="utf-8") as fh:
            summary["opportunities"] = sum(1 for _ in fh) - 1
    board = out_root / "attribute" / "leaderboard.csv"
    if board.exists():
        with open(board, "r", encoding="utf-8") as fh:
            summary["accounts_scored"] = sum(1 for _ in fh) - 1
    reports.atomic_write_text(out_dir / "report.json",
                              json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_stage_manifest(out_dir, "report", config,
                         {"markets.json": out_root / "ingest" / "markets.json"},
                         {k: v for k, v in summary.items() if isinstance(v, int)})
    log.info("report: %s", summary)
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "topics": cmd_topics,
    "pairs": cmd_pairs,
    "discover": cmd_discover,
    "prices": cmd_prices,
    "detect": cmd_detect,
    "attribute": cmd_attribute,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="arbscan",
        description="Reconstruct prediction-market prices from trade logs and "
                    "detect rebalancing and combinatorial arbitrage.",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", help="YAML config file")
    parser.add_argument("--events", help="trade-event CSV path")
    parser.add_argument("--descriptors", help="market descriptor JSONL path")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--min-profit", dest="min_profit", type=float,
                        help="minimum profit per dollar for detection")
    parser.add_argument("--window", type=int, help="VWAP window in blocks")
    parser.add_argument("--carry-limit", dest="carry_limit", type=int,
                        help="price carry-forward limit in blocks")
    parser.add_argument("--episode-window", dest="episode_window", type=int,
                        help="bid grouping window in blocks")
    parser.add_argument("--determined-threshold", dest="determined_threshold",
                        type=float, help="price above which a market is determined")
    parser.add_argument("--sizing-floor", dest="sizing_floor", type=float,
                        help="minimum probability for a leg to bound sizing")
    parser.add_argument("--budget-cap", dest="budget_cap", type=float,
                        help="cap deployed units per opportunity")
    parser.add_argument("--preset", choices=["figure5"],
                        help="figure5: 2-cent profit bound")
    parser.add_argument("--seed", type=int, help="synthetic generation seed")
    parser.add_argument("--oracle-fixture", dest="oracle_fixture",
                        help="replay oracle responses from this JSONL file")
    parser.add_argument("--lenient", action="store_true",
                        help="skip malformed event lines instead of aborting")
    parser.add_argument("--estimate-missing", dest="estimate_missing",
                        action="store_true",
                        help="estimate unheld legs from the price series")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    config = apply_overrides(load_config(args.config), args)
    try:
        return _COMMANDS[args.command](config)
    except ingest.ParseError as exc:
        raise StageError(f"parse failed: {exc}") from exc


if __name__ == "__main__":
    sys.exit(main())
