"""Batch engine for prediction-market price reconstruction and arbitrage detection."""

from .market_model import (
    Condition,
    Dependence,
    DependentSubsets,
    Market,
    MarketKind,
    OutcomeSpace,
    ReducedMarket,
    ValidityReport,
    classify_pair,
    find_dependent_subsets,
    full_product_space,
    reduce_market,
    validate_single_market,
)
from .ingest import (
    EventKind,
    MarketDescriptor,
    Side,
    TradeEvent,
    canonical_end_date,
    filter_bids,
    parse_event_log,
    write_event_log,
)
from .pricing import PriceSeries, build_price_series, determined_mask, vwap_series
from .detect import (
    CertifiedPair,
    DetectParams,
    Opportunity,
    OpportunityKind,
    detect_combinatorial,
    detect_condition_rebalance,
    detect_market_rebalance,
    scan_markets,
    size_opportunity,
)
from .attribution import (
    Episode,
    PositionLedger,
    StrategyLabel,
    attribute,
    build_ledger,
    classify_strategy,
    episode_profit,
    group_user_bids,
    leaderboard,
)
from .dependency import (
    TOPICS,
    KeywordEmbedder,
    OracleResponse,
    ReplayOracle,
    Verdict,
    assign_topic,
    build_prompt,
    candidate_pairs,
    validate_oracle_output,
)
from .synth import Plant, SynthConfig, generate_synthetic

__version__ = "0.1.0"
