"""Conditions, markets, and outcome-space logic for binary prediction markets.

A condition is a single YES/NO question. A market groups one or more
conditions about the same event; exactly one condition resolves true.
Outcome spaces enumerate the feasible joint resolutions, which is what
dependence classification and subset certification operate on.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from datetime import date
from enum import Enum

# One possible world: a True/False assignment over a market's conditions.
ResolutionVector = tuple[bool, ...]

DEFAULT_KEEP_CONDITIONS = 4
CATCH_ALL_QUESTION_LIMIT = 512


class MarketKind(Enum):
    SINGLE = "Single"
    NEG_RISK = "NegRisk"


class Dependence(Enum):
    INDEPENDENT = "Independent"
    DEPENDENT = "Dependent"


class InvalidSpaceError(ValueError):
    """A joint space claims more vectors than the full product allows."""


@dataclass(frozen=True)
class Condition:
    """One binary question with its YES/NO token pair."""

    condition_id: str
    question: str
    yes_token: str
    no_token: str
    end_date: date | None = None
    total_volume: float = 0.0  # combined YES+NO traded USDC

    def __post_init__(self) -> None:
        if not self.yes_token or not self.no_token:
            raise ValueError(f"condition {self.condition_id}: both token ids required")
        if self.yes_token == self.no_token:
            raise ValueError(f"condition {self.condition_id}: yes and no tokens must differ")
        if self.total_volume < 0:
            raise ValueError(f"condition {self.condition_id}: negative volume")


@dataclass(frozen=True)
class Market:
    """A set of conditions about one event, exhaustive and exclusive.

    ``market_id`` is absent for single-condition markets; multi-condition
    markets share one id and are NegRisk.
    """

    conditions: tuple[Condition, ...]
    market_id: str | None = None
    topic: str | None = None
    canonical_end_date: date | None = None

    def __post_init__(self) -> None:
        if not self.conditions:
            raise ValueError("market must have at least one condition")
        ids = [c.condition_id for c in self.conditions]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate condition ids in market")
        if len(self.conditions) >= 2 and self.market_id is None:
            raise ValueError("multi-condition market requires a market_id")

    @property
    def kind(self) -> MarketKind:
        return MarketKind.SINGLE if len(self.conditions) == 1 else MarketKind.NEG_RISK

    @property
    def key(self) -> str:
        """Stable identifier: market_id for NegRisk, condition_id otherwise."""
        return self.market_id if self.market_id is not None else self.conditions[0].condition_id

    @property
    def n_conditions(self) -> int:
        return len(self.conditions)


@dataclass(frozen=True)
class OutcomeSpace:
    """A deduplicated, sorted set of resolution vectors.

    ``arity`` is ``(n,)`` for one market or ``(n, m)`` for a joint space
    where bit positions ``0..n-1`` belong to market 1 and ``n..n+m-1`` to
    market 2.
    """

    vectors: tuple[ResolutionVector, ...]
    arity: tuple[int, ...]

    def __post_init__(self) -> None:
        width = sum(self.arity)
        normalized = sorted({tuple(bool(b) for b in v) for v in self.vectors})
        for v in normalized:
            if len(v) != width:
                raise ValueError(f"vector {v} has length {len(v)}, arity implies {width}")
        object.__setattr__(self, "vectors", tuple(normalized))

    @property
    def is_joint(self) -> bool:
        return len(self.arity) == 2


@dataclass(frozen=True)
class ValidityReport:
    valid: bool
    violations: tuple[str, ...] = ()


@dataclass(frozen=True, order=True)
class DependentSubsets:
    """Condition index subsets with equal true-counts in every feasible world.

    ``s1`` indexes market 1's conditions, ``s2`` market 2's. Certified
    subsets are the substrate of cross-market arbitrage: YES on ``s1``
    plus YES on the complement of ``s2`` pays out exactly 1.
    """

    s1: tuple[int, ...]
    s2: tuple[int, ...]


@dataclass(frozen=True)
class ReducedMarket:
    """A market trimmed to its highest-volume conditions plus a catch-all.

    The catch-all condition is the logical OR of everything dropped, so
    reduction preserves exhaustiveness.
    """

    kept: tuple[Condition, ...]
    dropped: tuple[Condition, ...]
    catch_all: Condition | None
    origin: Market

    @property
    def conditions(self) -> tuple[Condition, ...]:
        if self.catch_all is None:
            return self.kept
        return self.kept + (self.catch_all,)

    @property
    def catch_all_index(self) -> int | None:
        return None if self.catch_all is None else len(self.kept)

    @property
    def covered_ids(self) -> frozenset[str]:
        return frozenset(c.condition_id for c in self.kept) | frozenset(
            c.condition_id for c in self.dropped
        )


def validate_single_market(space: OutcomeSpace, n: int) -> ValidityReport:
    """Check that ``space`` is a valid resolution set for an n-condition market.

    Valid means exactly n vectors, each with exactly one true bit. Every
    violated clause is reported. An empty space or wrong-width vectors are
    structural errors, raised rather than reported.
    """
    if not space.vectors:
        raise ValueError("empty outcome space")
    for v in space.vectors:
        if len(v) != n:
            raise ValueError(f"vector width {len(v)} does not match n={n}")
    violations: list[str] = []
    if len(space.vectors) != n:
        violations.append(f"expected {n} vectors, got {len(space.vectors)}")
    for i, v in enumerate(space.vectors):
        true_bits = sum(v)
        if true_bits != 1:
            violations.append(f"vector {i} has {true_bits} true bits, expected exactly 1")
    return ValidityReport(valid=not violations, violations=tuple(violations))


def classify_pair(space: OutcomeSpace, n: int, m: int) -> Dependence:
    """Classify a validated joint space: independent iff it is the full product."""
    full = n * m
    count = len(space.vectors)
    if count > full:
        raise InvalidSpaceError(f"{count} joint vectors exceed the full product {full}")
    return Dependence.INDEPENDENT if count == full else Dependence.DEPENDENT


def _canonical_subsets(
    s1: tuple[int, ...], s2: tuple[int, ...], n: int, m: int
) -> DependentSubsets:
    # (s1, s2) and their complements encode the same dependence; keep the
    # variant whose first subset is smaller, ties broken lexicographically.
    c1 = tuple(i for i in range(n) if i not in set(s1))
    c2 = tuple(j for j in range(m) if j not in set(s2))
    if len(s1) < len(c1):
        return DependentSubsets(s1, s2)
    if len(c1) < len(s1):
        return DependentSubsets(c1, c2)
    return DependentSubsets(s1, s2) if s1 < c1 else DependentSubsets(c1, c2)


def find_dependent_subsets(space: OutcomeSpace) -> list[DependentSubsets]:
    """Enumerate every certified dependent subset pair of a joint space.

    A pair (S, S') of nonempty proper subsets is certified when the count
    of true bits in S equals the count in S' for every vector. Output is
    canonicalized (complement variants merged) and sorted.
    """
    if not space.is_joint:
        raise ValueError("dependent subsets require a two-market joint space")
    n, m = space.arity
    left = [v[:n] for v in space.vectors]
    right = [v[n:] for v in space.vectors]

    found: set[DependentSubsets] = set()
    for size1 in range(1, n):
        for s1 in itertools.combinations(range(n), size1):
            counts1 = [sum(v[i] for i in s1) for v in left]
            for size2 in range(1, m):
                for s2 in itertools.combinations(range(m), size2):
                    if all(
                        sum(v[j] for j in s2) == c1
                        for v, c1 in zip(right, counts1)
                    ):
                        found.add(_canonical_subsets(s1, s2, n, m))
    return sorted(found)


def full_product_space(n: int, m: int) -> OutcomeSpace:
    """The joint space of two independent markets: every basis pairing."""
    vectors = []
    for i in range(n):
        for j in range(m):
            v = [False] * (n + m)
            v[i] = True
            v[n + j] = True
            vectors.append(tuple(v))
    return OutcomeSpace(vectors=tuple(vectors), arity=(n, m))


def reduce_market(market: Market, k: int = DEFAULT_KEEP_CONDITIONS) -> ReducedMarket:
    """Keep the k highest-volume conditions; fold the rest into one catch-all.

    Volume ties break by ascending condition_id. Markets with at most k
    conditions come back unchanged with no catch-all.
    """
    conditions = market.conditions
    if len(conditions) <= k:
        return ReducedMarket(kept=conditions, dropped=(), catch_all=None, origin=market)

    ranked = sorted(conditions, key=lambda c: (-c.total_volume, c.condition_id))
    kept_ids = {c.condition_id for c in ranked[:k]}
    kept = tuple(c for c in conditions if c.condition_id in kept_ids)
    dropped = tuple(c for c in conditions if c.condition_id not in kept_ids)

    question = "OTHER: " + " OR ".join(c.question for c in dropped)
    question = question[:CATCH_ALL_QUESTION_LIMIT]
    catch_all = Condition(
        condition_id=f"{market.key}:other",
        question=question,
        yes_token=f"{market.key}:other:yes",
        no_token=f"{market.key}:other:no",
        end_date=market.canonical_end_date,
        total_volume=sum(c.total_volume for c in dropped),
    )
    return ReducedMarket(kept=kept, dropped=dropped, catch_all=catch_all, origin=market)
