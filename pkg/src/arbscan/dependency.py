"""Dependent-pair discovery: topic pruning, oracle prompts, output validation.

Candidate market pairs are pruned to same-topic same-end-date groups,
each pair's condition questions go to a semantic oracle that enumerates
the feasible joint resolutions, and the oracle's raw text is validated
structurally before anything downstream trusts it. The oracle and the
embedder are ports: production adapters call external services, tests
replay canned fixtures.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Protocol, Sequence

import numpy as np

from .market_model import (
    Dependence,
    DependentSubsets,
    Market,
    OutcomeSpace,
    ReducedMarket,
    classify_pair,
    find_dependent_subsets,
    reduce_market,
)

TOPICS = ("Politics", "Economy", "Technology", "Crypto", "Twitter", "Culture", "Sports")

MAX_PROMPT_CONDITIONS = 10  # two reduced markets of at most five conditions

_PROMPT_HEADER = (
    "You are given a set of binary (True/False) questions. Your task is to "
    "determine all valid logical combinations of truth values these questions can take.\n"
    "\n"
    "Rules:\n"
    "- Each tuple represents a possible valid assignment of truth values.\n"
    "- Each tuple must contain exactly {count} values, corresponding to the listed questions.\n"
    "- The output must be a JSON array where each entry is a list of Boolean values.\n"
    "- The output must be valid JSON and contain no additional text.\n"
    "\n"
    "Questions:\n"
)

_PROMPT_FOOTER = (
    "\n"
    "**Expected Output Format:**\n"
    "```json\n"
    "{\n"
    '  "valid_combinations": [\n'
    "    [true, false, ...],\n"
    "    [false, true, ...],\n"
    "    ...]\n"
    "}\n"
    "```\n"
    "Ensure the output is strictly formatted as JSON without any additional "
    "explanation or formatting artifacts.\n"
)


class Verdict(Enum):
    NO_PARSE = "NoParse"
    INVALID_SHAPE = "InvalidShape"
    INDEPENDENT = "Independent"
    DEPENDENT = "Dependent"


@dataclass(frozen=True)
class TopicAssignment:
    market_id: str
    topic: str
    score: float  # cosine similarity of the winning topic


@dataclass(frozen=True)
class OracleResponse:
    raw: str
    parsed: OutcomeSpace | None
    verdict: Verdict
    reason: str = ""


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for zero-norm vectors")
    return float(np.dot(a, b) / (na * nb))


def assign_topic(
    market_id: str,
    question_embedding: np.ndarray,
    topic_embeddings: Sequence[np.ndarray],
    topics: Sequence[str] = TOPICS,
) -> TopicAssignment:
    """Pick the topic whose embedding is most cosine-similar to the question.

    Ties go to the earlier topic in the fixed list, which also covers the
    all-orthogonal case.
    """
    if len(topic_embeddings) != len(topics):
        raise ValueError("one embedding required per topic")
    best_topic = topics[0]
    best_score = -2.0
    for topic, emb in zip(topics, topic_embeddings):
        score = cosine_similarity(question_embedding, emb)
        if score > best_score:
            best_topic, best_score = topic, score
    return TopicAssignment(market_id=market_id, topic=best_topic, score=best_score)


class Embedder(Protocol):
    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


# Deterministic keyword scoring per topic; the extra trailing dimension
# keeps unmatched questions at nonzero norm but orthogonal to every topic.
_TOPIC_KEYWORDS: dict[str, tuple[str, ...]] = {
    "Politics": ("election", "president", "presidential", "senate", "congress",
                 "vote", "governor", "democrat", "republican", "candidate"),
    "Economy": ("inflation", "fed", "rate", "gdp", "recession", "jobs", "economy"),
    "Technology": ("ai", "model", "chip", "software", "launch", "tech", "startup"),
    "Crypto": ("bitcoin", "btc", "ethereum", "eth", "crypto", "solana", "token"),
    "Twitter": ("tweet", "tweets", "follower", "followers", "post", "account"),
    "Culture": ("movie", "album", "oscar", "grammy", "box", "celebrity", "show"),
    "Sports": ("match", "game", "championship", "league", "cup", "team", "goal",
               "season", "finals"),
}


class KeywordEmbedder:
    """Hermetic stand-in for a text-embedding service.

    A question embeds to its per-topic keyword counts; topic names embed
    to their own basis vectors, so the argmax-cosine assignment reduces
    to keyword voting with list-order tie-breaks.
    """

    dimension = len(TOPICS) + 1

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dimension))
        for row, text in enumerate(texts):
            lowered = text.lower()
            if text in TOPICS:
                out[row, TOPICS.index(text)] = 1.0
                continue
            words = set(re.findall(r"[a-z0-9']+", lowered))
            matched = False
            for col, topic in enumerate(TOPICS):
                hits = sum(1 for kw in _TOPIC_KEYWORDS[topic] if kw in words)
                if hits:
                    out[row, col] = float(hits)
                    matched = True
            if not matched:
                out[row, -1] = 1.0
        return out


def topic_embeddings(embedder: Embedder, topics: Sequence[str] = TOPICS) -> list[np.ndarray]:
    matrix = embedder.embed(list(topics))
    return [matrix[i] for i in range(len(topics))]


def assign_topics(markets: Sequence[Market], embedder: Embedder,
                  topics: Sequence[str] = TOPICS) -> list[TopicAssignment]:
    """Assign every market a topic from its first condition's question."""
    anchors = topic_embeddings(embedder, topics)
    questions = [m.conditions[0].question for m in markets]
    embedded = embedder.embed(questions)
    return [
        assign_topic(m.key, embedded[i], anchors, topics)
        for i, m in enumerate(markets)
    ]


def candidate_pairs(markets: Sequence[Market]) -> list[tuple[Market, Market]]:
    """Unordered market pairs sharing both topic and canonical end date.

    Markets about the same event resolve on the same day and live in the
    same topic, so everything else is pruned before the oracle runs.
    """
    groups: dict[tuple[str, str], list[Market]] = {}
    for market in markets:
        if market.topic is None or market.canonical_end_date is None:
            continue
        key = (market.topic, market.canonical_end_date.isoformat())
        groups.setdefault(key, []).append(market)
    pairs: list[tuple[Market, Market]] = []
    for key in sorted(groups):
        members = sorted(groups[key], key=lambda m: m.key)
        pairs.extend(itertools.combinations(members, 2))
    return pairs


def pair_id(market1: Market, market2: Market) -> str:
    return f"{market1.key}|{market2.key}"


def build_prompt(questions: Sequence[str]) -> str:
    """Render the oracle prompt for an indexed list of condition questions."""
    if not 2 <= len(questions) <= MAX_PROMPT_CONDITIONS:
        raise ValueError(
            f"prompt takes 2..{MAX_PROMPT_CONDITIONS} questions, got {len(questions)}"
        )
    body = "".join(f"- ({i}) {q}\n" for i, q in enumerate(questions))
    return _PROMPT_HEADER.format(count=len(questions)) + body + _PROMPT_FOOTER


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)
_KEY_RE = re.compile(r'"valid_combinations"\s*:\s*\[')


def _balanced_array(text: str, start: int) -> str | None:
    """Extract the first balanced [...] starting at ``start``."""
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "[":
            depth += 1
        elif ch == "]":
            depth -= 1
            if depth == 0:
                return text[start:i + 1]
    return None


def _coerce_vectors(data) -> list[tuple[bool, ...]] | None:
    if not isinstance(data, list) or not data:
        return None
    vectors = []
    for item in data:
        if not isinstance(item, list) or not item:
            return None
        if not all(isinstance(b, bool) for b in item):
            return None
        vectors.append(tuple(item))
    return vectors


def extract_vectors(raw: str) -> list[tuple[bool, ...]] | None:
    """Pull a boolean-vector array out of oracle text.

    Accepts the documented ``valid_combinations`` object, with or without
    code fences or surrounding prose, and falls back to the first bare
    array of boolean lists.
    """
    candidates: list[str] = []
    for match in _FENCE_RE.finditer(raw):
        candidates.append(match.group(1))
    candidates.append(raw)

    for text in candidates:
        key = _KEY_RE.search(text)
        if key:
            arr = _balanced_array(text, key.end() - 1)
            if arr is not None:
                try:
                    vectors = _coerce_vectors(json.loads(arr))
                except json.JSONDecodeError:
                    vectors = None
                if vectors is not None:
                    return vectors
    for text in candidates:
        for match in re.finditer(r"\[", text):
            arr = _balanced_array(text, match.start())
            if arr is None:
                continue
            try:
                vectors = _coerce_vectors(json.loads(arr))
            except json.JSONDecodeError:
                continue
            if vectors is not None:
                return vectors
    return None


def validate_oracle_output(raw: str, n: int, m: int) -> OracleResponse:
    """Structurally validate an oracle reply for an n x m market pair.

    NoParse when no boolean-vector array is extractable. InvalidShape
    when any vector is not n+m wide, lacks exactly one true value per
    market side, or the deduplicated set exceeds n+m vectors (an oracle
    stuck in a loop tends to return the exhaustive 2^(n+m) table).
    Otherwise the parsed space is classified by cardinality.
    """
    if n < 1 or m < 1:
        raise ValueError("both markets need at least one condition")
    vectors = extract_vectors(raw)
    if vectors is None:
        return OracleResponse(raw, None, Verdict.NO_PARSE, "no boolean vector array found")

    unique = list(dict.fromkeys(vectors))
    width = n + m
    for v in unique:
        if len(v) != width:
            return OracleResponse(
                raw, None, Verdict.INVALID_SHAPE,
                f"vector width {len(v)}, expected {width}",
            )
        if sum(v[:n]) != 1 or sum(v[n:]) != 1:
            return OracleResponse(
                raw, None, Verdict.INVALID_SHAPE,
                "each vector needs exactly one true value per market",
            )
    if not unique:
        return OracleResponse(raw, None, Verdict.INVALID_SHAPE, "empty vector set")
    if len(unique) > width:
        return OracleResponse(
            raw, None, Verdict.INVALID_SHAPE,
            f"{len(unique)} vectors exceed the n+m bound of {width}",
        )
    space = OutcomeSpace(vectors=tuple(unique), arity=(n, m))
    dependence = classify_pair(space, n, m)
    verdict = Verdict.INDEPENDENT if dependence is Dependence.INDEPENDENT else Verdict.DEPENDENT
    return OracleResponse(raw, space, verdict)


class Oracle(Protocol):
    def complete(self, prompt: str) -> str: ...


def prompt_key(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


class ReplayOracle:
    """Replays canned responses keyed by prompt hash; misses raise KeyError."""

    def __init__(self, responses: dict[str, str]):
        self.responses = dict(responses)

    @classmethod
    def from_jsonl(cls, path) -> "ReplayOracle":
        responses = {}
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    obj = json.loads(line)
                    responses[obj["key"]] = obj["text"]
        return cls(responses)

    def complete(self, prompt: str) -> str:
        return self.responses[prompt_key(prompt)]


@dataclass(frozen=True)
class OracleEndpoint:
    """HTTP adapter settings; see README for the wire format."""

    url: str
    model: str
    timeout: float = 30.0
    max_retries: int = 2

    @classmethod
    def from_env(cls, env: dict) -> "OracleEndpoint | None":
        url = env.get("ARBSCAN_ORACLE_URL")
        if not url:
            return None
        return cls(
            url=url,
            model=env.get("ARBSCAN_ORACLE_MODEL", "default"),
            timeout=float(env.get("ARBSCAN_ORACLE_TIMEOUT", "30")),
            max_retries=int(env.get("ARBSCAN_ORACLE_RETRIES", "2")),
        )


class HttpOracle:
    """POSTs {"model", "prompt"} to the endpoint and reads {"text"} back."""

    def __init__(self, endpoint: OracleEndpoint):
        self.endpoint = endpoint

    def complete(self, prompt: str) -> str:
        import requests

        last_error: Exception | None = None
        for attempt in range(self.endpoint.max_retries + 1):
            try:
                resp = requests.post(
                    self.endpoint.url,
                    json={"model": self.endpoint.model, "prompt": prompt},
                    timeout=self.endpoint.timeout,
                )
                resp.raise_for_status()
                return str(resp.json()["text"])
            except Exception as exc:  # noqa: BLE001 - retry budget handles it
                last_error = exc
                if attempt < self.endpoint.max_retries:
                    time.sleep(min(2.0 ** attempt, 10.0))
        raise RuntimeError(f"oracle call failed after retries: {last_error}")


class HttpEmbedder:
    """POSTs {"texts": [...]} to an embedding service, reads {"vectors": [...]}."""

    def __init__(self, url: str, timeout: float = 30.0):
        self.url = url
        self.timeout = timeout

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        import requests

        resp = requests.post(self.url, json={"texts": list(texts)}, timeout=self.timeout)
        resp.raise_for_status()
        return np.asarray(resp.json()["vectors"], dtype=np.float64)


@dataclass(frozen=True)
class PairResult:
    pair_id: str
    market1_key: str
    market2_key: str
    n: int
    m: int
    verdict: Verdict
    vectors: tuple[tuple[bool, ...], ...] | None
    dependent_subsets: tuple[DependentSubsets, ...]
    involves_catch_all: bool
    review_flags: tuple[str, ...] = ()
    error: str = ""


_PROPER_NOUN_RE = re.compile(r"\b[A-Z][a-z]{2,}\b")


def _shared_name_flags(m1: Market, m2: Market) -> tuple[str, ...]:
    """Flag shared capitalized names across distinct questions for review.

    Oracles tend to conflate races that mention the same candidate, so
    dependent verdicts with shared names go to the review queue.
    """
    names1 = set()
    for c in m1.conditions:
        names1.update(_PROPER_NOUN_RE.findall(c.question))
    names2 = set()
    for c in m2.conditions:
        names2.update(_PROPER_NOUN_RE.findall(c.question))
    shared = sorted((names1 & names2) - {"Will", "The"})
    if shared:
        return (f"shared-names:{','.join(shared[:5])}",)
    return ()


def _reduced(market: Market, max_keep: int) -> ReducedMarket:
    return reduce_market(market, k=max_keep)


def analyze_pair(
    market1: Market,
    market2: Market,
    oracle: Oracle,
    max_keep: int = 4,
) -> PairResult:
    """Reduce, prompt, validate, and certify one market pair."""
    r1 = _reduced(market1, max_keep)
    r2 = _reduced(market2, max_keep)
    questions = [c.question for c in r1.conditions] + [c.question for c in r2.conditions]
    n, m = len(r1.conditions), len(r2.conditions)

    try:
        raw = oracle.complete(build_prompt(questions))
    except Exception as exc:  # noqa: BLE001 - reported per pair
        return PairResult(
            pair_id=pair_id(market1, market2),
            market1_key=market1.key, market2_key=market2.key,
            n=n, m=m, verdict=Verdict.NO_PARSE, vectors=None,
            dependent_subsets=(), involves_catch_all=False,
            error=f"oracle failure: {exc}",
        )

    response = validate_oracle_output(raw, n, m)
    subsets: tuple[DependentSubsets, ...] = ()
    involves_catch_all = False
    flags: tuple[str, ...] = ()
    if response.verdict is Verdict.DEPENDENT and response.parsed is not None:
        subsets = tuple(find_dependent_subsets(response.parsed))
        catch1, catch2 = r1.catch_all_index, r2.catch_all_index
        for s in subsets:
            if (catch1 is not None and catch1 in s.s1) or (
                catch2 is not None and catch2 in s.s2
            ):
                involves_catch_all = True
        if subsets:
            flags = _shared_name_flags(market1, market2)
    return PairResult(
        pair_id=pair_id(market1, market2),
        market1_key=market1.key, market2_key=market2.key,
        n=n, m=m, verdict=response.verdict,
        vectors=tuple(response.parsed.vectors) if response.parsed else None,
        dependent_subsets=subsets,
        involves_catch_all=involves_catch_all,
        review_flags=flags,
        error=response.reason,
    )


def discover_pairs(
    pairs: Iterable[tuple[Market, Market]],
    oracle: Oracle,
    max_parallel: int = 4,
    max_keep: int = 4,
) -> list[PairResult]:
    """Run the oracle over candidate pairs with bounded parallelism.

    Results come back keyed and sorted by pair id, so the run is
    reproducible regardless of completion order.
    """
    pair_list = list(pairs)
    if not pair_list:
        return []
    with ThreadPoolExecutor(max_workers=max(1, max_parallel)) as pool:
        results = list(pool.map(
            lambda pq: analyze_pair(pq[0], pq[1], oracle, max_keep), pair_list,
        ))
    results.sort(key=lambda r: r.pair_id)
    return results
