"""Topic assignment, pair pruning, prompt construction, oracle validation."""

import json
from dataclasses import replace
from datetime import date

import numpy as np
import pytest

from arbscan.dependency import (
    TOPICS,
    KeywordEmbedder,
    OracleEndpoint,
    ReplayOracle,
    Verdict,
    analyze_pair,
    assign_topic,
    assign_topics,
    build_prompt,
    candidate_pairs,
    discover_pairs,
    extract_vectors,
    pair_id,
    prompt_key,
    validate_oracle_output,
)
from arbscan.market_model import DependentSubsets

from conftest import negrisk_market, single_market


class TestAssignTopic:
    def test_identical_embedding_scores_one(self):
        anchors = [np.eye(3)[i] for i in range(3)]
        got = assign_topic("m", anchors[2].copy(), anchors, topics=("A", "B", "C"))
        assert got.topic == "C"
        assert got.score == pytest.approx(1.0)

    def test_orthogonal_embedding_falls_back_to_first_topic(self):
        anchors = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
        got = assign_topic("m", np.array([0.0, 0.0, 1.0])[:2] + np.array([0.0, 0.0]),
                           anchors, topics=("A", "B"))
        # zero scores tie; list order wins
        assert got.topic == "A"
        assert got.score == pytest.approx(0.0)

    def test_zero_norm_vector_rejected(self):
        anchors = [np.array([1.0, 0.0])]
        with pytest.raises(ValueError, match="zero-norm"):
            assign_topic("m", np.zeros(2), anchors, topics=("A",))

    def test_keyword_stub_routes_election_to_politics(self):
        markets = [replace(single_market(0),
                           conditions=(replace(single_market(0).conditions[0],
                                               question="Will the election runoff happen?"),))]
        got = assign_topics(markets, KeywordEmbedder())
        assert got[0].topic == "Politics"

    def test_keyword_stub_unmatched_text_is_first_topic(self):
        embedder = KeywordEmbedder()
        question = embedder.embed(["zzz qqq"])[0]
        anchors = [embedder.embed([t])[0] for t in TOPICS]
        got = assign_topic("m", question, anchors)
        assert got.topic == TOPICS[0]
        assert got.score == pytest.approx(0.0)


class TestCandidatePairs:
    def _market(self, i, topic, end):
        m = single_market(i)
        return replace(m, topic=topic, canonical_end_date=end)

    def test_same_group_of_three_yields_three_pairs(self):
        day = date(2024, 11, 5)
        markets = [self._market(i, "Politics", day) for i in range(3)]
        assert len(candidate_pairs(markets)) == 3

    def test_different_dates_yield_nothing(self):
        markets = [
            self._market(0, "Politics", date(2024, 11, 5)),
            self._market(1, "Politics", date(2024, 11, 6)),
        ]
        assert candidate_pairs(markets) == []

    def test_different_topics_yield_nothing(self):
        day = date(2024, 11, 5)
        markets = [self._market(0, "Politics", day), self._market(1, "Sports", day)]
        assert candidate_pairs(markets) == []

    def test_pairs_emitted_once_in_key_order(self):
        day = date(2024, 11, 5)
        markets = [self._market(i, "Politics", day) for i in (2, 0, 1)]
        pairs = candidate_pairs(markets)
        ids = [pair_id(a, b) for a, b in pairs]
        assert ids == sorted(ids)
        assert len(set(ids)) == len(ids)


class TestBuildPrompt:
    def test_indexed_questions_present(self):
        prompt = build_prompt(["Q0?", "Q1?", "Q2?"])
        for marker in ("- (0) Q0?", "- (1) Q1?", "- (2) Q2?"):
            assert marker in prompt

    def test_tuple_length_sentence_reflects_count(self):
        prompt = build_prompt(["a", "b", "c"])
        assert "exactly 3 values" in prompt
        assert "valid_combinations" in prompt

    def test_too_few_or_too_many_rejected(self):
        with pytest.raises(ValueError):
            build_prompt([])
        with pytest.raises(ValueError):
            build_prompt(["q"] * 11)


FULL_2X2 = [[True, False, True, False], [True, False, False, True],
            [False, True, True, False], [False, True, False, True]]


class TestValidateOracleOutput:
    def test_full_product_is_independent(self):
        raw = json.dumps({"valid_combinations": FULL_2X2})
        got = validate_oracle_output(raw, 2, 2)
        assert got.verdict is Verdict.INDEPENDENT
        assert got.parsed is not None

    def test_exhaustive_enumeration_is_invalid_shape(self):
        # a looping oracle returns all 2^(n+m) assignments
        exhaustive = [[bool(k & (1 << b)) for b in range(4)] for k in range(16)]
        got = validate_oracle_output(json.dumps({"valid_combinations": exhaustive}), 2, 2)
        assert got.verdict is Verdict.INVALID_SHAPE

    def test_missing_joint_is_dependent(self):
        got = validate_oracle_output(json.dumps({"valid_combinations": FULL_2X2[:3]}), 2, 2)
        assert got.verdict is Verdict.DEPENDENT

    def test_fenced_json_accepted(self):
        raw = "```json\n" + json.dumps({"valid_combinations": FULL_2X2}) + "\n```"
        assert validate_oracle_output(raw, 2, 2).verdict is Verdict.INDEPENDENT

    def test_prose_wrapped_array_accepted(self):
        raw = ("After thinking it through, the combinations are "
               + json.dumps(FULL_2X2[:2]) + " which covers every case.")
        got = validate_oracle_output(raw, 2, 2)
        assert got.verdict is Verdict.DEPENDENT

    def test_no_array_is_no_parse(self):
        got = validate_oracle_output("I could not decide.", 2, 2)
        assert got.verdict is Verdict.NO_PARSE
        assert got.parsed is None

    def test_wrong_width_is_invalid_shape(self):
        raw = json.dumps({"valid_combinations": [[True, False, True]]})
        assert validate_oracle_output(raw, 2, 2).verdict is Verdict.INVALID_SHAPE

    def test_two_true_on_one_side_is_invalid_shape(self):
        raw = json.dumps({"valid_combinations": [[True, True, True, False]]})
        assert validate_oracle_output(raw, 2, 2).verdict is Verdict.INVALID_SHAPE

    def test_duplicates_dedupe_before_counting(self):
        raw = json.dumps({"valid_combinations": FULL_2X2 + FULL_2X2})
        assert validate_oracle_output(raw, 2, 2).verdict is Verdict.INDEPENDENT

    def test_numeric_entries_do_not_parse(self):
        raw = json.dumps({"valid_combinations": [[1, 0, 1, 0]]})
        assert validate_oracle_output(raw, 2, 2).verdict is Verdict.NO_PARSE

    def test_empty_array_is_invalid_shape(self):
        raw = json.dumps({"valid_combinations": []})
        assert validate_oracle_output(raw, 2, 2).verdict is Verdict.NO_PARSE

    def test_verdicts_never_certify_without_parse(self):
        for raw in ("", "[]", "nonsense", '{"valid_combinations": "nope"}'):
            got = validate_oracle_output(raw, 2, 2)
            assert got.verdict in (Verdict.NO_PARSE, Verdict.INVALID_SHAPE)
            assert got.parsed is None


class TestExtractVectors:
    def test_prefers_valid_combinations_key(self):
        raw = "[1, 2, 3] then " + json.dumps({"valid_combinations": [[True, False]]})
        assert extract_vectors(raw) == [(True, False)]

    def test_bare_boolean_array_fallback(self):
        assert extract_vectors("answer: [[true, false]]") == [(True, False)]

    def test_nothing_extractable(self):
        assert extract_vectors("[1, 2, 3]") is None


class TestOraclePlumbing:
    def test_replay_oracle_round_trip(self):
        prompt = build_prompt(["a?", "b?"])
        oracle = ReplayOracle({prompt_key(prompt): "canned"})
        assert oracle.complete(prompt) == "canned"
        with pytest.raises(KeyError):
            oracle.complete("other prompt")

    def test_endpoint_from_env(self):
        env = {"ARBSCAN_ORACLE_URL": "http://oracle.local/v1",
               "ARBSCAN_ORACLE_TIMEOUT": "5"}
        endpoint = OracleEndpoint.from_env(env)
        assert endpoint is not None
        assert endpoint.url.endswith("/v1")
        assert endpoint.timeout == 5.0
        assert OracleEndpoint.from_env({}) is None

    def test_analyze_pair_certifies_dependent_subsets(self):
        day = date(2024, 11, 5)
        m1 = replace(negrisk_market(1, 2), topic="Politics", canonical_end_date=day)
        m2 = replace(negrisk_market(2, 2), topic="Politics", canonical_end_date=day)
        questions = [c.question for c in m1.conditions] + [c.question for c in m2.conditions]
        reply = json.dumps({"valid_combinations": [[True, False, True, False],
                                                   [False, True, False, True]]})
        oracle = ReplayOracle({prompt_key(build_prompt(questions)): reply})
        result = analyze_pair(m1, m2, oracle)
        assert result.verdict is Verdict.DEPENDENT
        assert DependentSubsets(s1=(0,), s2=(0,)) in result.dependent_subsets
        assert not result.involves_catch_all

    def test_oracle_failure_reported_per_pair(self):
        day = date(2024, 11, 5)
        m1 = replace(single_market(1), topic="Politics", canonical_end_date=day)
        m2 = replace(single_market(2), topic="Politics", canonical_end_date=day)
        results = discover_pairs([(m1, m2)], ReplayOracle({}))
        assert results[0].verdict is Verdict.NO_PARSE
        assert "oracle failure" in results[0].error

    def test_discover_orders_by_pair_id(self):
        day = date(2024, 11, 5)
        markets = [replace(single_market(i), topic="Politics", canonical_end_date=day)
                   for i in range(4)]
        pairs = candidate_pairs(markets)
        results = discover_pairs(pairs, ReplayOracle({}), max_parallel=3)
        ids = [r.pair_id for r in results]
        assert ids == sorted(ids)
