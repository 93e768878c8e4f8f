import json
import math
from fractions import Fraction

import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import char_ngram_f_oracle
from repairfilter.corpus_io import INDIC, SentencePair
from repairfilter.errors import (
    DataError,
    DimensionMismatch,
    DuplicateId,
    EmptyText,
    IncompleteResponse,
    MissingEmbedding,
    MissingId,
    MissingScore,
    NonFiniteScore,
    ProtocolError,
    ServiceUnavailable,
    ZeroVector,
)
from repairfilter.scoring import (
    EmbeddingTable,
    MockEmbedder,
    MockQeScorer,
    ScorerEndpoint,
    ScoreTable,
    ServiceClient,
    cosine,
    load_embeddings,
    load_score_table,
    make_qe_scorer,
    mock_embedding,
    mock_qe_score,
    parse_source,
    score_with_service,
)

PAIRS = [SentencePair(i, f"source {i}", f"target {i}") for i in range(10)]


class TestCosine:
    def test_identity(self):
        assert cosine([0.6, 0.8], [0.6, 0.8]) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal(self):
        assert cosine([1, 0], [0, 1]) == 0.0

    def test_hand_dot(self):
        assert cosine([0.6, 0.8], [1, 0]) == pytest.approx(0.6, abs=1e-15)

    def test_errors(self):
        with pytest.raises(DimensionMismatch):
            cosine([1, 0], [1, 0, 0])
        with pytest.raises(ZeroVector):
            cosine([0, 0], [1, 0])

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=16), st.lists(st.floats(-1e3, 1e3), min_size=16, max_size=16))
    def test_symmetric_and_bounded(self, a, b):
        b = b[: len(a)]
        if not any(a) or not any(b):
            return
        c = cosine(a, b)
        assert c == cosine(b, a)
        assert -1.0 <= c <= 1.0
        assert cosine(a, a) == pytest.approx(1.0, abs=1e-9)


class TestScoreTable:
    def test_load(self, tmp_path):
        p = tmp_path / "s.tsv"
        p.write_text("0\t-0.4\n1\t0.2\n")
        t = load_score_table(p, 2)
        assert len(t) == 2 and t[0] == -0.4 and t[1] == 0.2

    def test_missing(self, tmp_path):
        p = tmp_path / "s.tsv"
        p.write_text("0\t-0.4\n")
        with pytest.raises(MissingId) as exc:
            load_score_table(p, 2)
        assert exc.value.pair_id == 1

    def test_nan(self, tmp_path):
        p = tmp_path / "s.tsv"
        p.write_text("0\tNaN\n")
        with pytest.raises(NonFiniteScore):
            load_score_table(p, 1)

    def test_duplicate(self, tmp_path):
        p = tmp_path / "s.tsv"
        p.write_text("0\t1\n0\t2\n")
        with pytest.raises(DuplicateId):
            load_score_table(p, 1)

    def test_any_order(self, tmp_path):
        p = tmp_path / "s.tsv"
        p.write_text("2\t0.3\n0\t0.1\n1\t0.2\n")
        np.testing.assert_array_equal(load_score_table(p).values, [0.1, 0.2, 0.3])

    def test_immutable_and_missing_lookup(self):
        t = ScoreTable([1.0, 2.0], "test")
        with pytest.raises(ValueError):
            t.values[0] = 3.0
        with pytest.raises(MissingScore):
            t.lookup(np.array([0, 2]))

    def test_write_round_trip(self, tmp_path):
        vals = np.random.default_rng(0).normal(size=50)
        ScoreTable(vals, "x").write_tsv(tmp_path / "s.tsv")
        np.testing.assert_array_equal(load_score_table(tmp_path / "s.tsv", 50).values, vals)


class TestEmbeddings:
    def test_renormalized(self):
        t = EmbeddingTable(np.array([[3.0, 4.0]]), np.array([[0.0, 2.0]]), "t")
        np.testing.assert_allclose(np.linalg.norm(t.source, axis=1), 1.0, atol=1e-12)
        assert t.similarities()[0] == pytest.approx(0.8)

    def test_file_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        t = EmbeddingTable(rng.normal(size=(5, 8)), rng.normal(size=(5, 8)), "t")
        t.write(tmp_path / "e.txt")
        back = load_embeddings(tmp_path / "e.txt", 5)
        np.testing.assert_array_equal(back.similarities(), t.similarities())

    def test_missing_embedding(self, tmp_path):
        p = tmp_path / "e.txt"
        p.write_text("d=2\n0\t1 0\t0 1\n")
        with pytest.raises(MissingEmbedding):
            load_embeddings(p, 2)

    def test_dimension_mismatch(self, tmp_path):
        p = tmp_path / "e.txt"
        p.write_text("d=2\n0\t1 0 0\t0 1\n")
        with pytest.raises(DimensionMismatch):
            load_embeddings(p, 1)

    def test_zero_vector(self):
        with pytest.raises(ZeroVector):
            EmbeddingTable(np.zeros((1, 2)), np.ones((1, 2)), "t")


class TestMockQe:
    def test_identical(self):
        assert mock_qe_score("same text", "same text") == 1.0

    def test_empty_target(self):
        assert mock_qe_score("abc", "") == -1.0

    def test_abab_ab_hand_oracle(self):
        # n=1: 2*2/(2+4); n=2: 2*1/(1+3); n=3: 0/(0+2); n=4: 0/(0+1) -> F = 7/24
        expected = char_ngram_f_oracle("abab", "ab")
        assert expected == Fraction(-5, 12)
        assert mock_qe_score("abab", "ab") == pytest.approx(float(expected), abs=1e-15)

    @settings(max_examples=300)
    @given(st.text("abcé ", max_size=12), st.text("abcé ", max_size=12))
    def test_matches_oracle(self, s, t):
        assert mock_qe_score(s, t) == pytest.approx(float(char_ngram_f_oracle(s, t)), abs=1e-12)
        assert -1.0 <= mock_qe_score(s, t) <= 1.0

    def test_casefold(self):
        from repairfilter.scoring import FOLDS

        assert mock_qe_score("ABC", "abc", FOLDS["casefold"]) == 1.0
        assert mock_qe_score("ABC", "abc") == -1.0


def _trigrams(text):
    p = f" {text} "
    return {p[i : i + 3] for i in range(len(p) - 2)}


# 99th percentile of |cos| over seeds 0..99 at d=1024, measured once and frozen
NO_SHARED_TRIGRAM_CASES = [
    ("the quick brown fox", "jumps over lazy dogs", 0.05716619504750295),
    ("abcdefgh", "ijklmnop", 0.12499999999999997),
    ("नमस्ते दुनिया", "hello world", 0.09319801639717737),
]


class TestMockEmbedding:
    def test_deterministic(self):
        a = mock_embedding("some text", 64, 3)
        b = mock_embedding("some text", 64, 3)
        np.testing.assert_array_equal(a, b)
        assert cosine(a, b) == pytest.approx(1.0, abs=1e-12)

    def test_empty(self):
        with pytest.raises(EmptyText):
            mock_embedding("")

    def test_dimension_floor(self):
        with pytest.raises(DataError):
            mock_embedding("x", 4)

    @given(st.text(min_size=1, max_size=20), st.integers(0, 5))
    def test_unit_norm(self, text, seed):
        v = mock_embedding(text, 32, seed)
        assert abs(np.linalg.norm(v) - 1.0) <= 1e-6

    @pytest.mark.parametrize("a,b,p99", NO_SHARED_TRIGRAM_CASES)
    def test_disjoint_trigrams_near_orthogonal(self, a, b, p99):
        assert not (_trigrams(a) & _trigrams(b))
        cs = [abs(float(mock_embedding(a, 1024, s) @ mock_embedding(b, 1024, s))) for s in range(100)]
        observed = float(np.percentile(cs, 99))
        assert observed == pytest.approx(p99, abs=1e-12)
        assert observed < 0.2


class TestMockScorers:
    def test_threads_do_not_change_output(self):
        pairs = [SentencePair(i, f"s {i} x", f"t {i % 7} x") for i in range(5000)]
        a = MockQeScorer(threads=1).score(pairs).values
        b = MockQeScorer(threads=4).score(pairs).values
        np.testing.assert_array_equal(a, b)
        e1 = MockEmbedder(threads=1).embed(pairs[:500]).similarities()
        e4 = MockEmbedder(threads=4).embed(pairs[:500]).similarities()
        np.testing.assert_array_equal(e1, e4)

    def test_scores_normalized_text(self):
        t = MockQeScorer(INDIC).score([SentencePair(0, "a  b", "a b")])
        assert t[0] == 1.0

    def test_parse_source(self):
        assert parse_source("file:x.tsv") == ("file", "x.tsv")
        assert parse_source("mock") == ("mock", "")
        with pytest.raises(DataError):
            parse_source("bogus")


def _mock_transport(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


def _echo_scores(request):
    body = json.loads(request.content)
    return httpx.Response(200, json={"scores": [{"id": p["id"], "score": p["id"] / 10} for p in body["pairs"]]})


class TestServiceClient:
    def test_batching(self):
        seen = []

        def handler(request):
            seen.append(len(json.loads(request.content)["pairs"]))
            return _echo_scores(request)

        table = score_with_service(PAIRS, ScorerEndpoint("http://x", batch_size=4), client=_mock_transport(handler))
        assert seen == [4, 4, 2]
        assert len(table) == 10 and table[9] == 0.9

    def test_incomplete(self):
        def handler(request):
            body = json.loads(request.content)
            return httpx.Response(200, json={"scores": [{"id": p["id"], "score": 0.0} for p in body["pairs"][:-1]]})

        with pytest.raises(IncompleteResponse):
            score_with_service(PAIRS, ScorerEndpoint("http://x", batch_size=10), client=_mock_transport(handler))

    def test_transient_then_success(self):
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            if calls["n"] == 1:
                return httpx.Response(503)
            return _echo_scores(request)

        sleeps = []
        client = ServiceClient(
            ScorerEndpoint("http://x", batch_size=10, max_retries=2, backoff=0.25),
            client=_mock_transport(handler),
            sleep=sleeps.append,
        )
        assert len(client.score(PAIRS)) == 10
        assert sleeps == [0.25]

    def test_retries_exhausted(self):
        sleeps = []
        client = ServiceClient(
            ScorerEndpoint("http://x", max_retries=2, backoff=0.5),
            client=_mock_transport(lambda r: httpx.Response(503)),
            sleep=sleeps.append,
        )
        with pytest.raises(ServiceUnavailable):
            client.score(PAIRS)
        assert sleeps == [0.5, 1.0]
        assert client.requests_sent == 3

    def test_connection_error_retried(self):
        def handler(request):
            raise httpx.ConnectError("refused")

        client = ServiceClient(
            ScorerEndpoint("http://x", max_retries=1, backoff=0), client=_mock_transport(handler), sleep=lambda s: None
        )
        with pytest.raises(ServiceUnavailable):
            client.score(PAIRS)

    @pytest.mark.parametrize(
        "reply",
        [
            {"nope": []},
            {"scores": [{"id": 99, "score": 0.0}]},
            {"scores": [{"id": 0, "score": "high"}]},
        ],
    )
    def test_malformed(self, reply):
        client = _mock_transport(lambda r: httpx.Response(200, json=reply))
        with pytest.raises(ProtocolError):
            score_with_service(PAIRS[:1], ScorerEndpoint("http://x"), client=client)

    def test_client_error_not_retried(self):
        calls = {"n": 0}

        def handler(request):
            calls["n"] += 1
            return httpx.Response(400, text="bad")

        with pytest.raises(ProtocolError):
            score_with_service(PAIRS, ScorerEndpoint("http://x", backoff=0), client=_mock_transport(handler))
        assert calls["n"] == 1

    def test_concurrency_keeps_order(self):
        ep = ScorerEndpoint("http://x", batch_size=3, concurrency=4)
        table = ServiceClient(ep, client=_mock_transport(_echo_scores)).score(PAIRS)
        np.testing.assert_allclose(table.values, [i / 10 for i in range(10)])

    def test_payload_shape(self):
        bodies = []

        def handler(request):
            bodies.append(json.loads(request.content))
            return _echo_scores(request)

        score_with_service([SentencePair(0, " a  b ", "c")], ScorerEndpoint("http://x"), client=_mock_transport(handler))
        assert bodies[0] == {"kind": "qe", "profile": "nfc+ws", "pairs": [{"id": 0, "source": "a b", "target": "c"}]}

    def test_make_qe_scorer_service(self):
        sc = make_qe_scorer("service:http://h:1", endpoint=ScorerEndpoint("http://other", batch_size=7))
        assert sc.endpoint.base_url == "http://h:1" and sc.endpoint.batch_size == 7
        assert math.isfinite(sc.endpoint.timeout)
