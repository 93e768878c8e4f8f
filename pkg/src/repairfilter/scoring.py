"""Sentence-level QE scores and sentence embeddings behind one interface.

Scores come from a TSV file, an HTTP scorer service, or deterministic mock
scorers. Downstream code only sees :class:`ScoreTable` and
:class:`EmbeddingTable`, never where the numbers came from.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from array import array
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Iterator, Protocol, Sequence

import httpx
import numpy as np

from ._parallel import _chunks, ordered_map
from .corpus_io import INDIC, NormalizationProfile, SentencePair, normalize
from .errors import (
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

log = logging.getLogger(__name__)

NORM_TOL = 1e-6


# ---------------------------------------------------------------------------
# tables


class ScoreTable:
    """Immutable QE scores for pair ids ``0..n-1``."""

    __slots__ = ("_values", "provenance")

    def __init__(self, values: np.ndarray, provenance: str):
        values = np.array(values, dtype=np.float64)
        if values.ndim != 1:
            raise DataError("score table must be one-dimensional")
        bad = np.flatnonzero(~np.isfinite(values))
        if bad.size:
            raise NonFiniteScore(int(bad[0]) + 1, str(values[bad[0]]))
        values.setflags(write=False)
        self._values = values
        self.provenance = provenance

    @classmethod
    def from_items(cls, items: Iterable[tuple[int, float]], expected_count: int, provenance: str) -> "ScoreTable":
        values = np.full(expected_count, np.nan)
        seen = np.zeros(expected_count, dtype=bool)
        for pid, value in items:
            if pid < 0 or pid >= expected_count:
                raise DataError(f"pair id {pid} outside 0..{expected_count - 1}")
            if seen[pid]:
                raise DuplicateId(pid)
            seen[pid] = True
            values[pid] = value
        missing = np.flatnonzero(~seen)
        if missing.size:
            raise MissingId(int(missing[0]))
        return cls(values, provenance)

    @property
    def values(self) -> np.ndarray:
        return self._values

    def __len__(self) -> int:
        return len(self._values)

    def __getitem__(self, pair_id: int) -> float:
        if not 0 <= pair_id < len(self._values):
            raise MissingScore(pair_id)
        return float(self._values[pair_id])

    def lookup(self, ids: np.ndarray) -> np.ndarray:
        """Vectorized fetch; raises MissingScore for the first id not covered."""
        if ids.size and (ids.min() < 0 or ids.max() >= len(self._values)):
            bad = ids[(ids < 0) | (ids >= len(self._values))][0]
            raise MissingScore(int(bad))
        return self._values[ids]

    def write_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for i, v in enumerate(self._values.tolist()):
                f.write(f"{i}\t{v!r}\n")


def load_score_table(path, expected_count: int | None = None) -> ScoreTable:
    """Read ``pair_id<TAB>score`` rows. Every id in ``0..expected_count-1`` must appear once.

    With ``expected_count=None`` the row count is used.
    """
    # typed buffers: 8 bytes per value instead of a boxed Python object
    ids = array("q")
    vals = array("d")
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            try:
                pid_s, score_s = line.split("\t")
                pid = int(pid_s)
            except ValueError:
                raise DataError(f"{path}:{lineno}: expected 'pair_id<TAB>score'") from None
            try:
                score = float(score_s)
            except ValueError:
                raise NonFiniteScore(lineno, score_s) from None
            if not math.isfinite(score):
                raise NonFiniteScore(lineno, score_s)
            ids.append(pid)
            vals.append(score)
    n = len(ids) if expected_count is None else expected_count
    id_arr = np.frombuffer(ids, dtype=np.int64)
    if id_arr.size and (id_arr.min() < 0 or id_arr.max() >= n):
        bad = id_arr[(id_arr < 0) | (id_arr >= n)][0]
        raise DataError(f"{path}: pair id {bad} outside 0..{n - 1}")
    counts = np.bincount(id_arr, minlength=n)
    if (counts > 1).any():
        raise DuplicateId(int(np.flatnonzero(counts > 1)[0]))
    if (counts == 0).any():
        raise MissingId(int(np.flatnonzero(counts == 0)[0]))
    values = np.empty(n)
    values[id_arr] = np.frombuffer(vals, dtype=np.float64)
    return ScoreTable(values, "file")


def _unit_rows(m: np.ndarray, side: str) -> np.ndarray:
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ZeroVector(f"zero {side} embedding for pair {int(zero[0])}")
    # rows already unit length are kept bit-for-bit so a written table reloads to identical cosines
    scale = np.where(np.abs(norms - 1.0) <= 1e-12, 1.0, norms)
    return m / scale[:, None]


class EmbeddingTable:
    """Source/target sentence vectors for pair ids ``0..n-1``, re-normalized to unit length."""

    __slots__ = ("source", "target", "provenance", "_sims")

    def __init__(self, source: np.ndarray, target: np.ndarray, provenance: str):
        source = np.asarray(source, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        if source.ndim != 2 or source.shape != target.shape or source.shape[1] < 1:
            raise DimensionMismatch(f"source {source.shape} vs target {target.shape}")
        if not (np.isfinite(source).all() and np.isfinite(target).all()):
            raise DataError("non-finite embedding component")
        self.source = _unit_rows(source, "source")
        self.target = _unit_rows(target, "target")
        self.source.setflags(write=False)
        self.target.setflags(write=False)
        self.provenance = provenance
        self._sims: np.ndarray | None = None

    @property
    def dimension(self) -> int:
        return self.source.shape[1]

    def __len__(self) -> int:
        return self.source.shape[0]

    def similarities(self) -> np.ndarray:
        """Source/target cosine per pair, computed once so every consumer sees identical values."""
        if self._sims is None:
            sims = row_cosines(self.source, self.target)
            sims.setflags(write=False)
            self._sims = sims
        return self._sims

    def lookup(self, ids: np.ndarray) -> np.ndarray:
        n = len(self)
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            raise MissingEmbedding(int(ids[(ids < 0) | (ids >= n)][0]))
        return self.similarities()[ids]

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(f"d={self.dimension}\n")
            for i, (s, t) in enumerate(zip(self.source.tolist(), self.target.tolist())):
                f.write(f"{i}\t{' '.join(map(repr, s))}\t{' '.join(map(repr, t))}\n")


def load_embeddings(path, expected_count: int | None = None) -> EmbeddingTable:
    """Read the ``d=<dim>`` header followed by ``pair_id<TAB>src floats<TAB>tgt floats`` rows."""
    with open(path, encoding="utf-8") as f:
        header = f.readline().strip()
        if not header.startswith("d="):
            raise DataError(f"{path}: missing 'd=<dimension>' header")
        d = int(header[2:])
        if d < 1:
            raise DataError(f"{path}: dimension must be >= 1")
        rows: dict[int, tuple[list[float], list[float]]] = {}
        for lineno, line in enumerate(f, start=2):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields")
            pid = int(parts[0])
            src = [float(x) for x in parts[1].split()]
            tgt = [float(x) for x in parts[2].split()]
            if len(src) != d or len(tgt) != d:
                raise DimensionMismatch(f"{path}:{lineno}: expected {d} components per side")
            if pid in rows:
                raise DuplicateId(pid)
            rows[pid] = (src, tgt)
    n = len(rows) if expected_count is None else expected_count
    for pid in rows:
        if not 0 <= pid < n:
            raise DataError(f"{path}: pair id {pid} outside 0..{n - 1}")
    for pid in range(n):
        if pid not in rows:
            raise MissingEmbedding(pid)
    source = np.array([rows[i][0] for i in range(n)], dtype=np.float64).reshape(n, d)
    target = np.array([rows[i][1] for i in range(n)], dtype=np.float64).reshape(n, d)
    return EmbeddingTable(source, target, "file")


# ---------------------------------------------------------------------------
# similarity


def row_cosines(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosine per row. Symmetric bit-for-bit: elementwise products commute and sums run in one order."""
    dots = np.einsum("ij,ij->i", a, b)
    na = np.sqrt(np.einsum("ij,ij->i", a, a))
    nb = np.sqrt(np.einsum("ij,ij->i", b, b))
    return np.clip(dots / (na * nb), -1.0, 1.0)


def cosine(a: Sequence[float], b: Sequence[float]) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape[0]} vs {b.shape[0]}")
    if not a.any() or not b.any():
        raise ZeroVector("cosine of a zero vector is undefined")
    # cosine is scale-free; rescaling keeps tiny or huge components from under/overflowing the norms
    a = a / np.abs(a).max()
    b = b / np.abs(b).max()
    return float(row_cosines(a[None, :], b[None, :])[0])


# ---------------------------------------------------------------------------
# mock scorers


def _char_ngrams(text: str, n: int) -> Counter:
    return Counter(text[i : i + n] for i in range(len(text) - n + 1))


FOLDS: dict[str, Callable[[str], str]] = {
    "identity": lambda s: s,
    "casefold": str.casefold,
}


def mock_qe_score(source: str, target: str, fold: Callable[[str], str] | None = None) -> float:
    """Deterministic QE stand-in on the DA-like scale: ``2*F - 1``.

    F averages, over character n-gram orders 1..4, the Dice overlap
    ``2*matches / (|target n-grams| + |source n-grams|)`` between the target and
    the folded source. Orders where neither side has n-grams are skipped, so two
    empty strings score 1.0.
    """
    ref = fold(source) if fold is not None else source
    if ref == target:
        return 1.0
    lt, lr = len(target), len(ref)
    fs = []
    for n in range(1, 5):
        total = max(lt - n + 1, 0) + max(lr - n + 1, 0)
        if total == 0:
            continue
        # clipped matches, consuming reference n-grams as they are used
        avail = Counter([ref[i : i + n] for i in range(lr - n + 1)])
        m = 0
        for g in [target[i : i + n] for i in range(lt - n + 1)]:
            c = avail.get(g)
            if c:
                avail[g] = c - 1
                m += 1
        fs.append(2.0 * m / total)
    f = math.fsum(fs) / len(fs) if fs else 1.0
    return 2.0 * f - 1.0


@lru_cache(maxsize=1 << 18)
def _trigram_feature(gram: str, dimension: int, seed: int) -> tuple[int, float]:
    key = seed.to_bytes(8, "little", signed=True)
    h = int.from_bytes(hashlib.blake2b(gram.encode("utf-8"), digest_size=8, key=key).digest(), "little")
    return h % dimension, (1.0 if (h >> 63) & 1 else -1.0)


def mock_embedding(text: str, dimension: int = 64, seed: int = 0) -> np.ndarray:
    """Signed-hash projection of the character trigram bag of ``" " + text + " "``, unit L2 norm.

    If every trigram cancels out under the signed hashing, the whole text is
    hashed to a single signed coordinate instead, so any non-empty text has a
    well-defined direction.
    """
    if dimension < 8:
        raise DataError("mock embedding dimension must be >= 8")
    if not text:
        raise EmptyText("cannot embed empty text")
    padded = f" {text} "
    vec = np.zeros(dimension)
    for gram, count in _char_ngrams(padded, 3).items():
        idx, sign = _trigram_feature(gram, dimension, seed)
        vec[idx] += sign * count
    norm = math.sqrt(float(np.dot(vec, vec)))
    if norm == 0.0:
        idx, sign = _trigram_feature("\x00" + text, dimension, seed)
        vec[idx] = sign
        return vec
    return vec / norm


# ---------------------------------------------------------------------------
# scorer adapters


class QeScorer(Protocol):
    def score(self, pairs: Iterable[SentencePair]) -> ScoreTable: ...


class Embedder(Protocol):
    def embed(self, pairs: Iterable[SentencePair]) -> EmbeddingTable: ...


def _check_sequential(ids: list[int]) -> None:
    for expected, pid in enumerate(ids):
        if pid != expected:
            raise DataError(f"pairs must be numbered 0..n-1 in order; got id {pid} at position {expected}")


class FileQeScorer:
    def __init__(self, path):
        self.path = path

    def score(self, pairs: Iterable[SentencePair]) -> ScoreTable:
        n = sum(1 for _ in pairs)
        return load_score_table(self.path, n)


class FileEmbedder:
    def __init__(self, path):
        self.path = path

    def embed(self, pairs: Iterable[SentencePair]) -> EmbeddingTable:
        n = sum(1 for _ in pairs)
        return load_embeddings(self.path, n)


class MockQeScorer:
    """Scores normalized text with :func:`mock_qe_score`."""

    def __init__(self, profile: NormalizationProfile = INDIC, fold: str = "identity", threads: int = 1):
        if fold not in FOLDS:
            raise DataError(f"unknown fold {fold!r}")
        self.profile = profile
        self.fold = fold
        self.threads = threads

    def _one(self, pair: SentencePair) -> tuple[int, float]:
        p = self.profile
        return pair.id, mock_qe_score(normalize(pair.source, p), normalize(pair.target, p), FOLDS[self.fold])

    def score(self, pairs: Iterable[SentencePair]) -> ScoreTable:
        ids, vals = [], []
        for pid, v in ordered_map(self._one, pairs, self.threads):
            ids.append(pid)
            vals.append(v)
        _check_sequential(ids)
        return ScoreTable(np.asarray(vals, dtype=np.float64), f"mock:chrf-{self.fold}")


class MockEmbedder:
    def __init__(self, dimension: int = 64, seed: int = 0, profile: NormalizationProfile = INDIC, threads: int = 1):
        self.dimension = dimension
        self.seed = seed
        self.profile = profile
        self.threads = threads

    def _one(self, pair: SentencePair) -> tuple[int, np.ndarray, np.ndarray]:
        p = self.profile
        return (
            pair.id,
            mock_embedding(normalize(pair.source, p), self.dimension, self.seed),
            mock_embedding(normalize(pair.target, p), self.dimension, self.seed),
        )

    def embed(self, pairs: Iterable[SentencePair]) -> EmbeddingTable:
        ids, src, tgt = [], [], []
        for pid, s, t in ordered_map(self._one, pairs, self.threads):
            ids.append(pid)
            src.append(s)
            tgt.append(t)
        _check_sequential(ids)
        shape = (len(ids), self.dimension)
        return EmbeddingTable(
            np.array(src).reshape(shape), np.array(tgt).reshape(shape), f"mock:trigram-d{self.dimension}-s{self.seed}"
        )


# ---------------------------------------------------------------------------
# HTTP scorer service client

RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class ScorerEndpoint:
    base_url: str
    batch_size: int = 64
    timeout: float = 30.0
    max_retries: int = 3
    backoff: float = 0.5
    concurrency: int = 1

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @property
    def score_url(self) -> str:
        return self.base_url.rstrip("/") + "/v1/score"


class ServiceClient:
    """Batching client for ``POST {base_url}/v1/score``.

    Texts are normalized with ``profile`` before sending and the profile name
    travels with each request. Transient failures (connection errors, 429, 5xx)
    are retried with exponential backoff; anything else is a protocol error.
    """

    def __init__(
        self,
        endpoint: ScorerEndpoint,
        profile: NormalizationProfile = INDIC,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.profile = profile
        self._client = client
        self._sleep = sleep
        self.requests_sent = 0

    def _http(self) -> httpx.Client:
        if self._client is None:
            self._client = httpx.Client(timeout=self.endpoint.timeout)
        return self._client

    def close(self) -> None:
        if self._client is not None:
            self._client.close()

    def _post(self, payload: dict) -> dict:
        ep = self.endpoint
        last = ""
        for attempt in range(ep.max_retries + 1):
            if attempt:
                self._sleep(ep.backoff * 2 ** (attempt - 1))
            self.requests_sent += 1
            try:
                resp = self._http().post(ep.score_url, json=payload, timeout=ep.timeout)
            except httpx.TransportError as exc:
                last = f"{type(exc).__name__}: {exc}"
                log.warning("scorer request failed (attempt %d): %s", attempt + 1, last)
                continue
            if resp.status_code == 200:
                try:
                    return resp.json()
                except (json.JSONDecodeError, ValueError):
                    raise ProtocolError("scorer reply is not valid JSON") from None
            if resp.status_code in RETRYABLE_STATUS:
                last = f"HTTP {resp.status_code}"
                log.warning("scorer returned %s (attempt %d)", last, attempt + 1)
                continue
            raise ProtocolError(f"scorer returned HTTP {resp.status_code}: {resp.text[:200]}")
        raise ServiceUnavailable(f"{ep.score_url} failed after {ep.max_retries + 1} attempts ({last})")

    def _payload(self, kind: str, batch: list[SentencePair]) -> dict:
        p = self.profile
        return {
            "kind": kind,
            "profile": p.name,
            "pairs": [{"id": x.id, "source": normalize(x.source, p), "target": normalize(x.target, p)} for x in batch],
        }

    def _batches(self, kind: str, pairs: Iterable[SentencePair]) -> Iterator[tuple[list[int], dict]]:
        def send(batch: list[SentencePair]) -> tuple[list[int], dict]:
            return [x.id for x in batch], self._post(self._payload(kind, batch))

        yield from ordered_map(send, _chunks(pairs, self.endpoint.batch_size), self.endpoint.concurrency, chunk_size=1)

    def score(self, pairs: Iterable[SentencePair]) -> ScoreTable:
        found: dict[int, float] = {}
        all_ids: list[int] = []
        for ids, reply in self._batches("qe", pairs):
            all_ids.extend(ids)
            found.update(_parse_scores(reply, ids))
        _check_sequential(all_ids)
        return ScoreTable(np.array([found[i] for i in all_ids], dtype=np.float64), "service")

    def embed(self, pairs: Iterable[SentencePair]) -> EmbeddingTable:
        found: dict[int, tuple[list[float], list[float]]] = {}
        all_ids: list[int] = []
        for ids, reply in self._batches("embedding", pairs):
            all_ids.extend(ids)
            found.update(_parse_embeddings(reply, ids))
        _check_sequential(all_ids)
        dims = {len(v[0]) for v in found.values()}
        if len(dims) > 1:
            raise ProtocolError(f"scorer returned mixed embedding dimensions {sorted(dims)}")
        d = dims.pop() if dims else 1
        shape = (len(all_ids), d)
        src = np.array([found[i][0] for i in all_ids], dtype=np.float64).reshape(shape)
        tgt = np.array([found[i][1] for i in all_ids], dtype=np.float64).reshape(shape)
        try:
            return EmbeddingTable(src, tgt, "service")
        except DataError as exc:
            raise ProtocolError(f"unusable embeddings from scorer: {exc}") from None


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _is_number(x) -> bool:
    return (isinstance(x, (int, float)) and not isinstance(x, bool)) and math.isfinite(x)


def _reply_items(reply, key: str, ids: list[int]) -> list[dict]:
    if not isinstance(reply, dict) or not isinstance(reply.get(key), list):
        raise ProtocolError(f"scorer reply lacks a '{key}' list")
    items = reply[key]
    expected = set(ids)
    seen: set[int] = set()
    for item in items:
        if not isinstance(item, dict) or not _is_int(item.get("id")):
            raise ProtocolError(f"malformed entry in '{key}': {str(item)[:100]}")
        pid = item["id"]
        if pid not in expected:
            raise ProtocolError(f"scorer replied with unrequested id {pid}")
        if pid in seen:
            raise ProtocolError(f"scorer replied twice for id {pid}")
        seen.add(pid)
    missing = sorted(expected - seen)
    if missing:
        raise IncompleteResponse(missing)
    return items


def _parse_scores(reply, ids: list[int]) -> dict[int, float]:
    out = {}
    for item in _reply_items(reply, "scores", ids):
        if not _is_number(item.get("score")):
            raise ProtocolError(f"non-numeric or non-finite score for id {item['id']}")
        out[item["id"]] = float(item["score"])
    return out


def _parse_embeddings(reply, ids: list[int]) -> dict[int, tuple[list[float], list[float]]]:
    out = {}
    for item in _reply_items(reply, "embeddings", ids):
        s, t = item.get("source_vec"), item.get("target_vec")
        if not (isinstance(s, list) and isinstance(t, list) and s and len(s) == len(t)):
            raise ProtocolError(f"bad vectors for id {item['id']}")
        if not all(map(_is_number, s)) or not all(map(_is_number, t)):
            raise ProtocolError(f"non-numeric vector component for id {item['id']}")
        out[item["id"]] = (s, t)
    return out


def score_with_service(
    pairs: Iterable[SentencePair],
    endpoint: ScorerEndpoint,
    profile: NormalizationProfile = INDIC,
    client: httpx.Client | None = None,
) -> ScoreTable:
    sc = ServiceClient(endpoint, profile, client)
    try:
        return sc.score(pairs)
    finally:
        if client is None:
            sc.close()


# ---------------------------------------------------------------------------
# source specs: "file:PATH", "mock", "service:URL"


def parse_source(spec: str) -> tuple[str, str]:
    kind, _, arg = spec.partition(":")
    if kind == "mock" and not arg:
        return "mock", ""
    if kind in ("file", "service") and arg:
        return kind, arg
    raise DataError(f"scorer source must be 'file:PATH', 'service:URL' or 'mock', got {spec!r}")


def make_qe_scorer(
    spec: str,
    profile: NormalizationProfile = INDIC,
    threads: int = 1,
    endpoint: ScorerEndpoint | None = None,
    fold: str = "identity",
):
    kind, arg = parse_source(spec)
    if kind == "file":
        return FileQeScorer(arg)
    if kind == "mock":
        return MockQeScorer(profile, fold, threads)
    ep = endpoint or ScorerEndpoint(arg)
    if ep.base_url != arg:
        ep = ScorerEndpoint(arg, ep.batch_size, ep.timeout, ep.max_retries, ep.backoff, ep.concurrency)
    return ServiceClient(ep, profile)


def make_embedder(
    spec: str,
    profile: NormalizationProfile = INDIC,
    threads: int = 1,
    endpoint: ScorerEndpoint | None = None,
    dimension: int = 64,
    seed: int = 0,
):
    kind, arg = parse_source(spec)
    if kind == "file":
        return FileEmbedder(arg)
    if kind == "mock":
        return MockEmbedder(dimension, seed, profile, threads)
    ep = endpoint or ScorerEndpoint(arg)
    if ep.base_url != arg:
        ep = ScorerEndpoint(arg, ep.batch_size, ep.timeout, ep.max_retries, ep.backoff, ep.concurrency)
    return ServiceClient(ep, profile)
