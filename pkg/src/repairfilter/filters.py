"""Per-pair corpus filters with keep-if-greater-or-equal threshold semantics.

Filters never rewrite text. Surviving pairs are renumbered 0..k-1 and the
original ids are kept alongside so the ``new_id -> old_id`` mapping can be
written out.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from itertools import islice
from typing import Callable, Iterable, Iterator, Sequence, Union

import numpy as np

from .corpus_io import SentencePair, tokenize
from .scoring import EmbeddingTable, ScoreTable

CHUNK = 65536

# effectively "keep everything" for keep-if->= filters
NO_THRESHOLD = -1e18


@dataclass(frozen=True)
class FilterReport:
    filter_name: str
    input_count: int
    kept_count: int
    dropped_count: int
    threshold: float | None = None
    kept_ids_path: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FilterResult:
    pairs: list[SentencePair] | None
    kept_ids: np.ndarray
    report: FilterReport


@dataclass(frozen=True)
class SweepTable:
    rows: tuple[tuple[float, int], ...]

    @property
    def thresholds(self) -> list[float]:
        return [t for t, _ in self.rows]

    @property
    def kept_counts(self) -> list[int]:
        return [k for _, k in self.rows]

    def to_tsv(self) -> str:
        return "".join(f"{t!r}\t{k}\n" for t, k in self.rows)


# ---------------------------------------------------------------------------
# predicates: each maps a chunk of pairs to a boolean keep-mask


def _ids(chunk: Sequence[SentencePair]) -> np.ndarray:
    return np.fromiter((p.id for p in chunk), dtype=np.int64, count=len(chunk))


class QePredicate:
    name = "qe"

    def __init__(self, scores: ScoreTable, threshold: float):
        self.scores = scores
        self.threshold = float(threshold)

    def values(self, chunk: Sequence[SentencePair]) -> np.ndarray:
        return self.scores.lookup(_ids(chunk))

    def __call__(self, chunk: Sequence[SentencePair]) -> np.ndarray:
        return self.values(chunk) >= self.threshold


class LabsePredicate:
    name = "labse"

    def __init__(self, embeddings: EmbeddingTable, threshold: float):
        self.embeddings = embeddings
        self.threshold = float(threshold)

    def values(self, chunk: Sequence[SentencePair]) -> np.ndarray:
        return self.embeddings.lookup(_ids(chunk))

    def __call__(self, chunk: Sequence[SentencePair]) -> np.ndarray:
        return self.values(chunk) >= self.threshold


class LengthRatioPredicate:
    name = "length_ratio"
    threshold = None

    def __init__(self, min_ratio: float, max_ratio: float, max_tokens: int):
        if not 0 < min_ratio <= max_ratio:
            raise ValueError("need 0 < min_ratio <= max_ratio")
        if max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        self.min_ratio = min_ratio
        self.max_ratio = max_ratio
        self.max_tokens = max_tokens

    def keep(self, pair: SentencePair) -> bool:
        ns = len(tokenize(pair.source))
        nt = len(tokenize(pair.target))
        if not (1 <= ns <= self.max_tokens and 1 <= nt <= self.max_tokens):
            return False
        return self.min_ratio <= nt / ns <= self.max_ratio

    def __call__(self, chunk: Sequence[SentencePair]) -> np.ndarray:
        return np.fromiter(map(self.keep, chunk), dtype=bool, count=len(chunk))


Predicate = Callable[[Sequence[SentencePair]], np.ndarray]


def _chunked(pairs: Iterable[SentencePair], size: int) -> Iterator[list[SentencePair]]:
    it = iter(pairs)
    while chunk := list(islice(it, size)):
        yield chunk


def apply_filter(
    pairs: Iterable[SentencePair],
    predicate: Predicate,
    sink: Callable[[SentencePair], None] | None = None,
    chunk_size: int = CHUNK,
) -> FilterResult:
    """Stream ``pairs`` through ``predicate``.

    Kept pairs are renumbered and either collected into ``result.pairs`` or,
    when ``sink`` is given, handed to it one at a time (``result.pairs`` is then None).
    """
    collected: list[SentencePair] | None = [] if sink is None else None
    emit = collected.append if collected is not None else sink
    kept_parts: list[np.ndarray] = []
    n_in = n_kept = 0
    for chunk in _chunked(pairs, chunk_size):
        mask = predicate(chunk)
        n_in += len(chunk)
        kept_parts.append(_ids(chunk)[mask])
        for keep, p in zip(mask.tolist(), chunk):
            if keep:
                emit(SentencePair(n_kept, p.source, p.target))
                n_kept += 1
    kept_ids = np.concatenate(kept_parts) if kept_parts else np.zeros(0, dtype=np.int64)
    report = FilterReport(
        filter_name=getattr(predicate, "name", "custom"),
        input_count=n_in,
        kept_count=n_kept,
        dropped_count=n_in - n_kept,
        threshold=getattr(predicate, "threshold", None),
    )
    return FilterResult(collected, kept_ids, report)


def qe_filter(pairs: Iterable[SentencePair], scores: ScoreTable, threshold: float) -> FilterResult:
    return apply_filter(pairs, QePredicate(scores, threshold))


def labse_filter(pairs: Iterable[SentencePair], embeddings: EmbeddingTable, threshold: float) -> FilterResult:
    return apply_filter(pairs, LabsePredicate(embeddings, threshold))


def length_ratio_filter(
    pairs: Iterable[SentencePair], min_ratio: float, max_ratio: float, max_tokens: int
) -> FilterResult:
    return apply_filter(pairs, LengthRatioPredicate(min_ratio, max_ratio, max_tokens))


def write_kept_ids(kept_ids: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for new_id, old_id in enumerate(kept_ids.tolist()):
            f.write(f"{new_id}\t{old_id}\n")


# ---------------------------------------------------------------------------
# threshold sweeps


def sweep(
    pairs: Iterable[SentencePair],
    scores_or_embeddings: Union[ScoreTable, EmbeddingTable],
    thresholds: Sequence[float],
) -> SweepTable:
    """Kept count at every threshold from one pass over the corpus."""
    ts = np.asarray(thresholds, dtype=np.float64)
    if ts.size == 0:
        return SweepTable(())
    if np.any(np.diff(ts) <= 0):
        raise ValueError("thresholds must be strictly increasing")
    if isinstance(scores_or_embeddings, EmbeddingTable):
        pred: QePredicate | LabsePredicate = LabsePredicate(scores_or_embeddings, 0.0)
    else:
        pred = QePredicate(scores_or_embeddings, 0.0)
    parts = [pred.values(chunk) for chunk in _chunked(pairs, CHUNK)]
    values = np.sort(np.concatenate(parts)) if parts else np.zeros(0)
    # kept at t == number of values >= t
    kept = values.size - np.searchsorted(values, ts, side="left")
    return SweepTable(tuple(zip(ts.tolist(), kept.tolist())))
