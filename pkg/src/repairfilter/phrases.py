"""Phrase pair extraction from word alignments, relative-frequency phrase tables,
longest-unique selection, and injection of phrase pairs into a corpus.

A span pair is extracted when it is consistent with the alignment (no link
leaves the rectangle on either side, at least one link inside) and tight: the
first and last token on both sides are aligned. Unaligned words at the span
boundaries are never absorbed.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from typing import Iterable, Iterator, NamedTuple, Sequence

from ._parallel import ordered_map
from .corpus_io import SentencePair, read_aligned, reindex, tokenize
from .errors import AlignmentFormatError

DEFAULT_MAX_LEN = 7

Span = tuple[int, int]  # inclusive token indices
Phrase = tuple[str, ...]


class AlignedSentence(NamedTuple):
    pair_id: int
    source_tokens: tuple[str, ...]
    target_tokens: tuple[str, ...]
    links: frozenset[tuple[int, int]]


class PhrasePair(NamedTuple):
    source_phrase: Phrase
    target_phrase: Phrase
    count: int
    prob: float

    def to_tsv(self) -> str:
        return f"{' '.join(self.source_phrase)}\t{' '.join(self.target_phrase)}\t{self.count}\t{self.prob!r}\n"


def make_aligned(pair_id: int, source_tokens, target_tokens, links) -> AlignedSentence:
    src, tgt = tuple(source_tokens), tuple(target_tokens)
    links = frozenset((int(i), int(j)) for i, j in links)
    for i, j in links:
        if not (0 <= i < len(src) and 0 <= j < len(tgt)):
            raise AlignmentFormatError(f"pair {pair_id}: link {i}-{j} outside {len(src)}x{len(tgt)} tokens")
    return AlignedSentence(pair_id, src, tgt, links)


def parse_pharaoh(line: str) -> frozenset[tuple[int, int]]:
    links = set()
    for item in line.split():
        i, sep, j = item.partition("-")
        if not sep or not i.isdigit() or not j.isdigit():
            raise AlignmentFormatError(f"bad alignment entry {item!r}")
        links.add((int(i), int(j)))
    return frozenset(links)


def format_pharaoh(links: Iterable[tuple[int, int]]) -> str:
    return " ".join(f"{i}-{j}" for i, j in sorted(links))


def read_alignments(source_path, target_path, align_path) -> Iterator[AlignedSentence]:
    """Line-aligned corpus plus Pharaoh file; link indices refer to :func:`tokenize` tokens."""
    for pid, (src, tgt, al) in enumerate(read_aligned([source_path, target_path, align_path])):
        try:
            links = parse_pharaoh(al)
        except AlignmentFormatError as exc:
            raise AlignmentFormatError(f"{align_path}:{pid + 1}: {exc}") from None
        yield make_aligned(pid, tokenize(src), tokenize(tgt), links)


# ---------------------------------------------------------------------------
# extraction


def extract_phrases(sentence: AlignedSentence, max_len: int = DEFAULT_MAX_LEN) -> list[tuple[Span, Span]]:
    """All tight, consistent (source span, target span) pairs with both sides at most ``max_len`` long."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    n = len(sentence.source_tokens)
    by_src: list[list[int]] = [[] for _ in range(n)]
    by_tgt: list[list[int]] = [[] for _ in range(len(sentence.target_tokens))]
    for i, j in sentence.links:
        by_src[i].append(j)
        by_tgt[j].append(i)

    out: list[tuple[Span, Span]] = []
    for s1 in range(n):
        if not by_src[s1]:
            continue
        tmin = min(by_src[s1])
        tmax = max(by_src[s1])
        for s2 in range(s1, min(n, s1 + max_len)):
            if not by_src[s2]:
                continue
            tmin = min(tmin, min(by_src[s2]))
            tmax = max(tmax, max(by_src[s2]))
            if tmax - tmin + 1 > max_len:
                break
            if all(s1 <= i <= s2 for j in range(tmin, tmax + 1) for i in by_tgt[j]):
                out.append(((s1, s2), (tmin, tmax)))
    return out


def phrase_pairs(sentence: AlignedSentence, max_len: int = DEFAULT_MAX_LEN) -> list[tuple[Phrase, Phrase]]:
    src, tgt = sentence.source_tokens, sentence.target_tokens
    return [(src[a : b + 1], tgt[c : d + 1]) for (a, b), (c, d) in extract_phrases(sentence, max_len)]


# ---------------------------------------------------------------------------
# phrase table


class PhraseTable:
    """Phrase pair counts grouped by source phrase; ``prob`` is p(target | source) by relative frequency."""

    def __init__(self, counts: dict[Phrase, dict[Phrase, int]]):
        self._counts = {s: dict(ts) for s, ts in counts.items() if ts}
        self._totals = {s: sum(ts.values()) for s, ts in self._counts.items()}

    @classmethod
    def from_counter(cls, counter: Counter) -> "PhraseTable":
        grouped: dict[Phrase, dict[Phrase, int]] = defaultdict(dict)
        for (s, t), c in counter.items():
            if c > 0:
                grouped[s][t] = c
        return cls(grouped)

    @classmethod
    def from_pairs(cls, pairs: Iterable[PhrasePair]) -> "PhraseTable":
        return cls.from_counter(Counter({(p.source_phrase, p.target_phrase): p.count for p in pairs}))

    def __len__(self) -> int:
        return sum(len(ts) for ts in self._counts.values())

    def sources(self) -> list[Phrase]:
        return sorted(self._counts)

    def options(self, source: Phrase) -> dict[Phrase, int]:
        return dict(self._counts.get(source, {}))

    def count(self, source: Phrase, target: Phrase) -> int:
        return self._counts.get(source, {}).get(target, 0)

    def prob(self, source: Phrase, target: Phrase) -> float:
        c = self.count(source, target)
        return c / self._totals[source] if c else 0.0

    def pairs(self) -> list[PhrasePair]:
        out = []
        for s in sorted(self._counts):
            total = self._totals[s]
            for t in sorted(self._counts[s]):
                c = self._counts[s][t]
                out.append(PhrasePair(s, t, c, c / total))
        return out

    def write_tsv(self, path) -> None:
        write_phrase_pairs(self.pairs(), path)


def write_phrase_pairs(pairs: Iterable[PhrasePair], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for p in pairs:
            f.write(p.to_tsv())


def read_phrase_pairs(path) -> list[PhrasePair]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise AlignmentFormatError(f"{path}:{lineno}: expected 4 tab-separated fields")
            s, t, c, p = parts
            out.append(PhrasePair(tuple(s.split(" ")), tuple(t.split(" ")), int(c), float(p)))
    return out


def build_phrase_table(
    sentences: Iterable[AlignedSentence], max_len: int = DEFAULT_MAX_LEN, threads: int = 1
) -> PhraseTable:
    counter: Counter = Counter()
    for extracted in ordered_map(lambda s: phrase_pairs(s, max_len), sentences, threads, chunk_size=256):
        counter.update(extracted)
    return PhraseTable.from_counter(counter)


# ---------------------------------------------------------------------------
# selection and injection


def _contains(seq: Phrase, sub: Phrase) -> bool:
    k = len(sub)
    return any(seq[i : i + k] == sub for i in range(len(seq) - k + 1))


def select_longest_unique(table: PhraseTable) -> list[PhrasePair]:
    """Keep one best target per source phrase, then drop pairs nested inside a longer kept pair.

    1. Per source phrase keep the most probable target; ties prefer the longer
       target, then the lexicographically smaller one.
    2. Drop a kept pair when its source is a contiguous piece of another kept
       pair's source and its target is a contiguous piece of that pair's target.
    3. Sort by source length descending, then by source and target tokens.
    """
    best: dict[Phrase, PhrasePair] = {}
    for s in table.sources():
        options = table.options(s)
        t = min(options, key=lambda t: (-options[t], -len(t), t))
        best[s] = PhrasePair(s, t, options[t], table.prob(s, t))

    dropped: set[Phrase] = set()
    for outer in best.values():
        src = outer.source_phrase
        n = len(src)
        for a in range(n):
            for b in range(a + 1, n + 1):
                if b - a == n:
                    continue
                inner = best.get(src[a:b])
                if inner is not None and _contains(outer.target_phrase, inner.target_phrase):
                    dropped.add(inner.source_phrase)

    kept = [p for s, p in best.items() if s not in dropped]
    kept.sort(key=lambda p: (-len(p.source_phrase), p.source_phrase, p.target_phrase))
    return kept


def phrase_corpus(phrases: Sequence[PhrasePair]) -> list[SentencePair]:
    return [SentencePair(i, " ".join(p.source_phrase), " ".join(p.target_phrase)) for i, p in enumerate(phrases)]


def inject(pairs: Iterable[SentencePair], phrases: Iterable[PhrasePair]) -> Iterator[SentencePair]:
    """Append phrase pairs (tokens joined by single spaces) after the corpus, renumbering everything."""

    def chained():
        yield from pairs
        for p in phrases:
            yield SentencePair(-1, " ".join(p.source_phrase), " ".join(p.target_phrase))

    return reindex(chained())
