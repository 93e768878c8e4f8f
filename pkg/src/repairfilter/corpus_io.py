"""Reading, normalizing, tokenizing and writing line-aligned parallel corpora.

Pair identity is the 0-based line index. Files are UTF-8 with LF line endings;
CRLF is accepted on read and never written.
"""

from __future__ import annotations

import hashlib
import json
import unicodedata
from dataclasses import asdict, dataclass
from functools import lru_cache
from itertools import groupby
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

from . import TOOL_VERSION
from .errors import DataError, EncodingError, LineCountMismatch


class SentencePair(NamedTuple):
    id: int
    source: str
    target: str


class ApeTriplet(NamedTuple):
    id: int
    source: str
    mt_output: str
    corrected: str


@dataclass(frozen=True)
class NormalizationProfile:
    lowercase: bool = False
    unicode_nfc: bool = True
    collapse_whitespace: bool = True

    @property
    def name(self) -> str:
        parts = [
            flag
            for flag, on in (
                ("nfc", self.unicode_nfc),
                ("ws", self.collapse_whitespace),
                ("lower", self.lowercase),
            )
            if on
        ]
        return "+".join(parts) or "identity"

    def to_dict(self) -> dict:
        return asdict(self)


# Moses-style English preprocessing lowercases; Indic preprocessing only normalizes.
ENGLISH = NormalizationProfile(lowercase=True)
INDIC = NormalizationProfile(lowercase=False)
IDENTITY = NormalizationProfile(lowercase=False, unicode_nfc=False, collapse_whitespace=False)

PROFILES = {"english": ENGLISH, "indic": INDIC, "identity": IDENTITY}


@dataclass(frozen=True)
class CorpusStats:
    pair_count: int = 0
    source_token_count: int = 0
    target_token_count: int = 0
    mean_length_ratio: float = 0.0
    duplicate_pair_count: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# text processing


def normalize(text: str, profile: NormalizationProfile) -> str:
    """NFC, then whitespace collapse, then lowercasing; each step only if enabled."""
    if profile.unicode_nfc:
        text = unicodedata.normalize("NFC", text)
    if profile.collapse_whitespace:
        text = " ".join(text.split())
    if profile.lowercase:
        text = text.lower()
        # lowercasing can emit decomposable sequences; re-compose so the result is a fixed point
        if profile.unicode_nfc:
            text = unicodedata.normalize("NFC", text)
    return text


@lru_cache(maxsize=65536)
def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _split_word(word: str) -> list[str]:
    if not any(map(_is_punct, word)):
        return [word]
    return ["".join(run) for _, run in groupby(word, key=_is_punct)]


def tokenize(text: str) -> list[str]:
    """Whitespace split, then every maximal run of Unicode punctuation becomes its own token."""
    tokens: list[str] = []
    for word in text.split():
        tokens.extend(_split_word(word))
    return tokens


# ---------------------------------------------------------------------------
# reading


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def read_lines(path) -> Iterator[str]:
    """Yield decoded lines without their terminator. A trailing CR is dropped."""
    with open(path, "rb") as f:
        for lineno, raw in enumerate(f, start=1):
            if raw.endswith(b"\n"):
                raw = raw[:-1]
            if raw.endswith(b"\r"):
                raw = raw[:-1]
            try:
                yield raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise EncodingError(str(path), lineno, f"invalid UTF-8 ({exc.reason})") from None


def count_lines(path) -> int:
    n = 0
    last = b"\n"
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            n += block.count(b"\n")
            last = block[-1:]
    return n + (last != b"\n")


def read_aligned(paths: Sequence) -> Iterator[tuple[str, ...]]:
    """Zip several line files, raising LineCountMismatch as soon as one runs short."""
    iters = [read_lines(p) for p in paths]
    sentinel = object()
    n = 0
    while True:
        row = [next(it, sentinel) for it in iters]
        done = [x is sentinel for x in row]
        if all(done):
            return
        if any(done):
            counts = [n + (not d) + sum(1 for _ in it) for d, it in zip(done, iters)]
            other = next(k for k, c in enumerate(counts) if c != counts[0])
            raise LineCountMismatch(str(paths[0]), counts[0], str(paths[other]), counts[other])
        n += 1
        yield tuple(row)  # type: ignore[arg-type]


def read_parallel(source_path, target_path) -> Iterator[SentencePair]:
    for i, (src, tgt) in enumerate(read_aligned([source_path, target_path])):
        yield SentencePair(i, src, tgt)


def read_ape_triplets(source_path, mt_path, corrected_path) -> Iterator[ApeTriplet]:
    for i, (src, mt, pe) in enumerate(read_aligned([source_path, mt_path, corrected_path])):
        yield ApeTriplet(i, src, mt, pe)


@dataclass(frozen=True)
class Corpus:
    """A parallel corpus materialized as two line files. Iterating re-reads the files."""

    source: Path
    target: Path

    def __post_init__(self):
        object.__setattr__(self, "source", Path(self.source))
        object.__setattr__(self, "target", Path(self.target))

    def __iter__(self) -> Iterator[SentencePair]:
        return read_parallel(self.source, self.target)

    def count(self) -> int:
        n, m = count_lines(self.source), count_lines(self.target)
        if n != m:
            raise LineCountMismatch(str(self.source), n, str(self.target), m)
        return n

    def checksums(self) -> list[dict]:
        return [{"path": str(p), "sha256": sha256_file(p)} for p in (self.source, self.target)]


# ---------------------------------------------------------------------------
# writing


class _HashingWriter:
    def __init__(self, path):
        self.path = Path(path)
        self._f = open(self.path, "wb")
        self._h = hashlib.sha256()

    def write_line(self, text: str) -> None:
        if "\n" in text or "\r" in text:
            raise DataError(f"line break inside sentence written to {self.path}")
        data = text.encode("utf-8") + b"\n"
        self._f.write(data)
        self._h.update(data)

    def close(self) -> str:
        self._f.close()
        return self._h.hexdigest()


def write_lines(lines: Iterable[str], path) -> str:
    """Write one text per line; return the sha256 of the written bytes."""
    w = _HashingWriter(path)
    try:
        for line in lines:
            w.write_line(line)
    finally:
        digest = w.close()
    return digest


class ParallelWriter:
    """Streaming sink for a parallel corpus; ``close`` returns the manifest."""

    def __init__(self, source_path, target_path):
        self.source_path = Path(source_path)
        self.target_path = Path(target_path)
        self._src = _HashingWriter(source_path)
        self._tgt = _HashingWriter(target_path)
        self.count = 0
        self._digests: tuple[str, str] | None = None

    def write(self, pair: SentencePair) -> None:
        self._src.write_line(pair.source)
        self._tgt.write_line(pair.target)
        self.count += 1

    def _finish(self) -> tuple[str, str]:
        if self._digests is None:
            self._digests = (self._src.close(), self._tgt.close())
        return self._digests

    def close(
        self,
        *,
        profile: NormalizationProfile | None = None,
        inputs: Sequence[dict] = (),
        manifest_path=None,
        extra: dict | None = None,
    ) -> dict:
        src_digest, tgt_digest = self._finish()
        manifest = {
            "pair_count": self.count,
            "profile": profile.to_dict() if profile is not None else None,
            "inputs": list(inputs),
            "outputs": [
                {"path": self.source_path.name, "sha256": src_digest},
                {"path": self.target_path.name, "sha256": tgt_digest},
            ],
            "tool_version": TOOL_VERSION,
        }
        if extra:
            manifest.update(extra)
        if manifest_path is not None:
            write_json(manifest, manifest_path)
        return manifest

    def __enter__(self) -> "ParallelWriter":
        return self

    def __exit__(self, *exc) -> None:
        self._finish()


def write_parallel(
    pairs: Iterable[SentencePair],
    source_path,
    target_path,
    *,
    profile: NormalizationProfile | None = None,
    inputs: Sequence[dict] = (),
    manifest_path=None,
    extra: dict | None = None,
) -> dict:
    """Write pairs to two line files and return (optionally also save) a JSON manifest."""
    with ParallelWriter(source_path, target_path) as w:
        for pair in pairs:
            w.write(pair)
    return w.close(profile=profile, inputs=inputs, manifest_path=manifest_path, extra=extra)


def write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(obj, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")


# ---------------------------------------------------------------------------
# corpus operations


def reindex(pairs: Iterable[SentencePair], start: int = 0) -> Iterator[SentencePair]:
    for i, p in enumerate(pairs, start):
        yield SentencePair(i, p.source, p.target)


def _pair_key(source: str, target: str) -> bytes:
    h = hashlib.blake2b(digest_size=16)
    h.update(source.encode("utf-8"))
    h.update(b"\x00")
    h.update(target.encode("utf-8"))
    return h.digest()


def dedup(pairs: Iterable[SentencePair], profile: NormalizationProfile) -> Iterator[SentencePair]:
    """Drop exact (source, target) repeats after normalization, keeping first occurrences."""
    seen: set[bytes] = set()
    for p in pairs:
        key = _pair_key(normalize(p.source, profile), normalize(p.target, profile))
        if key in seen:
            continue
        seen.add(key)
        yield p


def concat_corpora(
    a: Iterable[SentencePair],
    b: Iterable[SentencePair],
    dedup_pairs: bool = False,
    profile: NormalizationProfile = INDIC,
) -> Iterator[SentencePair]:
    def chained():
        yield from a
        yield from b

    stream: Iterable[SentencePair] = chained()
    if dedup_pairs:
        stream = dedup(stream, profile)
    return reindex(stream)


def compute_stats(pairs: Iterable[SentencePair], profile: NormalizationProfile | None = None) -> CorpusStats:
    """Single-pass statistics. Pairs with an empty source are left out of the length-ratio mean.

    With a ``profile``, tokens and duplicates are counted on normalized text.
    """
    n = src_tokens = tgt_tokens = dups = 0
    ratio_sum = 0.0
    ratio_n = 0
    seen: set[bytes] = set()
    for p in pairs:
        src, tgt = p.source, p.target
        if profile is not None:
            src, tgt = normalize(src, profile), normalize(tgt, profile)
        ns, nt = len(tokenize(src)), len(tokenize(tgt))
        n += 1
        src_tokens += ns
        tgt_tokens += nt
        if ns:
            ratio_sum += nt / ns
            ratio_n += 1
        key = _pair_key(src, tgt)
        if key in seen:
            dups += 1
        else:
            seen.add(key)
    return CorpusStats(
        pair_count=n,
        source_token_count=src_tokens,
        target_token_count=tgt_tokens,
        mean_length_ratio=ratio_sum / ratio_n if ratio_n else 0.0,
        duplicate_pair_count=dups,
    )
