"""Corpus-level BLEU: clipped n-gram precision for n=1..4 pooled over the corpus,
geometric mean, brevity penalty. One reference per segment."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

from . import TOOL_VERSION
from .corpus_io import NormalizationProfile, normalize, read_aligned, sha256_file, tokenize
from .errors import EmptyCorpus, LengthMismatch

MAX_ORDER = 4

Segment = Union[str, Sequence[str]]


class Smoothing(str, Enum):
    NONE = "none"
    ADD_ONE = "add-one"


@dataclass(frozen=True)
class BleuResult:
    score: float
    precisions: tuple[float, ...]
    brevity_penalty: float
    hyp_length: int
    ref_length: int
    matches: tuple[int, ...] = ()
    totals: tuple[int, ...] = ()

    def to_json(self) -> dict:
        return {
            "bleu": self.score,
            "precisions": list(self.precisions),
            "bp": self.brevity_penalty,
            "hyp_len": self.hyp_length,
            "ref_len": self.ref_length,
        }


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _tokens(seg: Segment, profile: NormalizationProfile | None) -> list[str]:
    if isinstance(seg, str):
        return tokenize(normalize(seg, profile) if profile is not None else seg)
    return list(seg)


def corpus_bleu(
    hypotheses: Sequence[Segment],
    references: Sequence[Segment],
    smoothing: Smoothing | str = Smoothing.NONE,
    profile: NormalizationProfile | None = None,
) -> BleuResult:
    """BLEU over a corpus. Strings are normalized (when ``profile`` is given) and tokenized;
    token lists are used as-is.

    ``add-one`` smoothing adds 1 to the numerator and denominator of p_n for n >= 2.
    An order with no hypothesis n-grams in the whole corpus has p_n = 1, so
    identical corpora score 100 even when every segment is shorter than 4 tokens.
    """
    smoothing = Smoothing(smoothing)
    if len(hypotheses) != len(references):
        raise LengthMismatch(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise EmptyCorpus("BLEU needs at least one segment")

    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    hyp_len = ref_len = 0
    for hyp_seg, ref_seg in zip(hypotheses, references):
        hyp = _tokens(hyp_seg, profile)
        ref = _tokens(ref_seg, profile)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, MAX_ORDER + 1):
            h = ngrams(hyp, n)
            r = ngrams(ref, n)
            matches[n - 1] += sum(min(c, r[g]) for g, c in h.items())
            totals[n - 1] += max(len(hyp) - n + 1, 0)

    precisions = []
    for n in range(1, MAX_ORDER + 1):
        m, t = matches[n - 1], totals[n - 1]
        if smoothing is Smoothing.ADD_ONE and n >= 2:
            m, t = m + 1, t + 1
        # no hypothesis n-grams of this order anywhere: nothing is unmatched, so p_n is vacuously 1
        precisions.append(m / t if t else 1.0)

    if hyp_len == 0:
        bp = 0.0
    elif hyp_len > ref_len:
        bp = 1.0
    else:
        bp = math.exp(1.0 - ref_len / hyp_len)

    if min(precisions) <= 0.0 or bp == 0.0:
        score = 0.0
    else:
        score = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / MAX_ORDER)
    return BleuResult(score, tuple(precisions), bp, hyp_len, ref_len, tuple(matches), tuple(totals))


def evaluate_files(
    hyp_path,
    ref_path,
    profile: NormalizationProfile,
    smoothing: Smoothing | str = Smoothing.NONE,
) -> tuple[BleuResult, dict]:
    hyps, refs = [], []
    for h, r in read_aligned([hyp_path, ref_path]):
        hyps.append(h)
        refs.append(r)
    result = corpus_bleu(hyps, refs, smoothing, profile)
    report = result.to_json()
    report.update(
        {
            "segments": len(hyps),
            "smoothing": Smoothing(smoothing).value,
            "profile": profile.to_dict(),
            "inputs": [
                {"path": str(hyp_path), "sha256": sha256_file(hyp_path)},
                {"path": str(ref_path), "sha256": sha256_file(ref_path)},
            ],
            "tool_version": TOOL_VERSION,
        }
    )
    return result, report
