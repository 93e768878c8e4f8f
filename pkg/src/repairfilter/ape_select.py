"""Repair the target side with APE output, then keep whichever target QE prefers.

Selection never drops a pair: every input pair comes out with either its
original target or its post-edited one. Ties go to the original, which guards
against an APE system over-correcting a translation that was already fine.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Iterator, NamedTuple, Sequence, Union

from .corpus_io import INDIC, NormalizationProfile, SentencePair, normalize, read_lines
from .errors import LineCountMismatch, MissingScore
from .scoring import QeScorer, ScoreTable


class Chosen(str, Enum):
    ORIGINAL = "Original"
    APE = "Ape"


class Reason(str, Enum):
    HIGHER_SCORE = "HigherScore"
    TIE_POLICY = "TiePolicy"
    APE_IDENTICAL = "ApeIdentical"


class TiePolicy(str, Enum):
    PREFER_ORIGINAL = "PreferOriginal"


class SelectionRecord(NamedTuple):
    pair_id: int
    original_score: float
    ape_score: float
    chosen: Chosen
    reason: Reason

    @property
    def selected_score(self) -> float:
        return self.ape_score if self.chosen is Chosen.APE else self.original_score

    def to_tsv(self) -> str:
        return f"{self.pair_id}\t{self.original_score!r}\t{self.ape_score!r}\t{self.chosen.value}\t{self.reason.value}\n"


@dataclass(frozen=True)
class SelectionReport:
    input_count: int
    chosen_ape_count: int
    chosen_original_count: int
    tie_count: int
    ape_identical_count: int
    mean_original_score: float
    mean_ape_score: float
    mean_selected_score: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SelectionResult:
    pairs: list[SentencePair] | None
    report: SelectionReport
    records: list[SelectionRecord] | None


ApeTargets = Union[Sequence[str], str, Path]


def _iter_targets(ape_targets: ApeTargets) -> Iterator[str]:
    if isinstance(ape_targets, (str, Path)):
        return read_lines(ape_targets)
    return iter(ape_targets)


def _aligned(pairs: Iterable[SentencePair], targets: Iterable[str]) -> Iterator[tuple[SentencePair, str]]:
    it_p, it_t = iter(pairs), iter(targets)
    n = 0
    for p in it_p:
        t = next(it_t, None)
        if t is None:
            raise LineCountMismatch("corpus", n + 1 + sum(1 for _ in it_p), "ape output", n)
        n += 1
        yield p, t
    rest = sum(1 for _ in it_t)
    if rest:
        raise LineCountMismatch("corpus", n, "ape output", n + rest)


def ape_replace(pairs: Iterable[SentencePair], ape_targets: ApeTargets) -> Iterator[SentencePair]:
    """Swap in the post-edited target for every pair; count must match exactly."""
    for p, t in _aligned(pairs, _iter_targets(ape_targets)):
        yield SentencePair(p.id, p.source, t)


def choose(
    original_score: float,
    ape_score: float,
    identical: bool,
    tie_policy: TiePolicy = TiePolicy.PREFER_ORIGINAL,
) -> tuple[Chosen, Reason]:
    if identical:
        return Chosen.ORIGINAL, Reason.APE_IDENTICAL
    if ape_score > original_score:
        return Chosen.APE, Reason.HIGHER_SCORE
    if ape_score < original_score:
        return Chosen.ORIGINAL, Reason.HIGHER_SCORE
    if tie_policy is TiePolicy.PREFER_ORIGINAL:
        return Chosen.ORIGINAL, Reason.TIE_POLICY
    raise ValueError(f"unsupported tie policy {tie_policy!r}")


def _mean(values: list[float]) -> float:
    return math.fsum(values) / len(values) if values else 0.0


def select_stream(
    pairs: Iterable[SentencePair],
    ape_targets: ApeTargets,
    original_scores: ScoreTable,
    ape_scores: ScoreTable,
    *,
    tie_policy: TiePolicy = TiePolicy.PREFER_ORIGINAL,
    profile: NormalizationProfile = INDIC,
    sink: Callable[[SentencePair], None],
    record_sink: Callable[[SelectionRecord], None] | None = None,
) -> SelectionReport:
    """Per-pair argmax over {original, APE} by QE score, streamed to ``sink``."""
    n = n_ape = n_tie = n_same = 0
    orig_vals: list[float] = []
    ape_vals: list[float] = []
    sel_vals: list[float] = []
    for p, ape_t in _aligned(pairs, _iter_targets(ape_targets)):
        if not 0 <= p.id < len(original_scores):
            raise MissingScore(p.id)
        if not 0 <= p.id < len(ape_scores):
            raise MissingScore(p.id)
        so = original_scores[p.id]
        sa = ape_scores[p.id]
        identical = normalize(ape_t, profile) == normalize(p.target, profile)
        chosen, reason = choose(so, sa, identical, tie_policy)
        rec = SelectionRecord(p.id, so, sa, chosen, reason)
        if chosen is Chosen.APE:
            n_ape += 1
            sink(SentencePair(p.id, p.source, ape_t))
        else:
            sink(p)
        n_tie += reason is Reason.TIE_POLICY
        n_same += reason is Reason.APE_IDENTICAL
        n += 1
        orig_vals.append(so)
        ape_vals.append(sa)
        sel_vals.append(rec.selected_score)
        if record_sink is not None:
            record_sink(rec)
    return SelectionReport(
        input_count=n,
        chosen_ape_count=n_ape,
        chosen_original_count=n - n_ape,
        tie_count=n_tie,
        ape_identical_count=n_same,
        mean_original_score=_mean(orig_vals),
        mean_ape_score=_mean(ape_vals),
        mean_selected_score=_mean(sel_vals),
    )


def ape_then_qe_select(
    pairs: Iterable[SentencePair],
    ape_targets: ApeTargets,
    original_scores: ScoreTable,
    ape_scores: ScoreTable,
    tie_policy: TiePolicy = TiePolicy.PREFER_ORIGINAL,
    profile: NormalizationProfile = INDIC,
) -> SelectionResult:
    out: list[SentencePair] = []
    records: list[SelectionRecord] = []
    report = select_stream(
        pairs,
        ape_targets,
        original_scores,
        ape_scores,
        tie_policy=tie_policy,
        profile=profile,
        sink=out.append,
        record_sink=records.append,
    )
    return SelectionResult(out, report, records)


def repair_and_select(
    pairs: Iterable[SentencePair],
    ape_targets: ApeTargets,
    scorer: QeScorer,
    ape_scorer: QeScorer | None = None,
    tie_policy: TiePolicy = TiePolicy.PREFER_ORIGINAL,
    profile: NormalizationProfile = INDIC,
) -> SelectionResult:
    """Score the original and the APE-replaced corpus (two scorer calls), then select.

    ``pairs`` and ``ape_targets`` are iterated more than once, so pass lists,
    a :class:`~repairfilter.corpus_io.Corpus`, or file paths rather than generators.
    """
    original_scores = scorer.score(pairs)
    ape_scores = (ape_scorer or scorer).score(ape_replace(pairs, ape_targets))
    return ape_then_qe_select(pairs, ape_targets, original_scores, ape_scores, tie_policy, profile)


def dominance_violation(r: SelectionRecord) -> str | None:
    """``not_argmax`` if the selected score is not the max of the two, ``tie_policy`` if APE won without
    a strictly higher score, else None."""
    if r.selected_score != max(r.original_score, r.ape_score):
        return "not_argmax"
    if r.chosen is Chosen.APE and not r.ape_score > r.original_score:
        return "tie_policy"
    return None


def selection_dominance_check(records: Iterable[SelectionRecord]) -> dict:
    """Audit the argmax contract over every record; see :func:`dominance_violation`."""
    checked = 0
    violations = []
    for r in records:
        checked += 1
        kind = dominance_violation(r)
        if kind is not None:
            best = max(r.original_score, r.ape_score)
            violations.append({"pair_id": r.pair_id, "kind": kind, "selected": r.selected_score, "max": best})
    return {"checked": checked, "violation_count": len(violations), "violations": violations}


def write_records(records: Iterable[SelectionRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for r in records:
            f.write(r.to_tsv())


def read_records(path) -> list[SelectionRecord]:
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            pid, so, sa, chosen, reason = line.rstrip("\n").split("\t")
            out.append(SelectionRecord(int(pid), float(so), float(sa), Chosen(chosen), Reason(reason)))
    return out
