"""Run a validated pipeline config stage by stage.

Every stage reads the previous stage's corpus and materializes its own under
``<work_dir>/<NN>-<kind>/`` (``source.txt``, ``target.txt``, ``manifest.json``
plus stage artifacts). The run manifest carries counts, thresholds and reports
and nothing time- or thread-dependent, so identical inputs give identical
bytes; wall times go to ``timings.json`` instead.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import TOOL_VERSION
from ._parallel import ordered_map
from .ape_select import SelectionRecord, TiePolicy, ape_replace, dominance_violation, select_stream
from .bleu import evaluate_files
from .config import (
    PRESETS,
    ApeReplaceStage,
    ApeThenQeStage,
    ConcatStage,
    EvaluateStage,
    LabseFilterStage,
    LengthFilterStage,
    NormalizeStage,
    PipelineConfig,
    PpiStage,
    PresetConfig,
    QeFilterStage,
    StatsStage,
    SweepStage,
    build_preset,
    resolve_path,
    resolve_service_url,
    validate,
)
from .corpus_io import (
    Corpus,
    ParallelWriter,
    SentencePair,
    compute_stats,
    concat_corpora,
    count_lines,
    normalize,
    sha256_file,
    write_json,
)
from .errors import ConfigError, DataError, RepairFilterError
from .filters import (
    LabsePredicate,
    LengthRatioPredicate,
    QePredicate,
    apply_filter,
    sweep,
    write_kept_ids,
)
from .phrases import (
    build_phrase_table,
    inject,
    phrase_corpus,
    read_alignments,
    select_longest_unique,
    write_phrase_pairs,
)
from .scoring import make_embedder, make_qe_scorer

log = logging.getLogger(__name__)


@dataclass
class RunContext:
    cfg: PipelineConfig
    base_dir: Path
    threads: int = 1
    use_cache: bool = True
    allow_env_override: bool = False
    env: dict | None = None
    timings: list[dict] = field(default_factory=list)

    @property
    def profile(self):
        return self.cfg.profile.to_profile()

    @property
    def work_dir(self) -> Path:
        return resolve_path(self.base_dir, self.cfg.io.work_dir)

    def path(self, p: str) -> Path:
        return resolve_path(self.base_dir, p)

    def corpus(self, name: str) -> Corpus:
        ref = self.cfg.io.input if name == "input" else self.cfg.io.corpora[name]
        return Corpus(self.path(ref.source), self.path(ref.target))

    def _resolved(self, spec: str) -> tuple[str, object]:
        kind, _, arg = spec.partition(":")
        if kind == "file":
            return f"file:{self.path(arg)}", None
        if kind == "service":
            url = resolve_service_url(spec, self.cfg, self.env, self.allow_env_override)
            return f"service:{url}", self.cfg.scorer.endpoint(url)
        return spec, None

    def qe_scorer(self, spec: str):
        resolved, endpoint = self._resolved(spec)
        return make_qe_scorer(resolved, self.profile, self.threads, endpoint, self.cfg.mock.fold)

    def embedder(self, spec: str):
        resolved, endpoint = self._resolved(spec)
        return make_embedder(resolved, self.profile, self.threads, endpoint, self.cfg.mock.dimension, self.cfg.seed)

    def source_fingerprint(self, spec: str | None) -> str | None:
        if spec is None:
            return None
        resolved, _ = self._resolved(spec)
        if resolved.startswith("file:"):
            return "file:" + sha256_file(resolved[5:])
        return resolved


def _file_sha(ctx: RunContext, p: str) -> str:
    return sha256_file(ctx.path(p))


def _stage_key(ctx: RunContext, stage, inp: Corpus) -> str:
    params = stage.model_dump(mode="json", by_alias=True)
    refs: dict[str, str | None] = {}
    for name in ("embeddings", "scores", "qe", "qe_ape", "phrase_embeddings", "source"):
        if name in params:
            refs[name] = ctx.source_fingerprint(params[name])
    for name in ("ape_targets", "alignments", "hyp", "ref"):
        if name in params:
            refs[name] = _file_sha(ctx, params[name])
    if isinstance(stage, ConcatStage):
        refs["with"] = [c["sha256"] for c in ctx.corpus(stage.with_).checksums()]
    if isinstance(stage, PpiStage):
        refs["corpus"] = [c["sha256"] for c in ctx.corpus(stage.corpus).checksums()]
    blob = {
        "tool": TOOL_VERSION,
        "stage": params,
        "refs": refs,
        "input": [sha256_file(inp.source), sha256_file(inp.target)],
        "profile": ctx.cfg.profile.model_dump(),
        "seed": ctx.cfg.seed,
        "mock": ctx.cfg.mock.model_dump(),
    }
    return hashlib.sha256(json.dumps(blob, sort_keys=True).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# stages: each writes into ``writer`` and returns its report


def _normalize(ctx, st: NormalizeStage, inp: Corpus, out: Path, writer: ParallelWriter) -> dict:
    prof = ctx.profile

    def norm(p: SentencePair) -> SentencePair:
        return SentencePair(p.id, normalize(p.source, prof), normalize(p.target, prof))

    for pair in ordered_map(norm, inp, ctx.threads):
        writer.write(pair)
    return {"profile": prof.to_dict()}


def _filter_report(result, out: Path) -> dict:
    write_kept_ids(result.kept_ids, out / "kept_ids.tsv")
    report = result.report.to_dict()
    report["kept_ids_path"] = "kept_ids.tsv"
    write_json(report, out / "report.json")
    return report


def _qe_filter(ctx, st: QeFilterStage, inp: Corpus, out: Path, writer: ParallelWriter) -> dict:
    table = ctx.qe_scorer(st.scores).score(inp)
    return _filter_report(apply_filter(inp, QePredicate(table, st.threshold), writer.write), out)


def _labse_filter(ctx, st: LabseFilterStage, inp: Corpus, out: Path, writer: ParallelWriter) -> dict:
    emb = ctx.embedder(st.embeddings).embed(inp)
    return _filter_report(apply_filter(inp, LabsePredicate(emb, st.threshold), writer.write), out)


def _length_filter(ctx, st: LengthFilterStage, inp: Corpus, out: Path, writer: ParallelWriter) -> dict:
    pred = LengthRatioPredicate(st.min_ratio, st.max_ratio, st.max_tokens)
    return _filter_report(apply_filter(inp, pred, writer.write), out)


def _ape_replace(ctx, st: ApeReplaceStage, inp: Corpus, out: Path, writer: ParallelWriter) -> dict:
    for pair in ape_replace(inp, ctx.path(st.ape_targets)):
        writer.write(pair)
    return {"ape_targets": st.ape_targets}


def _ape_then_qe(ctx, st: ApeThenQeStage, inp: Corpus, out: Path, writer: ParallelWriter) -> dict:
    ape_path = ctx.path(st.ape_targets)
    original = ctx.qe_scorer(st.qe).score(inp)
    ape = ctx.qe_scorer(st.qe_ape or st.qe).score(ape_replace(inp, ape_path))
    original.write_tsv(out / "original_scores.tsv")
    ape.write_tsv(out / "ape_scores.tsv")

    audit = {"checked": 0, "violation_count": 0}
    rec_file = open(out / "records.tsv", "w", encoding="utf-8", newline="\n") if st.emit_records else None

    def on_record(r: SelectionRecord) -> None:
        audit["checked"] += 1
        if dominance_violation(r) is not None:
            audit["violation_count"] += 1
        if rec_file is not None:
            rec_file.write(r.to_tsv())

    try:
        report = select_stream(
            inp,
            ape_path,
            original,
            ape,
            tie_policy=TiePolicy(st.tie_policy),
            profile=ctx.profile,
            sink=writer.write,
            record_sink=on_record,
        )
    finally:
        if rec_file is not None:
            rec_file.close()
    result = report.to_dict()
    result["dominance_check"] = audit
    if st.emit_records:
        result["records_path"] = "records.tsv"
    write_json(result, out / "report.json")
    return result


def _ppi(ctx, st: PpiStage, inp: Corpus, out: Path, writer: ParallelWriter) -> dict:
    src = ctx.corpus(st.corpus)
    sentences = read_alignments(src.source, src.target, ctx.path(st.alignments))
    table = build_phrase_table(sentences, st.max_len, ctx.threads)
    table.write_tsv(out / "phrase_table.tsv")
    selected = select_longest_unique(table)
    write_phrase_pairs(selected, out / "selected_phrases.tsv")
    report: dict = {"phrase_table_size": len(table), "selected_count": len(selected), "phrase_filter": None}
    kept = selected
    if st.phrase_embeddings is not None:
        pc = phrase_corpus(selected)
        emb = ctx.embedder(st.phrase_embeddings).embed(pc) if pc else None
        if emb is not None:
            res = apply_filter(pc, LabsePredicate(emb, st.phrase_threshold))
            kept = [selected[i] for i in res.kept_ids.tolist()]
            report["phrase_filter"] = res.report.to_dict()
        else:
            report["phrase_filter"] = {"filter_name": "labse", "input_count": 0, "kept_count": 0,
                                       "dropped_count": 0, "threshold": st.phrase_threshold, "kept_ids_path": None}
    write_phrase_pairs(kept, out / "injected_phrases.tsv")
    for pair in inject(inp, kept):
        writer.write(pair)
    report["injected_count"] = len(kept)
    write_json(report, out / "report.json")
    return report


def _concat(ctx, st: ConcatStage, inp: Corpus, out: Path, writer: ParallelWriter) -> dict:
    side = ctx.corpus(st.with_)
    n_side = side.count()
    n_in = 0

    def counted():
        nonlocal n_in
        for p in inp:
            n_in += 1
            yield p

    for pair in concat_corpora(counted(), side, st.dedup, ctx.profile):
        writer.write(pair)
    report = {
        "with": st.with_,
        "augment_count": n_side,
        "dedup": st.dedup,
        "duplicates_dropped": n_in + n_side - writer.count,
    }
    write_json(report, out / "report.json")
    return report


def _passthrough(inp: Corpus, writer: ParallelWriter) -> None:
    for pair in inp:
        writer.write(pair)


def _evaluate(ctx, st: EvaluateStage, inp: Corpus, out: Path, writer: ParallelWriter) -> dict:
    _, report = evaluate_files(ctx.path(st.hyp), ctx.path(st.ref), ctx.profile, st.smoothing)
    # record paths as written in the config so reports do not depend on where the run lives
    report["inputs"][0]["path"] = st.hyp
    report["inputs"][1]["path"] = st.ref
    write_json(report, out / "report.json")
    _passthrough(inp, writer)
    return report


def _stats(ctx, st: StatsStage, inp: Corpus, out: Path, writer: ParallelWriter) -> dict:
    report = compute_stats(inp).to_dict()
    write_json(report, out / "report.json")
    _passthrough(inp, writer)
    return report


def _sweep(ctx, st: SweepStage, inp: Corpus, out: Path, writer: ParallelWriter) -> dict:
    if st.filter == "qe":
        table = ctx.qe_scorer(st.source).score(inp)
    else:
        table = ctx.embedder(st.source).embed(inp)
    result = sweep(inp, table, st.thresholds)
    (out / "sweep.tsv").write_text(result.to_tsv(), encoding="utf-8")
    report = {"filter": st.filter, "rows": [{"threshold": t, "kept_count": k} for t, k in result.rows]}
    write_json(report, out / "report.json")
    _passthrough(inp, writer)
    return report


_STAGES = {
    NormalizeStage: _normalize,
    QeFilterStage: _qe_filter,
    LabseFilterStage: _labse_filter,
    LengthFilterStage: _length_filter,
    ApeReplaceStage: _ape_replace,
    ApeThenQeStage: _ape_then_qe,
    PpiStage: _ppi,
    ConcatStage: _concat,
    EvaluateStage: _evaluate,
    StatsStage: _stats,
    SweepStage: _sweep,
}


def _thresholds(stage) -> list[tuple[str, float]]:
    out = []
    for name in ("threshold", "phrase_threshold"):
        v = getattr(stage, name, None)
        if v is not None and not (name == "phrase_threshold" and stage.phrase_embeddings is None):
            out.append((name, v))
    return out


def _cached(out: Path, key: str) -> dict | None:
    stage_file = out / "stage.json"
    manifest_file = out / "manifest.json"
    if not (stage_file.is_file() and manifest_file.is_file()):
        return None
    try:
        stage = json.loads(stage_file.read_text(encoding="utf-8"))
        manifest = json.loads(manifest_file.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return None
    if stage.get("stage_key") != key:
        return None
    for entry in manifest.get("outputs", []):
        f = out / entry["path"]
        if not f.is_file() or sha256_file(f) != entry["sha256"]:
            return None
    return stage["result"]


def _run_stage(ctx: RunContext, k: int, stage, inp: Corpus, input_count: int) -> tuple[Corpus, dict]:
    out = ctx.work_dir / f"{k:02d}-{stage.kind}"
    out.mkdir(parents=True, exist_ok=True)
    result_corpus = Corpus(out / "source.txt", out / "target.txt")
    key = _stage_key(ctx, stage, inp)
    t0 = time.perf_counter()
    if ctx.use_cache:
        cached = _cached(out, key)
        if cached is not None:
            log.info("stage %d (%s): reusing cached output", k, stage.kind)
            ctx.timings.append({"index": k, "kind": stage.kind, "seconds": 0.0, "cached": True})
            return result_corpus, cached
    for stale in ("stage.json", "manifest.json"):
        (out / stale).unlink(missing_ok=True)

    writer = ParallelWriter(result_corpus.source, result_corpus.target)
    with writer:
        report = _STAGES[type(stage)](ctx, stage, inp, out, writer)
    input_rel = [
        {"path": os.path.relpath(p, ctx.work_dir), "sha256": sha256_file(p)} for p in (inp.source, inp.target)
    ]
    writer.close(
        profile=ctx.profile,
        inputs=input_rel,
        manifest_path=out / "manifest.json",
        extra={"stage": k, "kind": stage.kind, "stage_key": key},
    )
    result = {
        "index": k,
        "kind": stage.kind,
        "params": stage.model_dump(mode="json", by_alias=True),
        "input_count": input_count,
        "output_count": writer.count,
        "output_dir": out.name,
        "report": report,
    }
    write_json({"stage_key": key, "result": result}, out / "stage.json")
    elapsed = time.perf_counter() - t0
    ctx.timings.append({"index": k, "kind": stage.kind, "seconds": round(elapsed, 6), "cached": False})
    log.info("stage %d (%s): %d -> %d pairs in %.2fs", k, stage.kind, input_count, writer.count, elapsed)
    return result_corpus, result


def run(
    cfg: PipelineConfig,
    base_dir: Path | str = ".",
    *,
    threads: int | None = None,
    use_cache: bool = True,
    allow_env_override: bool = False,
    env: dict | None = None,
) -> dict:
    """Execute every stage in order; returns the run manifest (also written to ``run_manifest.json``).

    A failing stage stops the run; the partial manifest is still written and
    the exception carries ``stage_index``.
    """
    base_dir = Path(base_dir)
    cfg = validate(cfg, base_dir, env, allow_env_override)
    ctx = RunContext(cfg, base_dir, threads or cfg.threads, use_cache, allow_env_override, env)
    ctx.work_dir.mkdir(parents=True, exist_ok=True)

    current = ctx.corpus("input")
    count = current.count()
    manifest = {
        "tool_version": TOOL_VERSION,
        "config_sha256": cfg.checksum(),
        "seed": cfg.seed,
        "profile": ctx.profile.to_dict(),
        "input": {
            "pair_count": count,
            "files": [
                {"path": cfg.io.input.source, "sha256": sha256_file(current.source)},
                {"path": cfg.io.input.target, "sha256": sha256_file(current.target)},
            ],
        },
        "stages": [],
        "thresholds": [],
        "status": "running",
    }
    for k, stage in enumerate(cfg.stages):
        try:
            current, result = _run_stage(ctx, k, stage, current, count)
        except Exception as exc:
            manifest["status"] = "failed"
            manifest["failed_stage"] = k
            manifest["error"] = f"{type(exc).__name__}: {exc}"
            _finish(ctx, manifest)
            if isinstance(exc, RepairFilterError):
                exc.stage_index = k  # type: ignore[attr-defined]
                raise
            if isinstance(exc, (OSError, ValueError)):
                err = DataError(f"stage {k} ({stage.kind}) failed: {exc}")
                err.stage_index = k  # type: ignore[attr-defined]
                raise err from exc
            raise
        manifest["stages"].append(result)
        for name, value in _thresholds(stage):
            manifest["thresholds"].append({"stage": k, "kind": stage.kind, "name": name, "value": value})
        count = result["output_count"]

    check_count_chain(manifest)
    manifest["status"] = "ok"
    manifest["output"] = {
        "source": os.path.relpath(current.source, ctx.work_dir),
        "target": os.path.relpath(current.target, ctx.work_dir),
        "pair_count": count,
    }
    _finish(ctx, manifest)
    return manifest


def _finish(ctx: RunContext, manifest: dict) -> None:
    write_json(manifest, ctx.work_dir / "run_manifest.json")
    write_json({"stages": ctx.timings}, ctx.work_dir / "timings.json")


def check_count_chain(manifest: dict) -> None:
    prev = manifest["input"]["pair_count"]
    for st in manifest["stages"]:
        if st["input_count"] != prev:
            raise DataError(f"count chain broken at stage {st['index']}: {st['input_count']} != {prev}")
        prev = st["output_count"]


# ---------------------------------------------------------------------------
# comparison table over presets


def table_row(name: str, manifest: dict, work_dir: Path) -> dict:
    stages = manifest["stages"]
    concat = next(s for s in stages if s["kind"] == "concat")
    injected = sum(s["report"].get("injected_count", 0) for s in stages if s["kind"] == "ppi")
    total = manifest["output"]["pair_count"]
    recount = count_lines(work_dir / manifest["output"]["source"])
    if recount != total or count_lines(work_dir / manifest["output"]["target"]) != total:
        raise DataError(f"preset {name}: manifest says {total} pairs but output files disagree ({recount})")
    return {
        "technique": PRESETS[name],
        "preset": name,
        "pseudo_pairs": concat["input_count"] - injected,
        "injected_pairs": injected,
        "augmentation_pairs": concat["report"]["augment_count"],
        "total_pairs": total,
    }


TABLE_COLUMNS = ("technique", "preset", "pseudo_pairs", "injected_pairs", "augmentation_pairs", "total_pairs")


def compare(
    pc: PresetConfig,
    base_dir: Path | str = ".",
    *,
    threads: int | None = None,
    use_cache: bool = True,
    allow_env_override: bool = False,
    env: dict | None = None,
) -> list[dict]:
    """Run each preset into ``<work_dir>/<preset>`` and write ``<work_dir>/table2.tsv``."""
    base_dir = Path(base_dir)
    rows = []
    problems: list[str] = []
    configs = {}
    for name in pc.presets:
        try:
            configs[name] = validate(build_preset(name, pc), base_dir, env, allow_env_override)
        except ConfigError as exc:
            problems.extend(f"preset {name}: {e}" for e in exc.errors)
    if problems:
        raise ConfigError(problems)
    for name, cfg in configs.items():
        manifest = run(
            cfg, base_dir, threads=threads, use_cache=use_cache, allow_env_override=allow_env_override, env=env
        )
        rows.append(table_row(name, manifest, resolve_path(base_dir, cfg.io.work_dir)))
    out = resolve_path(base_dir, pc.work_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["\t".join(TABLE_COLUMNS)] + ["\t".join(str(r[c]) for c in TABLE_COLUMNS) for r in rows]
    (out / "table2.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return rows
