"""Command-line entry point: ``repairfilter <subcommand> ...``.

Exit codes: 0 success, 1 invalid configuration or arguments, 2 data error,
3 scorer service failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import TOOL_VERSION
from .ape_select import TiePolicy, ape_replace, select_stream, dominance_violation
from .bleu import evaluate_files
from .config import SCORER_URL_ENV, load_config, load_json, parse_preset_config
from .corpus_io import PROFILES, Corpus, NormalizationProfile, ParallelWriter, compute_stats, write_json
from .errors import ConfigError, RepairFilterError
from .filters import LabsePredicate, LengthRatioPredicate, QePredicate, apply_filter, sweep, write_kept_ids
from .phrases import (
    DEFAULT_MAX_LEN,
    PhraseTable,
    build_phrase_table,
    inject,
    read_alignments,
    read_phrase_pairs,
    select_longest_unique,
    write_phrase_pairs,
)
from .pipeline import compare, run
from .scoring import ScorerEndpoint, make_embedder, make_qe_scorer

log = logging.getLogger("repairfilter")


def _profile(args) -> NormalizationProfile:
    prof = PROFILES[args.profile]
    if getattr(args, "lowercase", False):
        prof = NormalizationProfile(True, prof.unicode_nfc, prof.collapse_whitespace)
    return prof


def _source_spec(spec: str, args) -> tuple[str, ScorerEndpoint | None]:
    """Expand a bare ``service`` spec from the environment and apply the override rule."""
    kind, _, url = spec.partition(":")
    if spec == "mock" or kind == "file":
        return spec, None
    if kind != "service":
        # a bare path is a precomputed file
        return f"file:{spec}", None
    env_url = os.environ.get(SCORER_URL_ENV)
    if env_url and (args.allow_env_override or not url):
        url = env_url
    if not url:
        raise ConfigError([f"{spec!r}: no scorer URL (give service:URL or set ${SCORER_URL_ENV})"])
    ep = ScorerEndpoint(url, args.batch_size, args.timeout, args.max_retries, args.backoff, args.concurrency)
    return f"service:{url}", ep


def _qe(spec: str, args):
    spec, ep = _source_spec(spec, args)
    return make_qe_scorer(spec, _profile(args), args.threads, ep, args.fold)


def _embedder(spec: str, args):
    spec, ep = _source_spec(spec, args)
    return make_embedder(spec, _profile(args), args.threads, ep, args.dimension, args.seed)


def _corpus(args) -> Corpus:
    return Corpus(Path(args.src), Path(args.tgt))


def _emit(obj: dict) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False))


# ---------------------------------------------------------------------------
# handlers


def cmd_run(args) -> int:
    cfg, base = load_config(args.config, allow_env_override=args.allow_env_override)
    manifest = run(
        cfg,
        base,
        threads=args.threads,
        use_cache=not args.no_cache,
        allow_env_override=args.allow_env_override,
    )
    for st in manifest["stages"]:
        print(f"stage {st['index']} {st['kind']}: {st['input_count']} -> {st['output_count']}")
    print(f"output: {manifest['output']['pair_count']} pairs")
    return 0


def cmd_compare(args) -> int:
    path = Path(args.config)
    pc = parse_preset_config(load_json(path))
    rows = compare(
        pc,
        path.parent,
        threads=args.threads,
        use_cache=not args.no_cache,
        allow_env_override=args.allow_env_override,
    )
    for r in rows:
        print(f"{r['technique']}\t{r['total_pairs']}")
    return 0


def _write_filter(args, result, writer: ParallelWriter, inp: Corpus) -> None:
    report = result.report.to_dict()
    if args.kept_ids:
        write_kept_ids(result.kept_ids, args.kept_ids)
        report["kept_ids_path"] = args.kept_ids
    writer.close(profile=_profile(args), inputs=inp.checksums(), manifest_path=args.manifest)
    if args.report:
        write_json(report, args.report)
    _emit(report)


def cmd_filter(args) -> int:
    inp = _corpus(args)
    if args.kind == "qe":
        pred = QePredicate(_qe(args.scores, args).score(inp), args.threshold if args.threshold is not None else -0.5)
    elif args.kind == "labse":
        emb = _embedder(args.embeddings, args).embed(inp)
        pred = LabsePredicate(emb, args.threshold if args.threshold is not None else 0.8)
    else:
        pred = LengthRatioPredicate(args.min_ratio, args.max_ratio, args.max_tokens)
    writer = ParallelWriter(args.out_src, args.out_tgt)
    with writer:
        result = apply_filter(inp, pred, writer.write)
    _write_filter(args, result, writer, inp)
    return 0


def cmd_sweep(args) -> int:
    inp = _corpus(args)
    try:
        thresholds = [float(x) for x in args.thresholds.split(",")]
    except ValueError:
        raise ConfigError([f"--thresholds: not a comma-separated list of numbers: {args.thresholds!r}"]) from None
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ConfigError(["--thresholds must be strictly increasing"])
    table = _qe(args.source, args).score(inp) if args.filter == "qe" else _embedder(args.source, args).embed(inp)
    text = sweep(inp, table, thresholds).to_tsv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_ape_select(args) -> int:
    inp = _corpus(args)
    if _source_spec(args.qe, args)[0].startswith("file:") and not args.qe_ape:
        raise ConfigError(["--qe file:... needs --qe-ape with scores for the APE-corrected corpus"])
    original = _qe(args.qe, args).score(inp)
    ape = _qe(args.qe_ape or args.qe, args).score(ape_replace(inp, args.ape))
    records = open(args.records, "w", encoding="utf-8", newline="\n") if args.records else None
    violations = 0

    def on_record(r) -> None:
        nonlocal violations
        violations += dominance_violation(r) is not None
        if records is not None:
            records.write(r.to_tsv())

    writer = ParallelWriter(args.out_src, args.out_tgt)
    try:
        with writer:
            report = select_stream(
                inp,
                args.ape,
                original,
                ape,
                tie_policy=TiePolicy.PREFER_ORIGINAL,
                profile=_profile(args),
                sink=writer.write,
                record_sink=on_record,
            )
    finally:
        if records is not None:
            records.close()
    writer.close(profile=_profile(args), inputs=inp.checksums(), manifest_path=args.manifest)
    out = report.to_dict()
    out["dominance_violations"] = violations
    if args.report:
        write_json(out, args.report)
    _emit(out)
    return 0


def cmd_ppi_extract(args) -> int:
    table = build_phrase_table(read_alignments(args.src, args.tgt, args.align), args.max_len, args.threads)
    table.write_tsv(args.out)
    print(f"{len(table)} phrase pairs")
    return 0


def cmd_ppi_select(args) -> int:
    selected = select_longest_unique(PhraseTable.from_pairs(read_phrase_pairs(args.table)))
    write_phrase_pairs(selected, args.out)
    print(f"{len(selected)} phrase pairs selected")
    return 0


def cmd_ppi_inject(args) -> int:
    inp = _corpus(args)
    phrases = read_phrase_pairs(args.phrases)
    writer = ParallelWriter(args.out_src, args.out_tgt)
    with writer:
        for pair in inject(inp, phrases):
            writer.write(pair)
    manifest = writer.close(profile=_profile(args), inputs=inp.checksums(), manifest_path=args.manifest)
    print(f"{manifest['pair_count']} pairs ({len(phrases)} injected)")
    return 0


def cmd_evaluate(args) -> int:
    result, report = evaluate_files(args.hyp, args.ref, _profile(args), args.smoothing)
    if args.report:
        write_json(report, args.report)
    print(f"BLEU = {result.score:.2f}")
    print(json.dumps(result.to_json(), sort_keys=True))
    return 0


def cmd_stats(args) -> int:
    _emit(compute_stats(_corpus(args)).to_dict())
    return 0


def cmd_score(args) -> int:
    inp = _corpus(args)
    if args.kind == "qe":
        _qe(args.source, args).score(inp).write_tsv(args.out)
    else:
        _embedder(args.source, args).embed(inp).write(args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.dimension, args.seed, args.fold, args.fail_first)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser, *, corpus: bool = True, scorer: bool = False) -> None:
    if corpus:
        p.add_argument("--src", "--corpus-src", dest="src", required=True, help="source side, one sentence per line")
        p.add_argument("--tgt", "--corpus-tgt", dest="tgt", required=True, help="target side, line-aligned with --src")
    p.add_argument("--profile", choices=sorted(PROFILES), default="indic")
    if scorer:
        g = p.add_argument_group("scorer")
        g.add_argument("--allow-env-override", action="store_true", help=f"let ${SCORER_URL_ENV} win over an explicit URL")
        g.add_argument("--batch-size", type=int, default=64)
        g.add_argument("--timeout", type=float, default=30.0)
        g.add_argument("--max-retries", type=int, default=3)
        g.add_argument("--backoff", type=float, default=0.5)
        g.add_argument("--concurrency", type=int, default=1)
        g.add_argument("--dimension", type=int, default=64, help="mock embedding size")
        g.add_argument("--seed", type=int, default=0, help="mock embedding seed")
        g.add_argument("--fold", choices=["identity", "casefold"], default="identity", help="mock QE case folding")


def _add_outputs(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out-src", required=True)
    p.add_argument("--out-tgt", required=True)
    p.add_argument("--manifest", help="write an output manifest here")
    p.add_argument("--report", help="write the JSON report here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="repairfilter", description="Filter and repair pseudo-parallel corpora.")
    parser.add_argument("--version", action="version", version=TOOL_VERSION)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--threads", type=int, default=None, help="worker threads (output never depends on this)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="run a pipeline config")
    p.add_argument("--config", required=True)
    p.add_argument("--no-cache", action="store_true", help="recompute every stage")
    p.add_argument("--allow-env-override", action="store_true")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", parents=[common], help="run presets and write table2.tsv")
    p.add_argument("--config", required=True, help="preset config (resources + preset list)")
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--allow-env-override", action="store_true")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("filter", parents=[common], help="threshold filter a corpus")
    p.add_argument("kind", choices=["qe", "labse", "length"])
    _add_common(p, scorer=True)
    _add_outputs(p)
    p.add_argument("--scores", default="mock", help="QE source: PATH, file:PATH, service[:URL] or mock")
    p.add_argument("--embeddings", default="mock", help="embedding source: PATH, file:PATH, service[:URL] or mock")
    p.add_argument("--threshold", type=float, help="keep pairs scoring >= this (qe -0.5, labse 0.8)")
    p.add_argument("--min-ratio", type=float, default=1 / 3)
    p.add_argument("--max-ratio", type=float, default=3.0)
    p.add_argument("--max-tokens", type=int, default=250)
    p.add_argument("--kept-ids", help="write new-id/old-id TSV here")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("sweep", parents=[common], help="kept counts over a threshold ladder")
    p.add_argument("--filter", choices=["qe", "labse"], required=True)
    p.add_argument("--source", default="mock")
    p.add_argument("--thresholds", required=True, help="comma-separated, strictly increasing")
    p.add_argument("--out")
    _add_common(p, scorer=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ape-select", parents=[common], help="choose original or APE target per pair by QE score")
    _add_common(p, scorer=True)
    _add_outputs(p)
    p.add_argument("--ape", "--ape-out", dest="ape", required=True, help="APE-corrected targets, line-aligned with --tgt")
    p.add_argument("--qe", default="mock", help="QE source for the original corpus")
    p.add_argument("--qe-ape", help="QE source for the APE-corrected corpus (defaults to --qe)")
    p.add_argument("--records", "--emit-records", dest="records", help="write per-pair selection records here")
    p.set_defaults(func=cmd_ape_select)

    p = sub.add_parser("ppi", help="phrase pair extraction and injection")
    ppi = p.add_subparsers(dest="ppi_command", required=True)
    q = ppi.add_parser("extract", parents=[common], help="build a phrase table from a word-aligned corpus")
    _add_common(q)
    q.add_argument("--align", required=True, help="Pharaoh alignments")
    q.add_argument("--max-len", type=int, default=DEFAULT_MAX_LEN)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_ppi_extract)
    q = ppi.add_parser("select", parents=[common], help="longest-unique selection over a phrase table")
    q.add_argument("--table", required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_ppi_select)
    q = ppi.add_parser("inject", parents=[common], help="append phrase pairs to a corpus")
    _add_common(q)
    _add_outputs(q)
    q.add_argument("--phrases", required=True)
    q.set_defaults(func=cmd_ppi_inject)

    p = sub.add_parser("evaluate", parents=[common], help="corpus BLEU")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--smoothing", choices=["none", "add-one"], default="none")
    p.add_argument("--lowercase", action="store_true")
    p.add_argument("--profile", choices=sorted(PROFILES), default="indic")
    p.add_argument("--report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("stats", parents=[common], help="corpus statistics")
    _add_common(p)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("score", parents=[common], help="write QE scores or embeddings to a file")
    p.add_argument("kind", choices=["qe", "embedding"])
    p.add_argument("--source", default="mock")
    p.add_argument("--out", required=True)
    _add_common(p, scorer=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("serve", parents=[common], help="run the mock scorer service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--dimension", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fold", choices=["identity", "casefold"], default="identity")
    p.add_argument("--fail-first", type=int, default=0, help="answer 503 to the first N requests")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; usage errors are configuration errors here
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads is None:
        args.threads = 1 if args.command not in ("run", "compare") else None
    elif args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        return args.func(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return exc.exit_code
    except RepairFilterError as exc:
        where = f"stage {exc.stage_index}: " if hasattr(exc, "stage_index") else ""
        print(f"error: {where}{exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
