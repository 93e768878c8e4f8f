"""Pipeline configuration: strict JSON schema, validation, and technique presets.

Unknown keys anywhere are errors. Relative paths resolve against the directory
holding the config file.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from pathlib import Path
from typing import Annotated, Any, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .corpus_io import NormalizationProfile
from .errors import ConfigError
from .phrases import DEFAULT_MAX_LEN
from .scoring import ScorerEndpoint

SCORER_URL_ENV = "REPAIRFILTER_SCORER_URL"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ProfileModel(_Strict):
    lowercase: bool = False
    unicode_nfc: bool = True
    collapse_whitespace: bool = True

    def to_profile(self) -> NormalizationProfile:
        return NormalizationProfile(self.lowercase, self.unicode_nfc, self.collapse_whitespace)


class CorpusRef(_Strict):
    source: str
    target: str


class IoModel(_Strict):
    input: CorpusRef
    corpora: dict[str, CorpusRef] = {}
    work_dir: str = "work"


class ScorerModel(_Strict):
    url: Optional[str] = None
    batch_size: int = Field(64, ge=1)
    timeout: float = Field(30.0, gt=0)
    max_retries: int = Field(3, ge=0)
    backoff: float = Field(0.5, ge=0)
    concurrency: int = Field(1, ge=1)

    def endpoint(self, url: str) -> ScorerEndpoint:
        return ScorerEndpoint(url, self.batch_size, self.timeout, self.max_retries, self.backoff, self.concurrency)


class MockModel(_Strict):
    dimension: int = Field(64, ge=8)
    fold: Literal["identity", "casefold"] = "identity"


# --- stages -----------------------------------------------------------------


class NormalizeStage(_Strict):
    kind: Literal["normalize"]


class LabseFilterStage(_Strict):
    kind: Literal["labse_filter"]
    embeddings: str
    threshold: float = 0.8


class QeFilterStage(_Strict):
    kind: Literal["qe_filter"]
    scores: str
    threshold: float = -0.5


class LengthFilterStage(_Strict):
    kind: Literal["length_filter"]
    min_ratio: float = Field(gt=0)
    max_ratio: float = Field(gt=0)
    max_tokens: int = Field(ge=1)


class ApeReplaceStage(_Strict):
    kind: Literal["ape_replace"]
    ape_targets: str


class ApeThenQeStage(_Strict):
    kind: Literal["ape_then_qe"]
    ape_targets: str
    qe: str
    qe_ape: Optional[str] = None
    tie_policy: Literal["PreferOriginal"] = "PreferOriginal"
    emit_records: bool = True


class PpiStage(_Strict):
    kind: Literal["ppi"]
    alignments: str
    corpus: str = "input"
    max_len: int = Field(DEFAULT_MAX_LEN, ge=1)
    phrase_embeddings: Optional[str] = None
    phrase_threshold: float = 0.8


class ConcatStage(_Strict):
    kind: Literal["concat"]
    with_: str = Field(alias="with")
    dedup: bool = False

    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class EvaluateStage(_Strict):
    kind: Literal["evaluate"]
    hyp: str
    ref: str
    smoothing: Literal["none", "add-one"] = "none"


class StatsStage(_Strict):
    kind: Literal["stats"]


class SweepStage(_Strict):
    kind: Literal["sweep"]
    filter: Literal["qe", "labse"]
    source: str
    thresholds: list[float] = Field(min_length=1)


Stage = Annotated[
    Union[
        NormalizeStage,
        LabseFilterStage,
        QeFilterStage,
        LengthFilterStage,
        ApeReplaceStage,
        ApeThenQeStage,
        PpiStage,
        ConcatStage,
        EvaluateStage,
        StatsStage,
        SweepStage,
    ],
    Field(discriminator="kind"),
]


class PipelineConfig(_Strict):
    seed: int = 0
    threads: int = Field(1, ge=1)
    profile: ProfileModel = ProfileModel()
    io: IoModel
    scorer: ScorerModel = ScorerModel()
    mock: MockModel = MockModel()
    stages: list[Stage]

    def checksum(self) -> str:
        """sha256 of the canonical config, excluding ``threads`` (which must not change outputs)."""
        data = self.model_dump(mode="json", by_alias=True, exclude={"threads"})
        blob = json.dumps(data, sort_keys=True, separators=(",", ":")).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


# --- presets ----------------------------------------------------------------

PRESETS = {
    "baseline": "Baseline",
    "labse": "LaBSE based Filtering",
    "ppi": "PPI with LaBSE based Filtering",
    "qe": "QE based Filtering",
    "ape": "APE based Filtering",
    "ape_then_qe": "APE-then-QE based Filtering",
}


class Resources(_Strict):
    pseudo: CorpusRef
    parallel: CorpusRef
    qe: Optional[str] = None
    qe_threshold: float = -0.5
    embeddings: Optional[str] = None
    labse_threshold: float = 0.8
    ape_targets: Optional[str] = None
    ape_qe: Optional[str] = None
    alignments: Optional[str] = None
    max_len: int = Field(DEFAULT_MAX_LEN, ge=1)
    phrase_embeddings: Optional[str] = None
    phrase_threshold: float = 0.8
    dedup: bool = False


class PresetConfig(_Strict):
    presets: list[Literal["baseline", "labse", "ppi", "qe", "ape", "ape_then_qe"]] = list(PRESETS)
    resources: Resources
    work_dir: str = "work"
    seed: int = 0
    threads: int = Field(1, ge=1)
    profile: ProfileModel = ProfileModel()
    scorer: ScorerModel = ScorerModel()
    mock: MockModel = MockModel()


def preset_stages(name: str, r: Resources) -> list[dict]:
    def need(field: str) -> Any:
        value = getattr(r, field)
        if value is None:
            raise ConfigError([f"preset {name!r} needs resources.{field}"])
        return value

    concat = {"kind": "concat", "with": "parallel", "dedup": r.dedup}
    labse = {"kind": "labse_filter", "embeddings": need("embeddings"), "threshold": r.labse_threshold} if name in (
        "labse",
        "ppi",
    ) else None
    if name == "baseline":
        return [concat]
    if name == "labse":
        return [labse, concat]
    if name == "ppi":
        ppi = {
            "kind": "ppi",
            "alignments": need("alignments"),
            "corpus": "input",
            "max_len": r.max_len,
            "phrase_embeddings": r.phrase_embeddings,
            "phrase_threshold": r.phrase_threshold,
        }
        return [labse, ppi, concat]
    if name == "qe":
        return [{"kind": "qe_filter", "scores": need("qe"), "threshold": r.qe_threshold}, concat]
    if name == "ape":
        return [{"kind": "ape_replace", "ape_targets": need("ape_targets")}, concat]
    if name == "ape_then_qe":
        stage = {"kind": "ape_then_qe", "ape_targets": need("ape_targets"), "qe": need("qe"), "qe_ape": r.ape_qe}
        return [stage, concat]
    raise ConfigError([f"unknown preset {name!r}; choose from {', '.join(PRESETS)}"])


def build_preset(name: str, pc: PresetConfig, work_dir: str | None = None) -> PipelineConfig:
    data = {
        "seed": pc.seed,
        "threads": pc.threads,
        "profile": pc.profile.model_dump(),
        "io": {
            "input": pc.resources.pseudo.model_dump(),
            "corpora": {"parallel": pc.resources.parallel.model_dump()},
            "work_dir": work_dir or str(Path(pc.work_dir) / name),
        },
        "scorer": pc.scorer.model_dump(),
        "mock": pc.mock.model_dump(),
        "stages": preset_stages(name, pc.resources),
    }
    return PipelineConfig.model_validate(data)


# --- loading and validation -------------------------------------------------


def _format_pydantic(exc: ValidationError) -> list[str]:
    out = []
    for err in exc.errors():
        loc = list(err["loc"])
        prefix = ""
        if len(loc) >= 2 and loc[0] == "stages" and isinstance(loc[1], int):
            prefix = f"stage {loc[1]}: "
            loc = loc[2:]
            # drop the discriminator tag pydantic inserts
            if loc and isinstance(loc[0], str) and loc[0] in _STAGE_KINDS:
                loc = loc[1:]
        where = ".".join(str(x) for x in loc) or "<root>"
        out.append(f"{prefix}{where}: {err['msg']}")
    return out


_STAGE_KINDS = {
    "normalize",
    "labse_filter",
    "qe_filter",
    "length_filter",
    "ape_replace",
    "ape_then_qe",
    "ppi",
    "concat",
    "evaluate",
    "stats",
    "sweep",
}


def load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON ({exc})"]) from None
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be an object"])
    return data


def parse_config(data: dict) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_pydantic(exc)) from None


def parse_preset_config(data: dict) -> PresetConfig:
    try:
        return PresetConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_pydantic(exc)) from None


def resolve_path(base_dir: Path, p: str) -> Path:
    path = Path(p)
    return path if path.is_absolute() else base_dir / path


def resolve_service_url(
    spec: str, cfg: PipelineConfig, env: dict | None = None, allow_env_override: bool = False
) -> str | None:
    """URL for a ``service`` / ``service:URL`` source.

    The environment variable only fills a gap, unless ``allow_env_override`` lets it win.
    """
    env = os.environ if env is None else env
    explicit = spec.partition(":")[2] or cfg.scorer.url
    from_env = env.get(SCORER_URL_ENV)
    if from_env and (allow_env_override or not explicit):
        return from_env
    return explicit


def _source_errors(spec: str | None, what: str, base_dir: Path, cfg: PipelineConfig, env, allow) -> list[str]:
    if spec is None:
        return []
    kind, _, arg = spec.partition(":")
    if kind == "mock" and not arg:
        return []
    if kind == "file":
        if not arg:
            return [f"{what}: 'file:' needs a path"]
        if not resolve_path(base_dir, arg).is_file():
            return [f"{what}: file not found: {arg}"]
        return []
    if kind == "service":
        if not resolve_service_url(spec, cfg, env, allow):
            return [f"{what}: no scorer URL (give service:URL, scorer.url, or ${SCORER_URL_ENV})"]
        return []
    return [f"{what}: source must be 'file:PATH', 'service[:URL]' or 'mock', got {spec!r}"]


def validate(
    config: PipelineConfig | dict,
    base_dir: Path | str = ".",
    env: dict | None = None,
    allow_env_override: bool = False,
) -> PipelineConfig:
    """Check schema, paths, thresholds and stage wiring before any data is read.

    Raises ConfigError listing every problem found, each prefixed with its stage index.
    """
    cfg = config if isinstance(config, PipelineConfig) else parse_config(config)
    base_dir = Path(base_dir)
    errors: list[str] = []

    def need_file(p: str, what: str) -> None:
        if not resolve_path(base_dir, p).is_file():
            errors.append(f"{what}: file not found: {p}")

    if not cfg.stages:
        errors.append("stages: at least one stage is required")
    need_file(cfg.io.input.source, "io.input.source")
    need_file(cfg.io.input.target, "io.input.target")
    for name, ref in cfg.io.corpora.items():
        if name == "input":
            errors.append("io.corpora: 'input' is reserved for io.input")
        need_file(ref.source, f"io.corpora.{name}.source")
        need_file(ref.target, f"io.corpora.{name}.target")

    for k, st in enumerate(cfg.stages):
        at = f"stage {k} ({st.kind})"

        def src(spec, field):
            errors.extend(_source_errors(spec, f"{at}: {field}", base_dir, cfg, env, allow_env_override))

        for field in ("threshold", "phrase_threshold"):
            v = getattr(st, field, None)
            if v is not None and not math.isfinite(v):
                errors.append(f"{at}: {field} must be finite")
        if isinstance(st, LabseFilterStage):
            src(st.embeddings, "embeddings")
        elif isinstance(st, QeFilterStage):
            src(st.scores, "scores")
        elif isinstance(st, LengthFilterStage):
            if st.min_ratio > st.max_ratio:
                errors.append(f"{at}: min_ratio must be <= max_ratio")
        elif isinstance(st, ApeReplaceStage):
            need_file(st.ape_targets, f"{at}: ape_targets")
        elif isinstance(st, ApeThenQeStage):
            need_file(st.ape_targets, f"{at}: ape_targets")
            src(st.qe, "qe")
            src(st.qe_ape, "qe_ape")
            if st.qe.startswith("file:") and st.qe_ape is None:
                errors.append(f"{at}: file-based qe needs qe_ape (scores for the APE-corrected corpus)")
        elif isinstance(st, PpiStage):
            need_file(st.alignments, f"{at}: alignments")
            if st.corpus != "input" and st.corpus not in cfg.io.corpora:
                errors.append(f"{at}: unknown corpus {st.corpus!r}")
            src(st.phrase_embeddings, "phrase_embeddings")
        elif isinstance(st, ConcatStage):
            if st.with_ not in cfg.io.corpora:
                errors.append(f"{at}: unknown corpus {st.with_!r} (define it under io.corpora)")
        elif isinstance(st, EvaluateStage):
            need_file(st.hyp, f"{at}: hyp")
            need_file(st.ref, f"{at}: ref")
        elif isinstance(st, SweepStage):
            src(st.source, "source")
            if any(b <= a for a, b in zip(st.thresholds, st.thresholds[1:])):
                errors.append(f"{at}: thresholds must be strictly increasing")
    if errors:
        raise ConfigError(errors)
    return cfg


def load_config(path, env: dict | None = None, allow_env_override: bool = False) -> tuple[PipelineConfig, Path]:
    """Load and validate a pipeline config file. A file with a ``preset`` key is expanded first."""
    path = Path(path)
    data = load_json(path)
    if "preset" in data:
        data = dict(data)
        name = data.pop("preset")
        pc = parse_preset_config(data)
        cfg = build_preset(name, pc, work_dir=pc.work_dir)
    else:
        cfg = parse_config(data)
    return validate(cfg, path.parent, env, allow_env_override), path.parent
