"""Synthetic corpora and planted score files for pipeline-level tests."""

import json
import random
from pathlib import Path

import numpy as np

WORDS = ["river", "stone", "light", "green", "table", "music", "paper", "cloud", "seven", "north", "quiet", "apple"]


def sentence(rng, lo=2, hi=8):
    return " ".join(rng.choice(WORDS) for _ in range(rng.randint(lo, hi)))


def write_lines(path, lines):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in lines:
            f.write(line + "\n")
    return Path(path)


def noisy_corpus(n, seed=0):
    """Pairs whose target is a copy, a perturbed copy, or unrelated; plus APE outputs and identity alignments."""
    rng = random.Random(seed)
    src, tgt, ape, align = [], [], [], []
    for _ in range(n):
        s = sentence(rng)
        r = rng.random()
        if r < 0.4:
            t = s
        elif r < 0.7:
            words = s.split()
            words[rng.randrange(len(words))] = rng.choice(WORDS)
            t = " ".join(words)
        else:
            t = sentence(rng)
        src.append(s)
        tgt.append(t)
        ape.append(s if rng.random() < 0.5 else t)
        k = min(len(s.split()), len(t.split()))
        align.append(" ".join(f"{i}-{i}" for i in range(k)))
    return src, tgt, ape, align


def mock_preset_instance(root, n=2000, n_parallel=100, seed=0):
    """Directory with a pseudo corpus, a parallel corpus, APE outputs, alignments and a mock-scored preset config."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    src, tgt, ape, align = noisy_corpus(n, seed)
    write_lines(root / "pseudo.src", src)
    write_lines(root / "pseudo.tgt", tgt)
    write_lines(root / "ape.txt", ape)
    write_lines(root / "pseudo.align", align)
    psrc, ptgt, _, _ = noisy_corpus(n_parallel, seed + 1)
    write_lines(root / "parallel.src", psrc)
    write_lines(root / "parallel.tgt", psrc)
    cfg = {
        "resources": {
            "pseudo": {"source": "pseudo.src", "target": "pseudo.tgt"},
            "parallel": {"source": "parallel.src", "target": "parallel.tgt"},
            "qe": "mock",
            "embeddings": "mock",
            "labse_threshold": 0.5,
            "ape_targets": "ape.txt",
            "alignments": "pseudo.align",
            "phrase_embeddings": "mock",
        },
        "work_dir": "work",
        "mock": {"dimension": 64},
    }
    (root / "presets.json").write_text(json.dumps(cfg, indent=2))
    return root / "presets.json"


def table2_instance(root, scale=100, seed=0):
    """Planted instance whose keep fractions mirror the reference corpus counts at 1/scale.

    Pseudo 3.28M, parallel 248K, QE keeps 2.61M, LaBSE keeps 2.85M and PPI
    injects 1.24M phrase pairs (4.09M - 2.85M), all divided by ``scale``.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    n = 3_280_000 // scale
    n_par = 248_000 // scale
    qe_keep = 2_610_000 // scale
    labse_keep = 2_850_000 // scale
    injected = 1_240_000 // scale
    rng = np.random.default_rng(seed)

    # pseudo corpus: phrase-bearing lines first, then filler sentences
    src, tgt, align = [], [], []
    for i in range(n):
        if i < injected:
            text = f"u{i} v{i}"
            src.append(text)
            tgt.append(text)
            align.append("0-0 1-1")
        else:
            src.append(f"filler source {i}")
            tgt.append(f"filler target {i}")
            align.append("")
    write_lines(root / "pseudo.src", src)
    write_lines(root / "pseudo.tgt", tgt)
    write_lines(root / "pseudo.align", align)
    write_lines(root / "parallel.src", [f"clean {i}" for i in range(n_par)])
    write_lines(root / "parallel.tgt", [f"propre {i}" for i in range(n_par)])
    write_lines(root / "ape.txt", [f"corrected {i}" for i in range(n)])

    # QE: exactly qe_keep scores >= -0.5, placed at random positions
    qe = np.where(np.arange(n) < qe_keep, rng.uniform(-0.4, 2.0, n), rng.uniform(-3.0, -0.6, n))
    rng.shuffle(qe)
    write_lines(root / "qe.tsv", [f"{i}\t{v!r}" for i, v in enumerate(qe.tolist())])
    qe_ape = rng.uniform(-3.0, 2.0, n)
    write_lines(root / "qe_ape.tsv", [f"{i}\t{v!r}" for i, v in enumerate(qe_ape.tolist())])

    # LaBSE: exactly labse_keep cosines >= 0.8
    cos = np.where(np.arange(n) < labse_keep, rng.uniform(0.85, 0.99, n), rng.uniform(-0.5, 0.7, n))
    rng.shuffle(cos)
    rows = ["d=2"]
    for i, c in enumerate(cos.tolist()):
        rows.append(f"{i}\t1.0 0.0\t{c!r} {float(np.sqrt(1 - c * c))!r}")
    write_lines(root / "emb.txt", rows)

    cfg = {
        "resources": {
            "pseudo": {"source": "pseudo.src", "target": "pseudo.tgt"},
            "parallel": {"source": "parallel.src", "target": "parallel.tgt"},
            "qe": "file:qe.tsv",
            "qe_threshold": -0.5,
            "embeddings": "file:emb.txt",
            "labse_threshold": 0.8,
            "ape_targets": "ape.txt",
            "ape_qe": "file:qe_ape.tsv",
            "alignments": "pseudo.align",
            "phrase_embeddings": "mock",
            "phrase_threshold": 0.8,
        },
        "work_dir": "work",
    }
    (root / "presets.json").write_text(json.dumps(cfg, indent=2))
    expected = {
        "n": n,
        "n_parallel": n_par,
        "qe_keep": qe_keep,
        "labse_keep": labse_keep,
        "injected": injected,
    }
    return root / "presets.json", expected
