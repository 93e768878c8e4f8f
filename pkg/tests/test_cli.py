import json
import re

import pytest

from conftest import write_text_lines
from repairfilter.cli import main
from repairfilter.scoring import load_score_table
from synth import mock_preset_instance


@pytest.fixture
def corpus(tmp_path):
    src = write_text_lines(tmp_path / "c.src", ["the cat sat", "a dog ran", "hello there"])
    tgt = write_text_lines(tmp_path / "c.tgt", ["the cat sat", "a dog walked", "unrelated words"])
    return tmp_path, src, tgt


def test_version(capsys):
    assert main(["--version"]) == 0
    assert capsys.readouterr().out.strip()


def test_usage_error_is_config_exit():
    assert main(["filter", "bogus"]) == 1
    assert main([]) == 1


def test_bad_threads(corpus):
    d, src, tgt = corpus
    assert main(["stats", "--src", str(src), "--tgt", str(tgt), "--threads", "0"]) == 1


def test_filter_qe_file_scores(corpus, capsys):
    d, src, tgt = corpus
    write_text_lines(d / "q.tsv", ["0\t0.9", "1\t-0.5", "2\t-0.51"])
    rc = main(
        ["filter", "qe", "--src", str(src), "--tgt", str(tgt), "--scores", str(d / "q.tsv"),
         "--out-src", str(d / "o.src"), "--out-tgt", str(d / "o.tgt"), "--kept-ids", str(d / "k.tsv"),
         "--manifest", str(d / "m.json")]
    )
    assert rc == 0
    assert (d / "o.src").read_text() == "the cat sat\na dog ran\n"
    report = json.loads(capsys.readouterr().out)
    assert report["kept_count"] == 2 and report["threshold"] == -0.5
    assert json.loads((d / "m.json").read_text())["pair_count"] == 2


def test_filter_labse_default_threshold(corpus, capsys):
    d, src, tgt = corpus
    rc = main(["filter", "labse", "--src", str(src), "--tgt", str(tgt), "--out-src", str(d / "o.src"),
               "--out-tgt", str(d / "o.tgt")])
    assert rc == 0
    assert json.loads(capsys.readouterr().out)["threshold"] == 0.8


def test_filter_length(corpus):
    d, src, tgt = corpus
    rc = main(["filter", "length", "--src", str(src), "--tgt", str(tgt), "--out-src", str(d / "o.src"),
               "--out-tgt", str(d / "o.tgt"), "--max-tokens", "2"])
    assert rc == 0 and (d / "o.src").read_text() == "hello there\n"


def test_missing_file_is_data_error(corpus, capsys):
    d, src, _ = corpus
    rc = main(["stats", "--src", str(src), "--tgt", str(d / "nope")])
    assert rc == 2


def test_line_mismatch_is_data_error(corpus):
    d, src, _ = corpus
    short = write_text_lines(d / "short", ["x"])
    assert main(["stats", "--src", str(src), "--tgt", str(short)]) == 2


def test_unreachable_service_exit_3(corpus):
    d, src, tgt = corpus
    rc = main(["filter", "qe", "--src", str(src), "--tgt", str(tgt), "--scores", "service:http://127.0.0.1:9",
               "--max-retries", "0", "--backoff", "0", "--timeout", "1",
               "--out-src", str(d / "o.src"), "--out-tgt", str(d / "o.tgt")])
    assert rc == 3


def test_service_without_url_is_config_error(corpus, monkeypatch):
    d, src, tgt = corpus
    monkeypatch.delenv("REPAIRFILTER_SCORER_URL", raising=False)
    rc = main(["filter", "qe", "--src", str(src), "--tgt", str(tgt), "--scores", "service",
               "--out-src", str(d / "o.src"), "--out-tgt", str(d / "o.tgt")])
    assert rc == 1


def test_evaluate_format(corpus, capsys):
    d, _, tgt = corpus
    assert main(["evaluate", "--hyp", str(tgt), "--ref", str(tgt), "--report", str(d / "r.json")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert re.fullmatch(r"BLEU = \d+\.\d\d", out[0]) and out[0] == "BLEU = 100.00"
    assert json.loads((d / "r.json").read_text())["bleu"] == 100.0


def test_sweep(corpus, capsys):
    d, src, tgt = corpus
    assert main(["sweep", "--filter", "qe", "--src", str(src), "--tgt", str(tgt),
                 "--thresholds=-1,0,0.99", "--out", str(d / "s.tsv")]) == 0
    kept = [int(line.split("\t")[1]) for line in (d / "s.tsv").read_text().splitlines()]
    assert kept[0] == 3 and kept == sorted(kept, reverse=True)
    assert main(["sweep", "--filter", "qe", "--src", str(src), "--tgt", str(tgt), "--thresholds", "1,0"]) == 1


def test_score_then_filter_matches_mock(corpus):
    d, src, tgt = corpus
    assert main(["score", "qe", "--src", str(src), "--tgt", str(tgt), "--out", str(d / "q.tsv")]) == 0
    assert len(load_score_table(d / "q.tsv", 3)) == 3
    for tag, scores in (("a", "mock"), ("b", f"file:{d / 'q.tsv'}")):
        assert main(["filter", "qe", "--src", str(src), "--tgt", str(tgt), "--scores", scores,
                     "--threshold", "0.3", "--out-src", str(d / f"{tag}.src"), "--out-tgt", str(d / f"{tag}.tgt")]) == 0
    assert (d / "a.src").read_bytes() == (d / "b.src").read_bytes()


def test_ape_select(corpus, capsys):
    d, src, tgt = corpus
    ape = write_text_lines(d / "ape.txt", ["the cat sat", "a dog ran", "hello there"])
    rc = main(["ape-select", "--src", str(src), "--tgt", str(tgt), "--ape", str(ape),
               "--out-src", str(d / "o.src"), "--out-tgt", str(d / "o.tgt"), "--records", str(d / "r.tsv")])
    assert rc == 0
    assert (d / "o.tgt").read_text() == "the cat sat\na dog ran\nhello there\n"
    report = json.loads(capsys.readouterr().out)
    assert report["ape_identical_count"] == 1 and report["chosen_ape_count"] == 2
    assert len((d / "r.tsv").read_text().splitlines()) == 3


def test_ppi_round_trip(tmp_path):
    src = write_text_lines(tmp_path / "s", ["a b", "c"])
    tgt = write_text_lines(tmp_path / "t", ["x y", "z"])
    al = write_text_lines(tmp_path / "al", ["0-0 1-1", "0-0"])
    assert main(["ppi", "extract", "--src", str(src), "--tgt", str(tgt), "--align", str(al),
                 "--out", str(tmp_path / "pt.tsv")]) == 0
    assert main(["ppi", "select", "--table", str(tmp_path / "pt.tsv"), "--out", str(tmp_path / "sel.tsv")]) == 0
    assert main(["ppi", "inject", "--src", str(src), "--tgt", str(tgt), "--phrases", str(tmp_path / "sel.tsv"),
                 "--out-src", str(tmp_path / "o.src"), "--out-tgt", str(tmp_path / "o.tgt")]) == 0
    lines = (tmp_path / "o.src").read_text().splitlines()
    assert lines[:2] == ["a b", "c"] and sorted(lines[2:]) == ["a b", "c"]


def test_ppi_bad_alignment_is_data_error(tmp_path):
    src = write_text_lines(tmp_path / "s", ["a b"])
    tgt = write_text_lines(tmp_path / "t", ["x y"])
    al = write_text_lines(tmp_path / "al", ["0-5"])
    assert main(["ppi", "extract", "--src", str(src), "--tgt", str(tgt), "--align", str(al),
                 "--out", str(tmp_path / "pt.tsv")]) == 2


def test_stats(corpus, capsys):
    d, src, tgt = corpus
    assert main(["stats", "--src", str(src), "--tgt", str(tgt)]) == 0
    assert json.loads(capsys.readouterr().out)["pair_count"] == 3


def test_run_and_compare(tmp_path, capsys):
    path = mock_preset_instance(tmp_path, n=60, n_parallel=5)
    assert main(["compare", "--config", str(path)]) == 0
    assert (tmp_path / "work" / "table2.tsv").exists()
    cfg = {"io": {"input": {"source": "pseudo.src", "target": "pseudo.tgt"}, "work_dir": "w"},
           "stages": [{"kind": "qe_filter", "scores": "mock"}]}
    (tmp_path / "run.json").write_text(json.dumps(cfg))
    assert main(["run", "--config", str(tmp_path / "run.json")]) == 0
    cfg["stages"][0]["threshold"] = "high"
    (tmp_path / "bad.json").write_text(json.dumps(cfg))
    capsys.readouterr()
    assert main(["run", "--config", str(tmp_path / "bad.json")]) == 1
    assert "stage 0" in capsys.readouterr().err


def test_run_stage_failure_names_stage(tmp_path, capsys):
    write_text_lines(tmp_path / "a.src", ["a", "b"])
    write_text_lines(tmp_path / "a.tgt", ["a", "b"])
    write_text_lines(tmp_path / "ape.txt", ["a"])
    cfg = {"io": {"input": {"source": "a.src", "target": "a.tgt"}},
           "stages": [{"kind": "stats"}, {"kind": "ape_replace", "ape_targets": "ape.txt"}]}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    assert main(["run", "--config", str(tmp_path / "c.json")]) == 2
    assert "stage 1" in capsys.readouterr().err
