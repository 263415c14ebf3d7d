import json
import logging
from pathlib import Path

import pytest

from conftest import FIXTURE_DIR
from tkgforecast.cli import build_parser, main

SUBCOMMANDS = [
    "ingest", "mine-rules", "sample", "build-prompts", "export-pairs", "run", "filter-run",
    "calibrate", "eval", "analyze", "pipeline",
]


@pytest.mark.parametrize("command", SUBCOMMANDS)
def test_help_exits_zero(command, capsys):
    with pytest.raises(SystemExit) as info:
        build_parser().parse_args([command, "--help"])
    assert info.value.code == 0
    assert "usage" in capsys.readouterr().out


def test_stage_before_prerequisite_names_it(tmp_path, caplog):
    assert main(["--out-dir", str(tmp_path), "mine-rules"]) == 2
    assert "run the `ingest` stage first" in caplog.text


def test_missing_dataset(tmp_path, caplog):
    assert main(["--out-dir", str(tmp_path), "ingest", "--dataset", str(tmp_path / "nope")]) == 2
    assert "not found" in caplog.text


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["--out-dir", str(out), "--seed", "42", "pipeline", "--dataset", str(FIXTURE_DIR)]) == 0
    return out


def test_pipeline_artifacts(pipeline_dir):
    for name in ("ingest.json", "rules.json", "histories.jsonl", "prompts.jsonl", "traces.jsonl",
                 "report.json", "analysis.json", "manifest.json"):
        assert (pipeline_dir / name).exists(), name
    report = json.loads((pipeline_dir / "report.json").read_text())
    assert report["count"] == 25
    h = report["hits"]
    assert 0 <= h["hits@1"] <= h["hits@3"] <= h["hits@10"] <= 1
    manifest = json.loads((pipeline_dir / "manifest.json").read_text())
    assert manifest["stages"]["eval"]["seed"] == 42
    header = json.loads((pipeline_dir / "traces.jsonl").read_text().splitlines()[0])
    assert header["header"] is True


def test_rerun_is_noop_unless_forced(pipeline_dir, caplog):
    caplog.set_level(logging.INFO)
    before = (pipeline_dir / "report.json").stat().st_mtime_ns
    assert main(["--out-dir", str(pipeline_dir), "--seed", "42", "eval"]) == 0
    assert "up to date" in caplog.text
    assert (pipeline_dir / "report.json").stat().st_mtime_ns == before
    content = (pipeline_dir / "report.json").read_bytes()
    assert main(["--out-dir", str(pipeline_dir), "--seed", "42", "--force", "eval"]) == 0
    assert (pipeline_dir / "report.json").read_bytes() == content


def test_calibrate_from_records(tmp_path):
    recs = tmp_path / "sims.jsonl"
    rows = [(0.8, True), (0.9, True), (0.3, False), (0.4, False)]
    recs.write_text("".join(json.dumps({"similarity": s, "correct": c}) + "\n" for s, c in rows))
    assert main(["--out-dir", str(tmp_path), "calibrate", "--records", str(recs)]) == 0
    tau = json.loads((tmp_path / "tau.json").read_text())
    assert tau["tau"] == 0.4 and tau["separation"] == 1.0


def test_calibrate_single_class_fails(tmp_path):
    recs = tmp_path / "sims.jsonl"
    recs.write_text(json.dumps({"similarity": 0.5, "correct": True}) + "\n")
    assert main(["--out-dir", str(tmp_path), "calibrate", "--records", str(recs)]) == 2


def test_export_pairs(pipeline_dir, tmp_path, caplog):
    def export(shots, out):
        return main(["--out-dir", str(pipeline_dir), "--seed", "42", "--force", "export-pairs",
                     "--shots", str(shots), "--polarity", str(FIXTURE_DIR / "polarity.json"), "--out", str(out)])

    out = tmp_path / "pairs.jsonl"
    assert export(5, out) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 6 and json.loads(lines[0])["shots"] == 5
    assert export(100_000, tmp_path / "x.jsonl") == 2
    assert "has only 150 usable queries" in caplog.text


def test_config_file(tmp_path):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text(f'seed = 7\nout_dir = "out"\n[dataset]\npath = "{FIXTURE_DIR}"\n[rules]\ntop_k = 5\n')
    assert main(["--config", str(cfg), "ingest"]) == 0
    assert main(["--config", str(cfg), "mine-rules"]) == 0
    rules = json.loads((tmp_path / "out" / "rules.json").read_text())
    assert rules["top_k"] == 5


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text("bogus = 1\n")
    assert main(["--config", str(cfg), "ingest"]) == 2


def test_example_config_loads():
    from tkgforecast.config import load_config

    cfg = load_config(FIXTURE_DIR.parents[3] / "configs" / "fixture.toml")
    assert cfg.seed == 42 and cfg.sampler.gammas == (0.6, 0.6, 0.01, 0.1)
    assert Path(cfg.dataset.path).resolve() == FIXTURE_DIR
