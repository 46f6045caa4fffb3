from __future__ import annotations

import json

import pytest

from mcel.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A small end-to-end workspace: benchmark, checkpoint, index, datastore."""
    root = tmp_path_factory.mktemp("cliws")
    data = root / "data"
    assert main([
        "synth", "--out-dir", str(data),
        "--entities", "60", "--train", "150", "--dev", "40", "--test", "40",
    ]) == 0
    assert main([
        "train-retriever",
        "--ontology", str(data / "ontology.tsv"),
        "--mentions", str(data / "train.tsv"),
        "--out", str(root / "encoder.bin"),
        "--dim", "32", "--epochs", "2", "--hash-buckets", "64",
        "--temperature", "0.05", "--learning-rate", "0.02", "--hard-negatives", "2",
    ]) == 0
    assert main([
        "index",
        "--ontology", str(data / "ontology.tsv"),
        "--checkpoint", str(root / "encoder.bin"),
        "--out", str(root / "index.bin"),
    ]) == 0
    assert main([
        "build-datastore",
        "--ontology", str(data / "ontology.tsv"),
        "--checkpoint", str(root / "encoder.bin"),
        "--index", str(root / "index.bin"),
        "--mentions", str(data / "train.tsv"),
        "--split", "train",
        "--out", str(root / "store.bin"),
        "--n-options", "4",
    ]) == 0
    return root


def engine_args(root):
    data = root / "data"
    return [
        "--ontology", str(data / "ontology.tsv"),
        "--checkpoint", str(root / "encoder.bin"),
        "--index", str(root / "index.bin"),
        "--datastore", str(root / "store.bin"),
    ]


def test_pipeline_files_exist(workspace):
    for name in ("encoder.bin", "index.bin", "store.bin"):
        assert (workspace / name).exists()


def test_ingest_reports_counts(workspace, capsys):
    data = workspace / "data"
    assert main([
        "ingest",
        "--ontology", str(data / "ontology.tsv"),
        "--mentions", str(data / "test.tsv"), "--split", "test",
    ]) == 0
    out = capsys.readouterr().out
    assert "60 entities" in out
    assert "40 records" in out


def test_evaluate_writes_deterministic_report(workspace, tmp_path):
    data = workspace / "data"
    reports = []
    for name in ("r1.json", "r2.json"):
        assert main([
            "evaluate", *engine_args(workspace),
            "--mentions", str(data / "test.tsv"), "--split", "test",
            "--n-options", "4", "--k-neighbors", "2",
            "--report", str(tmp_path / name),
        ]) == 0
        reports.append((tmp_path / name).read_bytes())
    assert reports[0] == reports[1]
    payload = json.loads(reports[0])
    assert payload["total"] == 40
    assert 0.0 <= payload["accuracy"] <= 1.0


def test_evaluate_neighbor_mode_none_equals_k0(workspace, tmp_path):
    data = workspace / "data"
    for name, extra in (
        ("none.json", ["--neighbor-mode", "none"]),
        ("k0.json", ["--k-neighbors", "0"]),
    ):
        assert main([
            "evaluate", *engine_args(workspace),
            "--mentions", str(data / "test.tsv"), "--split", "test",
            "--n-options", "4", *extra,
            "--report", str(tmp_path / name),
        ]) == 0
    assert (tmp_path / "none.json").read_bytes() == (tmp_path / "k0.json").read_bytes()


def test_link_prints_stages(workspace, capsys):
    mention = "example mention"
    assert main([
        "link", *engine_args(workspace),
        "--mention", mention, "--n-options", "3", "--k-neighbors", "2",
    ]) == 0
    out = capsys.readouterr().out
    assert "candidates:" in out
    assert "neighbors:" in out
    assert "prompt: " in out
    assert out.count("answer:") >= 3  # K solved blocks + final block
    assert "scores: " in out


def test_ablate_emits_all_rows(workspace, tmp_path, capsys):
    data = workspace / "data"
    assert main([
        "ablate", *engine_args(workspace),
        "--mentions", str(data / "test.tsv"), "--split", "test",
        "--n-options", "4", "--k-neighbors", "2",
        "--report-dir", str(tmp_path / "ablations"),
    ]) == 0
    out = capsys.readouterr().out
    for row in ("full", "no-aug", "no-knn", "random-neighbors", "generate-names"):
        assert row in out
        assert (tmp_path / "ablations" / f"{row}.json").exists()


def test_sweep_writes_csv(workspace, tmp_path):
    data = workspace / "data"
    csv_path = tmp_path / "sweep.csv"
    assert main([
        "sweep", *engine_args(workspace),
        "--mentions", str(data / "test.tsv"), "--split", "test",
        "--param", "N", "--values", "1,2,3",
        "--csv", str(csv_path),
    ]) == 0
    lines = csv_path.read_text().strip().splitlines()
    assert len(lines) == 4


def test_export_prompts_jsonl(workspace, tmp_path):
    data = workspace / "data"
    out = tmp_path / "prompts.jsonl"
    assert main([
        "export-prompts",
        "--ontology", str(data / "ontology.tsv"),
        "--checkpoint", str(workspace / "encoder.bin"),
        "--index", str(workspace / "index.bin"),
        "--datastore", str(workspace / "store.bin"),
        "--mentions", str(data / "dev.tsv"), "--split", "dev",
        "--out", str(out), "--n-options", "4", "--augment-count", "1",
    ]) == 0
    rows = [json.loads(line) for line in out.read_text().splitlines()]
    assert rows
    for row in rows:
        assert row["prompt"].endswith("answer:")
        assert row["symbol"] is not None and len(row["symbol"]) == 1
    assert any(r["provenance"] == "augmented-swap" for r in rows)


def test_unknown_flag_is_usage_error(workspace):
    with pytest.raises(SystemExit) as excinfo:
        main(["evaluate", "--definitely-not-a-flag"])
    assert excinfo.value.code == 2


def test_missing_input_is_data_error(workspace, tmp_path):
    assert main([
        "ingest", "--ontology", str(tmp_path / "nope.tsv"),
    ]) == 1


def test_config_file_supplies_defaults_flags_override(workspace, tmp_path, capsys):
    data = workspace / "data"
    config = tmp_path / "run.cfg"
    config.write_text("n-options = 2\nk-neighbors = 0\n", encoding="utf-8")
    assert main([
        "evaluate", *engine_args(workspace),
        "--config", str(config),
        "--mentions", str(data / "test.tsv"), "--split", "test",
        "--n-options", "3",  # flag beats config
        "--report", str(tmp_path / "cfg.json"),
    ]) == 0
    payload = json.loads((tmp_path / "cfg.json").read_text())
    assert payload["config"]["n_options"] == 3
    assert payload["config"]["k_neighbors"] == 0
    err = capsys.readouterr().err
    assert "config" in err  # effective config is echoed


def test_config_file_rejects_unknown_key(workspace, tmp_path):
    config = tmp_path / "bad.cfg"
    config.write_text("not-a-real-option = 1\n", encoding="utf-8")
    assert main([
        "evaluate", *engine_args(workspace), "--config", str(config),
        "--mentions", str(workspace / "data" / "test.tsv"),
    ]) == 1


def test_fingerprint_mismatch_detected(workspace, tmp_path):
    data = workspace / "data"
    # a different checkpoint than the one the index was built with
    assert main([
        "train-retriever",
        "--ontology", str(data / "ontology.tsv"),
        "--mentions", str(data / "train.tsv"),
        "--out", str(tmp_path / "other.bin"),
        "--dim", "16", "--epochs", "1", "--hash-buckets", "32", "--seed", "99",
        "--temperature", "0.05", "--learning-rate", "0.02", "--hard-negatives", "0",
    ]) == 0
    code = main([
        "evaluate",
        "--ontology", str(data / "ontology.tsv"),
        "--checkpoint", str(tmp_path / "other.bin"),
        "--index", str(workspace / "index.bin"),
        "--mentions", str(data / "test.tsv"), "--split", "test",
    ])
    assert code == 1


def test_endpoint_env_overrides(workspace, monkeypatch, capsys):
    from mcel.cli import build_parser

    monkeypatch.setenv("MCEL_GENERATOR_ENDPOINT", "http://from-env:9")
    args = build_parser().parse_args([
        "evaluate", *engine_args(workspace), "--mentions", "x.tsv",
    ])
    assert args.generator_endpoint == "http://from-env:9"
    # flags still beat the environment
    args = build_parser().parse_args([
        "evaluate", *engine_args(workspace), "--mentions", "x.tsv",
        "--generator-endpoint", "http://from-flag:1",
    ])
    assert args.generator_endpoint == "http://from-flag:1"
