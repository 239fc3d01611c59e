import hashlib
import json
from pathlib import Path

import pytest

from xlqa.cli import PipelineConfig, main
from xlqa.encoder import load_params

SMALL = {
    "encoder": {"hidden_dim": 8, "num_layers": 1, "num_heads": 2, "ffn_dim": 16, "max_seq_len": 40},
    "vocab": {"merges": 60},
    "align_train": {"epochs": 1},
    "task_tune": {"epochs": 1},
}


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("fixture")
    assert main(["make-fixture", str(root), "--n-train", "16", "--n-test", "6", "--n-pairs", "30"]) == 0
    cfg = json.loads((root / "config.json").read_text())
    cfg.update(SMALL)
    (root / "small.json").write_text(json.dumps(cfg))
    return root


def _digests(root):
    return {p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(Path(root).rglob("*")) if p.is_file()}


def test_gradcheck_default_config(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "max relative error" in out
    rec = json.loads((tmp_path / "gradcheck.json").read_text())
    assert rec["max_relative_error"] < 1e-4
    assert (tmp_path / "gradcheck.json.meta.json").exists()
    assert main(["--out", str(tmp_path), "gradcheck", "--tolerance", "0"]) == 1


def test_augment_with_empty_translations(fixture_dir, tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    out = tmp_path / "aug.jsonl"
    status = main(["--config", str(fixture_dir / "small.json"), "--out", str(tmp_path), "augment",
                   "--translations", str(empty), "--output", str(out)])
    assert status == 0
    assert out.read_bytes() == (fixture_dir / "train.jsonl").read_bytes()
    meta = json.loads(Path(str(out) + ".meta.json").read_text())
    assert meta["seed"] == 0 and len(meta["inputs"]) == 2 and meta["config_sha256"]


def test_missing_artifact_names_producer(fixture_dir, tmp_path, capsys):
    assert main(["--config", str(fixture_dir / "small.json"), "--out", str(tmp_path), "align-finetune"]) == 1
    assert "xlqa build-vocab" in capsys.readouterr().err
    assert main(["--config", str(fixture_dir / "small.json"), "--out", str(tmp_path), "predict",
                 "--model", "nothing"]) == 1
    assert "task-tune" in capsys.readouterr().err


@pytest.mark.parametrize("patch,field", [
    ({"encoder": {"hidden_dim": 10, "num_heads": 4}}, "encoder"),
    ({"encoder": {"hiden_dim": 8}}, "encoder.hiden_dim"),
    ({"align_train": {"sampling": "bogus"}}, "align_train"),
    ({"task_tune": {"seed": 3}}, "task_tune.seed"),
    ({"datasets": {"train": "nope.jsonl"}}, "datasets.train"),
    ({"manifest": [{"source": "missing", "target": "x", "source_lang": "a", "target_lang": "b"}]},
     "manifest[0].source"),
    ({"colour": 1}, "colour"),
])
def test_config_errors_name_field(tmp_path, capsys, patch, field):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(patch))
    assert main(["--config", str(cfg), "gradcheck"]) == 1
    assert f"'{field}'" in capsys.readouterr().err


def test_seed_flag_overrides(fixture_dir):
    cfg = PipelineConfig.load(fixture_dir / "small.json", seed=11)
    assert cfg.seed == cfg.align_train.seed == cfg.task_tune.seed == 11
    assert cfg.digest() != PipelineConfig.load(fixture_dir / "small.json").digest()


def test_full_pipeline_is_deterministic(fixture_dir, tmp_path):
    before = _digests(fixture_dir)
    for run in ("a", "b"):
        assert main(["--config", str(fixture_dir / "small.json"), "--out", str(tmp_path / run),
                     "pipeline", "--resamples", "100"]) == 0
    assert _digests(fixture_dir) == before  # inputs untouched
    a, b = _digests(tmp_path / "a"), _digests(tmp_path / "b")
    assert a == b
    assert "report.tsv" in a and "models/baseline.ckpt" in a and "reports/aligned-aug.json.meta.json" in a
    text = (tmp_path / "a" / "report.tsv").read_text()
    assert text.splitlines()[0].startswith("system\ttask\t")
    assert len(text.splitlines()) == 5


def test_baseline_and_aligned_differ_only_in_init(fixture_dir, tmp_path):
    cfg = json.loads((fixture_dir / "small.json").read_text())
    cfg["align_train"] = {"epochs": 1, "learning_rate": 0.0}
    cfg["manifest"] = [{**e, "source": str(fixture_dir / e["source"]), "target": str(fixture_dir / e["target"])}
                       for e in cfg["manifest"]]
    cfg["datasets"] = {k: str(fixture_dir / v) for k, v in cfg["datasets"].items()}
    (tmp_path / "frozen.json").write_text(json.dumps(cfg))
    args = ["--config", str(tmp_path / "frozen.json"), "--out", str(tmp_path / "out")]
    for cmd in (["build-vocab"], ["align-corpus"], ["align-finetune"],
                ["task-tune", "--init", "raw"], ["task-tune", "--init", "aligned"]):
        assert main(args + cmd) == 0
    raw, _ = load_params(tmp_path / "out" / "models" / "raw.ckpt")
    aligned, _ = load_params(tmp_path / "out" / "models" / "aligned.ckpt")
    assert raw.equals(aligned)


def test_report_requires_evaluate(fixture_dir, tmp_path, capsys):
    assert main(["--config", str(fixture_dir / "small.json"), "--out", str(tmp_path), "report"]) == 1
    assert "evaluate" in capsys.readouterr().err
