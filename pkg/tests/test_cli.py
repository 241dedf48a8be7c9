import json

import pytest
import yaml

from spp.cli import main
from spp.config import RunConfig, dump_config, load_config
from spp.errors import ConfigError

TINY = {
    "seed": 3,
    "datagen": {"videos_per_train_word": 1, "videos_per_test_word": 1, "train_ratio": 0.7},
    "embedding": {"steps": 20},
    "predictor": {"nf": 4, "d_feat": 16, "d_rnn": 16, "d_prior": 8, "d_z": 4, "n_broadcast": 2,
                  "d_emb": 32},
    "embedding_dims": 32,
    "train": {"epochs": 1, "batch_size": 4},
    "planner": {"d_model": 32, "n_heads": 2, "n_layers": 1, "epochs": 1, "plans_per_word": 1},
    "ocr": {"n_train": 200, "n_holdout": 50, "epochs": 1, "gate": 0.0},
}


@pytest.fixture
def tiny(tmp_path):
    words = tmp_path / "words.txt"
    words.write_text("\n".join(["CAKE", "FISH", "WOLF", "BRIM", "DUSK", "PLAN", "JUMP", "GOLD", "MINT", "ROSE"]))
    cfg = dict(TINY, word_list=str(words), output_root=str(tmp_path / "run"))
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path, tmp_path / "run"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_config_defaults_and_overrides(tmp_path):
    cfg = load_config(None, env={})
    assert cfg == RunConfig()
    cfg = load_config(None, {"seed": 5, "output_root": "x"}, env={"SPP_OUTPUT_ROOT": "y", "SPP_WORKERS": "2"})
    assert cfg.seed == 5 and cfg.output_root == "x" and cfg.workers == 2
    p = tmp_path / "c.yaml"
    p.write_text(dump_config(cfg))
    assert load_config(p, env={}) == cfg


@pytest.mark.parametrize("doc", [
    {"sed": 1},
    {"datagen": {"board_jitter": 0.5}},
    {"train": {"epochs": "many"}},
    {"split": "diagonal"},
    {"embedding_dims": 64},
    {"planner": {"d_model": 30}},
])
def test_config_rejects_bad_documents(tmp_path, doc):
    p = tmp_path / "c.yaml"
    p.write_text(yaml.safe_dump(doc))
    with pytest.raises(ConfigError):
        load_config(p, env={})


def test_bad_env_worker_count():
    with pytest.raises(ConfigError):
        load_config(None, env={"SPP_WORKERS": "lots"})


def test_dry_run_prints_config(tiny, capsys):
    path, _ = tiny
    code, out, _ = run(capsys, "datagen", "--config", path, "--dry-run")
    assert code == 0 and yaml.safe_load(out)["seed"] == 3


def test_missing_artifacts_exit_code(tmp_path, capsys):
    code, _, err = run(capsys, "eval", "--out", tmp_path / "nothing")
    assert code == 2
    assert json.loads(err.strip().splitlines()[-1])["error"] == "ArtifactMissing"
    code, _, err = run(capsys, "datagen", "--config", tmp_path / "absent.yaml")
    assert code == 2 and "ConfigError" in err


@pytest.mark.slow
def test_tiny_pipeline_end_to_end(tiny, capsys):
    path, root = tiny
    code, out, err = run(capsys, "pipeline", "--config", path)
    assert code == 0, err
    result = json.loads(out)
    assert set(result) >= {"datagen", "train-ocr", "train-planner", "eval train", "eval test"}
    for line in err.strip().splitlines():
        json.loads(line)  # logs are JSON lines
    report = root / "eval" / "test" / "report.json"
    first = report.read_bytes()
    doc = json.loads(first)
    assert set(doc["architectures"]) == {"per_step+continuous", "per_step+onehot", "high_level_only", "none"}
    assert doc["split"]["dataset_checksum"] == result["datagen"]["checksum"]
    # evaluation is deterministic
    assert run(capsys, "eval", "--config", path)[0] == 0
    assert report.read_bytes() == first
    # regenerating the dataset reproduces the manifest
    code, out, _ = run(capsys, "datagen", "--config", path)
    assert json.loads(out)["checksum"] == result["datagen"]["checksum"]
    code, out, err = run(capsys, "demo", "--config", path, "--word", "CAKE")
    assert code == 0, err
    assert (root / "demo" / "CAKE.png").exists()
    code, _, err = run(capsys, "train-predictor", "--config", path, "--mode", "none")
    assert code == 0, err
    assert (root / "predictors" / "none" / "trace.jsonl").exists()
