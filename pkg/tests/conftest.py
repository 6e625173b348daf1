"""Shared fixtures: a small synthetic data directory and a trained checkpoint,
both produced through the CLI so the command surface itself gets exercised."""

import json

import pytest

from cogbert.cli import main as cli_main


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    rc = cli_main(["synth", "--out", str(out), "--seed", "5", "--n-sentences", "48"])
    assert rc == 0
    return out


@pytest.fixture(scope="session")
def model_config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "model.json"
    path.write_text(json.dumps({
        "layers": 1, "heads": 2, "d_model": 16, "d_ff": 32,
        "max_len": 16, "dropout": 0.0,
    }))
    return path


@pytest.fixture(scope="session")
def train_config_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "train.json"
    path.write_text(json.dumps({"lr": 5e-4}))
    return path


@pytest.fixture(scope="session")
def trained_dir(tmp_path_factory, synth_dir, model_config_path, train_config_path):
    out = tmp_path_factory.mktemp("trained")
    rc = cli_main([
        "train",
        "--features", str(synth_dir / "features.jsonl"),
        "--out", str(out),
        "--config", str(model_config_path),
        "--train-config", str(train_config_path),
        "--mode", "none",
        "--repeats", "1",
        "--epochs", "4",
        "--seed", "3",
    ])
    assert rc == 0
    return out
