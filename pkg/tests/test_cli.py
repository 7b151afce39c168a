"""End-to-end CLI smoke: tiny corpus through every subcommand."""

import json
import os

import pytest

from groundcap.runner.cli import main


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text("""
n_points = 512
n_tokens = 32
k_queries = 12
d = 32
d_mid = 32
sa1_width = 16
ffn_hidden = 32
batch_size = 4
cloud_variants = 2
""")
    return root, str(cfg)


def run(argv):
    assert main(argv) == 0


def test_cli_full_pipeline(workspace, capsys):
    root, cfg = workspace
    data = str(root / "data")
    run(["gen-data", "--out", data, "--train-scenes", "4", "--val-scenes", "2",
         "--config", cfg])
    assert os.path.exists(os.path.join(data, "train", "scenes.jsonl"))
    assert os.path.exists(os.path.join(data, "train", "vocab.txt"))

    vg = str(root / "vg.npz")
    run(["pretrain-vg", "--data", f"{data}/train", "--out", vg,
         "--epochs", "1", "--config", cfg])
    assert os.path.exists(vg)

    mle = str(root / "mle.npz")
    run(["train-mle", "--scheme", "5", "--data", f"{data}/train", "--init", vg,
         "--out", mle, "--epochs", "1", "--config", cfg])

    scst = str(root / "scst.npz")
    run(["train-scst", "--data", f"{data}/train", "--init", mle,
         "--out", scst, "--epochs", "1", "--config", cfg])

    report = str(root / "vg.json")
    run(["eval", "--task", "vg", "--data", f"{data}/val", "--checkpoint", mle,
         "--out", report, "--config", cfg])
    with open(report) as f:
        rep = json.load(f)
    assert "acc@0.25" in rep and "acc@0.5" in rep

    preds = str(root / "preds.jsonl")
    run(["eval", "--task", "dc", "--data", f"{data}/val", "--checkpoint", scst,
         "--dump-predictions", preds, "--config", cfg])
    assert os.path.exists(preds)
    run(["eval", "--task", "dc", "--data", f"{data}/val",
         "--predictions-in", preds, "--config", cfg])

    scenes = [json.loads(line)["scene_id"]
              for line in open(os.path.join(data, "val", "scenes.jsonl"))]
    capsys.readouterr()
    run(["infer", "--task", "vg", "--data", f"{data}/val", "--checkpoint", mle,
         "--scene-id", scenes[0], "--config", cfg])
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert len(out["box"]) == 6
    run(["infer", "--task", "dc", "--data", f"{data}/val", "--checkpoint", scst,
         "--scene-id", scenes[0], "--threshold", "0.0", "--config", cfg])
    out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert "detections" in out


def test_cli_benchmark(capsys):
    run(["benchmark", "--n-points", "1500"])
    out = capsys.readouterr().out
    assert "fps" in out and "ball_query" in out
