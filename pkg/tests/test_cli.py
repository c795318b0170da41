"""End-to-end CLI workflow plus exit-code mapping."""

import json

import pytest

from helpers import LADDER_KERNELS, LADDER_MOS, box_blur, degrade, make_pattern
from uwenhance import __version__
from uwenhance.cli import run_cli
from uwenhance.imageops import save_image


def write_mos_dataset(root):
    lines = ["image,mos"]
    base = make_pattern(32, seed=7)
    for i, (kernel, mos) in enumerate(zip(LADDER_KERNELS, LADDER_MOS)):
        save_image(box_blur(base, kernel) if kernel else base,
                   root / "images" / f"lv{i}.png")
        lines.append(f"lv{i}.png,{mos}")
    (root / "mos.csv").write_text("\n".join(lines) + "\n")


def write_paired_dataset(root, n=4):
    for i in range(n):
        clean = make_pattern(48, seed=80 + i)
        save_image(degrade(clean, seed=80 + i), root / "input" / f"p{i}.png")
        save_image(clean, root / "reference" / f"p{i}.png")


QA_CONFIG = """\
seed: 0
data:
  kind: mos
  train_fraction: 0.5
qa:
  iterations: 40
  batch_size: 3
  learning_rate: 0.02
  temperature: 0.05
  log_interval: 10
"""

UIE_CONFIG = """\
seed: 0
data:
  kind: paired
  train_fraction: 0.75
uie:
  epochs: 2
  batch_size: 2
  crop: 32
  checkpoint_interval: 2
  cr:
    z: 2
negatives:
  methods: [he, dcp]
"""


def test_full_workflow(tmp_path, capsys):
    mos_root = tmp_path / "mos_data"
    write_mos_dataset(mos_root)
    paired_root = tmp_path / "paired_data"
    write_paired_dataset(paired_root)
    qa_cfg = tmp_path / "qa.yaml"
    qa_cfg.write_text(QA_CONFIG)
    uie_cfg = tmp_path / "uie.yaml"
    uie_cfg.write_text(UIE_CONFIG)

    qa_out = tmp_path / "qa_out"
    assert run_cli(["train-qa", "--config", str(qa_cfg),
                    "--data", str(mos_root), "--out", str(qa_out)]) == 0
    ckpt = qa_out / "perception.ckpt"
    assert ckpt.exists()
    assert (qa_out / "qa_log.jsonl").exists()
    # 3 held-out images is enough for the correlation report
    eval_blob = json.loads((qa_out / "qa_eval.json").read_text())
    assert set(eval_blob) == {"plcc", "srocc", "n_test"}

    cache = tmp_path / "neg_cache"
    assert run_cli(["gen-negatives", "--config", str(uie_cfg),
                    "--data", str(paired_root), "--cache", str(cache)]) == 0
    assert sorted(p.name for p in cache.iterdir()) == ["dcp", "he"]

    uie_out = tmp_path / "uie_out"
    assert run_cli(["train-uie", "--config", str(uie_cfg),
                    "--data", str(paired_root), "--negatives", str(cache),
                    "--perception", str(ckpt), "--out", str(uie_out)]) == 0
    enhancer_ckpt = uie_out / "enhancer_final.ckpt"
    assert enhancer_ckpt.exists()
    assert (uie_out / "train_log.jsonl").exists()
    assert (uie_out / "run_record.json").exists()

    single = tmp_path / "single.png"
    assert run_cli(["enhance", "--input", str(paired_root / "input" / "p0.png"),
                    "--checkpoint", str(enhancer_ckpt), "--out", str(single)]) == 0
    assert single.exists()

    enhanced_dir = tmp_path / "enhanced"
    assert run_cli(["enhance", "--input", str(paired_root / "input"),
                    "--checkpoint", str(enhancer_ckpt), "--out", str(enhanced_dir)]) == 0
    assert sorted(p.stem for p in enhanced_dir.iterdir()) == ["p0", "p1", "p2", "p3"]

    report_csv = tmp_path / "scores.csv"
    assert run_cli(["evaluate", "--enhanced", str(enhanced_dir),
                    "--reference", str(paired_root / "reference"),
                    "--perception", str(ckpt), "--out", str(report_csv)]) == 0
    assert report_csv.exists()
    assert report_csv.with_suffix(".json").exists()
    printed = capsys.readouterr().out
    assert "psnr=" in printed and "clip_score=" in printed

    loss_png = tmp_path / "loss.png"
    grid_png = tmp_path / "grid.png"
    assert run_cli(["report", "--log", str(uie_out / "train_log.jsonl"),
                    "--out", str(loss_png),
                    "--grid", str(paired_root / "input"), str(enhanced_dir),
                    str(paired_root / "reference"),
                    "--grid-labels", "input", "enhanced", "reference",
                    "--grid-out", str(grid_png)]) == 0
    assert loss_png.exists() and grid_png.exists()

    # second train-uie run reuses the persisted manifest, so the split is frozen
    manifest = json.loads((paired_root / "manifest.json").read_text())
    assert len(manifest["split"]["train_ids"]) == 3


def test_version(capsys):
    assert run_cli(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_usage_errors_exit_1(capsys):
    assert run_cli([]) == 1
    assert run_cli(["no-such-command"]) == 1
    assert run_cli(["train-qa"]) == 1  # --out is required
    capsys.readouterr()


def test_config_errors_exit_1(tmp_path, capsys):
    assert run_cli(["report"]) == 1
    assert "nothing to do" in capsys.readouterr().err
    assert run_cli(["train-qa", "--out", str(tmp_path)]) == 1
    assert "paths.data" in capsys.readouterr().err


def test_data_errors_exit_2(tmp_path, capsys):
    assert run_cli(["enhance", "--input", str(tmp_path / "x.png"),
                    "--checkpoint", str(tmp_path / "none.ckpt"),
                    "--out", str(tmp_path / "y.png")]) == 2
    write_mos_dataset(tmp_path / "mos_data")
    # a MOS dataset cannot feed the paired trainer
    assert run_cli(["train-uie", "--data", str(tmp_path / "mos_data"),
                    "--out", str(tmp_path / "out")]) == 2
    capsys.readouterr()


def test_negative_count_must_match_z(tmp_path, capsys):
    write_paired_dataset(tmp_path / "paired_data", n=2)
    write_mos_dataset(tmp_path / "mos_data")
    qa_cfg = tmp_path / "qa.yaml"
    qa_cfg.write_text(QA_CONFIG.replace("iterations: 40", "iterations: 2"))
    assert run_cli(["train-qa", "--config", str(qa_cfg),
                    "--data", str(tmp_path / "mos_data"),
                    "--out", str(tmp_path / "qa_out")]) == 0
    cfg = tmp_path / "uie.yaml"
    cfg.write_text(UIE_CONFIG.replace("  methods: [he, dcp]", "  methods: [he]"))
    code = run_cli(["train-uie", "--config", str(cfg),
                    "--data", str(tmp_path / "paired_data"),
                    "--negatives", str(tmp_path / "cache"),
                    "--perception", str(tmp_path / "qa_out" / "perception.ckpt"),
                    "--out", str(tmp_path / "out")])
    assert code == 1
    assert "uie.cr.z" in capsys.readouterr().err
