# -*- coding: utf-8 -*-
"""命令行测试"""

import json

import pandas as pd
import pytest

from modalmeta import cli
from modalmeta.checkpoint import load_checkpoint
from modalmeta.diffcore import finite_difference_check
from modalmeta.evaluation import EvalReport
from modalmeta.gradcheck import SuiteResult, composite_loss, composite_params, corrupted_gradient


@pytest.fixture
def trained_dir(tmp_path, tiny_data, config_file):
    """用 tiny 配置训练两次迭代，返回 (输出目录, 配置路径)"""
    path = config_file(tiny_data(iterations=2))
    out = tmp_path / "run"
    assert cli.run_cli(["train", "--config", path, "--out", str(out)]) == 0
    return out, path


def test_missing_config_exits_2(tmp_path, capsys):
    missing = tmp_path / "missing.json"
    assert cli.run_cli(["train", "--config", str(missing)]) == 2
    assert "missing.json" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [["frobnicate"], ["train", "--no-such-flag"], []])
def test_usage_errors_exit_2(argv):
    assert cli.run_cli(argv) == 2


def test_seed_out_of_range(tmp_path):
    assert cli.run_cli(["gradcheck", "--seed", "-1", "--out", str(tmp_path)]) == 2


def test_train_writes_outputs(trained_dir):
    out, _ = trained_dir
    checkpoint = load_checkpoint(out / cli.CHECKPOINT_FILE)
    assert checkpoint.iteration == 2
    log = pd.read_csv(out / cli.TRAIN_LOG_FILE, float_precision="round_trip")
    assert list(log.columns) == ["iteration", "mean_loss", "wall_time"]
    assert len(log) == 2


def test_train_resume(trained_dir):
    out, path = trained_dir
    resumed = out / "resumed"
    code = cli.run_cli(
        ["train", "--config", path, "--resume", str(out / cli.CHECKPOINT_FILE), "--out", str(resumed)]
    )
    assert code == 0
    assert load_checkpoint(resumed / cli.CHECKPOINT_FILE).iteration == 4


def test_resume_with_other_trainer_rejected(trained_dir, tiny_data, config_file):
    out, _ = trained_dir
    other = config_file(tiny_data("maml", "none"), name="maml.json")
    code = cli.run_cli(["train", "--config", other, "--resume", str(out / cli.CHECKPOINT_FILE), "--out", str(out)])
    assert code == 2


def test_eval_on_fresh_checkpoint(tmp_path, tiny_data, config_file, capsys):
    path = config_file(tiny_data(iterations=0))
    out = tmp_path / "fresh"
    assert cli.run_cli(["train", "--config", path, "--out", str(out)]) == 0
    code = cli.run_cli(["eval", "--checkpoint", str(out / cli.CHECKPOINT_FILE), "--tasks", "5", "--out", str(out)])
    assert code == 0
    printed = capsys.readouterr().out
    assert "Post Modulation" in printed and "Post Adaptation" in printed
    report = EvalReport.load(out / cli.EVAL_REPORT_FILE)
    assert report.n_tasks == 5
    assert len(report.mse_by_step) == 6


def test_eval_modulation_mismatch(trained_dir, tiny_data, config_file):
    out, _ = trained_dir
    sigmoid = config_file(tiny_data("mumomaml", "sigmoid"), name="sigmoid.json")
    code = cli.run_cli(
        ["eval", "--config", sigmoid, "--checkpoint", str(out / cli.CHECKPOINT_FILE), "--tasks", "3", "--out", str(out)]
    )
    assert code == 1


def test_eval_missing_checkpoint(tmp_path):
    assert cli.run_cli(["eval", "--checkpoint", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 1


def test_embed(trained_dir, capsys):
    out, _ = trained_dir
    code = cli.run_cli(["embed", "--checkpoint", str(out / cli.CHECKPOINT_FILE), "--tasks", "40", "--out", str(out)])
    assert code == 0
    assert len(pd.read_csv(out / cli.EMBEDDINGS_FILE, float_precision="round_trip")) == 40
    assert list(pd.read_csv(out / cli.PCA_FILE, float_precision="round_trip").columns) == ["mode_index", "pc1", "pc2"]
    assert "纯度" in capsys.readouterr().out


def test_embed_requires_every_mode(trained_dir, tiny_data, config_file, capsys):
    out, _ = trained_dir
    data = tiny_data()
    data["distribution"]["modes"] = [{"family": "sinusoid"}, {"family": "linear"}, {"family": "quadratic"}]
    path = config_file(data, name="three.json")
    argv = ["embed", "--checkpoint", str(out / cli.CHECKPOINT_FILE), "--config", path, "--tasks", "2", "--out", str(out)]
    assert cli.run_cli(argv) == 1
    assert "缺少模态" in capsys.readouterr().out


def test_curves_with_prior(trained_dir):
    out, _ = trained_dir
    code = cli.run_cli(
        ["curves", "--checkpoint", str(out / cli.CHECKPOINT_FILE), "--mode", "1", "--prior", "--out", str(out)]
    )
    assert code == 0
    curves = pd.read_csv(out / cli.CURVES_FILE, float_precision="round_trip")
    assert len(curves.columns) == 2 + 6 + 1
    assert len(pd.read_csv(out / cli.SUPPORT_FILE, float_precision="round_trip")) == 5


def test_curves_bad_mode(trained_dir):
    out, _ = trained_dir
    assert cli.run_cli(["curves", "--checkpoint", str(out / cli.CHECKPOINT_FILE), "--mode", "7", "--out", str(out)]) == 1


def test_compare(tmp_path, capsys):
    paths = []
    for trainer, value in (("maml", 1.5), ("mumomaml", 0.5)):
        report = EvalReport(
            trainer=trainer,
            modulation="none" if trainer == "maml" else "film",
            n_tasks=10,
            eval_steps=5,
            mse_by_step=[value] * 6,
            mse_clean_by_step=[value] * 6,
        )
        paths.append(str(report.save(tmp_path / f"{trainer}.json")))
    assert cli.run_cli(["compare", *paths]) == 0
    printed = capsys.readouterr().out
    assert "maml" in printed and "mumomaml" in printed


class TestGradcheck:
    @pytest.fixture(autouse=True)
    def quick_suites(self, monkeypatch):
        def quick(seed=0, corrupt=1.0, step=1e-5):
            report = finite_difference_check(
                composite_loss, composite_params(seed), step, 1e-6, corrupted_gradient(corrupt)
            )
            return [SuiteResult("diffcore.first_order", report)]

        monkeypatch.setattr(cli, "run_suites", quick)

    def test_passes(self, capsys):
        assert cli.run_cli(["gradcheck"]) == 0
        assert "✓" in capsys.readouterr().out

    def test_corrupted_gradient_exits_1(self, capsys):
        assert cli.run_cli(["gradcheck", "--corrupt-gradient", "1.01"]) == 1
        assert "✗" in capsys.readouterr().out


def test_config_snapshot_in_checkpoint(trained_dir):
    out, path = trained_dir
    snapshot = load_checkpoint(out / cli.CHECKPOINT_FILE).config
    with open(path, encoding="utf-8") as f:
        written = json.load(f)
    assert snapshot["meta"]["meta_batch"] == written["meta"]["meta_batch"]
    assert snapshot["network"]["H"] == 4
