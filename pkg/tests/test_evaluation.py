# -*- coding: utf-8 -*-
"""评估测试"""

import numpy as np
import pytest

from modalmeta.config import DistConfig, ModulationKind
from modalmeta.evaluation import (
    EvalReport,
    ModelPredictor,
    ModulationMismatchError,
    comparison_table,
    evaluate_model,
    evaluate_predictor,
)
from modalmeta.meta import init_model
from modalmeta.taskgen import StreamPurpose, sample_task_batch, true_value


class PerfectPredictor:
    def sweep(self, task, data, x, steps):
        return [true_value(task, x) for _ in range(steps + 1)]


class ZeroPredictor:
    def sweep(self, task, data, x, steps):
        return [np.zeros_like(x) for _ in range(steps + 1)]


def test_perfect_predictor_on_noiseless_tasks():
    dist = DistConfig(noise_sigma=0.0)
    report = evaluate_predictor(PerfectPredictor(), dist, n_tasks=20, eval_steps=5, seed=3)
    assert report.mse_by_step == [0.0] * 6
    assert report.mse_clean_by_step == [0.0] * 6


def test_zero_predictor_matches_direct_recomputation():
    dist = DistConfig()
    report = evaluate_predictor(ZeroPredictor(), dist, n_tasks=30, eval_steps=2, seed=4)
    batch = sample_task_batch(dist, 4, StreamPurpose.EVAL, 0, 30)
    expected = np.mean([np.mean(data.query_y**2) for _, data in batch])
    expected_clean = np.mean([np.mean(data.query_true**2) for _, data in batch])
    assert report.mse_by_step == pytest.approx([expected] * 3, rel=1e-12)
    assert report.mse_clean_by_step == pytest.approx([expected_clean] * 3, rel=1e-12)


def test_per_mode_breakdown_covers_all_tasks():
    report = evaluate_predictor(ZeroPredictor(), DistConfig(), n_tasks=40, eval_steps=1, seed=5)
    assert sum(m.n_tasks for m in report.per_mode) == 40
    assert {m.family for m in report.per_mode} == {"sinusoid", "linear"}


def test_n_tasks_must_be_positive():
    with pytest.raises(ValueError):
        evaluate_predictor(ZeroPredictor(), DistConfig(), n_tasks=0, eval_steps=1, seed=0)


def test_fresh_model_report_shape(tiny_config):
    config = tiny_config()
    model = init_model(config)
    report = evaluate_model(model, config.distribution, 8, 5, 0.01, seed=1)
    assert len(report.mse_by_step) == 6
    assert all(v >= 0.0 for v in report.mse_by_step)
    assert report.post_modulation == report.mse_by_step[0]
    assert report.post_adaptation == report.mse_by_step[5]
    assert (report.trainer, report.modulation) == ("mumomaml", "film")


def test_zero_alpha_keeps_every_step_equal(tiny_config):
    config = tiny_config()
    report = evaluate_model(init_model(config), config.distribution, 5, 3, 0.0, seed=1)
    assert report.mse_by_step == [report.mse_by_step[0]] * 4


def test_modulation_mismatch(tiny_config):
    config = tiny_config()
    with pytest.raises(ModulationMismatchError):
        evaluate_model(init_model(config), config.distribution, 4, 1, 0.01, seed=0, kind=ModulationKind.SIGMOID)


def test_threads_do_not_change_report(tiny_config):
    config = tiny_config()
    model = init_model(config)
    a = evaluate_model(model, config.distribution, 6, 2, 0.01, seed=2, threads=1)
    b = evaluate_model(model, config.distribution, 6, 2, 0.01, seed=2, threads=3)
    assert a == b


def test_predictor_routes_by_mode(tiny_config):
    config = tiny_config("multi_maml", "none")
    model = init_model(config)
    predictor = ModelPredictor(model, 0.01)
    for task, data in sample_task_batch(config.distribution, 0, StreamPurpose.EVAL, 0, 6):
        _, path = predictor.trajectory(task, data, 0)
        np.testing.assert_array_equal(
            path[0]["block0.weight"].value, model.learners[task.mode_index]["block0.weight"].value
        )


def test_report_save_and_load(tmp_path):
    report = evaluate_predictor(ZeroPredictor(), DistConfig(), n_tasks=5, eval_steps=2, seed=6, trainer="maml")
    path = report.save(tmp_path / "report.json")
    assert EvalReport.load(path) == report


def test_comparison_table_columns():
    maml = evaluate_predictor(ZeroPredictor(), DistConfig(), n_tasks=5, eval_steps=5, seed=6, trainer="maml")
    table = comparison_table([maml])
    assert list(table.columns) == [
        "Method",
        "Modulation",
        "Post Modulation",
        "Post Adaptation",
        "Post Modulation (clean)",
        "Post Adaptation (clean)",
    ]
    assert table.loc[0, "Post Adaptation"] == maml.mse_by_step[5]
