# -*- coding: utf-8 -*-
"""任务生成测试"""

import math

import numpy as np
import pytest

from modalmeta.config import DistConfig, Family, ModeSpec, three_mode_preset
from modalmeta.taskgen import (
    StreamPurpose,
    Task,
    TaskSamplingError,
    sample_dataset,
    sample_task,
    sample_task_batch,
    sample_task_in_mode,
    task_stream,
    true_value,
)


def test_same_seed_same_task():
    dist = DistConfig()
    first = sample_task(dist, task_stream(3, StreamPurpose.TRAIN, 8))
    second = sample_task(dist, task_stream(3, StreamPurpose.TRAIN, 8))
    assert first == second


def test_purposes_use_distinct_streams():
    a = task_stream(3, StreamPurpose.TRAIN, 0).random(4)
    b = task_stream(3, StreamPurpose.EVAL, 0).random(4)
    assert not np.array_equal(a, b)


def test_sinusoid_parameter_ranges():
    dist = DistConfig(modes=[ModeSpec(family=Family.SINUSOID)])
    rng = task_stream(0, StreamPurpose.TRAIN, 0)
    tasks = [sample_task(dist, rng) for _ in range(10000)]
    amplitudes = np.array([t.params["A"] for t in tasks])
    frequencies = np.array([t.params["w"] for t in tasks])
    phases = np.array([t.params["b"] for t in tasks])
    assert amplitudes.min() >= 0.1 and amplitudes.max() <= 5.0
    assert frequencies.min() >= 0.5 and frequencies.max() <= 2.0
    assert phases.min() >= 0.0 and phases.max() <= 2.0 * math.pi


def test_modes_drawn_uniformly():
    dist = DistConfig(modes=three_mode_preset())
    rng = task_stream(1, StreamPurpose.TRAIN, 0)
    counts = np.bincount([sample_task(dist, rng).mode_index for _ in range(30000)], minlength=3)
    np.testing.assert_allclose(counts / 30000, 1.0 / 3.0, atol=0.02)


def test_quadratic_sign_and_magnitude():
    dist = DistConfig(modes=[ModeSpec(family=Family.QUADRATIC)])
    rng = task_stream(2, StreamPurpose.TRAIN, 0)
    amplitudes = np.array([sample_task(dist, rng).params["A"] for _ in range(2000)])
    assert np.all(np.abs(amplitudes) >= 0.02) and np.all(np.abs(amplitudes) <= 0.15)
    assert np.any(amplitudes > 0) and np.any(amplitudes < 0)


@pytest.mark.parametrize(
    "family,params,x,expected",
    [
        (Family.SINUSOID, {"A": 1.0, "w": 1.0, "b": 0.0}, math.pi / 2, 1.0),
        (Family.LINEAR, {"A": 2.0, "b": 1.0}, 0.0, 1.0),
        (Family.QUADRATIC, {"A": 0.1, "c": 0.0, "b": 0.0}, 3.0, 0.9),
    ],
)
def test_true_value(family, params, x, expected):
    assert true_value(Task(0, family, params), x) == pytest.approx(expected)


def test_dataset_sizes():
    dist = DistConfig()
    task = sample_task(dist, task_stream(0, StreamPurpose.TRAIN, 0))
    data = sample_dataset(task, dist, task_stream(0, StreamPurpose.TRAIN, 1))
    assert data.support_x.shape == (5, 1) and data.support_y.shape == (5, 1)
    assert data.query_x.shape == (10, 1) and data.query_y.shape == (10, 1)
    assert np.all(data.support_x >= -5.0) and np.all(data.support_x <= 5.0)


def test_zero_noise_matches_true_value():
    dist = DistConfig(noise_sigma=0.0)
    rng = task_stream(0, StreamPurpose.TRAIN, 0)
    task = sample_task(dist, rng)
    data = sample_dataset(task, dist, rng)
    np.testing.assert_array_equal(data.support_y, true_value(task, data.support_x))
    np.testing.assert_array_equal(data.query_y, data.query_true)


def test_noise_standard_deviation():
    dist = DistConfig(K=1, L=100000)
    rng = task_stream(5, StreamPurpose.TRAIN, 0)
    task = sample_task(dist, rng)
    data = sample_dataset(task, dist, rng)
    residuals = data.query_y - data.query_true
    assert residuals.std() == pytest.approx(0.3, abs=0.01)


def test_batch_is_deterministic_and_counter_addressed():
    dist = DistConfig()
    batch = sample_task_batch(dist, 9, StreamPurpose.TRAIN, 10, 4)
    again = sample_task_batch(dist, 9, StreamPurpose.TRAIN, 12, 2)
    assert [t for t, _ in batch[2:]] == [t for t, _ in again]
    np.testing.assert_array_equal(batch[3][1].query_y, again[1][1].query_y)


def test_sample_in_mode():
    dist = DistConfig(modes=three_mode_preset())
    task = sample_task_in_mode(dist, 2, task_stream(0, StreamPurpose.CURVES, 2))
    assert task.mode_index == 2 and task.family is Family.QUADRATIC
    with pytest.raises(TaskSamplingError):
        sample_task_in_mode(dist, 3, task_stream(0, StreamPurpose.CURVES, 3))


def test_empty_modes_rejected():
    dist = DistConfig.model_construct(modes=[])
    with pytest.raises(TaskSamplingError):
        sample_task(dist, task_stream(0, StreamPurpose.TRAIN, 0))
