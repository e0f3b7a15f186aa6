# -*- coding: utf-8 -*-
"""PCA 与质心纯度测试"""

import numpy as np
import pytest

from modalmeta.embedding import centroid_purity, pca_project


def anisotropic(seed: int = 0, n: int = 300) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, 5)) * np.array([5.0, 3.0, 1.0, 0.5, 0.2]) + 2.0


class TestPca:
    def test_points_on_a_line(self):
        rng = np.random.default_rng(1)
        direction = np.array([1.0, -2.0, 0.5, 3.0, 1.0])
        data = rng.uniform(-3.0, 3.0, size=(50, 1)) * direction + np.array([1.0, 2.0, 3.0, 4.0, 5.0])
        result = pca_project(data)
        assert np.abs(result.coords[:, 1]).max() <= 1e-9

    def test_components_orthonormal(self):
        result = pca_project(anisotropic())
        np.testing.assert_allclose(result.components @ result.components.T, np.eye(2), atol=1e-9)

    def test_variance_ordering(self):
        result = pca_project(anisotropic())
        assert result.variances[0] >= result.variances[1]

    def test_matches_eigendecomposition(self):
        data = anisotropic(2)
        result = pca_project(data)
        centered = data - data.mean(axis=0)
        _, vectors = np.linalg.eigh(centered.T @ centered / (len(data) - 1))
        for k, column in enumerate((-1, -2)):
            expected = vectors[:, column]
            expected = expected if expected[np.argmax(np.abs(expected))] > 0 else -expected
            np.testing.assert_allclose(result.components[k], expected, atol=1e-6)

    def test_sign_convention(self):
        result = pca_project(anisotropic(3))
        for component in result.components:
            assert component[np.argmax(np.abs(component))] > 0

    def test_zero_variance_is_flagged(self):
        result = pca_project(np.ones((10, 4)))
        assert result.degenerate
        np.testing.assert_array_equal(result.coords, np.zeros((10, 2)))

    def test_identical_rows_with_inexact_mean_are_flagged(self):
        result = pca_project(np.full((3, 4), 0.1))
        assert result.degenerate
        np.testing.assert_array_equal(result.coords, np.zeros((3, 2)))
        np.testing.assert_array_equal(result.components, np.zeros((2, 4)))

    def test_needs_two_rows(self):
        with pytest.raises(ValueError):
            pca_project(np.ones((1, 4)))


class TestPurity:
    def test_separated_clusters(self):
        rng = np.random.default_rng(0)
        a = rng.normal(0.0, 0.1, size=(20, 3))
        b = rng.normal(10.0, 0.1, size=(20, 3))
        labels = [0] * 20 + [1] * 20
        assert centroid_purity(np.vstack([a, b]), labels) == 1.0

    def test_identical_rows_tie_to_lowest_mode(self):
        assert centroid_purity(np.ones((10, 3)), [0] * 5 + [1] * 5) == 0.5

    def test_missing_mode(self):
        with pytest.raises(ValueError, match="缺少模态"):
            centroid_purity(np.zeros((4, 2)), [0, 0, 2, 2], n_modes=3)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            centroid_purity(np.zeros((4, 2)), [0, 1])
