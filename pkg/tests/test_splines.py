"""Thin plate regression spline basis: reproduction, invariance, errors."""

import numpy as np
import pytest

from openscr.errors import ValidationError
from openscr.splines import tprs_basis


def lstsq_fit(X, y):
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return X @ coef


class TestColumnCounts:
    def test_df_equals_requested(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 10, size=25)
        for df in (2, 3, 5, 9):
            basis = tprs_basis(x, df)
            assert basis.matrix.shape == (25, df)
            assert basis.df == df
        pts = rng.uniform(0, 10, size=(30, 2))
        for df in (3, 4, 8, 15):
            basis = tprs_basis(pts, df, variables=("x", "y"))
            assert basis.matrix.shape == (30, df)

    def test_df_two_is_constant_plus_linear(self):
        x = np.linspace(0, 1, 7)
        basis = tprs_basis(x, 2)
        assert basis.matrix.shape == (7, 2)
        assert np.allclose(basis.matrix[:, 0], 1.0)
        # second column is an affine image of x
        z = basis.matrix[:, 1]
        fit = lstsq_fit(np.column_stack([np.ones(7), x]), z)
        assert np.allclose(fit, z, atol=1e-12)

    def test_df_below_null_space_rejected(self):
        with pytest.raises(ValidationError, match="null-space"):
            tprs_basis(np.linspace(0, 1, 5), 1)
        with pytest.raises(ValidationError, match="null-space"):
            tprs_basis(np.random.default_rng(1).uniform(size=(6, 2)), 2,
                       variables=("x", "y"))

    def test_duplicate_points_rejected(self):
        x = np.array([0.0, 1.0, 1.0, 2.0])
        with pytest.raises(ValidationError, match="exceeds|rank-deficient"):
            tprs_basis(x, 4)


class TestPolynomialReproduction:
    def test_line_reproduced_exactly_any_df(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-3, 5, size=20)
        y = 2.0 * x + 1.0
        for df in (2, 4, 8):
            basis = tprs_basis(x, df)
            resid = y - lstsq_fit(basis.matrix, y)
            assert np.max(np.abs(resid)) < 1e-8

    def test_plane_recovered_exactly(self):
        rng = np.random.default_rng(3)
        pts = rng.uniform(0, 4, size=(40, 2))
        y = 0.7 + 1.3 * pts[:, 0] - 2.1 * pts[:, 1]
        for df in (3, 6, 12):
            basis = tprs_basis(pts, df, variables=("x", "y"))
            resid = y - lstsq_fit(basis.matrix, y)
            assert np.max(np.abs(resid)) < 1e-8


class TestRotationInvariance:
    def test_fitted_values_invariant_to_rigid_rotation(self):
        rng = np.random.default_rng(4)
        pts = rng.uniform(-2, 2, size=(35, 2))
        y = np.sin(pts[:, 0]) + 0.5 * np.cos(2 * pts[:, 1]) + rng.normal(0, 0.1, 35)
        theta = 0.7
        rot = np.array([[np.cos(theta), -np.sin(theta)],
                        [np.sin(theta), np.cos(theta)]])
        for df in (5, 10, 20):
            fit_a = lstsq_fit(tprs_basis(pts, df, variables=("x", "y")).matrix, y)
            fit_b = lstsq_fit(tprs_basis(pts @ rot.T, df, variables=("x", "y")).matrix, y)
            assert np.max(np.abs(fit_a - fit_b)) < 1e-8

    def test_fitted_values_invariant_to_translation(self):
        rng = np.random.default_rng(5)
        pts = rng.uniform(0, 3, size=(30, 2))
        y = rng.normal(size=30)
        fit_a = lstsq_fit(tprs_basis(pts, 9, variables=("x", "y")).matrix, y)
        fit_b = lstsq_fit(tprs_basis(pts + [100.0, -40.0], 9, variables=("x", "y")).matrix, y)
        assert np.max(np.abs(fit_a - fit_b)) < 1e-8
