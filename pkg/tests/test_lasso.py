import numpy as np
import pytest

from exposureiv.errors import ConvergenceError
from exposureiv.lasso import LassoConfig, lasso_select, plug_in_lambda, soft_threshold


def orthonormal_design(rng, n, p):
    """Columns orthogonal with zero mean and unit root-mean-square."""
    raw = rng.normal(size=(n, p + 1))
    q, _ = np.linalg.qr(raw - raw.mean(axis=0))
    X = q[:, :p] - q[:, :p].mean(axis=0)
    X = X / np.sqrt(np.mean(X**2, axis=0))
    return X


def standardized(X, y):
    Xc = X - X.mean(axis=0)
    Xs = Xc / np.sqrt(np.mean(Xc**2, axis=0))
    yc = y - y.mean()
    ys = yc / np.sqrt(np.mean(yc**2))
    return Xs, ys


class TestSoftThreshold:
    def test_positive_shrink(self):
        assert soft_threshold(5.0, 2.0) == 3.0

    def test_inside_threshold_zero(self):
        assert soft_threshold(-1.0, 2.0) == 0.0

    def test_negative_shrink(self):
        assert soft_threshold(-5.0, 2.0) == -3.0


class TestPlugInLambda:
    def test_default_gamma(self):
        from scipy import stats

        n, p = 450, 112
        gamma = 0.1 / np.log(max(n, p))
        expect = 2 * 1.1 * np.sqrt(n) * stats.norm.ppf(1 - gamma / (2 * p))
        assert plug_in_lambda(n, p) == pytest.approx(expect, rel=1e-12)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            LassoConfig(penalty_constant_c=0.5)
        with pytest.raises(ValueError):
            LassoConfig(confidence_gamma=1.5)
        with pytest.raises(ValueError):
            LassoConfig(tol=0.0)


class TestLassoSelect:
    def test_zero_penalty_matches_ols(self):
        rng = np.random.default_rng(61)
        n = 120
        X = rng.normal(size=(n, 5))
        beta_true = np.array([1.0, -2.0, 0.5, 0.0, 3.0])
        y = X @ beta_true + 0.1 * rng.normal(size=n)
        cfg = LassoConfig(lambda_override=0.0, tol=1e-12)
        result = lasso_select(y, X, cfg)
        ols = np.linalg.lstsq(np.column_stack([np.ones(n), X]), y, rcond=None)[0][1:]
        np.testing.assert_allclose(result.coef, ols, atol=1e-6)

    def test_kkt_bound_gives_empty_selection(self):
        rng = np.random.default_rng(62)
        n = 100
        X = rng.normal(size=(n, 6))
        y = X[:, 0] + rng.normal(size=n)
        Xs, ys = standardized(X, y)
        bound = 2.0 * np.max(np.abs(Xs.T @ ys))
        result = lasso_select(y, X, LassoConfig(lambda_override=bound * (1 + 1e-12)))
        assert result.empty
        assert result.selected == []

    def test_orthonormal_closed_form(self):
        rng = np.random.default_rng(63)
        n, p = 150, 3
        X = orthonormal_design(rng, n, p)
        y = X @ np.array([2.0, -0.5, 0.05]) + 0.2 * rng.normal(size=n)
        cfg = LassoConfig()
        result = lasso_select(y, X, cfg)
        Xs, ys = standardized(X, y)
        lam = result.lambda_
        closed = np.array(
            [soft_threshold(float(Xs[:, j] @ ys) / n, lam / (2 * n)) for j in range(p)]
        )
        np.testing.assert_allclose(result.coef_std, closed, atol=1e-8)

    def test_kkt_conditions_at_solution(self):
        rng = np.random.default_rng(64)
        for trial in range(10):
            n, p = 80, 12
            X = rng.normal(size=(n, p))
            y = X[:, :3] @ np.array([1.5, -1.0, 0.8]) + rng.normal(size=n)
            result = lasso_select(y, X, LassoConfig(tol=1e-10))
            Xs, ys = standardized(X, y)
            resid = ys - Xs @ result.coef_std
            grad = -2.0 * Xs.T @ resid
            lam = result.lambda_
            for j in range(p):
                if result.coef_std[j] != 0.0:
                    assert abs(grad[j] + lam * np.sign(result.coef_std[j])) < 1e-5
                else:
                    assert abs(grad[j]) <= lam + 1e-5

    def test_shrinkage_monotone_on_orthonormal_design(self):
        rng = np.random.default_rng(65)
        n, p = 200, 8
        X = orthonormal_design(rng, n, p)
        y = X @ np.array([3.0, 2.0, 1.5, 1.0, 0.5, 0.25, 0.1, 0.0]) + 0.3 * rng.normal(size=n)
        lams = [400.0, 200.0, 100.0, 25.0, 5.0]
        prev = None
        for lam in lams:
            sel = set(lasso_select(y, X, LassoConfig(lambda_override=lam)).selected_idx)
            if prev is not None:
                assert prev <= sel  # larger penalty selects a subset
            prev = sel

    def test_deterministic_given_inputs(self):
        rng = np.random.default_rng(66)
        X = rng.normal(size=(90, 7))
        y = X[:, 1] - X[:, 4] + 0.5 * rng.normal(size=90)
        a = lasso_select(y, X, LassoConfig())
        b = lasso_select(y, X, LassoConfig())
        np.testing.assert_array_equal(a.coef, b.coef)
        assert a.selected == b.selected
        assert a.n_sweeps == b.n_sweeps

    def test_zero_variance_column_never_selected(self):
        rng = np.random.default_rng(67)
        X = rng.normal(size=(50, 4))
        X[:, 2] = 7.0
        y = X[:, 0] + 0.1 * rng.normal(size=50)
        result = lasso_select(y, X, LassoConfig(lambda_override=1.0))
        assert 2 not in result.selected_idx
        assert result.coef[2] == 0.0

    def test_convergence_budget(self):
        rng = np.random.default_rng(68)
        base = rng.normal(size=(60, 1))
        X = np.hstack([base + 0.01 * rng.normal(size=(60, 1)) for _ in range(6)])
        y = X @ np.ones(6) + 0.1 * rng.normal(size=60)
        with pytest.raises(ConvergenceError) as exc:
            lasso_select(y, X, LassoConfig(lambda_override=0.001, max_iter=2, tol=1e-14))
        assert exc.value.trace  # objective trace travels with the error

    def test_named_columns_reported(self):
        rng = np.random.default_rng(69)
        X = rng.normal(size=(120, 3))
        y = 2.0 * X[:, 1] + 0.05 * rng.normal(size=120)
        result = lasso_select(y, X, LassoConfig(), column_names=["a", "b", "c"])
        assert result.selected == ["b"]
