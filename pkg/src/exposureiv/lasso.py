"""L1-penalized instrument selection with a plug-in penalty.

Minimizes ||y - X b||^2 + lambda * sum_j |b_j| by cyclic coordinate
descent on standardized columns, with the penalty level
lambda = 2 c sqrt(n) Phi^-1(1 - gamma / (2 p)) calibrated so that noise
columns are excluded with high probability. Columns selected here are
refit by OLS downstream; only the support matters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ConvergenceError


@dataclass(frozen=True)
class LassoConfig:
    """Penalty and solver settings.

    ``confidence_gamma`` of None applies the 0.1 / log(max(n, p)) default
    at fit time. ``lambda_override`` bypasses the plug-in penalty
    entirely (0 gives the unpenalized limit).
    """

    penalty_constant_c: float = 1.1
    confidence_gamma: float | None = None
    max_iter: int = 10000
    tol: float = 1e-7
    standardize: bool = True
    lambda_override: float | None = None

    def __post_init__(self):
        if self.penalty_constant_c < 1.0:
            raise ValueError("penalty constant c must be >= 1")
        if self.confidence_gamma is not None and not 0.0 < self.confidence_gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")


@dataclass
class LassoResult:
    """Solution of one Lasso fit on standardized data."""

    selected: list[str]
    selected_idx: list[int]
    coef: np.ndarray  # original-scale slopes (zero for unselected columns)
    coef_std: np.ndarray  # standardized-scale solution the KKT conditions refer to
    lambda_: float
    gamma: float
    n_sweeps: int
    objective_trace: list[float] = field(default_factory=list)
    column_means: np.ndarray | None = None
    column_scales: np.ndarray | None = None
    y_mean: float = 0.0
    y_scale: float = 1.0

    @property
    def empty(self) -> bool:
        """True when no column survived the penalty (caller decides what to do)."""
        return not self.selected_idx


def soft_threshold(z: float, gamma: float) -> float:
    """sign(z) * max(|z| - gamma, 0)."""
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


def plug_in_lambda(n: int, p: int, c: float = 1.1, gamma: float | None = None) -> float:
    """Penalty level 2 c sqrt(n) Phi^-1(1 - gamma / (2 p))."""
    if gamma is None:
        gamma = 0.1 / math.log(max(n, p))
    return 2.0 * c * math.sqrt(n) * float(stats.norm.ppf(1.0 - gamma / (2.0 * p)))


def lasso_select(
    y: np.ndarray,
    X: np.ndarray,
    cfg: LassoConfig = LassoConfig(),
    column_names: list[str] | None = None,
) -> LassoResult:
    """Select columns of ``X`` for ``y`` by penalized regression.

    ``y`` and ``X`` are expected to be within-transformed already; with
    ``cfg.standardize`` both are additionally centered and scaled to unit
    root-mean-square (the plug-in penalty is calibrated for unit-variance
    errors, so the outcome must be scaled along with the columns).
    Zero-variance columns can never be selected. The cyclic coordinate
    order follows the column order, which makes the solution
    deterministic (ties break toward earlier columns).
    """
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if n < 2:
        raise ValueError("need at least two observations")
    if len(y) != n:
        raise ValueError("y and X row counts differ")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ValueError("non-finite values in Lasso inputs")
    names = list(column_names) if column_names is not None else [f"x{j}" for j in range(p)]

    gamma = (
        cfg.confidence_gamma
        if cfg.confidence_gamma is not None
        else 0.1 / math.log(max(n, p))
    )
    lam = (
        cfg.lambda_override
        if cfg.lambda_override is not None
        else plug_in_lambda(n, p, cfg.penalty_constant_c, gamma)
    )

    if cfg.standardize:
        y_mean = float(np.mean(y))
        centered_y = y - y_mean
        y_scale = float(np.sqrt(np.mean(centered_y**2)))
        if y_scale == 0.0:
            y_scale = 1.0
        col_means = X.mean(axis=0)
        centered = X - col_means
        scales = np.sqrt(np.mean(centered**2, axis=0))
        safe = np.where(scales > 0, scales, 1.0)
        Xs = centered / safe
        Xs[:, scales == 0] = 0.0
        ys = centered_y / y_scale
    else:
        y_mean = 0.0
        y_scale = 1.0
        col_means = np.zeros(p)
        scales = np.ones(p)
        safe = scales
        Xs = X
        ys = y

    col_sumsq = np.einsum("ij,ij->j", Xs, Xs)
    beta = np.zeros(p)
    resid = ys.copy()
    thresh = lam / 2.0
    trace: list[float] = []
    for sweep in range(cfg.max_iter):
        max_change = 0.0
        for j in range(p):
            if col_sumsq[j] == 0.0:
                continue
            zj = Xs[:, j] @ resid + col_sumsq[j] * beta[j]
            new = soft_threshold(zj, thresh) / col_sumsq[j]
            change = new - beta[j]
            if change != 0.0:
                resid -= change * Xs[:, j]
                beta[j] = new
                max_change = max(max_change, abs(change))
        trace.append(float(resid @ resid + lam * np.sum(np.abs(beta))))
        if max_change < cfg.tol:
            idx = [int(j) for j in np.flatnonzero(beta)]
            coef = np.where(scales > 0, beta * y_scale / safe, 0.0)
            return LassoResult(
                selected=[names[j] for j in idx],
                selected_idx=idx,
                coef=coef,
                coef_std=beta,
                lambda_=float(lam),
                gamma=float(gamma),
                n_sweeps=sweep + 1,
                objective_trace=trace,
                column_means=col_means,
                column_scales=scales,
                y_mean=y_mean,
                y_scale=y_scale,
            )
    raise ConvergenceError(
        f"coordinate descent did not converge in {cfg.max_iter} sweeps", trace=trace
    )
