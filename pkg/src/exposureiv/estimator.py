"""Post-Lasso two-stage least squares with cluster-robust inference.

Fixed effects are absorbed by within-transformation before anything is
penalized or fit, so effect dummies never enter a design matrix. Each
endogenous pollutant gets its own Lasso selection on its own maximal
sample; the joint second stage instruments with the union of selections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from .errors import (
    DegenerateCorrelation,
    EmptySelection,
    RankDeficient,
    UnderIdentified,
)
from .lasso import LassoConfig, LassoResult, lasso_select
from .panel import FixedEffectsPlan, PanelData, demean, group_labels

DEFAULT_CONTROLS = (
    ["prim_gdp_10k", "sec_gdp_10k", "hospital_beds_per_10k"]
    + [f"z_temp_{m:02d}" for m in range(1, 13)]
    + [f"z_rh_{m:02d}" for m in range(1, 13)]
)

ENDOGENOUS = ("so2_du", "pm25")


@dataclass
class FirstStageResult:
    """Diagnostics of one pollutant's first-stage regression."""

    endogenous_name: str
    selected_instruments: list[str]
    coefficients: dict[str, float]
    f_stat_excluded: float
    adj_r2: float
    n: int


@dataclass
class EstimationReport:
    """Everything one estimation run produces."""

    first_stages: dict[str, FirstStageResult]
    coef_names: list[str]
    coefficients: np.ndarray
    std_errors: np.ndarray
    n: int
    n_clusters: int
    plan: FixedEffectsPlan
    subsample: str = "full"
    lasso_selection: dict[str, list[str]] = field(default_factory=dict)

    def coefficient(self, name: str) -> tuple[float, float]:
        i = self.coef_names.index(name)
        return float(self.coefficients[i]), float(self.std_errors[i])

    def to_flat_dict(self) -> dict:
        out = {
            "n": self.n,
            "n_clusters": self.n_clusters,
            "subsample": self.subsample,
            "fixed_effects": "+".join(self.plan.effects),
            "cluster_by": self.plan.cluster_by,
        }
        for name, coef, se in zip(self.coef_names, self.coefficients, self.std_errors):
            out[f"coef.{name}"] = float(coef)
            out[f"se.{name}"] = float(se)
        for endog, fs in self.first_stages.items():
            out[f"first_stage.{endog}.n_selected"] = len(fs.selected_instruments)
            out[f"first_stage.{endog}.f_stat"] = fs.f_stat_excluded
            out[f"first_stage.{endog}.adj_r2"] = fs.adj_r2
            out[f"first_stage.{endog}.n"] = fs.n
            for inst in fs.selected_instruments:
                out[f"first_stage.{endog}.coef.{inst}"] = fs.coefficients[inst]
        return out

    def to_text(self) -> str:
        lines = [
            "Post-selection IV estimates",
            f"  subsample: {self.subsample}",
            f"  fixed effects: {' & '.join(self.plan.effects)}",
            f"  clustered by: {self.plan.cluster_by} ({self.n_clusters} clusters)",
            f"  sample size: {self.n}",
            "",
            f"  {'variable':<28}{'coef':>14}{'se':>14}",
        ]
        for name, coef, se in zip(self.coef_names, self.coefficients, self.std_errors):
            lines.append(f"  {name:<28}{coef:>14.6g}{se:>14.6g}")
        for endog, fs in self.first_stages.items():
            lines += [
                "",
                f"First stage: {endog}",
                f"  instruments selected: {len(fs.selected_instruments)}",
                f"  excluded-instrument F: {fs.f_stat_excluded:.4g}",
                f"  adjusted R-squared: {fs.adj_r2:.4g}",
                f"  sample size: {fs.n}",
            ]
            for inst in fs.selected_instruments:
                lines.append(f"    {inst:<40}{fs.coefficients[inst]:>14.6g}")
        return "\n".join(lines) + "\n"


def _solve_ols(X: np.ndarray, y: np.ndarray):
    """Least squares with an explicit rank guard."""
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        # pinpoint offending columns via QR pivoting on the gram matrix
        bad = _deficient_columns(X)
        raise RankDeficient(
            f"design matrix rank {rank} < {X.shape[1]} columns", columns=bad
        )
    return beta


def _deficient_columns(X: np.ndarray) -> list[int]:
    _, r = np.linalg.qr(X)
    diag = np.abs(np.diag(r))
    cutoff = max(X.shape) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    return [int(j) for j in np.flatnonzero(diag <= cutoff)]


def cluster_robust_vcov(
    X: np.ndarray, residuals: np.ndarray, clusters: np.ndarray, df_absorbed: int = 0
) -> np.ndarray:
    """CR1 sandwich covariance for OLS coefficients.

    (X'X)^-1 (sum_g X_g' e_g e_g' X_g) (X'X)^-1 scaled by
    G/(G-1) * (n-1)/(n-k). With every observation its own cluster this
    reduces to HC1. The result is symmetrized to kill rounding skew.

    ``df_absorbed`` counts parameters removed before ``X`` was formed
    (within-transformed fixed effects); they join k in the small-sample
    scaling so absorbed effects are not treated as free data.
    """
    X = np.asarray(X, dtype=float)
    e = np.asarray(residuals, dtype=float).ravel()
    n, k = X.shape
    codes, uniques = pd.factorize(np.asarray(clusters))
    G = len(uniques)
    if G < 2:
        raise ValueError("need at least two clusters")
    xtx = X.T @ X
    try:
        bread = np.linalg.inv(xtx)
    except np.linalg.LinAlgError as err:
        raise RankDeficient("singular X'X in sandwich", columns=_deficient_columns(X)) from err
    xe = X * e[:, None]
    scores = np.zeros((G, k))
    np.add.at(scores, codes, xe)
    meat = scores.T @ scores
    df = n - k - df_absorbed
    if df <= 0:
        raise ValueError(f"no residual degrees of freedom (n={n}, k={k}+{df_absorbed})")
    scale = (G / (G - 1.0)) * ((n - 1.0) / df)
    v = scale * bread @ meat @ bread
    return (v + v.T) / 2.0


def absorbed_dof(labels: dict[str, np.ndarray]) -> int:
    """Parameters a within-transformation absorbs: sum of (groups - 1) + 1."""
    return sum(len(pd.factorize(v)[1]) - 1 for v in labels.values()) + 1


def two_stage_least_squares(
    y: np.ndarray,
    endog: np.ndarray,
    exog: np.ndarray | None,
    instruments: np.ndarray,
    clusters: np.ndarray,
    df_absorbed: int = 0,
):
    """2SLS on already-transformed data.

    Stage one projects each endogenous column on [instruments, exog];
    stage two regresses y on [fitted endogenous, exog]. Residuals for the
    covariance are recomputed with the actual endogenous values, then fed
    to the CR1 sandwich with the projected regressors.

    Returns (beta, vcov, fitted_endog, residuals).
    """
    y = np.asarray(y, dtype=float).ravel()
    endog = np.atleast_2d(np.asarray(endog, dtype=float))
    if endog.shape[0] != len(y):
        endog = endog.T
    exog = None if exog is None or exog.size == 0 else np.asarray(exog, dtype=float)
    Z = (
        np.column_stack([instruments, exog])
        if exog is not None
        else np.asarray(instruments, dtype=float)
    )
    pi = _solve_ols(Z, endog)
    fitted = Z @ pi
    W_hat = np.column_stack([fitted, exog]) if exog is not None else fitted
    W_act = np.column_stack([endog, exog]) if exog is not None else endog
    beta = _solve_ols(W_hat, y)
    residuals = y - W_act @ beta
    vcov = cluster_robust_vcov(W_hat, residuals, clusters, df_absorbed=df_absorbed)
    return beta, vcov, fitted, residuals


def first_stage_diagnostics(
    endog_dm: np.ndarray,
    Z_sel: np.ndarray,
    controls_dm: np.ndarray | None,
    clusters: np.ndarray,
    name: str,
    selected_names: list[str],
    df_absorbed: int = 0,
) -> FirstStageResult:
    """OLS of a demeaned endogenous variable on selected instruments + controls.

    The excluded-instrument F is the cluster-robust Wald statistic on the
    instrument block divided by the number of instruments.
    """
    X = np.column_stack([Z_sel, controls_dm]) if controls_dm is not None else Z_sel
    n, k = X.shape
    beta = _solve_ols(X, endog_dm)
    resid = endog_dm - X @ beta
    vcov = cluster_robust_vcov(X, resid, clusters, df_absorbed=df_absorbed)
    q = Z_sel.shape[1]
    b_inst = beta[:q]
    v_inst = vcov[:q, :q]
    # pinv handles the many-instruments case where the cluster-score rank
    # caps the covariance rank below q
    wald = float(b_inst @ np.linalg.pinv(v_inst) @ b_inst)
    tss = float(endog_dm @ endog_dm)
    rss = float(resid @ resid)
    df = n - k - df_absorbed
    adj_r2 = 1.0 - (rss / df) / (tss / (n - 1)) if df > 0 and tss > 0 else float("nan")
    return FirstStageResult(
        endogenous_name=name,
        selected_instruments=list(selected_names),
        coefficients={nm: float(b) for nm, b in zip(selected_names, beta[:q])},
        f_stat_excluded=wald / q,
        adj_r2=adj_r2,
        n=n,
    )


def _partial_out(target: np.ndarray, controls: np.ndarray | None) -> np.ndarray:
    if controls is None or controls.size == 0:
        return target
    beta = np.linalg.lstsq(controls, target, rcond=None)[0]
    return target - controls @ beta


def post_lasso_2sls(
    panel: PanelData,
    endogenous: tuple[str, ...] = ENDOGENOUS,
    controls: list[str] | None = None,
    plan: FixedEffectsPlan = FixedEffectsPlan(),
    cfg: LassoConfig = LassoConfig(),
    selection: str = "lasso",
    candidate_columns: list[str] | None = None,
    subsample_label: str = "full",
) -> EstimationReport:
    """Full estimation: demean, select instruments, run 2SLS, report.

    ``selection`` is "lasso" for penalized selection per endogenous
    variable or "all" to instrument with every candidate column.
    Selection for each pollutant runs on the rows where that pollutant is
    observed; the joint second stage uses rows where every endogenous
    variable is observed and instruments with the union of selections.
    """
    controls = list(DEFAULT_CONTROLS) if controls is None else list(controls)
    rows = prepare_estimation_frame(panel.rows)
    inst = panel.instruments
    cand_cols = list(candidate_columns) if candidate_columns is not None else list(inst.columns)
    cand_idx = [inst.columns.index(c) for c in cand_cols]

    selections: dict[str, list[str]] = {}
    first_stages: dict[str, FirstStageResult] = {}
    for endog in endogenous:
        mask = rows[endog].notna().to_numpy()
        sub = rows.loc[mask]
        if sub.empty:
            raise UnderIdentified(endog)
        labels = group_labels(sub, plan.effects)
        y_dm = demean(sub[endog].to_numpy(dtype=float), plan, labels)
        C_dm = demean(sub[controls].to_numpy(dtype=float), plan, labels)
        Z_dm = demean(inst.values[mask][:, cand_idx], plan, labels)
        clusters = _cluster_labels(sub, plan)

        if selection == "all":
            selected = _independent_subset(Z_dm, cand_cols, base=C_dm)
        elif selection == "lasso":
            result = lasso_select(
                _partial_out(y_dm, C_dm), _partial_out(Z_dm, C_dm), cfg, column_names=cand_cols
            )
            if result.empty:
                raise UnderIdentified(endog) from EmptySelection(endog)
            sel_positions = [cand_cols.index(c) for c in result.selected]
            selected = _independent_subset(Z_dm[:, sel_positions], result.selected, base=C_dm)
            if not selected:
                raise UnderIdentified(endog)
        else:
            raise ValueError(f"unknown selection mode {selection!r}")
        selections[endog] = selected
        sel_idx = [cand_cols.index(c) for c in selected]
        first_stages[endog] = first_stage_diagnostics(
            y_dm, Z_dm[:, sel_idx], C_dm, clusters, endog, selected,
            df_absorbed=absorbed_dof(labels),
        )

    union: list[str] = []
    for endog in endogenous:
        for c in selections[endog]:
            if c not in union:
                union.append(c)

    joint_mask = rows[list(endogenous)].notna().all(axis=1).to_numpy()
    joint = rows.loc[joint_mask]
    labels = group_labels(joint, plan.effects)
    y_dm = demean(joint["mortality_per_1000"].to_numpy(dtype=float), plan, labels)
    E_dm = demean(joint[list(endogenous)].to_numpy(dtype=float), plan, labels)
    C_dm = demean(joint[controls].to_numpy(dtype=float), plan, labels)
    union_idx = [cand_cols.index(c) for c in union]
    Z_dm = demean(inst.values[joint_mask][:, cand_idx][:, union_idx], plan, labels)
    # the joint sample can differ from the selection samples, so re-check
    # that the union stays independent of the controls here
    union_keep = _independent_subset(Z_dm, union, base=C_dm)
    if len(union_keep) < len(union):
        keep_idx = [union.index(c) for c in union_keep]
        Z_dm = Z_dm[:, keep_idx]
        union = union_keep
    clusters = _cluster_labels(joint, plan)

    beta, vcov, _, _ = two_stage_least_squares(
        y_dm, E_dm, C_dm, Z_dm, clusters, df_absorbed=absorbed_dof(labels)
    )
    se = np.sqrt(np.diag(vcov))
    return EstimationReport(
        first_stages=first_stages,
        coef_names=list(endogenous) + controls,
        coefficients=beta,
        std_errors=se,
        n=len(joint),
        n_clusters=int(pd.factorize(clusters)[1].size),
        plan=plan,
        subsample=subsample_label,
        lasso_selection=selections,
    )


def naive_fixed_effects(
    panel: PanelData,
    endogenous: tuple[str, ...] = ENDOGENOUS,
    controls: list[str] | None = None,
    plan: FixedEffectsPlan = FixedEffectsPlan(),
    subsample_label: str = "full",
) -> EstimationReport:
    """Baseline within-OLS of mortality on pollutants and controls (no IV)."""
    controls = list(DEFAULT_CONTROLS) if controls is None else list(controls)
    rows = prepare_estimation_frame(panel.rows)
    mask = rows[list(endogenous)].notna().all(axis=1).to_numpy()
    sub = rows.loc[mask]
    labels = group_labels(sub, plan.effects)
    y_dm = demean(sub["mortality_per_1000"].to_numpy(dtype=float), plan, labels)
    X_dm = demean(sub[list(endogenous) + controls].to_numpy(dtype=float), plan, labels)
    clusters = _cluster_labels(sub, plan)
    beta = _solve_ols(X_dm, y_dm)
    resid = y_dm - X_dm @ beta
    vcov = cluster_robust_vcov(X_dm, resid, clusters, df_absorbed=absorbed_dof(labels))
    return EstimationReport(
        first_stages={},
        coef_names=list(endogenous) + controls,
        coefficients=beta,
        std_errors=np.sqrt(np.diag(vcov)),
        n=len(sub),
        n_clusters=int(pd.factorize(clusters)[1].size),
        plan=plan,
        subsample=subsample_label,
    )


def prepare_estimation_frame(rows: pd.DataFrame) -> pd.DataFrame:
    """Add the 10,000-CNY GDP regressors used at estimation time."""
    out = rows.copy()
    out["prim_gdp_10k"] = out["prim_gdp_pc"] / 10_000.0
    out["sec_gdp_10k"] = out["sec_gdp_pc"] / 10_000.0
    return out


def _cluster_labels(rows: pd.DataFrame, plan: FixedEffectsPlan) -> np.ndarray:
    if plan.cluster_by == "province":
        return rows["province_id"].to_numpy(dtype=object)
    if plan.cluster_by in rows.columns:
        return rows[plan.cluster_by].to_numpy(dtype=object)
    raise ValueError(f"cluster variable {plan.cluster_by!r} not in panel")


def _independent_subset(
    Z: np.ndarray,
    names: list[str],
    base: np.ndarray | None = None,
    rel_tol: float = 1e-8,
) -> list[str]:
    """Greedy maximal linearly independent column subset, in column order.

    The candidate grid contains exact dependencies by construction (a full
    band equals the sum of its sub-bands), so OLS refits need a reduced
    set. ``base`` columns (the controls) seed the basis, so instruments
    that add nothing beyond the controls are dropped too. Earlier columns
    win ties, keeping the reduction deterministic.
    """
    n = Z.shape[0]
    basis = np.empty((n, 0))
    if base is not None and base.size:
        for j in range(base.shape[1]):
            col = base[:, j]
            if basis.shape[1]:
                col = col - basis @ (basis.T @ col)
            nrm = np.linalg.norm(col)
            if nrm > 0:
                basis = np.column_stack([basis, col / nrm])
    keep: list[str] = []
    for j, nm in enumerate(names):
        col = Z[:, j]
        norm = np.linalg.norm(col)
        if norm == 0.0:
            continue
        if basis.shape[1]:
            resid = col - basis @ (basis.T @ col)
            # second pass guards against loss of orthogonality
            resid = resid - basis @ (basis.T @ resid)
        else:
            resid = col
        rnorm = np.linalg.norm(resid)
        if rnorm > rel_tol * norm:
            basis = np.column_stack([basis, resid / rnorm])
            keep.append(nm)
    return keep


def pearson_with_p(x: np.ndarray, y: np.ndarray) -> tuple[float, float, int]:
    """Pearson correlation with a two-sided t-distributed p-value.

    Pairs with a missing side are dropped; fewer than three complete
    pairs, or a zero-variance series, raise ``DegenerateCorrelation``.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    ok = np.isfinite(x) & np.isfinite(y)
    x, y = x[ok], y[ok]
    n = len(x)
    if n < 3:
        raise DegenerateCorrelation(f"need >= 3 complete pairs, got {n}")
    sx, sy = np.std(x), np.std(y)
    if sx == 0 or sy == 0:
        raise DegenerateCorrelation("zero variance in one series")
    r = float(np.corrcoef(x, y)[0, 1])
    if abs(r) >= 1.0:
        return math.copysign(1.0, r), 0.0, n
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    p = 2.0 * float(stats.t.sf(abs(t), n - 2))
    return r, p, n


def balance_test(instruments: pd.DataFrame, growth: pd.DataFrame) -> pd.DataFrame:
    """Correlations of each instrument column with each growth-rate column.

    Returns one row per (instrument, growth) pair with the Pearson r, the
    two-sided p-value against zero correlation, and the pair count.
    """
    records = []
    for inst_col in instruments.columns:
        for growth_col in growth.columns:
            r, p, n = pearson_with_p(
                instruments[inst_col].to_numpy(dtype=float),
                growth[growth_col].to_numpy(dtype=float),
            )
            records.append(
                {"instrument": inst_col, "growth_rate": growth_col, "r": r, "p_value": p, "n": n}
            )
    return pd.DataFrame.from_records(records)


def lives_saved(
    theta_so2: float,
    theta_pm: float,
    delta_so2: float,
    delta_pm: float,
    population_u5: float,
) -> float:
    """Deaths averted by concentration declines over a population.

    The thetas are per-1,000 mortality effects per concentration unit;
    the deltas are the concentration declines. Output is in persons.
    """
    if population_u5 <= 0:
        raise ValueError("population must be positive")
    for v in (theta_so2, theta_pm, delta_so2, delta_pm):
        if not math.isfinite(v):
            raise ValueError("non-finite input")
    return (theta_so2 * delta_so2 + theta_pm * delta_pm) / 1000.0 * population_u5
