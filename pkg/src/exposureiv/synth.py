"""Synthetic data generator with known coefficients, plus a Monte Carlo harness.

The generator plants a linear two-equation system: pollutant levels
respond to retired-capacity exposures (built by the real exposure code on
synthetic plants and winds) and mortality responds to the pollutants. A
smooth county-year "industrialization" factor enters both equations, so
within-OLS is inconsistent while the exposures stay valid instruments.

All randomness flows from one seeded PCG64 generator; identical configs
give bit-identical bundles.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import datetime as _dt
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from . import estimator as est
from . import met, raster
from .errors import HarnessError
from .exposure import InstrumentMatrix, PlantUnit, build_instrument_matrix
from .geo import CountyGeometry, GeoPoint, Polygon
from .lasso import LassoConfig
from .panel import REGIONS, POLICY_ZONES, FixedEffectsPlan, PanelData, assemble, demean

RNG_ALGORITHM = "PCG64"

#: First panel year of the synthetic window.
START_YEAR = 2001
#: First year of the historical weather span used for baselines.
HISTORY_START = 1950
HISTORY_END = 2000

#: Years the panel must span before the first pollutant series starts
#: late (mimicking a satellite record that begins mid-window).
SO2_LATE_START_MIN_SPAN = 8
SO2_SKIP_YEARS = 4

#: Replications below this report no coverage (flagged insufficient).
MIN_REPS_FOR_COVERAGE = 10

ESTIMATOR_NAMES = ("naive_fe", "iv_all", "iv_lasso")

# Structural constants of the planted system. The config exposes the
# levers the harness varies; everything else is fixed so results are
# comparable across configs.
_SO2_BASE = 0.55
_SO2_FE_SD = 0.05
_SO2_NOISE_SD = 0.035
_SO2_CONF_LOAD = 0.05
_SO2_SIGNAL = {
    "retired_w_all_0to100km_lag0": -0.16,
    "retired_w_all_25to100km_lag1": -0.11,
    "fgd_so2_10kt_lag1": -0.08,
}
_PM_BASE = 55.0
_PM_FE_SD = 3.0
_PM_NOISE_SD = 2.2
_PM_CONF_LOAD = 3.0
_PM_SIGNAL = {
    "retired_w_le50_0to50km_lag1": -5.0,
    "retired_w_all_50to100km_lag0": -3.5,
    "fgd_capacity_lag0": -2.5,
}
_MORT_BASE = 34.0
_MORT_TREND = -1.8
_MORT_FE_SD = 2.5
_MORT_NOISE_SD = 1.2
_MORT_CONF_LOAD = 1.8
_GDP_PRIM_COEF = -2.5  # per 10k CNY
_GDP_SEC_COEF = -1.3
_BEDS_COEF = -0.02


@dataclass(frozen=True)
class DgpConfig:
    """Knobs of the synthetic data-generating process."""

    seed: int
    n_counties: int = 60
    n_years: int = 10
    n_plants: int = 150
    true_theta_so2: float = 0.00134
    true_theta_pm: float = 0.176
    instrument_strength: float = 1.0
    confounder_strength: float = 1.0
    noise_sd_pollution: float = 1.0  # multiplier on the per-pollutant noise scales
    noise_sd_mortality: float = 1.0

    def __post_init__(self):
        if min(self.n_counties, self.n_years, self.n_plants) <= 0:
            raise ValueError("counts must be positive")
        if not isinstance(self.seed, int):
            raise ValueError("seed must be an integer")

    @property
    def panel_years(self) -> list[int]:
        return list(range(START_YEAR, START_YEAR + self.n_years))


@dataclass
class SynthBundle:
    """Everything the pipeline ingests, in the shipped CSV schemas."""

    plants: list[PlantUnit]
    counties: list[CountyGeometry]
    weather: pd.DataFrame
    grid: pd.DataFrame
    mortality: pd.DataFrame
    socio: pd.DataFrame
    region_map: dict[str, dict]
    panel_years: list[int]
    truth: dict = field(default_factory=dict)


@dataclass
class McResult:
    """Per-replication estimates and the bias/sd/coverage summary."""

    estimates: pd.DataFrame
    summary: pd.DataFrame
    replications: int
    coverage_valid: bool
    failures: list[str]
    rng_algorithm: str = RNG_ALGORITHM


def generate(cfg: DgpConfig) -> SynthBundle:
    """Draw one full synthetic input bundle."""
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    years = cfg.panel_years

    counties, region_map = _make_counties(cfg, rng)
    plants = _make_plants(cfg, rng, counties)
    weather = _make_weather(cfg, rng, counties)

    study_weather = weather[weather["year"] >= START_YEAR]
    matrix = build_instrument_matrix(plants, counties, study_weather, years)

    baseline = met.baseline_frame(weather[weather["year"] < HISTORY_END], min_years=30)
    zscores = met.standardize_frame(study_weather, baseline)

    truth = _plant_structure(cfg, rng, matrix, zscores, counties, years)
    grid = _make_grid(cfg, rng, counties, truth)
    socio, mortality = _make_socio_mortality(cfg, rng, truth, zscores, counties, years)

    return SynthBundle(
        plants=plants,
        counties=counties,
        weather=weather,
        grid=grid,
        mortality=mortality,
        socio=socio,
        region_map=region_map,
        panel_years=years,
        truth=truth,
    )


def _make_counties(cfg, rng):
    side = math.ceil(math.sqrt(cfg.n_counties))
    spacing = 0.65
    counties = []
    for i in range(cfg.n_counties):
        r, c = divmod(i, side)
        lat = 30.0 + r * spacing + rng.uniform(-0.12, 0.12)
        lon = 110.0 + c * spacing + rng.uniform(-0.12, 0.12)
        half = 0.26
        ring = (
            GeoPoint(lat - half, lon - half),
            GeoPoint(lat - half, lon + half),
            GeoPoint(lat + half, lon + half),
            GeoPoint(lat + half, lon - half),
        )
        province = f"P{(i // 2) + 1:02d}"
        counties.append(
            CountyGeometry(
                county_id=f"C{i + 1:03d}",
                province_id=province,
                centroid=GeoPoint(lat, lon),
                polygon=Polygon(ring),
            )
        )
    provinces = sorted({c.province_id for c in counties})
    region_map = {
        p: {"regions": [REGIONS[i % 3]], "policy_zone": POLICY_ZONES[i % 3]}
        for i, p in enumerate(provinces)
    }
    # one province sits in two regional subsamples, like the paper's overlap
    if len(provinces) > 1:
        region_map[provinces[0]]["regions"] = [REGIONS[0], REGIONS[1]]
    return counties, region_map


def _make_plants(cfg, rng, counties):
    lats = [c.centroid.lat for c in counties]
    lons = [c.centroid.lon for c in counties]
    lat_lo, lat_hi = min(lats) - 0.4, max(lats) + 0.4
    lon_lo, lon_hi = min(lons) - 0.4, max(lons) + 0.4
    retire_years = np.arange(2004, 2011)
    retire_w = np.array([0.02, 0.05, 0.12, 0.30, 0.27, 0.13, 0.11])
    fgd_years = np.arange(2005, 2011)
    fgd_w = np.array([0.08, 0.18, 0.30, 0.24, 0.12, 0.08])

    plants = []
    for i in range(cfg.n_plants):
        capacity = float(np.clip(np.exp(rng.normal(3.7, 0.9)), 8.0, 800.0))
        location = GeoPoint(rng.uniform(lat_lo, lat_hi), rng.uniform(lon_lo, lon_hi))
        retired = rng.random() < 0.72
        retire_year = int(rng.choice(retire_years, p=retire_w)) if retired else None
        retire_month = int(rng.integers(1, 13)) if retired else None
        fgd_year = None
        so2_removed = None
        if not retired and rng.random() < 0.55:
            fgd_year = int(rng.choice(fgd_years, p=fgd_w))
            so2_removed = capacity * 2.2e-3 * rng.uniform(0.7, 1.3)
        plants.append(
            PlantUnit(
                unit_id=f"U{i + 1:04d}",
                location=location,
                capacity_mw=capacity,
                commission_year=None,
                retire_year=retire_year,
                retire_month=retire_month,
                fgd_install_year=fgd_year,
                so2_removed_10kt=so2_removed,
            )
        )
    return plants


def _make_weather(cfg, rng, counties):
    years = np.arange(HISTORY_START, START_YEAR + cfg.n_years)
    months = np.arange(1, 13)
    n_c, n_y, n_m = len(counties), len(years), len(months)

    base_t = np.array([14.0 - 0.4 * (c.centroid.lat - 34.0) for c in counties])
    base_t = base_t + rng.normal(0, 1.0, n_c)
    amp_t = 10.0 + rng.uniform(0, 3.0, n_c)
    psi = rng.uniform(0, 2 * math.pi, n_c)
    speed = 3.0 + rng.uniform(0, 2.0, n_c)
    u_c = speed * np.cos(psi)
    v_c = speed * np.sin(psi)

    cc, yy, mm = np.meshgrid(np.arange(n_c), years, months, indexing="ij")
    cc, yy, mm = cc.ravel(), yy.ravel(), mm.ravel()
    seasonal = np.cos(2 * math.pi * (mm - 7) / 12.0)
    t2m = base_t[cc] + amp_t[cc] * seasonal + rng.normal(0, 1.7, cc.size)
    gap = np.abs(rng.normal(3.0, 2.2, cc.size)) + 0.3
    dew = t2m - gap
    precip = np.exp(rng.normal(3.2, 0.8, cc.size))
    u100 = u_c[cc] + 0.8 * np.cos(2 * math.pi * (mm - 1) / 12.0) + rng.normal(0, 0.7, cc.size)
    v100 = v_c[cc] + 0.8 * np.sin(2 * math.pi * (mm - 1) / 12.0) + rng.normal(0, 0.7, cc.size)
    u10 = 0.62 * u100 + rng.normal(0, 0.15, cc.size)
    v10 = 0.62 * v100 + rng.normal(0, 0.15, cc.size)

    ids = np.array([c.county_id for c in counties], dtype=object)
    return pd.DataFrame(
        {
            "county_id": ids[cc],
            "year": yy.astype(int),
            "month": mm.astype(int),
            "t2m_c": t2m,
            "dewpoint_c": dew,
            "precip_mm": precip,
            "u10": u10,
            "v10": v10,
            "u100": u100,
            "v100": v100,
        }
    )


def _within_standardized(matrix: InstrumentMatrix, name: str, labels) -> np.ndarray:
    """Column demeaned by county and year, scaled to unit sd.

    Loadings on these columns translate directly into first-stage signal
    after the estimator absorbs the same fixed effects.
    """
    col = matrix.values[:, matrix.columns.index(name)]
    within = demean(col, FixedEffectsPlan(effects=("county", "year")), labels)
    sd = within.std()
    if sd == 0:
        return np.zeros_like(col)
    return within / sd


def _plant_structure(cfg, rng, matrix, zscores, counties, years):
    """True pollutant and confounder paths on the (county, year) grid."""
    n_c, n_y = len(counties), len(years)
    n = n_c * n_y
    assert matrix.values.shape[0] == n

    g = np.cumsum(rng.normal(0, 1.0, n_y))
    g = (g - g.mean()) / (g.std() if g.std() > 0 else 1.0)
    load = rng.normal(0, 1.0, n_c)
    q = np.repeat(load, n_y) * np.tile(g, n_c) + 0.4 * rng.normal(0, 1.0, n)
    q = q / q.std()

    hump = np.array([min(y - START_YEAR, 6) / 6.0 - max(y - 2007, 0) * 0.25 for y in years])
    hump = np.tile(hump - hump.mean(), n_c)

    fe_labels = {
        "county": np.repeat(np.arange(n_c), n_y),
        "year": np.tile(np.arange(n_y), n_c),
    }
    so2_signal = np.zeros(n)
    for name, w in _SO2_SIGNAL.items():
        so2_signal += w * _within_standardized(matrix, name, fe_labels)
    pm_signal = np.zeros(n)
    for name, w in _PM_SIGNAL.items():
        pm_signal += w * _within_standardized(matrix, name, fe_labels)

    ws_jan = _within_standardized(matrix, "wind_speed_100m_m01", fe_labels)
    ws_jul = _within_standardized(matrix, "wind_speed_100m_m07", fe_labels)

    fe_so2 = np.repeat(rng.normal(0, _SO2_FE_SD, n_c), n_y)
    fe_pm = np.repeat(rng.normal(0, _PM_FE_SD, n_c), n_y)
    so2 = (
        _SO2_BASE
        + 0.10 * hump
        + fe_so2
        + cfg.instrument_strength * so2_signal
        + 0.02 * ws_jan
        + _SO2_CONF_LOAD * q
        + rng.normal(0, _SO2_NOISE_SD * cfg.noise_sd_pollution, n)
    )
    pm = (
        _PM_BASE
        + 4.0 * hump
        + fe_pm
        + cfg.instrument_strength * pm_signal
        - 1.2 * ws_jul
        + _PM_CONF_LOAD * q
        + rng.normal(0, _PM_NOISE_SD * cfg.noise_sd_pollution, n)
    )
    so2_clipped = int(np.sum(so2 < 0.02))
    pm_clipped = int(np.sum(pm < 1.0))
    so2 = np.maximum(so2, 0.02)
    pm = np.maximum(pm, 1.0)

    county_ids = np.repeat([c.county_id for c in counties], n_y)
    year_arr = np.tile(years, n_c)
    pollution = pd.DataFrame(
        {"county_id": county_ids, "year": year_arr, "so2_du": so2, "pm25": pm}
    )
    return {
        "theta_so2": cfg.true_theta_so2,
        "theta_pm": cfg.true_theta_pm,
        "confounder": q,
        "pollution": pollution,
        "clipped": {"so2": so2_clipped, "pm25": pm_clipped},
        "so2_signal_columns": list(_SO2_SIGNAL),
        "pm_signal_columns": list(_PM_SIGNAL),
        "rng_algorithm": RNG_ALGORITHM,
    }


def _make_grid(cfg, rng, counties, truth):
    """Monthly grid observations consistent with the true annual means.

    Each county holds two cells; every cell carries the county's annual
    value plus a mean-zero seasonal term, so aggregation recovers the
    annual truth. An optional late start for the first pollutant mimics a
    satellite record beginning mid-window.
    """
    pollution = truth["pollution"]
    years = sorted(pollution["year"].unique())
    so2_start = years[0] + (SO2_SKIP_YEARS if len(years) >= SO2_LATE_START_MIN_SPAN else 0)
    months = np.arange(1, 13)
    season_so2 = 0.01 * np.cos(2 * math.pi * (months - 1) / 12.0)
    season_pm = 1.5 * np.cos(2 * math.pi * (months - 1) / 12.0)
    centroid = {c.county_id: c.centroid for c in counties}

    records = []
    for row in pollution.itertuples(index=False):
        cen = centroid[row.county_id]
        for dlat, dlon in ((-0.08, -0.08), (0.08, 0.08)):
            for m, s_so2, s_pm in zip(months, season_so2, season_pm):
                date = _dt.date(int(row.year), int(m), 15)
                if row.year >= so2_start:
                    records.append(
                        (cen.lat + dlat, cen.lon + dlon, date, "SO2_DU", max(row.so2_du + s_so2, 0.0))
                    )
                records.append(
                    (cen.lat + dlat, cen.lon + dlon, date, "PM25_UGM3", max(row.pm25 + s_pm, 0.0))
                )
    return pd.DataFrame.from_records(
        records, columns=["cell_lat", "cell_lon", "date", "pollutant", "value"]
    )


def _make_socio_mortality(cfg, rng, truth, zscores, counties, years):
    n_c, n_y = len(counties), len(years)
    n = n_c * n_y
    county_ids = np.repeat([c.county_id for c in counties], n_y)
    year_arr = np.tile(years, n_c)
    t = year_arr - START_YEAR

    fe_prim = np.repeat(rng.normal(0, 0.25, n_c), n_y)
    fe_sec = np.repeat(rng.normal(0, 0.35, n_c), n_y)
    prim = 1500.0 * np.exp(0.09 * t + fe_prim + rng.normal(0, 0.05, n))
    sec = 2400.0 * np.exp(0.17 * t + fe_sec + rng.normal(0, 0.07, n))
    beds = np.maximum(24.0 + 0.5 * t + rng.normal(0, 2.0, n), 1.0)
    socio = pd.DataFrame(
        {
            "county_id": county_ids,
            "year": year_arr,
            "prim_gdp_pc_cny": prim,
            "sec_gdp_pc_cny": sec,
            "hospital_beds_per_10k": beds,
        }
    )

    zwide = zscores.pivot(index=["county_id", "year"], columns="month", values=["z_temp", "z_rh"])
    zwide = zwide.reindex(pd.MultiIndex.from_arrays([county_ids, year_arr]))
    zt = zwide["z_temp"].to_numpy()
    zr = zwide["z_rh"].to_numpy()
    weather_coef_t = rng.normal(0, 0.12, 12)
    weather_coef_r = rng.normal(0, 0.12, 12)

    pollution = truth["pollution"]
    fe_mort = np.repeat(rng.normal(0, _MORT_FE_SD, n_c), n_y)
    disturbance = cfg.confounder_strength * _MORT_CONF_LOAD * truth["confounder"] + rng.normal(
        0, _MORT_NOISE_SD * cfg.noise_sd_mortality, n
    )
    mort = (
        _MORT_BASE
        + _MORT_TREND * t
        + fe_mort
        + cfg.true_theta_so2 * pollution["so2_du"].to_numpy()
        + cfg.true_theta_pm * pollution["pm25"].to_numpy()
        + _GDP_PRIM_COEF * prim / 10_000.0
        + _GDP_SEC_COEF * sec / 10_000.0
        + _BEDS_COEF * beds
        + zt @ weather_coef_t
        + zr @ weather_coef_r
        + disturbance
    )
    truth["mortality_disturbance"] = disturbance
    truth["mortality_clipped"] = int(np.sum(mort < 0.05))
    mort = np.maximum(mort, 0.05)
    mortality = pd.DataFrame(
        {"county_id": county_ids, "year": year_arr, "u5_mortality_per_1000": mort}
    )
    return socio, mortality


def counties_frame(counties: list[CountyGeometry]) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "county_id": [c.county_id for c in counties],
            "province_id": [c.province_id for c in counties],
        }
    )


def assemble_bundle(bundle: SynthBundle) -> PanelData:
    """Run the real preprocessing pipeline over a bundle."""
    weather = bundle.weather
    baseline = met.baseline_frame(weather[weather["year"] < HISTORY_END], min_years=30)
    study = weather[weather["year"] >= bundle.panel_years[0]]
    zscores = met.standardize_frame(study, baseline)

    cells = (
        bundle.grid[["cell_lat", "cell_lon"]]
        .drop_duplicates()
        .sort_values(["cell_lat", "cell_lon"])
    )
    cell_points = [GeoPoint(la, lo) for la, lo in cells.itertuples(index=False)]
    membership = raster.assign_cells(cell_points, bundle.counties)
    means = raster.county_means(bundle.grid, membership)
    annual = raster.annual_table(means)

    matrix = build_instrument_matrix(
        bundle.plants, bundle.counties, study, bundle.panel_years
    )
    return assemble(
        mortality=bundle.mortality,
        pollutants=annual,
        socio=bundle.socio,
        weather_z=zscores,
        counties=counties_frame(bundle.counties),
        instruments=matrix,
    )


def run_estimators(
    panel: PanelData,
    estimators: tuple[str, ...],
    lasso_cfg: LassoConfig = LassoConfig(),
    plan: FixedEffectsPlan = FixedEffectsPlan(),
) -> dict[str, est.EstimationReport]:
    reports = {}
    for name in estimators:
        if name == "naive_fe":
            reports[name] = est.naive_fixed_effects(panel, plan=plan)
        elif name == "iv_all":
            reports[name] = est.post_lasso_2sls(panel, plan=plan, cfg=lasso_cfg, selection="all")
        elif name == "iv_lasso":
            reports[name] = est.post_lasso_2sls(panel, plan=plan, cfg=lasso_cfg, selection="lasso")
        else:
            raise ValueError(f"unknown estimator {name!r}")
    return reports


def _run_replication(args):
    cfg, index, estimators = args
    rep_cfg = dataclasses.replace(cfg, seed=cfg.seed + index)
    bundle = generate(rep_cfg)
    panel = assemble_bundle(bundle)
    reports = run_estimators(panel, estimators)
    rows = []
    for name, report in reports.items():
        tcrit = float(stats.t.ppf(0.975, max(report.n_clusters - 1, 1)))
        for endog, true_val in (
            ("so2_du", rep_cfg.true_theta_so2),
            ("pm25", rep_cfg.true_theta_pm),
        ):
            coef, se = report.coefficient(endog)
            rows.append(
                {
                    "replication": index,
                    "estimator": name,
                    "endogenous": endog,
                    "estimate": coef,
                    "se": se,
                    "ci_lower": coef - tcrit * se,
                    "ci_upper": coef + tcrit * se,
                    "truth": true_val,
                }
            )
    return rows


def monte_carlo(
    cfg: DgpConfig,
    replications: int,
    estimators: tuple[str, ...] = ("naive_fe", "iv_lasso"),
    jobs: int = 1,
) -> McResult:
    """Replicate the full simulate -> build -> estimate pipeline.

    Replication ``i`` runs on seed ``cfg.seed + i``, so the set of draws
    is independent of execution order and parallelism. Individual
    estimator failures are recorded, not fatal; more than 10% failures
    raise ``HarnessError``.
    """
    if replications < 2:
        raise ValueError("need at least two replications")
    for name in estimators:
        if name not in ESTIMATOR_NAMES:
            raise ValueError(f"unknown estimator {name!r}")

    tasks = [(cfg, i, tuple(estimators)) for i in range(replications)]
    rows: list[dict] = []
    failures: list[str] = []
    if jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_replication_safe, tasks))
    else:
        results = [_run_replication_safe(t) for t in tasks]
    for index, (ok, payload) in enumerate(results):
        if ok:
            rows.extend(payload)
        else:
            failures.append(f"replication {index}: {payload}")
    if len(failures) > 0.10 * replications:
        raise HarnessError(
            f"{len(failures)} of {replications} replications failed: {failures[:3]}"
        )

    estimates = pd.DataFrame.from_records(rows).sort_values(
        ["estimator", "endogenous", "replication"]
    )
    coverage_valid = replications >= MIN_REPS_FOR_COVERAGE
    summaries = []
    for (name, endog), g in estimates.groupby(["estimator", "endogenous"], sort=True):
        vals = g["estimate"].to_numpy()
        truth = float(g["truth"].iloc[0])
        mc_sd = float(np.std(vals, ddof=1))
        summary = {
            "estimator": name,
            "endogenous": endog,
            "truth": truth,
            "mean_estimate": float(np.mean(vals)),
            "bias": float(np.mean(vals) - truth),
            "mc_sd": mc_sd,
            "mc_se": mc_sd / math.sqrt(len(vals)),
            "n_ok": int(len(vals)),
        }
        if coverage_valid:
            inside = (g["ci_lower"] <= truth) & (truth <= g["ci_upper"])
            summary["coverage"] = float(np.mean(inside))
        else:
            summary["coverage"] = float("nan")
        summaries.append(summary)
    return McResult(
        estimates=estimates.reset_index(drop=True),
        summary=pd.DataFrame.from_records(summaries),
        replications=replications,
        coverage_valid=coverage_valid,
        failures=failures,
    )


def _run_replication_safe(args):
    try:
        return True, _run_replication(args)
    except Exception as err:  # recorded, not fatal
        return False, f"{type(err).__name__}: {err}"
