"""County-year panel assembly, fixed-effects demeaning, and subsamples."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import AlignmentError, ConvergenceError, DuplicateKey, EmptySubsample
from .exposure import InstrumentMatrix

log = logging.getLogger(__name__)

FE_EFFECTS = ("county", "year", "province_x_year")

REGIONS = ("east", "northwest", "southwest")
POLICY_ZONES = ("ARCZ", "SO2CZ", "NPS")

MONTH_COLS_TEMP = [f"z_temp_{m:02d}" for m in range(1, 13)]
MONTH_COLS_RH = [f"z_rh_{m:02d}" for m in range(1, 13)]

PANEL_COLUMNS = [
    "county_id",
    "province_id",
    "year",
    "mortality_per_1000",
    "so2_du",
    "pm25",
    "prim_gdp_pc",
    "sec_gdp_pc",
    "hospital_beds_per_10k",
    *MONTH_COLS_TEMP,
    *MONTH_COLS_RH,
]


@dataclass(frozen=True)
class FixedEffectsPlan:
    """Which group effects to absorb and the clustering variable."""

    effects: tuple[str, ...] = ("county", "year")
    cluster_by: str = "province"

    def __post_init__(self):
        if not self.effects:
            raise ValueError("at least one fixed effect is required")
        unknown = set(self.effects) - set(FE_EFFECTS)
        if unknown:
            raise ValueError(f"unknown effects {sorted(unknown)}")


@dataclass
class PanelData:
    """Assembled analysis table with a positionally aligned instrument matrix."""

    rows: pd.DataFrame
    instruments: InstrumentMatrix

    def __post_init__(self):
        panel_keys = list(zip(self.rows["county_id"], self.rows["year"].astype(int)))
        if panel_keys != self.instruments.rows_key():
            raise AlignmentError("instrument matrix rows do not match panel rows")

    def subset(self, mask) -> "PanelData":
        """Row-subset panel and instruments together, preserving alignment."""
        mask = np.asarray(mask)
        if mask.dtype != bool:
            full = np.zeros(len(self.rows), dtype=bool)
            full[mask] = True
            mask = full
        return PanelData(
            rows=self.rows.loc[mask].reset_index(drop=True),
            instruments=InstrumentMatrix(
                county_ids=self.instruments.county_ids[mask],
                years=self.instruments.years[mask],
                columns=list(self.instruments.columns),
                values=self.instruments.values[mask],
            ),
        )


def _check_unique(df: pd.DataFrame, name: str) -> None:
    dup = df.duplicated(subset=["county_id", "year"])
    if dup.any():
        first = df.loc[dup, ["county_id", "year"]].iloc[0]
        raise DuplicateKey(
            f"{name}: duplicate key ({first['county_id']!r}, {int(first['year'])})"
        )


def assemble(
    mortality: pd.DataFrame,
    pollutants: pd.DataFrame,
    socio: pd.DataFrame,
    weather_z: pd.DataFrame,
    counties: pd.DataFrame,
    instruments: InstrumentMatrix,
) -> PanelData:
    """Join the input tables into the county-year analysis panel.

    Mortality, socio-economics and complete-12-month weather join inner on
    (county_id, year); pollutant columns join left so that a row missing
    one pollutant stays available to the other pollutant's model. The
    instrument matrix is re-ordered to the panel rows and the alignment is
    verified positionally.
    """
    mortality = mortality.rename(columns={"u5_mortality_per_1000": "mortality_per_1000"})
    socio = socio.rename(
        columns={"prim_gdp_pc_cny": "prim_gdp_pc", "sec_gdp_pc_cny": "sec_gdp_pc"}
    )
    _check_unique(mortality, "mortality")
    _check_unique(socio, "socio")

    weather_wide = _pivot_weather(weather_z)
    merged = mortality.merge(socio, on=["county_id", "year"], how="inner", validate="one_to_one")
    merged = merged.merge(
        weather_wide, on=["county_id", "year"], how="inner", validate="one_to_one"
    )
    if {"so2_du", "pm25"} & set(pollutants.columns):
        poll = pollutants
    else:
        from .raster import annual_table

        poll = annual_table(pollutants)
    _check_unique(poll, "pollutants")
    merged = merged.merge(poll, on=["county_id", "year"], how="left", validate="one_to_one")

    provinces = counties[["county_id", "province_id"]].drop_duplicates("county_id")
    merged = merged.merge(provinces, on="county_id", how="inner", validate="many_to_one")

    for col in ("so2_du", "pm25"):
        if col not in merged.columns:
            merged[col] = np.nan
    merged = merged[PANEL_COLUMNS].sort_values(["county_id", "year"]).reset_index(drop=True)

    inst_df = instruments.to_frame()
    inst_df["year"] = inst_df["year"].astype(int)
    keyed = merged[["county_id", "year"]].merge(
        inst_df, on=["county_id", "year"], how="left", validate="one_to_one"
    )
    inst_cols = instruments.columns
    if keyed[inst_cols].isna().any().any():
        bad = keyed[keyed[inst_cols].isna().any(axis=1)].iloc[0]
        raise AlignmentError(
            f"no instrument row for ({bad['county_id']!r}, {int(bad['year'])})"
        )
    aligned = InstrumentMatrix(
        county_ids=merged["county_id"].to_numpy(dtype=object),
        years=merged["year"].to_numpy(dtype=np.int64),
        columns=list(inst_cols),
        values=keyed[inst_cols].to_numpy(dtype=float),
    )
    log.info("assembled panel: %d rows, %d instrument columns", len(merged), len(inst_cols))
    return PanelData(rows=merged, instruments=aligned)


def _pivot_weather(weather_z: pd.DataFrame) -> pd.DataFrame:
    dup = weather_z.duplicated(subset=["county_id", "year", "month"])
    if dup.any():
        first = weather_z.loc[dup].iloc[0]
        raise DuplicateKey(
            f"weather: duplicate key ({first['county_id']!r}, "
            f"{int(first['year'])}, {int(first['month'])})"
        )
    wide = weather_z.pivot(index=["county_id", "year"], columns="month", values=["z_temp", "z_rh"])
    complete = wide.dropna()
    dropped = len(wide) - len(complete)
    if dropped:
        log.info("dropping %d county-years with incomplete weather months", dropped)
    complete.columns = [f"{var}_{int(m):02d}" for var, m in complete.columns]
    return complete.reset_index()


def group_labels(rows: pd.DataFrame, effects: tuple[str, ...]) -> dict[str, np.ndarray]:
    """Label arrays for each fixed effect, derived from panel identifiers."""
    labels = {}
    for effect in effects:
        if effect == "county":
            labels[effect] = rows["county_id"].to_numpy(dtype=object)
        elif effect == "year":
            labels[effect] = rows["year"].to_numpy()
        elif effect == "province_x_year":
            labels[effect] = np.array(
                [f"{p}:{y}" for p, y in zip(rows["province_id"], rows["year"])], dtype=object
            )
        else:
            raise ValueError(f"unknown effect {effect!r}")
    return labels


def demean(
    values: np.ndarray,
    plan: FixedEffectsPlan,
    labels: dict[str, np.ndarray],
    tol: float = 1e-10,
    max_sweeps: int = 100,
) -> np.ndarray:
    """Within-transform ``values`` by alternating group-mean subtraction.

    Sweeps over the plan's effects, subtracting each effect's group means
    from every column, until the largest absolute cell change in a sweep
    falls below ``tol``. Unbalanced panels need no special handling.

    Raises ``ConvergenceError`` with the final delta if ``max_sweeps`` is
    exhausted.
    """
    X = np.array(values, dtype=float, copy=True)
    if X.ndim == 1:
        return demean(X[:, None], plan, labels, tol, max_sweeps)[:, 0]
    factors = []
    for effect in plan.effects:
        if effect not in labels:
            raise ValueError(f"labels missing for effect {effect!r}")
        codes, uniques = pd.factorize(labels[effect])
        counts = np.bincount(codes, minlength=len(uniques)).astype(float)
        factors.append((codes, counts))

    for _ in range(max_sweeps):
        delta = 0.0
        for codes, counts in factors:
            sums = np.zeros((len(counts), X.shape[1]))
            np.add.at(sums, codes, X)
            means = sums / counts[:, None]
            adjustment = means[codes]
            delta = max(delta, float(np.max(np.abs(adjustment))) if adjustment.size else 0.0)
            X -= adjustment
        if delta < tol:
            return X
    raise ConvergenceError(
        f"demeaning did not converge in {max_sweeps} sweeps (last delta {delta:.3e})"
    )


def filter_subsample(
    rows: pd.DataFrame, tag: str | None, region_map: dict[str, dict] | None = None
) -> pd.DataFrame:
    """Rows whose province belongs to the requested region or policy zone.

    ``tag`` may be a region (east/northwest/southwest), a policy zone
    (ARCZ/SO2CZ/NPS), or None for the identity. ``region_map`` maps
    province_id to ``{"regions": [...], "policy_zone": ...}``; it is
    required for any non-None tag. A province may carry several region
    tags, so regional subsamples can overlap; policy zones partition.
    """
    if tag is None or tag == "none":
        return rows
    if region_map is None:
        raise ValueError("region_map required to filter by tag")
    if tag in REGIONS:
        keep = {p for p, info in region_map.items() if tag in info.get("regions", [])}
    elif tag in POLICY_ZONES:
        keep = {p for p, info in region_map.items() if info.get("policy_zone") == tag}
    else:
        raise ValueError(f"unknown subsample tag {tag!r}")
    out = rows[rows["province_id"].isin(keep)]
    log.info("subsample %s: %d of %d rows", tag, len(out), len(rows))
    if out.empty:
        raise EmptySubsample(f"subsample {tag!r} matched no rows")
    return out.reset_index(drop=True)


def summarize(rows: pd.DataFrame, variables: list[str], by: str = "year") -> pd.DataFrame:
    """Per-group sample mean and (n-1) standard deviation of each variable."""
    missing = [v for v in variables if v not in rows.columns]
    if missing:
        raise ValueError(f"unknown variables {missing}")
    agg = rows.groupby(by, sort=True)[variables].agg(["mean", lambda s: s.std(ddof=1)])
    agg.columns = [f"{var}_{'mean' if stat == 'mean' else 'sd'}" for var, stat in agg.columns]
    return agg.reset_index()
