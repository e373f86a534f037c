"""Aggregation of gridded pollutant observations to county means.

Cells belong to the county whose polygon contains their centre. Counties
too small to contain any cell centre borrow the nearest cell to their
centroid. Daily values are averaged to county-days, county-days to
months, and months to years, skipping missing observations at each step.
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .geo import CountyGeometry, GeoPoint, haversine_km, point_in_polygon

POLLUTANTS = ("SO2_DU", "PM25_UGM3")

CellKey = tuple[float, float]


@dataclass(frozen=True)
class GridObservation:
    """A single dated grid-cell reading for one pollutant."""

    cell_center: GeoPoint
    date: _dt.date
    pollutant: str
    value: float | None

    def __post_init__(self):
        if self.pollutant not in POLLUTANTS:
            raise ValueError(f"unknown pollutant {self.pollutant!r}")
        if self.value is not None and self.value < 0:
            raise ValueError(f"negative concentration {self.value}")


@dataclass(frozen=True)
class CountyPollutant:
    """County-level mean for one pollutant, monthly or annual (month None)."""

    county_id: str
    year: int
    month: int | None
    pollutant: str
    mean_value: float
    n_obs: int


@dataclass
class CellAssignment:
    """Result of :func:`assign_cells`.

    ``cell_to_county`` maps each cell centre to the containing county (or
    None if outside every polygon). ``fallback_cells`` maps counties that
    contain no cell centre to the nearest cell, which they then share with
    its containing county.
    """

    cell_to_county: dict[CellKey, str | None]
    fallback_cells: dict[str, CellKey] = field(default_factory=dict)

    def counties_for(self, key: CellKey) -> list[str]:
        owners = []
        primary = self.cell_to_county.get(key)
        if primary is not None:
            owners.append(primary)
        for county, fallback_key in self.fallback_cells.items():
            if fallback_key == key:
                owners.append(county)
        return owners


def assign_cells(
    cells: list[GeoPoint], counties: list[CountyGeometry]
) -> CellAssignment:
    """Assign grid-cell centres to counties by point-in-polygon.

    Overlapping polygons are resolved by first match in input order. Each
    county that ends up with zero member cells is given the cell nearest
    its centroid as a fallback.
    """
    mapping: dict[CellKey, str | None] = {}
    counts = {c.county_id: 0 for c in counties}
    for cell in cells:
        key = (float(cell.lat), float(cell.lon))
        if key in mapping:
            continue
        owner = None
        for county in counties:
            if point_in_polygon(cell, county.polygon):
                owner = county.county_id
                break
        mapping[key] = owner
        if owner is not None:
            counts[owner] += 1

    fallback: dict[str, CellKey] = {}
    if cells:
        for county in counties:
            if counts[county.county_id] > 0:
                continue
            best_key, best_d = None, np.inf
            for cell in cells:
                d = haversine_km(county.centroid, cell)
                if d < best_d:
                    best_d = d
                    best_key = (float(cell.lat), float(cell.lon))
            fallback[county.county_id] = best_key
    return CellAssignment(cell_to_county=mapping, fallback_cells=fallback)


def county_means(obs, membership: CellAssignment) -> pd.DataFrame:
    """County-level monthly and annual pollutant means.

    Accepts a sequence of :class:`GridObservation` or a DataFrame with
    columns ``cell_lat, cell_lon, date, pollutant, value``. Returns a
    DataFrame ``county_id, year, month, pollutant, mean_value, n_obs``
    where annual rows carry a null month; ``n_obs`` counts the raw cell
    observations feeding each mean. County-months with no valid reading
    simply do not appear (missing, flagged by absence).

    The chain is: cell values -> county-day arithmetic mean -> monthly
    mean over available days -> annual mean over available months. Input
    is sorted before reduction so permuting observations cannot change
    any result.
    """
    df = _as_obs_frame(obs)
    df = df.dropna(subset=["value"])
    if df.empty:
        return pd.DataFrame(
            columns=["county_id", "year", "month", "pollutant", "mean_value", "n_obs"]
        )

    keys = list(zip(df["cell_lat"].astype(float), df["cell_lon"].astype(float)))
    owners = [membership.counties_for(k) for k in keys]
    df = df.loc[[i for i, o in zip(df.index, owners) if o]]
    owners = [o for o in owners if o]
    df = df.assign(_owners=owners).explode("_owners").rename(columns={"_owners": "county_id"})

    dates = pd.to_datetime(df["date"])
    df = df.assign(year=dates.dt.year, month=dates.dt.month, day=dates.dt.day)
    df = df.sort_values(
        ["county_id", "pollutant", "year", "month", "day", "cell_lat", "cell_lon"]
    ).reset_index(drop=True)

    daily = (
        df.groupby(["county_id", "pollutant", "year", "month", "day"], sort=True)["value"]
        .agg(["mean", "size"])
        .reset_index()
    )
    monthly = (
        daily.groupby(["county_id", "pollutant", "year", "month"], sort=True)
        .agg(mean_value=("mean", "mean"), n_obs=("size", "sum"))
        .reset_index()
    )
    annual = (
        monthly.groupby(["county_id", "pollutant", "year"], sort=True)
        .agg(mean_value=("mean_value", "mean"), n_obs=("n_obs", "sum"))
        .reset_index()
    )
    annual["month"] = pd.NA

    out = pd.concat([monthly, annual], ignore_index=True)
    out["month"] = out["month"].astype("Int64")
    out = out.sort_values(
        ["county_id", "pollutant", "year", "month"], na_position="first"
    ).reset_index(drop=True)
    return out[["county_id", "year", "month", "pollutant", "mean_value", "n_obs"]]


def annual_table(means: pd.DataFrame) -> pd.DataFrame:
    """Pivot annual rows of :func:`county_means` to one row per county-year."""
    annual = means[means["month"].isna()]
    wide = annual.pivot_table(
        index=["county_id", "year"], columns="pollutant", values="mean_value", aggfunc="first"
    ).reset_index()
    wide.columns.name = None
    renames = {"SO2_DU": "so2_du", "PM25_UGM3": "pm25"}
    return wide.rename(columns=renames)


def _as_obs_frame(obs) -> pd.DataFrame:
    if isinstance(obs, pd.DataFrame):
        return obs.copy()
    return pd.DataFrame(
        {
            "cell_lat": [o.cell_center.lat for o in obs],
            "cell_lon": [o.cell_center.lon for o in obs],
            "date": [o.date for o in obs],
            "pollutant": [o.pollutant for o in obs],
            "value": [o.value for o in obs],
        }
    )
