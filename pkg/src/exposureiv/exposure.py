"""Policy-exposure instrument construction.

Builds every candidate instrument column: unweighted and wind/distance
weighted sums of retired plant capacity over radius bands, capacity
classes and lags; desulphurization-installation exposures; and monthly
100 m wind speed/direction columns.

Weighted sums keep only plants in the upwind semicircle of the county's
annual mean wind and weight each plant's capacity by cos(angle to the
wind axis) times an inverse-distance kernel. Unweighted sums count every
plant in the band with weight one and apply no wind filter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import MissingWind, ZeroWind
from .geo import (
    CountyGeometry,
    GeoPoint,
    direction_unit_vector,
    haversine_km_vec,
    initial_bearing_deg_vec,
)
from .met import wind_speed_dir

#: Distance floor (km) in the weight denominator. Plants whose unknown
#: location defaults to a county centroid would otherwise divide by zero.
DISTANCE_FLOOR_KM = 1.0

#: Radius within which desulphurization exposures are accumulated.
FGD_RADIUS_KM = 100.0

MAX_LAG_YEARS = 3


def _inverse_distance(d_km: np.ndarray) -> np.ndarray:
    return 1.0 / np.maximum(d_km, DISTANCE_FLOOR_KM)


#: Pluggable distance kernels for the weighted sums. Only inverse
#: distance ships; callers may register alternatives under new names.
KERNELS = {"inverse_distance": _inverse_distance}


def register_kernel(name: str, fn) -> None:
    KERNELS[name] = fn


@dataclass(frozen=True)
class PlantUnit:
    """One coal-fired generating unit and its policy-relevant dates."""

    unit_id: str
    location: GeoPoint
    capacity_mw: float
    commission_year: int | None = None  # None means before the data window
    retire_year: int | None = None
    retire_month: int | None = None
    fgd_install_year: int | None = None
    so2_removed_10kt: float | None = None

    def __post_init__(self):
        if not self.capacity_mw > 0:
            raise ValueError(f"capacity must be positive, got {self.capacity_mw}")
        if (
            self.retire_year is not None
            and self.commission_year is not None
            and self.retire_year < self.commission_year
        ):
            raise ValueError(
                f"unit {self.unit_id}: retired {self.retire_year} before "
                f"commissioning {self.commission_year}"
            )
        if self.retire_month is not None and not 1 <= self.retire_month <= 12:
            raise ValueError(f"retire_month {self.retire_month} outside 1..12")
        if self.so2_removed_10kt is not None:
            if self.fgd_install_year is None:
                raise ValueError(
                    f"unit {self.unit_id}: SO2 removal reported without an FGD install year"
                )
            if self.so2_removed_10kt < 0:
                raise ValueError(f"negative SO2 removal {self.so2_removed_10kt}")


@dataclass(frozen=True)
class RadiusBand:
    """Half-open distance band (inner_km, outer_km] around a county centroid."""

    inner_km: float
    outer_km: float

    def __post_init__(self):
        if self.inner_km < 0 or self.outer_km <= self.inner_km:
            raise ValueError(f"invalid band ({self.inner_km}, {self.outer_km}]")

    def label(self) -> str:
        return f"{self.inner_km:g}to{self.outer_km:g}km"


DEFAULT_BANDS = (
    RadiusBand(0.0, 25.0),
    RadiusBand(0.0, 50.0),
    RadiusBand(0.0, 100.0),
    RadiusBand(25.0, 100.0),
    RadiusBand(50.0, 100.0),
)

UNDER_50_CAP_MW = 50.0


@dataclass(frozen=True)
class ExposureSpec:
    """One retired-capacity exposure variant."""

    band: RadiusBand
    lag_years: int = 0
    capacity_cap_mw: float | None = None
    weighted: bool = True
    kernel: str = "inverse_distance"

    def __post_init__(self):
        if not 0 <= self.lag_years <= MAX_LAG_YEARS:
            raise ValueError(f"lag {self.lag_years} outside 0..{MAX_LAG_YEARS}")
        if self.kernel not in KERNELS:
            raise ValueError(f"unknown kernel {self.kernel!r}")

    def column_name(self) -> str:
        w = "w" if self.weighted else "u"
        cap = "all" if self.capacity_cap_mw is None else f"le{self.capacity_cap_mw:g}"
        return f"retired_{w}_{cap}_{self.band.label()}_lag{self.lag_years}"


@dataclass(frozen=True)
class CountyWind:
    """Annual mean wind vector (100 m level) used as the upwind axis."""

    county_id: str
    year: int
    mean_u: float
    mean_v: float

    def __post_init__(self):
        if not (math.isfinite(self.mean_u) and math.isfinite(self.mean_v)):
            raise ValueError("non-finite wind components")


def annual_wind_axis(county_id: str, year: int, monthly_u, monthly_v) -> CountyWind:
    """Vector mean of monthly u/v components (not a circular mean of angles)."""
    return CountyWind(
        county_id=county_id,
        year=year,
        mean_u=float(np.mean(monthly_u)),
        mean_v=float(np.mean(monthly_v)),
    )


def upwind_cosine(plant: GeoPoint, county_centroid: GeoPoint, wind: CountyWind) -> float | None:
    """Alignment of the plant-to-county direction with the wind flow.

    Both directions live in the local east-north tangent plane at the
    county centroid. Returns the inner product (in [0, 1]) when the plant
    sits in the upwind semicircle, including exactly-perpendicular plants
    at 0; returns None for downwind plants, which are excluded.

    Raises ``ZeroWind`` when the annual wind vector is zero, leaving the
    fallback policy to the caller.
    """
    speed = math.hypot(wind.mean_u, wind.mean_v)
    if speed == 0.0:
        raise ZeroWind(f"zero annual wind for county {wind.county_id!r} year {wind.year}")
    fe, fn = wind.mean_u / speed, wind.mean_v / speed
    bearing_to_plant = initial_bearing_deg_vec(
        county_centroid.lat, county_centroid.lon, plant.lat, plant.lon
    )
    pe, pn = direction_unit_vector((float(bearing_to_plant) + 180.0) % 360.0)
    cos_alpha = pe * fe + pn * fn
    return cos_alpha if cos_alpha >= 0.0 else None


class _CountyPlants:
    """Per-county plant geometry, precomputed once and shared by all cells.

    Plants are held in unit_id order so sums are independent of the input
    ordering, bit for bit.
    """

    def __init__(self, plants: list[PlantUnit], centroid: GeoPoint):
        plants = sorted(plants, key=lambda p: p.unit_id)
        self.capacity = np.array([p.capacity_mw for p in plants], dtype=float)
        self.retire_year = np.array(
            [p.retire_year if p.retire_year is not None else -(10**9) for p in plants],
            dtype=np.int64,
        )
        self.fgd_year = np.array(
            [p.fgd_install_year if p.fgd_install_year is not None else -(10**9) for p in plants],
            dtype=np.int64,
        )
        self.so2_removed = np.array(
            [p.so2_removed_10kt if p.so2_removed_10kt is not None else 0.0 for p in plants],
            dtype=float,
        )
        lats = np.array([p.location.lat for p in plants], dtype=float)
        lons = np.array([p.location.lon for p in plants], dtype=float)
        self.dist_km = haversine_km_vec(centroid.lat, centroid.lon, lats, lons)
        # Direction from plant toward the county, expressed at the centroid.
        coincident = self.dist_km == 0.0
        bearings = np.where(
            coincident,
            0.0,
            (
                initial_bearing_deg_vec(
                    np.full_like(lats, centroid.lat), np.full_like(lons, centroid.lon), lats, lons
                )
                + 180.0
            )
            % 360.0,
        )
        rad = np.radians(bearings)
        self.unit_e = np.sin(rad)
        self.unit_n = np.cos(rad)

    def cos_alpha(self, wind: CountyWind) -> np.ndarray:
        speed = math.hypot(wind.mean_u, wind.mean_v)
        if speed == 0.0:
            raise ZeroWind(f"zero annual wind for county {wind.county_id!r} year {wind.year}")
        fe, fn = wind.mean_u / speed, wind.mean_v / speed
        return self.unit_e * fe + self.unit_n * fn

    def exposure_cell(self, wind: CountyWind, spec: ExposureSpec, year: int) -> float:
        mask = self.retire_year == (year - spec.lag_years)
        mask &= (self.dist_km > spec.band.inner_km) & (self.dist_km <= spec.band.outer_km)
        if spec.capacity_cap_mw is not None:
            mask &= self.capacity <= spec.capacity_cap_mw
        if not spec.weighted:
            return float(np.sum(self.capacity[mask]))
        cos_alpha = self.cos_alpha(wind)
        mask &= cos_alpha >= 0.0
        weights = KERNELS[spec.kernel](self.dist_km[mask])
        return float(np.sum(self.capacity[mask] * cos_alpha[mask] * weights))

    def fgd_cell(self, year: int, lag: int) -> tuple[float, float]:
        mask = (self.fgd_year == (year - lag)) & (self.dist_km <= FGD_RADIUS_KM)
        return float(np.sum(self.capacity[mask])), float(np.sum(self.so2_removed[mask]))


def weighted_sum(
    plants: list[PlantUnit],
    county: CountyGeometry,
    wind: CountyWind,
    spec: ExposureSpec,
    year: int,
) -> float:
    """Retired-capacity exposure of ``county`` in ``year`` under ``spec``.

    Sums capacity over plants retired in ``year - lag`` whose distance d
    to the centroid falls in (inner, outer] and whose capacity passes the
    cap. Weighted variants keep upwind plants only and weight by
    cos(alpha) / max(d, 1 km); unweighted variants use weight one and no
    wind filter.
    """
    return _CountyPlants(plants, county.centroid).exposure_cell(wind, spec, year)


def fgd_exposures(
    plants: list[PlantUnit], county: CountyGeometry, year: int, lag: int
) -> tuple[float, float]:
    """(capacity under FGD, SO2 removed in 10k tons) installed in ``year - lag``.

    Counts plants within 100 km of the county centroid.
    """
    if not 0 <= lag <= MAX_LAG_YEARS:
        raise ValueError(f"lag {lag} outside 0..{MAX_LAG_YEARS}")
    return _CountyPlants(plants, county.centroid).fgd_cell(year, lag)


def default_spec_grid() -> list[ExposureSpec]:
    """The shipped candidate grid: bands x caps x weighting x lags (80 cells)."""
    specs = []
    for band in DEFAULT_BANDS:
        for cap in (None, UNDER_50_CAP_MW):
            for weighted in (False, True):
                for lag in range(MAX_LAG_YEARS + 1):
                    specs.append(
                        ExposureSpec(
                            band=band, lag_years=lag, capacity_cap_mw=cap, weighted=weighted
                        )
                    )
    return specs


@dataclass
class InstrumentMatrix:
    """Candidate instrument columns aligned to (county_id, year) rows."""

    county_ids: np.ndarray
    years: np.ndarray
    columns: list[str]
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (len(self.county_ids), len(self.columns)):
            raise ValueError("instrument matrix shape mismatch")

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.values, columns=self.columns)
        df.insert(0, "year", self.years)
        df.insert(0, "county_id", self.county_ids)
        return df

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "InstrumentMatrix":
        cols = [c for c in df.columns if c not in ("county_id", "year")]
        return cls(
            county_ids=df["county_id"].to_numpy(dtype=object),
            years=df["year"].to_numpy(dtype=np.int64),
            columns=cols,
            values=df[cols].to_numpy(dtype=float),
        )

    def rows_key(self) -> list[tuple[str, int]]:
        return list(zip(self.county_ids.tolist(), [int(y) for y in self.years]))


def build_instrument_matrix(
    plants: list[PlantUnit],
    counties: list[CountyGeometry],
    monthly_winds: pd.DataFrame,
    panel_years: list[int],
    specs: list[ExposureSpec] | None = None,
) -> InstrumentMatrix:
    """Assemble the full candidate-instrument matrix.

    ``monthly_winds`` needs columns ``county_id, year, month, u100, v100``
    covering all twelve months of every county-year in the panel; the
    annual upwind axis is the vector mean of the monthly components.
    Columns, in order: the exposure grid, FGD capacity and SO2-removal
    lags 0..3, monthly 100 m wind speed and direction, and (only when a
    calm month occurs somewhere in the data) a missing-direction
    indicator per affected month. Lags reaching before the observed
    window contribute zero. Output rows are sorted by (county_id, year)
    and are identical regardless of plant input order.
    """
    specs = default_spec_grid() if specs is None else list(specs)
    counties = sorted(counties, key=lambda c: c.county_id)
    years = sorted(int(y) for y in panel_years)

    wind_lookup = _index_monthly_winds(monthly_winds)
    for county in counties:
        for year in years:
            if (county.county_id, year) not in wind_lookup:
                raise MissingWind(county.county_id, year)

    exposure_cols = [s.column_name() for s in specs]
    fgd_cols = [f"fgd_capacity_lag{lag}" for lag in range(MAX_LAG_YEARS + 1)] + [
        f"fgd_so2_10kt_lag{lag}" for lag in range(MAX_LAG_YEARS + 1)
    ]
    speed_cols = [f"wind_speed_100m_m{m:02d}" for m in range(1, 13)]
    dir_cols = [f"wind_dir_100m_m{m:02d}" for m in range(1, 13)]

    n_rows = len(counties) * len(years)
    calm_seen = np.zeros(12, dtype=bool)
    exposure_vals = np.zeros((n_rows, len(specs)), dtype=float)
    fgd_vals = np.zeros((n_rows, len(fgd_cols)), dtype=float)
    speed_vals = np.zeros((n_rows, 12), dtype=float)
    dir_vals = np.zeros((n_rows, 12), dtype=float)
    dir_missing = np.zeros((n_rows, 12), dtype=float)
    row_county, row_year = [], []

    row = 0
    for county in counties:
        cache = _CountyPlants(plants, county.centroid)
        for year in years:
            u_by_month, v_by_month = wind_lookup[(county.county_id, year)]
            axis = annual_wind_axis(county.county_id, year, u_by_month, v_by_month)
            for j, spec in enumerate(specs):
                exposure_vals[row, j] = cache.exposure_cell(axis, spec, year)
            for lag in range(MAX_LAG_YEARS + 1):
                capacity, removed = cache.fgd_cell(year, lag)
                fgd_vals[row, lag] = capacity
                fgd_vals[row, MAX_LAG_YEARS + 1 + lag] = removed
            for m in range(12):
                speed, direction = wind_speed_dir(u_by_month[m], v_by_month[m])
                speed_vals[row, m] = speed
                if math.isnan(direction):
                    calm_seen[m] = True
                    dir_missing[row, m] = 1.0
                    dir_vals[row, m] = 0.0
                else:
                    dir_vals[row, m] = direction
            row_county.append(county.county_id)
            row_year.append(year)
            row += 1

    columns = exposure_cols + fgd_cols + speed_cols + dir_cols
    blocks = [exposure_vals, fgd_vals, speed_vals, dir_vals]
    for m in range(12):
        if calm_seen[m]:
            columns.append(f"wind_dir_missing_m{m + 1:02d}")
            blocks.append(dir_missing[:, m : m + 1])
    return InstrumentMatrix(
        county_ids=np.array(row_county, dtype=object),
        years=np.array(row_year, dtype=np.int64),
        columns=columns,
        values=np.hstack(blocks),
    )


def policy_columns(columns: list[str]) -> list[str]:
    """Names of the plant-policy instrument columns (exposures and FGD)."""
    return [c for c in columns if c.startswith("retired_") or c.startswith("fgd_")]


def _index_monthly_winds(monthly_winds: pd.DataFrame):
    required = {"county_id", "year", "month", "u100", "v100"}
    missing = required - set(monthly_winds.columns)
    if missing:
        raise ValueError(f"monthly wind table missing columns {sorted(missing)}")
    lookup: dict[tuple[str, int], tuple[np.ndarray, np.ndarray]] = {}
    grouped = monthly_winds.sort_values("month").groupby(["county_id", "year"], sort=False)
    for (county_id, year), g in grouped:
        if list(g["month"]) != list(range(1, 13)):
            continue  # incomplete county-years are treated as missing wind
        lookup[(str(county_id), int(year))] = (
            g["u100"].to_numpy(dtype=float),
            g["v100"].to_numpy(dtype=float),
        )
    return lookup
