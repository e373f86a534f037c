"""Meteorological preprocessing.

Converts wind u/v components to speed and meteorological from-direction,
derives relative humidity from temperature and dew point (Magnus formula),
and standardizes monthly temperature/humidity against a 1950-1999 style
historical baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import InsufficientBaseline, MissingBaseline, OutOfRange

# Magnus saturation-vapour-pressure coefficients, accurate over -40..50 C.
MAGNUS_A = 17.625
MAGNUS_B = 243.04

#: Direction reported for calm months (u = v = 0); downstream code treats
#: NaN as missing and adds an indicator column rather than dropping rows.
CALM_DIRECTION = float("nan")


@dataclass(frozen=True)
class MonthlyWeather:
    """One county-month of reanalysis-style weather."""

    county_id: str
    year: int
    month: int
    t2m_c: float
    dewpoint_c: float
    precip_mm: float
    u10: float
    v10: float
    u100: float
    v100: float

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise ValueError(f"month {self.month} outside 1..12")
        # Reanalysis occasionally reports dew point a hair above temperature.
        if self.dewpoint_c > self.t2m_c + 0.5:
            raise ValueError(
                f"dew point {self.dewpoint_c} exceeds temperature {self.t2m_c} by more than 0.5"
            )
        if self.precip_mm < 0:
            raise ValueError(f"negative precipitation {self.precip_mm}")


@dataclass(frozen=True)
class Baseline:
    """Climatology cell: per county-month moments of temperature and RH."""

    county_id: str
    month: int
    mean_t: float
    sd_t: float
    mean_rh: float
    sd_rh: float

    def __post_init__(self):
        if self.sd_t <= 0 or self.sd_rh <= 0:
            raise ValueError("baseline standard deviations must be strictly positive")


def wind_speed_dir(u: float, v: float) -> tuple[float, float]:
    """Speed and meteorological from-direction of a wind vector.

    ``u`` is the eastward component (positive u blows from the west),
    ``v`` the northward component (positive v blows from the south).
    Direction is the compass angle the wind comes FROM: 0 north, 90 east,
    180 south, 270 west. Calm winds (u = v = 0) return speed 0 with a NaN
    direction.
    """
    if not (math.isfinite(u) and math.isfinite(v)):
        raise OutOfRange(f"non-finite wind components ({u}, {v})")
    speed = math.hypot(u, v)
    if speed == 0.0:
        return 0.0, CALM_DIRECTION
    direction = (270.0 - math.degrees(math.atan2(v, u))) % 360.0
    return speed, direction


def wind_components(speed: float, dir_from_deg: float) -> tuple[float, float]:
    """Inverse of :func:`wind_speed_dir` for a non-calm wind."""
    phi = math.radians(270.0 - dir_from_deg)
    return speed * math.cos(phi), speed * math.sin(phi)


def relative_humidity(t_c: float, dew_c: float) -> float:
    """Relative humidity (%) from temperature and dew point via Magnus.

    Small dew-point excesses over temperature are clamped; the result is
    clamped to 100. Values at or below the Magnus singularity raise
    ``OutOfRange``.
    """
    if t_c <= -MAGNUS_B or dew_c <= -MAGNUS_B:
        raise OutOfRange(f"temperature/dew point at or below {-MAGNUS_B} C")
    dew = min(dew_c, t_c)
    rh = 100.0 * math.exp(MAGNUS_A * dew / (MAGNUS_B + dew)) / math.exp(
        MAGNUS_A * t_c / (MAGNUS_B + t_c)
    )
    return min(rh, 100.0)


def standardize(x: float, baseline: Baseline, field: str) -> float:
    """Z-score of ``x`` against the county-month climatology cell.

    ``field`` selects which pair of moments applies: ``"temperature"`` or
    ``"humidity"``.
    """
    if field == "temperature":
        return (x - baseline.mean_t) / baseline.sd_t
    if field == "humidity":
        return (x - baseline.mean_rh) / baseline.sd_rh
    raise ValueError(f"unknown field {field!r}")


def build_baseline(
    history: list[MonthlyWeather] | pd.DataFrame, min_years: int = 30
) -> dict[tuple[str, int], Baseline]:
    """Per county-month climatology from a span of historical weather.

    Computes the sample mean and sample (n-1) standard deviation of
    temperature and of relative humidity derived from each record. Cells
    with fewer than ``min_years`` records, or with a degenerate zero
    spread, raise ``InsufficientBaseline``.
    """
    frame = baseline_frame(history, min_years=min_years)
    return {
        (row.county_id, int(row.month)): Baseline(
            county_id=row.county_id,
            month=int(row.month),
            mean_t=row.mean_t,
            sd_t=row.sd_t,
            mean_rh=row.mean_rh,
            sd_rh=row.sd_rh,
        )
        for row in frame.itertuples(index=False)
    }


def baseline_frame(history, min_years: int = 30) -> pd.DataFrame:
    """Vectorised form of :func:`build_baseline`, returning a DataFrame."""
    df = _as_weather_frame(history)
    if df.empty:
        raise InsufficientBaseline("no history records supplied")
    df = df.assign(rh=relative_humidity_vec(df["t2m_c"].to_numpy(), df["dewpoint_c"].to_numpy()))
    grouped = df.groupby(["county_id", "month"], sort=True).agg(
        n=("t2m_c", "size"),
        mean_t=("t2m_c", "mean"),
        sd_t=("t2m_c", lambda s: s.std(ddof=1)),
        mean_rh=("rh", "mean"),
        sd_rh=("rh", lambda s: s.std(ddof=1)),
    )
    short = grouped[grouped["n"] < min_years]
    if not short.empty:
        cell = short.index[0]
        raise InsufficientBaseline(
            f"county {cell[0]!r} month {cell[1]} has {int(short['n'].iloc[0])} years, "
            f"needs {min_years}"
        )
    degenerate = grouped[(grouped["sd_t"] <= 0) | (grouped["sd_rh"] <= 0) | grouped["sd_t"].isna()]
    if not degenerate.empty:
        cell = degenerate.index[0]
        raise InsufficientBaseline(f"degenerate spread for county {cell[0]!r} month {cell[1]}")
    return grouped.reset_index()[["county_id", "month", "mean_t", "sd_t", "mean_rh", "sd_rh"]]


def standardize_frame(weather, baseline: pd.DataFrame) -> pd.DataFrame:
    """Z-score monthly temperature and relative humidity for study-window rows.

    Returns columns ``county_id, year, month, z_temp, z_rh``. Any
    county-month lacking a baseline cell raises ``MissingBaseline``.
    """
    df = _as_weather_frame(weather)
    df = df.assign(rh=relative_humidity_vec(df["t2m_c"].to_numpy(), df["dewpoint_c"].to_numpy()))
    merged = df.merge(baseline, on=["county_id", "month"], how="left", validate="many_to_one")
    missing = merged[merged["mean_t"].isna()]
    if not missing.empty:
        first = missing.iloc[0]
        raise MissingBaseline(first["county_id"], int(first["month"]))
    merged["z_temp"] = (merged["t2m_c"] - merged["mean_t"]) / merged["sd_t"]
    merged["z_rh"] = (merged["rh"] - merged["mean_rh"]) / merged["sd_rh"]
    out = merged[["county_id", "year", "month", "z_temp", "z_rh"]].copy()
    return out.sort_values(["county_id", "year", "month"]).reset_index(drop=True)


def relative_humidity_vec(t_c, dew_c):
    """Array version of :func:`relative_humidity`."""
    t = np.asarray(t_c, dtype=float)
    d = np.asarray(dew_c, dtype=float)
    if np.any(t <= -MAGNUS_B) or np.any(d <= -MAGNUS_B):
        raise OutOfRange(f"temperature/dew point at or below {-MAGNUS_B} C")
    d = np.minimum(d, t)
    rh = 100.0 * np.exp(MAGNUS_A * d / (MAGNUS_B + d)) / np.exp(MAGNUS_A * t / (MAGNUS_B + t))
    return np.minimum(rh, 100.0)


def _as_weather_frame(records) -> pd.DataFrame:
    if isinstance(records, pd.DataFrame):
        return records.copy()
    return pd.DataFrame(
        {
            "county_id": [w.county_id for w in records],
            "year": [w.year for w in records],
            "month": [w.month for w in records],
            "t2m_c": [w.t2m_c for w in records],
            "dewpoint_c": [w.dewpoint_c for w in records],
            "precip_mm": [w.precip_mm for w in records],
            "u10": [w.u10 for w in records],
            "v10": [w.v10 for w in records],
            "u100": [w.u100 for w in records],
            "v100": [w.v100 for w in records],
        }
    )
