"""CSV schemas and readers/writers for every pipeline interface.

All files are UTF-8 with a header row, '.' decimal separator, ISO dates,
and empty fields for missing numeric cells (never sentinel numbers).
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pandas as pd

from .exposure import InstrumentMatrix, PlantUnit
from .geo import CountyGeometry, GeoPoint, Polygon

PLANTS_HEADER = [
    "unit_id",
    "lat",
    "lon",
    "capacity_mw",
    "commission_year",
    "retire_year",
    "retire_month",
    "fgd_install_year",
    "so2_removed_10kt",
]
COUNTIES_HEADER = ["county_id", "province_id", "centroid_lat", "centroid_lon", "polygon_wkt_like"]
MORTALITY_HEADER = ["county_id", "year", "u5_mortality_per_1000"]
WEATHER_HEADER = [
    "county_id",
    "year",
    "month",
    "t2m_c",
    "dewpoint_c",
    "precip_mm",
    "u10",
    "v10",
    "u100",
    "v100",
]
GRID_HEADER = ["cell_lat", "cell_lon", "date", "pollutant", "value"]
SOCIO_HEADER = ["county_id", "year", "prim_gdp_pc_cny", "sec_gdp_pc_cny", "hospital_beds_per_10k"]


def _opt_int(value) -> int | None:
    if value is None or (isinstance(value, float) and math.isnan(value)) or value == "":
        return None
    return int(value)


def _opt_float(value) -> float | None:
    if value is None or value == "":
        return None
    value = float(value)
    return None if math.isnan(value) else value


def read_plants(path) -> list[PlantUnit]:
    df = pd.read_csv(path, dtype={"unit_id": str})
    plants = []
    for row in df.itertuples(index=False):
        plants.append(
            PlantUnit(
                unit_id=row.unit_id,
                location=GeoPoint(float(row.lat), float(row.lon)),
                capacity_mw=float(row.capacity_mw),
                commission_year=_opt_int(row.commission_year),
                retire_year=_opt_int(row.retire_year),
                retire_month=_opt_int(row.retire_month),
                fgd_install_year=_opt_int(row.fgd_install_year),
                so2_removed_10kt=_opt_float(row.so2_removed_10kt),
            )
        )
    return plants


def write_plants(plants: list[PlantUnit], path) -> None:
    df = pd.DataFrame(
        {
            "unit_id": [p.unit_id for p in plants],
            "lat": [p.location.lat for p in plants],
            "lon": [p.location.lon for p in plants],
            "capacity_mw": [p.capacity_mw for p in plants],
            "commission_year": [p.commission_year for p in plants],
            "retire_year": [p.retire_year for p in plants],
            "retire_month": [p.retire_month for p in plants],
            "fgd_install_year": [p.fgd_install_year for p in plants],
            "so2_removed_10kt": [p.so2_removed_10kt for p in plants],
        },
        columns=PLANTS_HEADER,
    )
    for col in ("commission_year", "retire_year", "retire_month", "fgd_install_year"):
        df[col] = df[col].astype("Int64")
    df.to_csv(path, index=False)


def _ring_to_text(polygon: Polygon) -> str:
    return "; ".join(f"{pt.lon:.10g} {pt.lat:.10g}" for pt in polygon.ring)


def _ring_from_text(text: str) -> Polygon:
    points = []
    for chunk in text.split(";"):
        lon_s, lat_s = chunk.strip().split()
        points.append(GeoPoint(float(lat_s), float(lon_s)))
    return Polygon(tuple(points))


def read_counties(path) -> list[CountyGeometry]:
    df = pd.read_csv(path, dtype={"county_id": str, "province_id": str})
    return [
        CountyGeometry(
            county_id=row.county_id,
            province_id=row.province_id,
            centroid=GeoPoint(float(row.centroid_lat), float(row.centroid_lon)),
            polygon=_ring_from_text(row.polygon_wkt_like),
        )
        for row in df.itertuples(index=False)
    ]


def write_counties(counties: list[CountyGeometry], path) -> None:
    df = pd.DataFrame(
        {
            "county_id": [c.county_id for c in counties],
            "province_id": [c.province_id for c in counties],
            "centroid_lat": [c.centroid.lat for c in counties],
            "centroid_lon": [c.centroid.lon for c in counties],
            "polygon_wkt_like": [_ring_to_text(c.polygon) for c in counties],
        },
        columns=COUNTIES_HEADER,
    )
    df.to_csv(path, index=False)


def read_mortality(path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"county_id": str})


def read_weather(path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"county_id": str})


def read_grid(path) -> pd.DataFrame:
    df = pd.read_csv(path)
    df["date"] = pd.to_datetime(df["date"]).dt.date
    return df


def read_socio(path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"county_id": str})


def write_frame(df: pd.DataFrame, path, columns: list[str] | None = None) -> None:
    if columns is not None:
        df = df[columns]
    df.to_csv(path, index=False)


def write_matrix(matrix: InstrumentMatrix, path) -> None:
    matrix.to_frame().to_csv(path, index=False)


def read_matrix(path) -> InstrumentMatrix:
    df = pd.read_csv(path, dtype={"county_id": str})
    return InstrumentMatrix.from_frame(df)


def write_panel(rows: pd.DataFrame, path) -> None:
    rows.to_csv(path, index=False)


def read_panel(path) -> pd.DataFrame:
    return pd.read_csv(path, dtype={"county_id": str, "province_id": str})


def sha256_file(path) -> str:
    import hashlib

    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p
