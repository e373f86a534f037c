"""Geodesic primitives: great-circle distance, bearings, point-in-polygon.

Distances use the haversine formula on a sphere of radius 6371.0088 km
(IUGG mean). All radii of interest are under 100 km, where the spherical
error is far below the data resolution, so no ellipsoidal model is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBearing, InvalidPolygon

EARTH_RADIUS_KM = 6371.0088


@dataclass(frozen=True)
class GeoPoint:
    """A latitude/longitude pair in decimal degrees."""

    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError(f"non-finite coordinates ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class Polygon:
    """A simple ring of >= 3 vertices, implicitly closed.

    The first vertex must not be repeated as the last; closure is implied.
    A ring with (near-)zero planar area is rejected.
    """

    ring: tuple[GeoPoint, ...]

    def __post_init__(self):
        ring = tuple(self.ring)
        object.__setattr__(self, "ring", ring)
        if len(ring) < 3:
            raise InvalidPolygon(f"polygon needs >= 3 vertices, got {len(ring)}")
        if ring[0] == ring[-1]:
            raise InvalidPolygon("first vertex duplicated as last; closure is implicit")
        if abs(_ring_area(ring)) < 1e-12:
            raise InvalidPolygon("polygon has zero area")


@dataclass(frozen=True)
class CountyGeometry:
    """A county: identifiers, centroid, boundary ring, and optional tags.

    ``regions`` may hold several labels (a province can sit in more than
    one regional subsample); ``policy_zone`` is always a single label.
    """

    county_id: str
    province_id: str
    centroid: GeoPoint
    polygon: Polygon
    regions: tuple[str, ...] = ()
    policy_zone: str | None = None

    def __post_init__(self):
        if not self.county_id or not self.province_id:
            raise ValueError("county_id and province_id must be non-empty")


def _ring_area(ring) -> float:
    # Shoelace formula in lon/lat plane; sign carries orientation.
    area = 0.0
    n = len(ring)
    for i in range(n):
        a, b = ring[i], ring[(i + 1) % n]
        area += a.lon * b.lat - b.lon * a.lat
    return area / 2.0


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance between two points in kilometres.

    Symmetric, nonnegative, and exactly zero for identical points.
    """
    if a.lat == b.lat and a.lon == b.lon:
        return 0.0
    la1, lo1 = math.radians(a.lat), math.radians(a.lon)
    la2, lo2 = math.radians(b.lat), math.radians(b.lon)
    s = (
        math.sin((la2 - la1) / 2.0) ** 2
        + math.cos(la1) * math.cos(la2) * math.sin((lo2 - lo1) / 2.0) ** 2
    )
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(s)))


def initial_bearing_deg(origin: GeoPoint, target: GeoPoint) -> float:
    """Initial great-circle bearing from ``origin`` to ``target``.

    North is 0, east is 90, measured clockwise; result in [0, 360).

    Raises
    ------
    DegenerateBearing
        If the points coincide.
    """
    if origin.lat == target.lat and origin.lon == target.lon:
        raise DegenerateBearing(f"coincident points ({origin.lat}, {origin.lon})")
    la1, la2 = math.radians(origin.lat), math.radians(target.lat)
    dlon = math.radians(target.lon - origin.lon)
    x = math.sin(dlon) * math.cos(la2)
    y = math.cos(la1) * math.sin(la2) - math.sin(la1) * math.cos(la2) * math.cos(dlon)
    return math.degrees(math.atan2(x, y)) % 360.0


def direction_unit_vector(bearing_deg: float) -> tuple[float, float]:
    """Convert a compass bearing to an (east, north) unit vector.

    Bearing 0 maps to (0, 1) and bearing 90 to (1, 0).
    """
    rad = math.radians(bearing_deg)
    return (math.sin(rad), math.cos(rad))


def destination_point(origin: GeoPoint, bearing_deg: float, distance_km: float) -> GeoPoint:
    """Point reached travelling ``distance_km`` from ``origin`` on ``bearing_deg``."""
    delta = distance_km / EARTH_RADIUS_KM
    theta = math.radians(bearing_deg)
    la1, lo1 = math.radians(origin.lat), math.radians(origin.lon)
    la2 = math.asin(
        math.sin(la1) * math.cos(delta) + math.cos(la1) * math.sin(delta) * math.cos(theta)
    )
    lo2 = lo1 + math.atan2(
        math.sin(theta) * math.sin(delta) * math.cos(la1),
        math.cos(delta) - math.sin(la1) * math.sin(la2),
    )
    lon = math.degrees(lo2)
    if lon > 180.0:
        lon -= 360.0
    elif lon < -180.0:
        lon += 360.0
    return GeoPoint(math.degrees(la2), lon)


def point_in_polygon(p: GeoPoint, poly: Polygon) -> bool:
    """Ray-casting membership test treating lon/lat as planar coordinates.

    Points lying on an edge (or vertex) count as inside, which keeps grid
    assignment deterministic when a cell centre sits on a shared border.
    """
    ring = poly.ring
    x, y = p.lon, p.lat
    n = len(ring)
    inside = False
    for i in range(n):
        a, b = ring[i], ring[(i + 1) % n]
        x1, y1, x2, y2 = a.lon, a.lat, b.lon, b.lat
        if _on_segment(x, y, x1, y1, x2, y2):
            return True
        if (y1 > y) != (y2 > y):
            x_cross = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            if x < x_cross:
                inside = not inside
    return inside


def _on_segment(x, y, x1, y1, x2, y2, eps=1e-12) -> bool:
    cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
    if abs(cross) > eps:
        return False
    return min(x1, x2) - eps <= x <= max(x1, x2) + eps and min(y1, y2) - eps <= y <= max(y1, y2) + eps


# Vectorised counterparts used by the bulk exposure/raster paths. They apply
# the same formulas as the scalar functions; tests assert agreement.


def haversine_km_vec(lat1, lon1, lat2, lon2):
    """Element-wise haversine distance for numpy array inputs (km)."""
    la1, lo1, la2, lo2 = (np.radians(np.asarray(v, dtype=float)) for v in (lat1, lon1, lat2, lon2))
    s = np.sin((la2 - la1) / 2.0) ** 2 + np.cos(la1) * np.cos(la2) * np.sin((lo2 - lo1) / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(s)))


def initial_bearing_deg_vec(lat1, lon1, lat2, lon2):
    """Element-wise initial bearing (degrees in [0, 360)) for array inputs."""
    la1, la2 = np.radians(np.asarray(lat1, dtype=float)), np.radians(np.asarray(lat2, dtype=float))
    dlon = np.radians(np.asarray(lon2, dtype=float) - np.asarray(lon1, dtype=float))
    x = np.sin(dlon) * np.cos(la2)
    y = np.cos(la1) * np.sin(la2) - np.sin(la1) * np.cos(la2) * np.cos(dlon)
    return np.degrees(np.arctan2(x, y)) % 360.0
