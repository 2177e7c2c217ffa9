"""City geometry: zones, travel times, station and hospital siting.

A city is discretized into zones (rectangular or hexagonal grid cells, or an
explicit polygon list). Travel times between points come either from a
great-circle distance at constant speed or from a dense travel-time matrix
over registered locations.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

EARTH_RADIUS_M = 6_371_000.0


class GeoPoint(NamedTuple):
    lat: float
    lon: float


class BBox(NamedTuple):
    lat_min: float
    lon_min: float
    lat_max: float
    lon_max: float


def haversine_m(p: GeoPoint, q: GeoPoint) -> float:
    """Great-circle distance in meters."""
    phi1, phi2 = math.radians(p.lat), math.radians(q.lat)
    dphi = phi2 - phi1
    dlam = math.radians(q.lon - p.lon)
    a = math.sin(dphi / 2.0) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(a)))


def haversine_m_many(lats: np.ndarray, lons: np.ndarray, q: GeoPoint) -> np.ndarray:
    """Vectorized great-circle distance from many points to one point."""
    phi1 = np.radians(lats)
    phi2 = math.radians(q.lat)
    dphi = phi2 - phi1
    dlam = np.radians(q.lon - lons)
    a = np.sin(dphi / 2.0) ** 2 + np.cos(phi1) * math.cos(phi2) * np.sin(dlam / 2.0) ** 2
    return 2.0 * EARTH_RADIUS_M * np.arcsin(np.minimum(1.0, np.sqrt(a)))


def polygon_area(poly: np.ndarray) -> float:
    """Shoelace area of a (k, 2) polygon in (lat, lon) plane coordinates."""
    y = poly[:, 0]
    x = poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def point_in_polygon(lat: float, lon: float, poly: np.ndarray) -> bool:
    """Even-odd ray casting test, poly is (k, 2) rows of (lat, lon)."""
    inside = False
    k = len(poly)
    j = k - 1
    for i in range(k):
        yi, xi = poly[i]
        yj, xj = poly[j]
        if (yi > lat) != (yj > lat) and lon < (xj - xi) * (lat - yi) / (yj - yi) + xi:
            inside = not inside
        j = i
    return inside


def clip_polygon_bbox(poly: np.ndarray, bbox: BBox) -> np.ndarray:
    """Sutherland-Hodgman clip of a convex polygon against a bbox.

    Returns a (k, 2) array of (lat, lon) vertices, possibly empty.
    """

    def clip_edge(pts, inside, intersect):
        out = []
        n = len(pts)
        for i in range(n):
            cur, nxt = pts[i], pts[(i + 1) % n]
            cur_in, nxt_in = inside(cur), inside(nxt)
            if cur_in:
                out.append(cur)
                if not nxt_in:
                    out.append(intersect(cur, nxt))
            elif nxt_in:
                out.append(intersect(cur, nxt))
        return out

    def cross_lat(a, b, lat0):
        t = (lat0 - a[0]) / (b[0] - a[0])
        return (lat0, a[1] + t * (b[1] - a[1]))

    def cross_lon(a, b, lon0):
        t = (lon0 - a[1]) / (b[1] - a[1])
        return (a[0] + t * (b[0] - a[0]), lon0)

    pts = [tuple(v) for v in poly]
    edges = [
        (lambda v: v[0] >= bbox.lat_min, lambda a, b: cross_lat(a, b, bbox.lat_min)),
        (lambda v: v[0] <= bbox.lat_max, lambda a, b: cross_lat(a, b, bbox.lat_max)),
        (lambda v: v[1] >= bbox.lon_min, lambda a, b: cross_lon(a, b, bbox.lon_min)),
        (lambda v: v[1] <= bbox.lon_max, lambda a, b: cross_lon(a, b, bbox.lon_max)),
    ]
    for inside, intersect in edges:
        if not pts:
            break
        pts = clip_edge(pts, inside, intersect)
    return np.array(pts, dtype=float).reshape(-1, 2)


@dataclass
class Zone:
    """One demand zone: a polygon with a representative centroid."""

    id: int
    centroid: GeoPoint
    polygon: np.ndarray  # (k, 2) rows of (lat, lon)
    kind: str = "rect"


@dataclass
class Grid:
    """Zone collection plus the lattice parameters needed for point lookup."""

    kind: str  # "rect" or "hex"
    bbox: BBox
    zones: list[Zone]
    nx: int = 0
    ny: int = 0
    edge_len: float = 0.0
    _centroid_arr: Optional[np.ndarray] = field(default=None, repr=False)

    def zone_of(self, p: GeoPoint) -> int:
        """Id of the zone containing p. Interior points map to exactly one zone.

        Rectangular grids use index arithmetic. Hexagonal cells are the
        Voronoi cells of their centers, so nearest-center lookup is exact.
        """
        if self.kind == "rect":
            fx = (p.lon - self.bbox.lon_min) / (self.bbox.lon_max - self.bbox.lon_min)
            fy = (p.lat - self.bbox.lat_min) / (self.bbox.lat_max - self.bbox.lat_min)
            ix = min(self.nx - 1, max(0, int(fx * self.nx)))
            iy = min(self.ny - 1, max(0, int(fy * self.ny)))
            return iy * self.nx + ix
        if self._centroid_arr is None:
            self._centroid_arr = np.array([[z.centroid.lat, z.centroid.lon] for z in self.zones])
        d2 = (self._centroid_arr[:, 0] - p.lat) ** 2 + (self._centroid_arr[:, 1] - p.lon) ** 2
        return int(np.argmin(d2))


def build_rect_grid(bbox: BBox, nx: int, ny: int) -> Grid:
    """nx-by-ny rectangular grid over bbox, zone ids row-major from the
    south-west corner, centroids at cell centers."""
    if nx < 1 or ny < 1:
        raise ValueError("grid dimensions must be positive")
    lats = np.linspace(bbox.lat_min, bbox.lat_max, ny + 1)
    lons = np.linspace(bbox.lon_min, bbox.lon_max, nx + 1)
    zones = []
    for iy in range(ny):
        for ix in range(nx):
            la0, la1 = lats[iy], lats[iy + 1]
            lo0, lo1 = lons[ix], lons[ix + 1]
            poly = np.array([[la0, lo0], [la0, lo1], [la1, lo1], [la1, lo0]])
            c = GeoPoint(0.5 * (la0 + la1), 0.5 * (lo0 + lo1))
            zones.append(Zone(id=iy * nx + ix, centroid=c, polygon=poly, kind="rect"))
    return Grid(kind="rect", bbox=bbox, zones=zones, nx=nx, ny=ny)


def _hex_vertices(cy: float, cx: float, s: float) -> np.ndarray:
    # pointy-top: vertices at 90, 30, -30, -90, -150, 150 degrees
    angles = np.radians([90, 30, -30, -90, -150, 150])
    return np.column_stack([cy + s * np.sin(angles), cx + s * np.cos(angles)])


def build_hex_grid(bbox: BBox, edge_len: float) -> Grid:
    """Pointy-top hexagon tiling clipped to bbox.

    Cell fragments keep the parent hexagon as their identity (one fragment
    per hexagon since the clip region is convex); the centroid stays at the
    lattice center. Edge length is in degrees of the (lon, lat) plane.
    """
    if edge_len <= 0:
        raise ValueError("edge_len must be positive")
    s = edge_len
    w = math.sqrt(3.0) * s  # horizontal pitch
    dy = 1.5 * s  # vertical pitch
    # extend one full cell beyond the bbox so the tiling covers it
    row_lo, col_lo = -1, -1
    row_hi = int(math.ceil((bbox.lat_max - bbox.lat_min) / dy)) + 1
    col_hi = int(math.ceil((bbox.lon_max - bbox.lon_min) / w)) + 1
    zones = []
    zid = 0
    for row in range(row_lo, row_hi + 1):
        cy = bbox.lat_min + row * dy
        offset = 0.5 * w if (row % 2) else 0.0
        for col in range(col_lo, col_hi + 1):
            cx = bbox.lon_min + col * w + offset
            hexagon = _hex_vertices(cy, cx, s)
            clipped = clip_polygon_bbox(hexagon, bbox)
            if len(clipped) < 3 or polygon_area(clipped) <= 0.0:
                continue
            zones.append(Zone(id=zid, centroid=GeoPoint(cy, cx), polygon=clipped, kind="hex"))
            zid += 1
    return Grid(kind="hex", bbox=bbox, zones=zones, edge_len=edge_len)


class TravelProvider:
    """Travel times between points.

    Two modes:
      great_circle: haversine distance at constant speed (default 60 km/h).
      matrix: dense seconds-valued lookup over registered locations; every
        queried point must have been registered, otherwise LookupError.
    """

    def __init__(self, mode: str = "great_circle", speed_kmh: float = 60.0):
        if mode not in ("great_circle", "matrix"):
            raise ValueError(f"unknown travel mode {mode!r}")
        self.mode = mode
        self.speed_kmh = speed_kmh
        self._keys: dict[tuple[float, float], int] = {}
        self._id_order: dict[str, int] = {}
        self._matrix: Optional[np.ndarray] = None

    @staticmethod
    def _coord_key(p: GeoPoint) -> tuple[float, float]:
        return (round(p.lat, 9), round(p.lon, 9))

    @classmethod
    def from_matrix_csv(cls, path: str) -> "TravelProvider":
        """Load a square travel-time matrix (seconds).

        CSV layout: header "id,<id0>,<id1>,..." then one row per location in
        the same order. Locations are attached to coordinates afterwards via
        register().
        """
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header = rows[0][1:]
        n = len(header)
        if len(rows) - 1 != n:
            raise ValueError("travel matrix must be square")
        mat = np.empty((n, n))
        order = {}
        for i, row in enumerate(rows[1:]):
            if row[0] != header[i]:
                raise ValueError("travel matrix row order must match header order")
            order[row[0]] = i
            mat[i] = [float(v) for v in row[1:]]
        if (mat < 0).any():
            raise ValueError("travel times must be nonnegative")
        tp = cls(mode="matrix")
        tp._matrix = mat
        tp._id_order = order
        return tp

    def register(self, loc_id: str, p: GeoPoint) -> None:
        """Bind a matrix location id to coordinates (matrix mode only)."""
        if self.mode != "matrix":
            return
        if loc_id not in self._id_order:
            raise LookupError(f"location id {loc_id!r} not present in travel matrix")
        self._keys[self._coord_key(p)] = self._id_order[loc_id]

    def _index_of(self, p: GeoPoint) -> int:
        try:
            return self._keys[self._coord_key(p)]
        except KeyError:
            raise LookupError(f"unregistered location {p}") from None

    def travel_time(self, p: GeoPoint, q: GeoPoint) -> float:
        """Seconds to travel from p to q."""
        if self.mode == "great_circle":
            return haversine_m(p, q) / (self.speed_kmh * 1000.0 / 3600.0)
        return float(self._matrix[self._index_of(p), self._index_of(q)])

    def times_to(self, lats: np.ndarray, lons: np.ndarray, q: GeoPoint) -> np.ndarray:
        """Seconds from many points to one point."""
        if self.mode == "great_circle":
            return haversine_m_many(lats, lons, q) / (self.speed_kmh * 1000.0 / 3600.0)
        j = self._index_of(q)
        idx = [self._keys.get((round(la, 9), round(lo, 9))) for la, lo in zip(lats, lons)]
        if any(i is None for i in idx):
            raise LookupError("unregistered location in batch query")
        return self._matrix[np.array(idx), j].astype(float)

    def times_from(self, p: GeoPoint, lats: np.ndarray, lons: np.ndarray) -> np.ndarray:
        """Seconds from one point to many points."""
        if self.mode == "great_circle":
            return haversine_m_many(lats, lons, p) / (self.speed_kmh * 1000.0 / 3600.0)
        i = self._index_of(p)
        idx = [self._keys.get((round(la, 9), round(lo, 9))) for la, lo in zip(lats, lons)]
        if any(j is None for j in idx):
            raise LookupError("unregistered location in batch query")
        return self._matrix[i, np.array(idx)].astype(float)


@dataclass
class CityInstance:
    """Immutable description of one city: zones, facilities, travel, demand.

    station_zone_map[z] is the station nearest to zone z's centroid by travel
    time (ties to the smaller station id); it defines each station's demand
    catchment.
    """

    grid: Grid
    stations: list[GeoPoint]
    hospitals: list[GeoPoint]
    travel: TravelProvider
    rates: object = None  # ArrivalRateTable, attached by the instance loader
    station_zone_map: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.stations:
            raise ValueError("instance needs at least one station")
        if not self.hospitals:
            raise ValueError("instance needs at least one hospital")
        if self.station_zone_map is None:
            self.station_zone_map = self._nearest_station_map()

    def _nearest_station_map(self) -> np.ndarray:
        out = np.zeros(len(self.grid.zones), dtype=int)
        for z in self.grid.zones:
            times = [self.travel.travel_time(z.centroid, s) for s in self.stations]
            out[z.id] = int(np.argmin(times))  # argmin ties to smaller id
        return out

    def nearest_hospital(self, p: GeoPoint) -> int:
        times = [self.travel.travel_time(p, h) for h in self.hospitals]
        return int(np.argmin(times))

    def nearest_station(self, p: GeoPoint) -> int:
        times = [self.travel.travel_time(p, s) for s in self.stations]
        return int(np.argmin(times))

    @property
    def zones(self) -> list[Zone]:
        return self.grid.zones
