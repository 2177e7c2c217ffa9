"""Ready-made city instances and JSON configuration loading.

The synthetic city is a coastal-metro shaped box covered by a zone grid.
Demand concentrates around a few hotspots, swings over the day, and splits
across call classes with fixed shares; facility layouts come from a seeded
jittered lattice so they are reproducible and reasonably spread out.

A JSON config can override any of it, point at explicit facility
coordinates, load zone rates from CSV, or swap great-circle travel for a
matrix of measured times. Matrix location ids follow the convention
z<zone_id>, s<station_index>, h<hospital_index>.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .arrivals import DEFAULT_BIN_S, WEEK_S, ArrivalRateTable
from .citymodel import (
    BBox,
    CityInstance,
    GeoPoint,
    TravelProvider,
    build_hex_grid,
    build_rect_grid,
)
from .metrics import CostModel
from .simulator import ServiceParams

# a coastal-metro urban core: about 34 km east-west, 30 km north-south
DEFAULT_BBOX = BBox(lat_min=-23.05, lat_max=-22.78, lon_min=-43.47, lon_max=-43.14)

# (fraction of lon span, fraction of lat span, weight)
DEMAND_HOTSPOTS = ((0.30, 0.30, 1.0), (0.62, 0.70, 0.7), (0.78, 0.35, 0.5))
DEMAND_FLOOR = 0.05
HOTSPOT_WIDTH = 0.15  # gaussian sigma, in span fractions
DAILY_SWING = 0.4  # peak-to-mean amplitude of the time-of-day factor

ETYPE_SHARES = (0.2, 0.3, 0.2, 0.3)

SETUPS = ("rj", "us", "synthetic")
MAX_STATIONS = 34


def cost_model_for(setup: str) -> CostModel:
    if setup in ("rj", "synthetic"):
        return CostModel.default_rj()
    if setup == "us":
        return CostModel.default_us()
    raise ValueError(f"unknown setup {setup!r}; known: {', '.join(SETUPS)}")


@dataclass(frozen=True)
class InstanceConfig:
    """Everything needed to build one city instance."""

    setup: str = "rj"
    grid_kind: str = "rect"
    nx: int = 10
    ny: int = 10
    hex_edge_deg: float = 0.03
    bbox: BBox = DEFAULT_BBOX
    n_stations: int = 34
    n_hospitals: int = 8
    calls_per_hour: float = 5.0
    layout_seed: int = 20240501
    speed_kmh: float = 60.0
    bin_length_s: float = DEFAULT_BIN_S
    stations: tuple = None  # explicit (lat, lon) pairs override the layout
    hospitals: tuple = None
    rates_csv: str = None
    travel_matrix_csv: str = None
    service: ServiceParams = ServiceParams()

    @classmethod
    def from_dict(cls, raw: dict) -> "InstanceConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kwargs = dict(raw)
        if "bbox" in kwargs:
            kwargs["bbox"] = BBox(**kwargs["bbox"])
        if "service" in kwargs:
            kwargs["service"] = ServiceParams(**kwargs["service"])
        for key in ("stations", "hospitals"):
            if kwargs.get(key) is not None:
                kwargs[key] = tuple(GeoPoint(float(a), float(b)) for a, b in kwargs[key])
        return cls(**kwargs)


def default_config(setup: str) -> InstanceConfig:
    """Per-setup defaults: rj and us share the full 34-station metro layout,
    synthetic is a small instance meant for quick runs and tests."""
    if setup in ("rj", "us"):
        return InstanceConfig(setup=setup)
    if setup == "synthetic":
        return InstanceConfig(
            setup="synthetic",
            nx=6,
            ny=6,
            n_stations=4,
            n_hospitals=2,
            calls_per_hour=3.0,
        )
    raise ValueError(f"unknown setup {setup!r}; known: {', '.join(SETUPS)}")


def load_instance_config(path: str) -> InstanceConfig:
    with open(path) as fh:
        return InstanceConfig.from_dict(json.load(fh))


def _spread_points(bbox: BBox, n: int, rng: np.random.Generator) -> list[GeoPoint]:
    """n points on a jittered lattice: spread like a planned network, not
    uniform noise, but still seed-dependent."""
    k = math.ceil(math.sqrt(n))
    picks = np.unique(np.linspace(0, k * k - 1, n).round().astype(int))
    if len(picks) < n:  # rounding collided; fall back to the first n cells
        picks = np.arange(n)
    dlat = (bbox.lat_max - bbox.lat_min) / k
    dlon = (bbox.lon_max - bbox.lon_min) / k
    out = []
    for idx in picks.tolist():
        row, col = divmod(int(idx), k)
        lat = bbox.lat_min + (row + 0.5 + rng.uniform(-0.3, 0.3)) * dlat
        lon = bbox.lon_min + (col + 0.5 + rng.uniform(-0.3, 0.3)) * dlon
        out.append(GeoPoint(lat, lon))
    return out


def demand_weights(zones, bbox: BBox) -> np.ndarray:
    """Relative demand per zone: hotspot gaussians over a uniform floor."""
    lat_span = bbox.lat_max - bbox.lat_min
    lon_span = bbox.lon_max - bbox.lon_min
    u = np.array([(z.centroid.lon - bbox.lon_min) / lon_span for z in zones])
    v = np.array([(z.centroid.lat - bbox.lat_min) / lat_span for z in zones])
    w = np.full(len(zones), DEMAND_FLOOR)
    for hx, hy, hw in DEMAND_HOTSPOTS:
        w += hw * np.exp(-((u - hx) ** 2 + (v - hy) ** 2) / (2.0 * HOTSPOT_WIDTH**2))
    return w


def build_rate_table(
    zones,
    bbox: BBox,
    n_etypes: int,
    calls_per_hour: float,
    bin_length_s: float = DEFAULT_BIN_S,
    shares: tuple = ETYPE_SHARES,
) -> ArrivalRateTable:
    """Weekly rate table: spatial weights x class shares x time-of-day swing,
    scaled so the fleet-wide average arrival rate hits calls_per_hour."""
    if len(shares) != n_etypes:
        raise ValueError("need one share per emergency class")
    if calls_per_hour <= 0:
        raise ValueError("calls_per_hour must be positive")
    n_bins = round(WEEK_S / bin_length_s)
    t_mid = (np.arange(n_bins) + 0.5) * bin_length_s
    swing = 1.0 - DAILY_SWING * np.cos(2.0 * np.pi * (t_mid % 86400.0) / 86400.0)
    w = demand_weights(zones, bbox)
    w = w / w.sum()
    rates = w[:, None, None] * np.asarray(shares)[None, :, None] * swing[None, None, :]
    scale = (calls_per_hour / 3600.0) / rates.sum(axis=(0, 1)).mean()
    return ArrivalRateTable(rates=rates * scale, bin_length_s=bin_length_s)


def build_instance(cfg: InstanceConfig, n_stations_used: int = None) -> CityInstance:
    """Build the instance; n_stations_used keeps only the first n stations of
    the layout, so fleet-size sweeps share station positions."""
    if cfg.grid_kind == "rect":
        grid = build_rect_grid(cfg.bbox, cfg.nx, cfg.ny)
    elif cfg.grid_kind == "hex":
        grid = build_hex_grid(cfg.bbox, cfg.hex_edge_deg)
    else:
        raise ValueError(f"unknown grid kind {cfg.grid_kind!r}")
    if cfg.n_stations > MAX_STATIONS:
        raise ValueError(f"at most {MAX_STATIONS} stations are supported")
    if cfg.stations is not None:
        stations = [GeoPoint(*p) for p in cfg.stations]
    else:
        stations = _spread_points(
            cfg.bbox, cfg.n_stations, np.random.default_rng([cfg.layout_seed, 1])
        )
    if n_stations_used is not None:
        if not 1 <= n_stations_used <= len(stations):
            raise ValueError(
                f"n_stations_used must be in 1..{len(stations)}, got {n_stations_used}"
            )
        stations = stations[:n_stations_used]
    if cfg.hospitals is not None:
        hospitals = [GeoPoint(*p) for p in cfg.hospitals]
    else:
        hospitals = _spread_points(
            cfg.bbox, cfg.n_hospitals, np.random.default_rng([cfg.layout_seed, 2])
        )
    if cfg.travel_matrix_csv is not None:
        travel = TravelProvider.from_matrix_csv(cfg.travel_matrix_csv)
        for z in grid.zones:
            travel.register(f"z{z.id}", z.centroid)
        for i, p in enumerate(stations):
            travel.register(f"s{i}", p)
        for i, p in enumerate(hospitals):
            travel.register(f"h{i}", p)
    else:
        travel = TravelProvider(mode="great_circle", speed_kmh=cfg.speed_kmh)
    cm = cost_model_for(cfg.setup)
    if cfg.rates_csv is not None:
        rates = ArrivalRateTable.from_csv(
            cfg.rates_csv, len(grid.zones), cm.n_etypes, cfg.bin_length_s
        )
    else:
        rates = build_rate_table(
            grid.zones, cfg.bbox, cm.n_etypes, cfg.calls_per_hour, cfg.bin_length_s
        )
    return CityInstance(
        grid=grid, stations=stations, hospitals=hospitals, travel=travel, rates=rates
    )


def build_synthetic_instance(
    setup: str = "rj", n_stations_used: int = None, **overrides
) -> CityInstance:
    """Shorthand used by the CLI and tests: setup defaults plus overrides."""
    cfg = default_config(setup)
    if overrides:
        cfg = replace(cfg, **overrides)
    return build_instance(cfg, n_stations_used=n_stations_used)
