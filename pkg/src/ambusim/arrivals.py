"""Emergency call generation from piecewise-constant weekly rate profiles.

Rates are per (zone, class) with a fixed bin length over one week and wrap
periodically. Each (zone, class) pair draws from its own seeded substream,
so adding or removing a pair never perturbs the others, and a scenario is
bit-reproducible from (table, horizon, seed).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .citymodel import GeoPoint, point_in_polygon

WEEK_S = 604_800.0
DEFAULT_BIN_S = 1800.0


@dataclass(frozen=True)
class EmergencyCall:
    id: int
    time: float
    zone: int
    etype: int
    location: GeoPoint


@dataclass
class ArrivalRateTable:
    """rates[zone, etype, bin] in arrivals per second, week-periodic."""

    rates: np.ndarray
    bin_length_s: float = DEFAULT_BIN_S

    def __post_init__(self):
        self.rates = np.asarray(self.rates, dtype=float)
        if self.rates.ndim != 3:
            raise ValueError("rates must be (n_zones, n_etypes, n_bins)")
        n_bins = round(WEEK_S / self.bin_length_s)
        if abs(n_bins * self.bin_length_s - WEEK_S) > 1e-9:
            raise ValueError("bin length must divide one week")
        if self.rates.shape[2] != n_bins:
            raise ValueError(f"expected {n_bins} bins, got {self.rates.shape[2]}")
        if (self.rates < 0).any() or not np.isfinite(self.rates).all():
            raise ValueError("rates must be finite and nonnegative")

    @property
    def n_zones(self) -> int:
        return self.rates.shape[0]

    @property
    def n_etypes(self) -> int:
        return self.rates.shape[1]

    @property
    def n_bins(self) -> int:
        return self.rates.shape[2]

    def rate_at(self, zone: int, etype: int, t: float) -> float:
        b = int(t // self.bin_length_s) % self.n_bins
        return float(self.rates[zone, etype, b])

    def weekly_average(self, zone: int, etype: int) -> float:
        return float(self.rates[zone, etype].mean())

    def to_csv(self, path: str) -> None:
        """Write nonzero entries as zone_id,etype,bin_index,rate_per_sec."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["zone_id", "etype", "bin_index", "rate_per_sec"])
            nz = np.argwhere(self.rates > 0)
            for z, c, b in nz:
                writer.writerow([z, c, b, repr(float(self.rates[z, c, b]))])

    @classmethod
    def from_csv(
        cls, path: str, n_zones: int, n_etypes: int, bin_length_s: float = DEFAULT_BIN_S
    ) -> "ArrivalRateTable":
        n_bins = round(WEEK_S / bin_length_s)
        rates = np.zeros((n_zones, n_etypes, n_bins))
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                rates[int(row["zone_id"]), int(row["etype"]), int(row["bin_index"])] = float(
                    row["rate_per_sec"]
                )
        return cls(rates=rates, bin_length_s=bin_length_s)


def _sample_in_polygon(rng: np.random.Generator, poly: np.ndarray, centroid: GeoPoint) -> GeoPoint:
    """Uniform point in a polygon by rejection from its bounding box."""
    lat_min, lon_min = poly.min(axis=0)
    lat_max, lon_max = poly.max(axis=0)
    for _ in range(10_000):
        lat = rng.uniform(lat_min, lat_max)
        lon = rng.uniform(lon_min, lon_max)
        if point_in_polygon(lat, lon, poly):
            return GeoPoint(lat, lon)
    return centroid  # degenerate sliver, essentially unreachable


def sample_scenario(
    table: ArrivalRateTable,
    zones: list,
    horizon_s: float,
    seed: int,
    start_offset_s: float = 0.0,
) -> list:
    """One scenario of calls over [0, horizon_s), sorted by arrival time.

    Per bin segment the count is Poisson(rate * length) with times placed
    uniformly inside the segment. Call ids are assigned after the global
    sort by (time, zone, etype).
    """
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    if horizon_s <= 0:
        raise ValueError("horizon must be positive")
    raw = []
    blen = table.bin_length_s
    for z in range(table.n_zones):
        poly = zones[z].polygon
        centroid = zones[z].centroid
        for c in range(table.n_etypes):
            if table.rates[z, c].max() <= 0.0:
                continue
            rng = np.random.default_rng([seed, z, c])
            t0 = start_offset_s
            end = start_offset_s + horizon_s
            while t0 < end:
                seg_end = min(end, (np.floor(t0 / blen) + 1.0) * blen)
                rate = table.rate_at(z, c, t0)
                if rate > 0.0:
                    count = rng.poisson(rate * (seg_end - t0))
                    for u in rng.uniform(t0, seg_end, size=count):
                        loc = _sample_in_polygon(rng, poly, centroid)
                        raw.append((u - start_offset_s, z, c, loc))
                t0 = seg_end
    raw.sort(key=lambda r: (r[0], r[1], r[2]))
    return [
        EmergencyCall(id=i, time=t, zone=z, etype=c, location=loc)
        for i, (t, z, c, loc) in enumerate(raw)
    ]
