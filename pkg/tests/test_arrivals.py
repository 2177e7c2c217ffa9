"""Arrival rate tables and seeded scenario generation."""

import numpy as np
import pytest

from ambusim.arrivals import (
    WEEK_S,
    ArrivalRateTable,
    sample_scenario,
)
from ambusim.citymodel import BBox, build_rect_grid, point_in_polygon

BOX = BBox(lat_min=-23.0, lon_min=-43.4, lat_max=-22.8, lon_max=-43.1)


def small_table(n_zones=4, n_etypes=2, bin_length_s=1800.0, base=1.0 / 900.0):
    n_bins = round(WEEK_S / bin_length_s)
    rates = np.zeros((n_zones, n_etypes, n_bins))
    rng = np.random.default_rng(9)
    for z in range(n_zones):
        for c in range(n_etypes):
            rates[z, c] = base * rng.uniform(0.5, 1.5, size=n_bins)
    return ArrivalRateTable(rates=rates, bin_length_s=bin_length_s)


def as_tuples(calls):
    return [(c.time, c.zone, c.etype, c.location.lat, c.location.lon) for c in calls]


def test_table_validation():
    n_bins = round(WEEK_S / 1800.0)
    with pytest.raises(ValueError):
        ArrivalRateTable(rates=np.zeros((2, 2)))
    with pytest.raises(ValueError):
        ArrivalRateTable(rates=np.zeros((2, 2, n_bins)), bin_length_s=1700.0)
    with pytest.raises(ValueError):
        ArrivalRateTable(rates=np.zeros((2, 2, n_bins - 1)))
    bad = np.zeros((1, 1, n_bins))
    bad[0, 0, 0] = -1.0
    with pytest.raises(ValueError):
        ArrivalRateTable(rates=bad)


def test_rate_lookup_is_week_periodic():
    table = small_table()
    for t in (0.0, 1799.0, 1800.0, 90000.0):
        assert table.rate_at(1, 0, t) == table.rate_at(1, 0, t + WEEK_S)
        assert table.rate_at(1, 0, t) == table.rate_at(1, 0, t + 3 * WEEK_S)
    # bin 0 covers [0, bin_length)
    assert table.rate_at(0, 0, 0.0) == table.rates[0, 0, 0]
    assert table.rate_at(0, 0, 1799.9) == table.rates[0, 0, 0]
    assert table.rate_at(0, 0, 1800.0) == table.rates[0, 0, 1]
    assert table.weekly_average(2, 1) == pytest.approx(table.rates[2, 1].mean())


def test_csv_round_trip_is_exact(tmp_path):
    table = small_table()
    path = str(tmp_path / "rates.csv")
    table.to_csv(path)
    back = ArrivalRateTable.from_csv(
        path, n_zones=table.n_zones, n_etypes=table.n_etypes, bin_length_s=1800.0
    )
    assert np.array_equal(back.rates, table.rates)


def test_scenarios_are_reproducible():
    grid = build_rect_grid(BOX, nx=2, ny=2)
    table = small_table()
    a = sample_scenario(table, grid.zones, horizon_s=86400.0, seed=42)
    b = sample_scenario(table, grid.zones, horizon_s=86400.0, seed=42)
    assert as_tuples(a) == as_tuples(b)
    c = sample_scenario(table, grid.zones, horizon_s=86400.0, seed=43)
    assert as_tuples(a) != as_tuples(c)


def test_calls_are_sorted_with_sequential_ids_inside_horizon():
    grid = build_rect_grid(BOX, nx=2, ny=2)
    table = small_table()
    calls = sample_scenario(table, grid.zones, horizon_s=43200.0, seed=7)
    assert [c.id for c in calls] == list(range(len(calls)))
    times = [c.time for c in calls]
    assert times == sorted(times)
    assert all(0.0 <= t < 43200.0 for t in times)
    for c in calls:
        poly = grid.zones[c.zone].polygon
        assert point_in_polygon(c.location.lat, c.location.lon, poly)


def test_zeroing_one_pair_leaves_other_substreams_untouched():
    grid = build_rect_grid(BOX, nx=2, ny=2)
    table = small_table()
    full = sample_scenario(table, grid.zones, horizon_s=86400.0, seed=5)
    zeroed_rates = table.rates.copy()
    zeroed_rates[1, 0] = 0.0
    zeroed = ArrivalRateTable(rates=zeroed_rates, bin_length_s=table.bin_length_s)
    part = sample_scenario(zeroed, grid.zones, horizon_s=86400.0, seed=5)
    keep = [t for t in as_tuples(full) if not (t[1] == 1 and t[2] == 0)]
    assert as_tuples(part) == keep
    assert len(keep) < len(full)


def test_poisson_counts_have_the_right_mean():
    grid = build_rect_grid(BOX, nx=1, ny=1)
    n_bins = round(WEEK_S / 1800.0)
    lam = 1.0 / 600.0
    table = ArrivalRateTable(rates=np.full((1, 1, n_bins), lam))
    horizon = 6.0 * 3600.0
    counts = [
        len(sample_scenario(table, grid.zones, horizon_s=horizon, seed=s))
        for s in range(40)
    ]
    mean = np.mean(counts)
    want = lam * horizon  # 36 expected calls
    # 40 replications: standard error sqrt(36/40) ~ 0.95, allow 4 sigma
    assert abs(mean - want) < 4.0 * np.sqrt(want / 40.0)


def test_start_offset_shifts_the_rate_pattern():
    grid = build_rect_grid(BOX, nx=1, ny=1)
    n_bins = round(WEEK_S / 1800.0)
    rates = np.zeros((1, 1, n_bins))
    rates[0, 0, 0] = 1.0 / 60.0  # only the first half hour of the week is active
    table = ArrivalRateTable(rates=rates)
    on = sample_scenario(table, grid.zones, horizon_s=1800.0, seed=3)
    assert len(on) > 0
    off = sample_scenario(table, grid.zones, horizon_s=1800.0, seed=3, start_offset_s=1800.0)
    assert off == []
    # offset by a whole week lands on the same pattern
    wrap = sample_scenario(table, grid.zones, horizon_s=1800.0, seed=3, start_offset_s=WEEK_S)
    assert len(wrap) > 0
    assert all(0.0 <= c.time < 1800.0 for c in wrap)


def test_bad_sampling_arguments():
    grid = build_rect_grid(BOX, nx=1, ny=1)
    table = small_table(n_zones=1, n_etypes=1)
    with pytest.raises(ValueError):
        sample_scenario(table, grid.zones, horizon_s=100.0, seed=-1)
    with pytest.raises(ValueError):
        sample_scenario(table, grid.zones, horizon_s=0.0, seed=1)
