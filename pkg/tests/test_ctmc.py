"""Station chain construction, stationary costs, and the fleet table."""

import numpy as np
import pytest
from conftest import erlang_b, single_class_model, two_type_model

from ambusim.ctmc import (
    PreparednessTable,
    StationModel,
    blocked_mask,
    build_generator,
    build_preparedness_table,
    cost_rate_vector,
    enumerate_states,
    preferred_available_type,
    stationary_distribution,
    steady_state_cost,
    table_param_hash,
)
from ambusim.linalg import build_reduced_matrix


def test_erlang_b_oracle_fixed_points():
    # hand-checked values of the recursion itself
    assert erlang_b(1, 1.0) == 0.5
    assert abs(erlang_b(2, 1.0) - 0.2) < 1e-15
    assert abs(erlang_b(3, 1.0) - 0.0625) < 1e-15


def test_single_type_blocking_matches_erlang_b():
    mu = 1.0 / 600.0
    for m in range(1, 9):
        for offered in (0.1, 1.0, 5.0):
            model = single_class_model(offered * mu, mu)
            Q, space = build_generator(model, (m,))
            assert space.n == m + 1
            nu, _ = stationary_distribution(Q)
            blocking = float(nu @ blocked_mask(model, space, 0))
            assert abs(blocking - erlang_b(m, offered)) < 1e-8


def test_erlang_blocking_decreases_with_fleet_size():
    mu = 1.0 / 600.0
    model = single_class_model(2.0 * mu, mu)
    costs = [steady_state_cost(model, (m,)) for m in range(1, 7)]
    assert all(a > b for a, b in zip(costs, costs[1:]))


def test_state_count_is_stars_and_bars():
    # 1 type serving 4 classes with m ambulances: C(m + 4, 4) states,
    # so m = 8 gives C(12, 4) = 495 and m = 4 gives C(8, 4) = 70
    model = StationModel(
        station_id=0,
        n_amb_types=1,
        lam=np.full(4, 1e-3),
        mu=np.full((1, 4), 1e-3),
        pref=[[0]] * 4,
        phi=np.ones(4),
    )
    assert enumerate_states(model, (8,)).n == 495
    assert enumerate_states(model, (4,)).n == 70
    assert enumerate_states(model, (0,)).n == 1


def test_generator_rows_sum_to_zero():
    model = two_type_model(seed=3)
    Q, _ = build_generator(model, (2, 1))
    rowsums = np.asarray(Q.sum(axis=1)).ravel()
    assert np.abs(rowsums).max() < 1e-12
    off = Q.toarray().copy()
    np.fill_diagonal(off, 0.0)
    assert off.min() >= 0.0


def test_state_index_round_trip():
    model = two_type_model(seed=1)
    space = enumerate_states(model, (2, 2))
    states = space.states()
    assert len(states) == space.n
    for i, st in enumerate(states):
        assert space.index_of(st) == i


def test_preferred_type_seizes_in_order():
    model = two_type_model(seed=2)
    space = enumerate_states(model, (1, 1))
    zero = tuple([0] * len(space.pairs))
    for c in range(model.n_classes):
        assert preferred_available_type(model, space, zero, c) == model.pref[c][0]
    # all type-0 units busy: classes preferring type 0 fall through to type 1
    states = space.states()
    busy0 = next(
        s for s in states if sum(s[: len(space.type_pairs[0])]) == 1 and sum(s) == 1
    )
    for c in range(model.n_classes):
        want = model.pref[c][1] if model.pref[c][0] == 0 else model.pref[c][0]
        assert preferred_available_type(model, space, busy0, c) == want


def test_stationary_matches_dense_oracle_on_two_type_chain():
    model = two_type_model(seed=7)
    Q, space = build_generator(model, (2, 2))
    D = build_reduced_matrix(Q.multiply(1.0 / abs(Q.diagonal()).max()).tocsr())
    e1 = np.zeros(space.n)
    e1[0] = 1.0
    oracle = np.linalg.solve(D.T.toarray(), e1)
    for method in ("cg", "gmres"):
        nu, _ = stationary_distribution(Q, method=method)
        assert np.abs(nu - oracle).max() < 1e-8
        assert abs(nu.sum() - 1.0) < 1e-12
        assert nu.min() >= 0.0


def test_cost_rate_vector_counts_blocked_classes():
    mu = 1.0 / 600.0
    model = single_class_model(2.0 * mu, mu)
    _, space = build_generator(model, (2,))
    cost = cost_rate_vector(model, space)
    # only the all-busy state pays, at rate lam * phi
    assert cost[space.index_of((2,))] == pytest.approx(2.0 * mu * 1.0)
    assert cost[space.index_of((0,))] == 0.0
    assert cost[space.index_of((1,))] == 0.0


def test_empty_fleet_blocks_everything():
    mu = 1.0 / 600.0
    model = single_class_model(0.5 * mu, mu)
    assert steady_state_cost(model, (0,)) == pytest.approx(0.5 * mu)


def test_table_lookup_clamps_to_caps():
    model = two_type_model(seed=5)
    table = build_preparedness_table([model], (2, 2))
    assert table.lookup(0, (5, 9)) == table.lookup(0, (2, 2))
    assert table.lookup(0, (0, 3)) == table.lookup(0, (0, 2))


def test_table_deltas_are_lookup_differences():
    model = two_type_model(seed=6)
    table = build_preparedness_table([model], (2, 2))
    fleet = (1, 1)
    for t in range(2):
        up = list(fleet)
        up[t] += 1
        down = list(fleet)
        down[t] -= 1
        assert table.add_delta(0, fleet, t) == pytest.approx(
            table.lookup(0, tuple(up)) - table.lookup(0, fleet)
        )
        assert table.remove_delta(0, fleet, t) == pytest.approx(
            table.lookup(0, tuple(down)) - table.lookup(0, fleet)
        )
    with pytest.raises(ValueError):
        table.remove_delta(0, (0, 1), 0)


def test_removing_an_ambulance_never_helps():
    model = two_type_model(seed=8)
    table = build_preparedness_table([model], (2, 2))
    for fleet in [(1, 1), (2, 1), (1, 2), (2, 2)]:
        for t in range(2):
            if fleet[t] > 0:
                assert table.remove_delta(0, fleet, t) >= -1e-7


def test_table_cache_round_trip_and_hash_guard(tmp_path):
    model = two_type_model(seed=9)
    path = str(tmp_path / "table.csv")
    table = build_preparedness_table([model], (1, 1), cache_path=path)
    loaded = PreparednessTable.load_csv(path)
    assert loaded.values == table.values  # repr round trip is exact
    assert loaded.param_hash == table.param_hash
    assert loaded.caps == (1, 1)

    # matching hash: cache is trusted and returned without solving
    marker = dict(table.values)
    loaded.values[(0, (0, 0))] = 123.456
    loaded.save_csv(path)
    again = build_preparedness_table([model], (1, 1), cache_path=path)
    assert again.values[(0, (0, 0))] == 123.456

    # different parameters: hash mismatch forces a rebuild
    other = two_type_model(seed=10)
    rebuilt = build_preparedness_table([other], (1, 1), cache_path=path)
    assert rebuilt.param_hash != table.param_hash
    assert rebuilt.param_hash == table_param_hash([other], (1, 1))
    assert (0, (0, 0)) in rebuilt.values and rebuilt.values != marker


def test_zero_demand_station_costs_nothing():
    model = StationModel(
        station_id=4,
        n_amb_types=2,
        lam=[0.0, 0.0],
        mu=np.full((2, 2), 1e-3),
        pref=[[0, 1], [1, 0]],
        phi=[1.0, 1.0],
    )
    table = build_preparedness_table([model], (1, 1))
    assert all(v == 0.0 for v in table.values.values())


def test_model_validation_rejects_bad_inputs():
    with pytest.raises(ValueError):
        StationModel(0, 1, lam=[-1.0], mu=[[1.0]], pref=[[0]], phi=[1.0])
    with pytest.raises(ValueError):
        StationModel(0, 1, lam=[1.0], mu=[[0.0]], pref=[[0]], phi=[1.0])
    with pytest.raises(ValueError):
        StationModel(0, 1, lam=[1.0], mu=[[1.0]], pref=[[0, 0]], phi=[1.0])
    with pytest.raises(ValueError):
        enumerate_states(single_class_model(1.0, 1.0), (1, 1))


def test_single_state_chain_is_direct():
    model = single_class_model(1e-3, 1e-3)
    Q, space = build_generator(model, (0,))
    nu, rep = stationary_distribution(Q)
    assert space.n == 1 and nu[0] == 1.0 and rep.method == "direct"


def test_calibrated_models_cover_all_stations(synth_models, synth_instance, rj_cm):
    assert len(synth_models) == len(synth_instance.stations)
    for m in synth_models:
        assert m.n_amb_types == rj_cm.n_amb_types
        assert m.n_classes == rj_cm.n_etypes
        assert (m.lam >= 0).all()
        # preference orders come from the mismatch matrix
        for c in range(m.n_classes):
            assert m.pref[c] == rj_cm.preference_order(c)
    total = sum(float(m.lam.sum()) for m in synth_models)
    # catchments partition the zones, so station arrivals sum to the city rate
    assert total * 3600.0 == pytest.approx(3.0, rel=1e-9)


def test_blocking_penalty_uses_urgency_weights(synth_models, rj_cm):
    for m in synth_models:
        for c in range(m.n_classes):
            assert m.phi[c] == pytest.approx(rj_cm.urgency_weight(c) * 1800.0)
