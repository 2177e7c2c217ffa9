"""Shared fixtures and plain test helpers.

The synthetic setup (6x6 grid, 4 stations, 2 hospitals) is small enough that
every policy decision runs in milliseconds, so most simulator and policy
tests share one session-scoped instance and preparedness table.
"""

import math

import numpy as np
import pytest

from ambusim.assignment import DispatchProblem
from ambusim.ctmc import (
    PreparednessTable,
    StationModel,
    build_preparedness_table,
    calibrate_station_models,
)
from ambusim.instances import build_instance, default_config
from ambusim.metrics import CostModel
from ambusim.simulator import Leg, Simulation


@pytest.fixture(scope="session")
def rj_cm():
    return CostModel.default_rj()


@pytest.fixture(scope="session")
def synth_cfg():
    return default_config("synthetic")


@pytest.fixture(scope="session")
def synth_instance(synth_cfg):
    return build_instance(synth_cfg)


@pytest.fixture(scope="session")
def synth_models(synth_instance, rj_cm, synth_cfg):
    return calibrate_station_models(synth_instance, rj_cm, synth_cfg.service)


@pytest.fixture(scope="session")
def synth_table(synth_models):
    return build_preparedness_table(synth_models, (2, 2))


def erlang_b(m: int, offered: float) -> float:
    """Blocking probability of M/M/m/m via the standard recursion."""
    b = 1.0
    for k in range(1, m + 1):
        b = offered * b / (k + offered * b)
    return b


def single_class_model(lam: float, mu: float) -> StationModel:
    return StationModel(
        station_id=0,
        n_amb_types=1,
        lam=[lam],
        mu=[[mu]],
        pref=[[0]],
        phi=[1.0],
    )


def two_type_model(seed: int = 0, n_classes: int = 4) -> StationModel:
    """Random 2-type model with every type compatible with every class."""
    rng = np.random.default_rng(seed)
    lam = rng.uniform(0.5, 2.0, size=n_classes) / 600.0
    mu = rng.uniform(0.5, 2.0, size=(2, n_classes)) / 900.0
    pref = [[0, 1] if c % 2 == 0 else [1, 0] for c in range(n_classes)]
    phi = rng.uniform(100.0, 5000.0, size=n_classes)
    return StationModel(
        station_id=0, n_amb_types=2, lam=lam, mu=mu, pref=pref, phi=phi
    )


def random_problem(
    rng: np.random.Generator,
    max_idle: int = 4,
    max_ontask: int = 2,
    max_emerg: int = 4,
    max_stations: int = 3,
) -> DispatchProblem:
    """Random well-formed dispatch problem for oracle comparisons."""
    n_idle = int(rng.integers(0, max_idle + 1))
    n_ontask = int(rng.integers(0, max_ontask + 1))
    if n_idle + n_ontask == 0:
        n_idle = 1
    n_emerg = int(rng.integers(0, max_emerg + 1))
    n_stations = int(rng.integers(1, max_stations + 1))
    idle = [(i, int(rng.integers(0, 2)), int(rng.integers(0, n_stations))) for i in range(n_idle)]
    ontask = [
        (n_idle + j, int(rng.integers(0, 2)), None, float(rng.uniform(0, 100)))
        for j in range(n_ontask)
    ]
    emergencies = list(range(n_emerg))
    r = {}
    for aid in range(n_idle + n_ontask):
        for e in emergencies:
            if rng.random() < 0.7:
                r[(aid, e)] = float(rng.uniform(0.0, 100.0))
    queue_penalty = {e: float(rng.uniform(0.0, 100.0)) for e in emergencies}
    stations = list(range(n_stations))
    remove_delta = {
        (t, s): float(rng.uniform(0.0, 5.0)) for t in range(2) for s in stations
    }
    add_delta = {(t, s): float(rng.uniform(-5.0, 0.0)) for t in range(2) for s in stations}
    return DispatchProblem(
        idle_ambs=idle,
        ontask_ambs=ontask,
        emergencies=emergencies,
        stations=stations,
        r=r,
        queue_penalty=queue_penalty,
        remove_delta=remove_delta,
        add_delta=add_delta,
        prep_weight=float(rng.uniform(0.0, 10.0)),
    )


def random_table(rng, n_stations, caps=(3, 3)):
    values = {
        (sid, (m0, m1)): float(rng.uniform(0.0, 50.0))
        for sid in range(n_stations)
        for m0 in range(caps[0] + 1)
        for m1 in range(caps[1] + 1)
    }
    return PreparednessTable(caps=caps, values=values)


def identity_problem(rng):
    """Instance where any decision changes each station by at most one unit.

    Idle ambulances sit at distinct stations 0..k-1; the single on-task
    ambulance (when present) may only return to the reserved station k, so
    removals and additions never stack on the same fleet vector.
    """
    n_idle = int(rng.integers(0, 4))
    n_ontask = int(rng.integers(0, 2))
    if n_idle + n_ontask == 0:
        n_idle = 1
    reserved = n_idle
    table = random_table(rng, reserved + 1)
    fleets = {}
    idle = []
    for i in range(n_idle):
        atype = int(rng.integers(0, 2))
        fleet = [int(rng.integers(0, 3)), int(rng.integers(0, 3))]
        fleet[atype] = max(1, fleet[atype])
        fleets[i] = tuple(fleet)
        idle.append((i, atype, i))
    fleets[reserved] = (int(rng.integers(0, 3)), int(rng.integers(0, 3)))
    ontask = [
        (n_idle + j, int(rng.integers(0, 2)), None, float(rng.uniform(0, 100)))
        for j in range(n_ontask)
    ]
    n_emerg = int(rng.integers(0, 4))
    emergencies = list(range(n_emerg))
    r = {}
    for aid in range(n_idle + n_ontask):
        for e in emergencies:
            if rng.random() < 0.7:
                r[(aid, e)] = float(rng.uniform(0.0, 100.0))
    remove_delta = {
        (atype, sid): table.remove_delta(sid, fleets[sid], atype)
        for (aid, atype, sid) in idle
    }
    add_delta = {
        (t, reserved): table.add_delta(reserved, fleets[reserved], t) for t in range(2)
    }
    return DispatchProblem(
        idle_ambs=idle,
        ontask_ambs=ontask,
        emergencies=emergencies,
        stations=[reserved],
        r=r,
        queue_penalty={e: float(rng.uniform(0.0, 100.0)) for e in emergencies},
        remove_delta=remove_delta,
        add_delta=add_delta,
        prep_weight=float(rng.uniform(0.0, 10.0)),
        fleets=fleets,
        table=table,
    )


def empty_sim(instance, cm, cfg, policy="dummy_queue", n_amb=4, params=None, table=None):
    """Simulation with no scheduled calls, used as a policy state object."""
    return Simulation(
        instance,
        cm,
        cfg.service,
        policy,
        calls=[],
        plans=[],
        n_ambulances=n_amb,
        params=params,
        table=table,
    )


def make_busy(sim, amb, release_time: float, release_loc=None) -> None:
    """Put a unit mid-task: busy until release_time at release_loc."""
    loc = release_loc if release_loc is not None else sim.instance.stations[0]
    if amb.station >= 0:
        sim.fleets[amb.station][amb.amb_type] -= 1
        amb.station = -1
    amb.legs = [
        Leg(0.0, release_time, "on_scene", loc, loc),
        Leg(release_time, math.inf, "on_scene", loc, loc),
    ]
    amb.status = "on_scene"
    amb.release_time = release_time
    amb.release_loc = loc
