"""Discrete-event ambulance simulator.

Decision epochs are call arrivals and service completions; policies act only
at epochs. The whole service chain of a dispatch (drive to scene, on-scene
care, optional hospital transport and wait, optional cleaning stop) is laid
out at dispatch time from pre-sampled durations, so the release time and
release location of every busy unit are exact forecasts, not estimates.

Durations are sampled per call id before the run starts: two runs with the
same seed see identical calls and identical service draws regardless of the
policy, which keeps paired policy comparisons tight.

Every dispatch and reposition is appended to a decision log carrying the
acting unit's position at decision time; replay_dispatch_records() rebuilds
response times and allocation costs from the log alone, bit for bit.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .arrivals import EmergencyCall, sample_scenario
from .citymodel import CityInstance, GeoPoint
from .metrics import CostModel
from .policies import AVAILABLE_STATUSES, PolicyContext, PolicyParams, make_policy

SERVICE_STREAM = 987_654_321  # substream tag separating service draws from arrivals


class SimulationFault(RuntimeError):
    """Internal consistency violation; always a bug, never a model outcome."""


@dataclass(frozen=True)
class ServiceParams:
    """Service-duration distributions, shared by all calls.

    Durations are lognormal with the given mean and standard deviation;
    sd = 0 degenerates to the constant mean. Probabilities select whether a
    call includes hospital transport and whether the unit needs a cleaning
    stop afterwards.
    """

    on_scene_mean_s: float = 600.0
    on_scene_sd_s: float = 300.0
    hospital_mean_s: float = 900.0
    hospital_sd_s: float = 450.0
    cleaning_mean_s: float = 600.0
    cleaning_sd_s: float = 300.0
    p_transport: float = 0.75
    p_cleaning: float = 0.3


@dataclass(frozen=True)
class ServicePlan:
    on_scene_s: float
    transport: bool
    hospital_s: float
    cleaning: bool
    cleaning_s: float


def _lognormal(rng: np.random.Generator, mean: float, sd: float) -> float:
    if mean <= 0.0:
        return 0.0
    if sd <= 0.0:
        return float(mean)
    var = math.log(1.0 + (sd / mean) ** 2)
    return float(rng.lognormal(math.log(mean) - 0.5 * var, math.sqrt(var)))


def sample_service_plans(n: int, service: ServiceParams, seed: int) -> list[ServicePlan]:
    """One plan per call id; a fixed draw layout keeps plans seed-stable."""
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    rng = np.random.default_rng([seed, SERVICE_STREAM])
    plans = []
    for _ in range(n):
        on_scene = _lognormal(rng, service.on_scene_mean_s, service.on_scene_sd_s)
        u_transport = rng.random()
        hospital = _lognormal(rng, service.hospital_mean_s, service.hospital_sd_s)
        u_cleaning = rng.random()
        cleaning = _lognormal(rng, service.cleaning_mean_s, service.cleaning_sd_s)
        plans.append(
            ServicePlan(
                on_scene_s=on_scene,
                transport=u_transport < service.p_transport,
                hospital_s=hospital,
                cleaning=u_cleaning < service.p_cleaning,
                cleaning_s=cleaning,
            )
        )
    return plans


@dataclass
class Leg:
    """One segment of a unit's itinerary; p0 == p1 means standing still."""

    t0: float
    t1: float
    status: str
    p0: GeoPoint
    p1: GeoPoint


@dataclass
class Ambulance:
    id: int
    amb_type: int
    home_station: int
    station: int  # station charged with the unit while it is dispatchable, else -1
    legs: list
    status: str = "at_station"
    busy_s: float = 0.0
    release_time: float = 0.0
    release_loc: GeoPoint = None


@dataclass(frozen=True)
class EmergencyRecord:
    call_id: int
    amb_id: int
    amb_type: int
    etype: int
    response_time: float
    allocation_cost: float
    finish_time: float


@dataclass(frozen=True)
class DecisionRecord:
    """One policy action; dispatch rows carry the unit position it was priced at."""

    time: float
    kind: str  # dispatch, drain, queue, reposition
    call_id: int
    amb_id: int
    amb_type: int
    lat: float
    lon: float
    station: int


@dataclass
class SimulationResult:
    policy: str
    seed: int
    n_ambulances: int
    horizon_s: float
    calls: list
    records: list
    decisions: list

    @property
    def n_calls(self) -> int:
        return len(self.calls)


def call_anchor(instance: CityInstance, call: EmergencyCall) -> GeoPoint:
    """Where units drive to: the sampled point, or the zone center when travel
    times only exist between registered locations."""
    if instance.travel.mode == "matrix":
        return instance.zones[call.zone].centroid
    return call.location


def make_fleet(instance: CityInstance, cost_model: CostModel, n_ambulances: int) -> list[Ambulance]:
    """Units cycle through types and through stations: unit i has type
    i mod n_types and home station i mod n_stations."""
    if n_ambulances <= 0:
        raise ValueError("need at least one ambulance")
    fleet = []
    n_stations = len(instance.stations)
    for i in range(n_ambulances):
        home = i % n_stations
        p = instance.stations[home]
        fleet.append(
            Ambulance(
                id=i,
                amb_type=i % cost_model.n_amb_types,
                home_station=home,
                station=home,
                legs=[Leg(0.0, math.inf, "at_station", p, p)],
            )
        )
    return fleet


class Simulation:
    """One scenario run; also serves as the state object handed to policies."""

    def __init__(
        self,
        instance: CityInstance,
        cost_model: CostModel,
        service: ServiceParams,
        policy_name: str,
        calls: list,
        plans: list,
        n_ambulances: int,
        params: PolicyParams = None,
        table=None,
        seed: int = 0,
        horizon_s: float = 0.0,
        debug: bool = False,
    ):
        if instance.rates is None:
            raise ValueError("instance has no arrival rates attached")
        if len(plans) != len(calls):
            raise ValueError("need exactly one service plan per call")
        self.instance = instance
        self.cost_model = cost_model
        self.service = service
        self.policy_name = policy_name
        self.calls = calls
        self.plans = plans
        self.debug = debug
        self._seed = seed
        self._horizon = horizon_s
        self.clock = 0.0
        self.queue: list = []
        self.records: list = []
        self.decisions: list = []
        self.ambulances = make_fleet(instance, cost_model, n_ambulances)
        self._by_id = {a.id: a for a in self.ambulances}
        self.fleets = np.zeros((len(instance.stations), cost_model.n_amb_types), dtype=int)
        for a in self.ambulances:
            self.fleets[a.station][a.amb_type] += 1
        self._heap: list = []
        self._seq = 0
        for call in calls:
            self._push(call.time, "call", call)
        ctx = PolicyContext(
            instance=instance,
            cost_model=cost_model,
            service=service,
            params=params or PolicyParams(),
            table=table,
        )
        self.policy = make_policy(policy_name, ctx)

    # --- state protocol used by policies ---------------------------------

    def amb_by_id(self, aid: int) -> Ambulance:
        return self._by_id[aid]

    def anchor(self, call: EmergencyCall) -> GeoPoint:
        return call_anchor(self.instance, call)

    def position(self, amb: Ambulance) -> GeoPoint:
        leg = self._leg_at(amb, self.clock)
        if leg.p0 == leg.p1:
            return leg.p0
        if self.clock >= leg.t1:
            return leg.p1
        if self.instance.travel.mode != "great_circle" or leg.t1 <= leg.t0:
            return leg.p0  # no interpolation between matrix locations
        f = (self.clock - leg.t0) / (leg.t1 - leg.t0)
        f = min(max(f, 0.0), 1.0)
        return GeoPoint(
            leg.p0.lat + f * (leg.p1.lat - leg.p0.lat),
            leg.p0.lon + f * (leg.p1.lon - leg.p0.lon),
        )

    # --- internals --------------------------------------------------------

    def _push(self, t: float, kind: str, payload) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (t, self._seq, kind, payload))

    def _leg_at(self, amb: Ambulance, t: float) -> Leg:
        for leg in amb.legs:
            if t < leg.t1:
                return leg
        return amb.legs[-1]

    def _refresh(self) -> None:
        for a in self.ambulances:
            a.status = self._leg_at(a, self.clock).status

    def _uncharge(self, amb: Ambulance) -> None:
        if amb.station >= 0:
            self.fleets[amb.station][amb.amb_type] -= 1
            amb.station = -1

    def _dispatch(self, amb: Ambulance, call: EmergencyCall, kind: str) -> None:
        t = self.clock
        pos = self.position(amb)
        anchor = self.anchor(call)
        travel = self.instance.travel
        scene_arrival = t + travel.travel_time(pos, anchor)
        response = scene_arrival - call.time
        plan = self.plans[call.id]
        legs = [Leg(t, scene_arrival, "to_scene", pos, anchor)]
        cursor = scene_arrival + plan.on_scene_s
        legs.append(Leg(scene_arrival, cursor, "on_scene", anchor, anchor))
        loc = anchor
        if plan.transport:
            hpoint = self.instance.hospitals[self.instance.nearest_hospital(anchor)]
            t_leg = travel.travel_time(loc, hpoint)
            legs.append(Leg(cursor, cursor + t_leg, "to_hospital", loc, hpoint))
            cursor += t_leg
            legs.append(Leg(cursor, cursor + plan.hospital_s, "at_hospital", hpoint, hpoint))
            cursor += plan.hospital_s
            loc = hpoint
        if plan.cleaning:
            spoint = self.instance.stations[self.instance.nearest_station(loc)]
            t_leg = travel.travel_time(loc, spoint)
            legs.append(Leg(cursor, cursor + t_leg, "to_cleaning", loc, spoint))
            cursor += t_leg
            legs.append(Leg(cursor, cursor + plan.cleaning_s, "cleaning", spoint, spoint))
            cursor += plan.cleaning_s
            loc = spoint
        # guard leg: the unit keeps its last busy status until its release
        # event is actually processed, so co-released units stay untouchable
        legs.append(Leg(cursor, math.inf, legs[-1].status, loc, loc))
        self._uncharge(amb)
        amb.legs = legs
        amb.status = "to_scene"
        amb.release_time = cursor
        amb.release_loc = loc
        amb.busy_s += cursor - t
        self._push(cursor, "release", amb.id)
        cost = self.cost_model.allocation_cost(amb.amb_type, call.etype, response)
        self.records.append(
            EmergencyRecord(call.id, amb.id, amb.amb_type, call.etype, response, cost, cursor)
        )
        self.decisions.append(
            DecisionRecord(t, kind, call.id, amb.id, amb.amb_type, pos.lat, pos.lon, -1)
        )

    def _reposition(self, amb: Ambulance, sid: int) -> None:
        t = self.clock
        pos = self.position(amb)
        spoint = self.instance.stations[sid]
        t_leg = self.instance.travel.travel_time(pos, spoint)
        self._uncharge(amb)
        if t_leg <= 0.0:
            amb.legs = [Leg(t, math.inf, "at_station", spoint, spoint)]
            amb.status = "at_station"
        else:
            amb.legs = [
                Leg(t, t + t_leg, "enroute_station", pos, spoint),
                Leg(t + t_leg, math.inf, "at_station", spoint, spoint),
            ]
            amb.status = "enroute_station"
        amb.station = sid
        self.fleets[sid][amb.amb_type] += 1
        self.decisions.append(
            DecisionRecord(t, "reposition", -1, amb.id, amb.amb_type, pos.lat, pos.lon, sid)
        )

    def _execute(self, decision, new_call=None, freed=None, kind: str = "dispatch") -> None:
        cm = self.cost_model
        queued = {c.id: c for c in self.queue}
        if new_call is not None:
            queued[new_call.id] = new_call
        acted, served = set(), set()
        for aid, cid in decision.dispatches:
            if aid in acted:
                raise SimulationFault(f"unit {aid} given two actions")
            if cid in served or cid not in queued:
                raise SimulationFault(f"emergency {cid} not dispatchable")
            amb = self._by_id.get(aid)
            if amb is None or amb.status not in AVAILABLE_STATUSES:
                raise SimulationFault(f"unit {aid} is not dispatchable")
            call = queued[cid]
            if not cm.compatible(amb.amb_type, call.etype):
                raise SimulationFault(f"unit {aid} cannot serve class {call.etype}")
            acted.add(aid)
            served.add(cid)
            if call in self.queue:
                self.queue.remove(call)
            self._dispatch(amb, call, kind)
        for aid, sid in decision.repositions:
            if aid in acted:
                raise SimulationFault(f"unit {aid} given two actions")
            amb = self._by_id.get(aid)
            if amb is None or amb.status not in AVAILABLE_STATUSES:
                raise SimulationFault(f"unit {aid} cannot reposition")
            if not 0 <= sid < len(self.instance.stations):
                raise SimulationFault(f"unknown station {sid}")
            acted.add(aid)
            self._reposition(amb, sid)
        if new_call is not None and new_call.id not in served:
            self.queue.append(new_call)
            anchor = self.anchor(new_call)
            self.decisions.append(
                DecisionRecord(
                    self.clock, "queue", new_call.id, -1, -1, anchor.lat, anchor.lon, -1
                )
            )
        if freed is not None and freed.id not in acted:
            raise SimulationFault(f"policy left released unit {freed.id} unresolved")

    def _drain(self) -> None:
        """All events consumed but calls remain: serve the oldest with the
        closest compatible unit so every scenario terminates fully served."""
        call = self.queue[0]
        cands = [
            a
            for a in self.ambulances
            if a.status in AVAILABLE_STATUSES and self.cost_model.compatible(a.amb_type, call.etype)
        ]
        if not cands:
            raise SimulationFault(f"no unit type in the fleet can serve class {call.etype}")
        anchor = self.anchor(call)
        times = [self.instance.travel.travel_time(self.position(a), anchor) for a in cands]
        self.queue.pop(0)
        self._dispatch(cands[int(np.argmin(times))], call, "drain")

    def _recount(self) -> None:
        fleets = np.zeros_like(self.fleets)
        for a in self.ambulances:
            if a.station >= 0:
                if a.status not in AVAILABLE_STATUSES:
                    raise SimulationFault(f"unit {a.id} charged to a station while busy")
                fleets[a.station][a.amb_type] += 1
        if not np.array_equal(fleets, self.fleets):
            raise SimulationFault("fleet counters drifted from unit statuses")

    def run(self) -> SimulationResult:
        while True:
            if self._heap:
                t, _, kind, payload = heapq.heappop(self._heap)
                if t < self.clock - 1e-9:
                    raise SimulationFault("event time went backwards")
                self.clock = max(self.clock, t)
                self._refresh()
                if kind == "call":
                    decision = self.policy.on_call(self, payload)
                    self._execute(decision, new_call=payload)
                else:
                    amb = self._by_id[payload]
                    amb.legs = [Leg(t, math.inf, "free", amb.release_loc, amb.release_loc)]
                    amb.status = "free"
                    decision = self.policy.on_free(self, amb)
                    self._execute(decision, freed=amb)
            elif self.queue:
                self._refresh()
                self._drain()
            else:
                break
            if self.debug:
                self._recount()
        if len(self.records) != len(self.calls):
            raise SimulationFault(
                f"served {len(self.records)} of {len(self.calls)} emergencies"
            )
        if {r.call_id for r in self.records} != {c.id for c in self.calls}:
            raise SimulationFault("served emergencies do not match the arrivals")
        self.records.sort(key=lambda r: r.call_id)
        return SimulationResult(
            policy=self.policy_name,
            seed=self._seed,
            n_ambulances=len(self.ambulances),
            horizon_s=self._horizon,
            calls=self.calls,
            records=self.records,
            decisions=self.decisions,
        )


def run_scenario(
    instance: CityInstance,
    cost_model: CostModel,
    service: ServiceParams,
    policy_name: str,
    n_ambulances: int,
    seed: int,
    horizon_s: float,
    params: PolicyParams = None,
    table=None,
    debug: bool = False,
) -> SimulationResult:
    """Sample one scenario and run it under the named policy."""
    calls = sample_scenario(instance.rates, instance.zones, horizon_s, seed)
    plans = sample_service_plans(len(calls), service, seed)
    sim = Simulation(
        instance,
        cost_model,
        service,
        policy_name,
        calls,
        plans,
        n_ambulances,
        params=params,
        table=table,
        seed=seed,
        horizon_s=horizon_s,
        debug=debug,
    )
    return sim.run()


def replay_dispatch_records(
    decisions: list,
    calls: list,
    instance: CityInstance,
    cost_model: CostModel,
) -> list[tuple]:
    """Rebuild (call_id, amb_id, response_time, allocation_cost) from the log.

    Uses the logged unit position and the identical arithmetic order as the
    simulator, so against the same instance the floats match exactly.
    """
    by_id = {c.id: c for c in calls}
    out = []
    for row in decisions:
        if row.call_id < 0 or row.amb_id < 0:
            continue
        call = by_id[row.call_id]
        anchor = call_anchor(instance, call)
        pos = GeoPoint(row.lat, row.lon)
        scene_arrival = row.time + instance.travel.travel_time(pos, anchor)
        response = scene_arrival - call.time
        cost = cost_model.allocation_cost(row.amb_type, call.etype, response)
        out.append((row.call_id, row.amb_id, response, cost))
    out.sort()
    return out
