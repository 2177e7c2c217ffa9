"""Dispatch and reassignment policies.

Every policy answers two questions through the same interface:

  on_call(state, call): a new emergency arrived; dispatch an ambulance (or
      several, for the batch policies) or leave it in the queue.
  on_free(state, amb): an ambulance finished service; send it to a queued
      emergency or to a station.

Policies never mutate the state; they return a PolicyDecision that the
simulator validates and executes. `state` exposes clock, queue, ambulances,
per-station fleet vectors and position lookups.

The registry maps the result-file policy keys to implementations:

  dummy_queue          closest available unit, first-come-first-served queue
  markov_preparedness  cost-minimizing assignment with Markov fleet deltas
  preparedness         max-min zone readiness (coverage-weighted inverse time)
  prep2                zone readiness divided by response time
  centrality           queue-centrality weighted assignment over all units
  dist_centrality      response time times demand-weighted residual coverage
  district             own-district closest unit, cross-district fallback
  ordered              closest unit for urgent calls, least-used otherwise
  coverage             marginal expected-coverage loss, greedy
  tipat                batch assignment of excess response time plus coverage
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .assignment import DispatchProblem, solve_linear

AVAILABLE_STATUSES = ("at_station", "enroute_station", "free")
ONTASK_STATUSES = ("to_scene", "on_scene", "to_hospital", "at_hospital", "to_cleaning", "cleaning")

MIN_TRAVEL_CLAMP_S = 1.0  # denominator floor in readiness ratios
SENTINEL_TRAVEL_S = 7200.0  # stands in for "no unit can cover this zone"


@dataclass
class PolicyParams:
    prep_weight: float = 1800.0
    queue_window_s: float = 1800.0
    busy_fraction: float = 0.4
    coverage_threshold_s: float = 600.0
    sentinel_s: float = SENTINEL_TRAVEL_S
    leaf_budget: int = 200_000


@dataclass
class PolicyContext:
    instance: object
    cost_model: object
    service: object
    params: PolicyParams = field(default_factory=PolicyParams)
    table: object = None  # PreparednessTable, required by markov_preparedness


@dataclass
class PolicyDecision:
    dispatches: list = field(default_factory=list)  # (amb_id, call_id)
    repositions: list = field(default_factory=list)  # (amb_id, station_id)


class BasePolicy:
    name = "base"

    def __init__(self, ctx: PolicyContext):
        self.ctx = ctx
        inst = ctx.instance
        self._zone_lats = np.array([z.centroid.lat for z in inst.zones])
        self._zone_lons = np.array([z.centroid.lon for z in inst.zones])
        self._zone_rate = np.array(
            [
                sum(inst.rates.weekly_average(z.id, c) for c in range(ctx.cost_model.n_etypes))
                for z in inst.zones
            ]
        )
        self._active = self._zone_rate > 0.0

    # --- shared helpers -------------------------------------------------

    def _travel(self, state, p, q) -> float:
        return self.ctx.instance.travel.travel_time(p, q)

    def _available(self, state, etype=None) -> list:
        out = [a for a in state.ambulances if a.status in AVAILABLE_STATUSES]
        if etype is not None:
            out = [a for a in out if self.ctx.cost_model.compatible(a.amb_type, etype)]
        return out

    def _amb_times(self, state, ambs, point) -> np.ndarray:
        tv = self.ctx.instance.travel
        return np.array([tv.travel_time(state.position(a), point) for a in ambs], dtype=float)

    def _closest(self, state, ambs, point):
        """Smallest travel time, ties to the smaller ambulance id."""
        if not ambs:
            return None
        times = self._amb_times(state, ambs, point)
        return ambs[int(np.argmin(times))]

    def _closest_station(self, state, amb) -> int:
        pos = state.position(amb)
        times = [self._travel(state, pos, s) for s in self.ctx.instance.stations]
        return int(np.argmin(times))

    def _oldest_compatible(self, state, amb):
        for call in state.queue:
            if self.ctx.cost_model.compatible(amb.amb_type, call.etype):
                return call
        return None

    def _zone_times_from_ambs(self, state, ambs) -> np.ndarray:
        """(n_ambs, n_active_zones) travel-time matrix to active zone centers."""
        tv = self.ctx.instance.travel
        lats = self._zone_lats[self._active]
        lons = self._zone_lons[self._active]
        if len(ambs) == 0:
            return np.zeros((0, len(lats)))
        return np.vstack([tv.times_from(state.position(a), lats, lons) for a in ambs])

    def _zone_times_from_point(self, state, point) -> np.ndarray:
        tv = self.ctx.instance.travel
        return tv.times_from(point, self._zone_lats[self._active], self._zone_lons[self._active])

    # --- default queue handling ------------------------------------------

    def on_call(self, state, call) -> PolicyDecision:
        raise NotImplementedError

    def on_free(self, state, amb) -> PolicyDecision:
        raise NotImplementedError


def zone_preparedness(
    travel_times: np.ndarray, demand: np.ndarray, gammas: np.ndarray = None
) -> np.ndarray:
    """Zone readiness: (1/demand) * sum over units of gamma / max(t, 1 s).

    travel_times is (n_units, n_zones). Zones with zero demand come back as
    +inf so minima skip them; with no units every demand zone scores 0.
    """
    rate = np.asarray(demand, dtype=float)
    out = np.full(len(rate), np.inf)
    active = rate > 0
    if travel_times.shape[0] == 0:
        out[active] = 0.0
        return out
    contrib = 1.0 / np.maximum(travel_times, MIN_TRAVEL_CLAMP_S)
    if gammas is not None:
        contrib = np.asarray(gammas, dtype=float)[:, None] * contrib
    out[active] = contrib.sum(axis=0)[active] / rate[active]
    return out


class ClosestAvailablePolicy(BasePolicy):
    """Closest available unit; queue served oldest-first on release."""

    name = "dummy_queue"

    def on_call(self, state, call):
        cands = self._available(state, call.etype)
        if not cands:
            return PolicyDecision()
        amb = self._closest(state, cands, state.anchor(call))
        return PolicyDecision(dispatches=[(amb.id, call.id)])

    def on_free(self, state, amb):
        call = self._oldest_compatible(state, amb)
        if call is not None:
            return PolicyDecision(dispatches=[(amb.id, call.id)])
        return PolicyDecision(repositions=[(amb.id, self._closest_station(state, amb))])


class MarkovPreparednessPolicy(BasePolicy):
    """Assignment of units to emergencies priced with fleet cost-rate deltas.

    Builds the full decision problem over idle and on-task units, solves the
    linearized objective exactly, and executes only the immediate part of
    the plan: the new call's dispatch on arrival, the freed unit's action on
    release. Everything else is re-decided at the next epoch.
    """

    name = "markov_preparedness"

    def __init__(self, ctx):
        super().__init__(ctx)
        if ctx.table is None:
            raise ValueError("markov_preparedness needs a preparedness table")

    def _build_problem(self, state, new_call=None, free_amb=None) -> DispatchProblem:
        cm = self.ctx.cost_model
        params = self.ctx.params
        calls = list(state.queue) + ([new_call] if new_call is not None else [])
        idle, ontask = [], []
        for a in state.ambulances:
            if free_amb is not None and a.id == free_amb.id:
                ontask.append((a.id, a.amb_type, state.position(a), state.clock))
            elif a.status in AVAILABLE_STATUSES:
                idle.append((a.id, a.amb_type, a.station))
            elif a.status in ONTASK_STATUSES:
                ontask.append((a.id, a.amb_type, a.release_loc, a.release_time))
        r = {}
        for call in calls:
            anchor = state.anchor(call)
            for aid, atype, station in idle:
                if not cm.compatible(atype, call.etype):
                    continue
                amb = state.amb_by_id(aid)
                wait = state.clock - call.time
                r[(aid, call.id)] = cm.allocation_cost(
                    atype, call.etype, wait + self._travel(state, state.position(amb), anchor)
                )
            for aid, atype, rel_loc, rel_time in ontask:
                if not cm.compatible(atype, call.etype):
                    continue
                resp = (rel_time - call.time) + self._travel(state, rel_loc, anchor)
                r[(aid, call.id)] = cm.allocation_cost(atype, call.etype, resp)
        gamma = {c.id: cm.queue_penalty(c.etype, params.queue_window_s) for c in calls}
        stations = list(range(len(self.ctx.instance.stations)))
        table = self.ctx.table
        add_delta, remove_delta = {}, {}
        for sid in stations:
            fleet = tuple(state.fleets[sid])
            for t in range(cm.n_amb_types):
                add_delta[(t, sid)] = table.add_delta(sid, fleet, t)
                if fleet[t] > 0:
                    remove_delta[(t, sid)] = table.remove_delta(sid, fleet, t)
        return DispatchProblem(
            idle_ambs=idle,
            ontask_ambs=ontask,
            emergencies=[c.id for c in calls],
            stations=stations,
            r=r,
            queue_penalty=gamma,
            remove_delta=remove_delta,
            add_delta=add_delta,
            prep_weight=params.prep_weight,
            fleets={sid: tuple(state.fleets[sid]) for sid in stations},
            table=table,
        )

    def on_call(self, state, call):
        problem = self._build_problem(state, new_call=call)
        decision = solve_linear(problem)
        for aid, eid in decision.serve.items():
            if eid == call.id:
                amb = state.amb_by_id(aid)
                if amb.status in AVAILABLE_STATUSES:
                    return PolicyDecision(dispatches=[(aid, call.id)])
                break  # planned for a busy unit: wait for it
        return PolicyDecision()

    def on_free(self, state, amb):
        problem = self._build_problem(state, free_amb=amb)
        decision = solve_linear(problem)
        if amb.id in decision.serve:
            return PolicyDecision(dispatches=[(amb.id, decision.serve[amb.id])])
        return PolicyDecision(repositions=[(amb.id, decision.station[amb.id])])


class AnderssonPolicy(BasePolicy):
    """Keep the worst-covered zone as ready as possible.

    Dispatch the unit whose removal leaves the highest minimum zone
    readiness; return freed units to the station that raises it the most.
    """

    name = "preparedness"

    def on_call(self, state, call):
        cands = self._available(state, call.etype)
        if not cands:
            return PolicyDecision()
        avail = self._available(state)
        times = self._zone_times_from_ambs(state, avail)
        rate = self._zone_rate[self._active]
        contrib = 1.0 / np.maximum(times, MIN_TRAVEL_CLAMP_S)
        total = contrib.sum(axis=0)
        best_amb, best_score = None, -math.inf
        index = {a.id: k for k, a in enumerate(avail)}
        for a in cands:
            psi = (total - contrib[index[a.id]]) / rate
            score = psi.min() if psi.size else math.inf
            if score > best_score:
                best_amb, best_score = a, score
        return PolicyDecision(dispatches=[(best_amb.id, call.id)])

    def on_free(self, state, amb):
        call = self._oldest_compatible(state, amb)
        if call is not None:
            return PolicyDecision(dispatches=[(amb.id, call.id)])
        avail = [a for a in self._available(state) if a.id != amb.id]
        times = self._zone_times_from_ambs(state, avail)
        rate = self._zone_rate[self._active]
        base = (1.0 / np.maximum(times, MIN_TRAVEL_CLAMP_S)).sum(axis=0) if len(avail) else 0.0
        pos = state.position(amb)
        best_sid, best_key = None, None
        for sid, spoint in enumerate(self.ctx.instance.stations):
            t_here = self._zone_times_from_point(state, spoint)
            psi = (base + 1.0 / np.maximum(t_here, MIN_TRAVEL_CLAMP_S)) / rate
            score = psi.min() if psi.size else 0.0
            key = (-score, self._travel(state, pos, spoint), sid)
            if best_key is None or key < best_key:
                best_sid, best_key = sid, key
        return PolicyDecision(repositions=[(amb.id, best_sid)])


class ReadinessPerTimePolicy(BasePolicy):
    """Balance zone readiness against response time at selection."""

    name = "prep2"

    def on_call(self, state, call):
        cands = self._available(state, call.etype)
        if not cands:
            return PolicyDecision()
        avail = self._available(state)
        times = self._zone_times_from_ambs(state, avail)
        rate = self._zone_rate[self._active]
        contrib = 1.0 / np.maximum(times, MIN_TRAVEL_CLAMP_S)
        total = contrib.sum(axis=0)
        anchor = state.anchor(call)
        index = {a.id: k for k, a in enumerate(avail)}
        best_amb, best_score = None, -math.inf
        for a in cands:
            psi = (total - contrib[index[a.id]]) / rate
            worst = psi.min() if psi.size else math.inf
            t_resp = max(self._travel(state, state.position(a), anchor), MIN_TRAVEL_CLAMP_S)
            score = worst / t_resp
            if score > best_score:
                best_amb, best_score = a, score
        return PolicyDecision(dispatches=[(best_amb.id, call.id)])

    def on_free(self, state, amb):
        cands = [c for c in state.queue if self.ctx.cost_model.compatible(amb.amb_type, c.etype)]
        if cands:
            pos = state.position(amb)
            times = [self._travel(state, pos, state.anchor(c)) for c in cands]
            return PolicyDecision(dispatches=[(amb.id, cands[int(np.argmin(times))].id)])
        return PolicyDecision(repositions=[(amb.id, self._closest_station(state, amb))])


class CentralityAssignmentPolicy(BasePolicy):
    """Assign all units (busy ones included) to the most central emergencies.

    Busy units matched to an emergency are postponed decisions: nothing is
    executed for them now, the pair is reconsidered at the next epoch.
    """

    name = "centrality"

    def _pair_scores(self, state, calls, ambs):
        anchors = [state.anchor(c) for c in calls]
        k = len(calls)
        cent = np.zeros(k)
        for i in range(k):
            for j in range(k):
                if i != j:
                    cent[i] += 1.0 / (1.0 + self._travel(state, anchors[i], anchors[j]))
        w = max(0.0, 1.0 - self.ctx.service.p_transport)
        scores = np.full((len(ambs), k), -1e18)
        for ai, a in enumerate(ambs):
            for ci, c in enumerate(calls):
                if not self.ctx.cost_model.compatible(a.amb_type, c.etype):
                    continue
                if a.status in AVAILABLE_STATUSES:
                    t = self._travel(state, state.position(a), anchors[ci])
                else:
                    t = (a.release_time - state.clock) + self._travel(
                        state, a.release_loc, anchors[ci]
                    )
                scores[ai, ci] = (cent[ci] ** w) / (1.0 + t)
        return scores

    def _solve(self, state, calls):
        ambs = [a for a in state.ambulances if a.status in AVAILABLE_STATUSES + ONTASK_STATUSES]
        if not ambs or not calls:
            return []
        scores = self._pair_scores(state, calls, ambs)
        rows, cols = linear_sum_assignment(scores, maximize=True)
        out = []
        for rr, cc in zip(rows, cols):
            if scores[rr, cc] <= -1e17:
                continue
            out.append((ambs[rr], calls[cc]))
        return out

    def on_call(self, state, call):
        pairs = self._solve(state, list(state.queue) + [call])
        dispatches = [
            (a.id, c.id) for a, c in pairs if a.status in AVAILABLE_STATUSES
        ]
        return PolicyDecision(dispatches=dispatches)

    def on_free(self, state, amb):
        if not state.queue:
            return PolicyDecision(repositions=[(amb.id, self._closest_station(state, amb))])
        pairs = self._solve(state, list(state.queue))
        dispatches = [(a.id, c.id) for a, c in pairs if a.status in AVAILABLE_STATUSES]
        if all(aid != amb.id for aid, _ in dispatches):
            return PolicyDecision(
                dispatches=dispatches,
                repositions=[(amb.id, self._closest_station(state, amb))],
            )
        return PolicyDecision(dispatches=dispatches)


class ResidualCoveragePolicy(BasePolicy):
    """Trade the candidate's response time against the coverage it leaves.

    Selection minimizes (1 + t(a, call)) times the demand-weighted residual
    access time of the remaining units; zones no remaining unit can reach
    count with a fixed sentinel travel time.
    """

    name = "dist_centrality"

    def on_call(self, state, call):
        cands = self._available(state, call.etype)
        if not cands:
            return PolicyDecision()
        avail = self._available(state)
        times = self._zone_times_from_ambs(state, avail)
        rate = self._zone_rate[self._active]
        sentinel = self.ctx.params.sentinel_s
        anchor = state.anchor(call)
        index = {a.id: k for k, a in enumerate(avail)}
        if times.shape[0] >= 2:
            part = np.partition(times, 1, axis=0)
            min1, min2 = part[0], part[1]
            argmin = np.argmin(times, axis=0)
        best_amb, best_score = None, math.inf
        for a in cands:
            if times.shape[0] < 2:
                excl = np.full(rate.shape, sentinel)
            else:
                k = index[a.id]
                excl = np.where(argmin == k, min2, min1)
            residual = float(np.sum(rate * (1.0 + excl)))
            t_resp = self._travel(state, state.position(a), anchor)
            score = (1.0 + t_resp) * residual
            if score < best_score:
                best_amb, best_score = a, score
        return PolicyDecision(dispatches=[(best_amb.id, call.id)])

    def on_free(self, state, amb):
        cm = self.ctx.cost_model
        cands = [c for c in state.queue if cm.compatible(amb.amb_type, c.etype)]
        if cands:
            anchors = {c.id: state.anchor(c) for c in state.queue}
            w = max(0.0, 1.0 - self.ctx.service.p_transport)
            pos = state.position(amb)
            best_call, best_score = None, -math.inf
            for c in cands:
                cent = sum(
                    1.0 / (1.0 + self._travel(state, anchors[c.id], anchors[o.id]))
                    for o in state.queue
                    if o.id != c.id
                )
                t = self._travel(state, pos, anchors[c.id])
                score = (cent**w) / (1.0 + t)
                if score > best_score:
                    best_call, best_score = c, score
            return PolicyDecision(dispatches=[(amb.id, best_call.id)])
        # empty queue: station maximizing worst-zone readiness per travel second
        avail = [a for a in self._available(state) if a.id != amb.id]
        times = self._zone_times_from_ambs(state, avail)
        rate = self._zone_rate[self._active]
        base = (1.0 / np.maximum(times, MIN_TRAVEL_CLAMP_S)).sum(axis=0) if len(avail) else 0.0
        pos = state.position(amb)
        best_sid, best_score = None, -math.inf
        for sid, spoint in enumerate(self.ctx.instance.stations):
            t_here = self._zone_times_from_point(state, spoint)
            psi = (base + 1.0 / np.maximum(t_here, MIN_TRAVEL_CLAMP_S)) / rate
            worst = psi.min() if psi.size else 0.0
            score = worst / max(self._travel(state, pos, spoint), MIN_TRAVEL_CLAMP_S)
            if score > best_score:
                best_sid, best_score = sid, score
        return PolicyDecision(repositions=[(amb.id, best_sid)])


class DistrictPolicy(BasePolicy):
    """Serve each district with its own units when possible.

    A district is a station catchment; cross-district help follows the
    ordered rule (closest unit for high priority, least used otherwise).
    """

    name = "district"

    def on_call(self, state, call):
        cm = self.ctx.cost_model
        district = int(self.ctx.instance.station_zone_map[call.zone])
        cands = self._available(state, call.etype)
        if not cands:
            return PolicyDecision()
        own = [a for a in cands if a.home_station == district]
        if own:
            amb = self._closest(state, own, state.anchor(call))
            return PolicyDecision(dispatches=[(amb.id, call.id)])
        cross = [a for a in cands if a.home_station != district]
        if not cross:
            return PolicyDecision()
        if cm.etypes[call.etype].priority == "high":
            amb = self._closest(state, cross, state.anchor(call))
        else:
            amb = min(cross, key=lambda a: (a.busy_s, a.id))
        return PolicyDecision(dispatches=[(amb.id, call.id)])

    def on_free(self, state, amb):
        call = self._oldest_compatible(state, amb)
        if call is not None:
            return PolicyDecision(dispatches=[(amb.id, call.id)])
        return PolicyDecision(repositions=[(amb.id, amb.home_station)])


class OrderedDispatchPolicy(BasePolicy):
    """Closest unit for high priority, least cumulative busy time otherwise."""

    name = "ordered"

    def on_call(self, state, call):
        cands = self._available(state, call.etype)
        if not cands:
            return PolicyDecision()
        if self.ctx.cost_model.etypes[call.etype].priority == "high":
            amb = self._closest(state, cands, state.anchor(call))
        else:
            amb = min(cands, key=lambda a: (a.busy_s, a.id))
        return PolicyDecision(dispatches=[(amb.id, call.id)])

    def on_free(self, state, amb):
        call = self._oldest_compatible(state, amb)
        if call is not None:
            return PolicyDecision(dispatches=[(amb.id, call.id)])
        return PolicyDecision(repositions=[(amb.id, amb.home_station)])


class MarginalCoveragePolicy(BasePolicy):
    """Give up the least marginal expected coverage.

    A zone is covered by the units within the threshold travel time; with n
    covering units and busy fraction q, removing one forfeits
    rate * (1 - q) * q^(n-1). Prefer units covering the incident zone.
    """

    name = "coverage"

    def on_call(self, state, call):
        cands = self._available(state, call.etype)
        if not cands:
            return PolicyDecision()
        avail = self._available(state)
        times = self._zone_times_from_ambs(state, avail)
        rate = self._zone_rate[self._active]
        q = self.ctx.params.busy_fraction
        thr = self.ctx.params.coverage_threshold_s
        covered = times <= thr
        n_cover = covered.sum(axis=0)
        marginal = np.where(n_cover > 0, rate * (1.0 - q) * q ** np.maximum(n_cover - 1, 0), 0.0)
        index = {a.id: k for k, a in enumerate(avail)}
        loss = {a.id: float(marginal[covered[index[a.id]]].sum()) for a in cands}
        # prefer units that cover the incident zone itself
        center = self.ctx.instance.zones[call.zone].centroid
        primary = [
            a for a in cands if self._travel(state, state.position(a), center) <= thr
        ]
        pool = primary if primary else cands
        amb = min(pool, key=lambda a: (loss[a.id], a.id))
        return PolicyDecision(dispatches=[(amb.id, call.id)])

    def on_free(self, state, amb):
        call = self._oldest_compatible(state, amb)
        if call is not None:
            return PolicyDecision(dispatches=[(amb.id, call.id)])
        return PolicyDecision(repositions=[(amb.id, amb.home_station)])


class BatchExcessTimePolicy(BasePolicy):
    """Batch assignment: minimize excess response time plus lost coverage.

    At each epoch, serve as many pending emergencies as the available fleet
    allows while minimizing the sum of response time beyond the priority
    targets plus the demand-weighted access time of the units left over
    (split per ambulance kind by the preferred kind of each call class).
    """

    name = "tipat"

    def __init__(self, ctx):
        super().__init__(ctx)
        cm = ctx.cost_model
        split = np.zeros((cm.n_amb_types, len(ctx.instance.zones)))
        for z in ctx.instance.zones:
            for c in range(cm.n_etypes):
                split[cm.preferred_type(c), z.id] += ctx.instance.rates.weekly_average(z.id, c)
        self._split_rate = split[:, self._active]

    def _prep_term(self, state, positions_by_type) -> float:
        total = 0.0
        sentinel = self.ctx.params.sentinel_s
        for t in range(self.ctx.cost_model.n_amb_types):
            rate = self._split_rate[t]
            if rate.sum() <= 0:
                continue
            pts = positions_by_type.get(t, [])
            if not pts:
                total += float(np.sum(rate) * sentinel)
                continue
            times = np.vstack([self._zone_times_from_point(state, p) for p in pts])
            total += float(np.sum(rate * times.min(axis=0)))
        return total

    def _positions(self, state, ambs):
        by_type = {}
        for a in ambs:
            by_type.setdefault(a.amb_type, []).append(state.position(a))
        return by_type

    def _batch(self, state, calls, ambs):
        """Best injective assignment serving the maximum number of calls."""
        cm = self.ctx.cost_model
        feas = {
            c.id: [a for a in ambs if cm.compatible(a.amb_type, c.etype)] for c in calls
        }
        # maximum matching size via augmenting paths
        match_of_amb = {}

        def augment(ci, seen):
            for a in feas[calls[ci].id]:
                if a.id in seen:
                    continue
                seen.add(a.id)
                if a.id not in match_of_amb or augment(match_of_amb[a.id], seen):
                    match_of_amb[a.id] = ci
                    return True
            return False

        target = sum(augment(ci, set()) for ci in range(len(calls)))
        if target == 0:
            return []
        anchors = [state.anchor(c) for c in calls]
        excess = {}
        for ci, c in enumerate(calls):
            for a in feas[c.id]:
                resp = (state.clock - c.time) + self._travel(
                    state, state.position(a), anchors[ci]
                )
                excess[(a.id, c.id)] = cm.extra_response_time(c.etype, resp)
        best = {"value": math.inf, "pairs": None}
        leaves = [0]
        budget = self.ctx.params.leaf_budget

        def rec(ci, used, pairs, acc, served):
            if leaves[0] > budget:
                return
            remaining = len(calls) - ci
            if served + remaining < target:
                return
            if ci == len(calls):
                leaves[0] += 1
                rest = [a for a in ambs if a.id not in used]
                value = acc + self._prep_term(state, self._positions(state, rest))
                if value < best["value"]:
                    best["value"] = value
                    best["pairs"] = list(pairs)
                return
            c = calls[ci]
            for a in feas[c.id]:
                if a.id in used:
                    continue
                used.add(a.id)
                pairs.append((a.id, c.id))
                rec(ci + 1, used, pairs, acc + excess[(a.id, c.id)], served + 1)
                pairs.pop()
                used.discard(a.id)
            if served + remaining - 1 >= target:
                rec(ci + 1, used, pairs, acc, served)

        rec(0, set(), [], 0.0, 0)
        if best["pairs"] is None:
            # budget ran out before any full leaf: greedy fallback
            pairs, used = [], set()
            for ci, c in enumerate(calls):
                opts = [a for a in feas[c.id] if a.id not in used]
                if not opts:
                    continue
                a = min(opts, key=lambda a: (excess[(a.id, c.id)], a.id))
                pairs.append((a.id, c.id))
                used.add(a.id)
            return pairs
        return best["pairs"]

    def _station_for(self, state, amb, others):
        """Station for a spare unit: minimize residual access with it there."""
        others_by_type = self._positions(state, others)
        best_sid, best_val = None, math.inf
        for sid, spoint in enumerate(self.ctx.instance.stations):
            pbt = {t: list(v) for t, v in others_by_type.items()}
            pbt.setdefault(amb.amb_type, []).append(spoint)
            val = self._prep_term(state, pbt)
            if val < best_val:
                best_sid, best_val = sid, val
        return best_sid

    def on_call(self, state, call):
        calls = sorted(list(state.queue) + [call], key=lambda c: (c.time, c.id))
        ambs = self._available(state)
        pairs = self._batch(state, calls, ambs)
        return PolicyDecision(dispatches=pairs)

    def on_free(self, state, amb):
        ambs = self._available(state)
        pairs = self._batch(state, sorted(state.queue, key=lambda c: (c.time, c.id)), ambs)
        decision = PolicyDecision(dispatches=pairs)
        if all(aid != amb.id for aid, _ in pairs):
            used = {aid for aid, _ in pairs}
            others = [a for a in ambs if a.id not in used and a.id != amb.id]
            decision.repositions = [(amb.id, self._station_for(state, amb, others))]
        return decision


POLICIES = {
    "dummy_queue": ClosestAvailablePolicy,
    "markov_preparedness": MarkovPreparednessPolicy,
    "preparedness": AnderssonPolicy,
    "prep2": ReadinessPerTimePolicy,
    "centrality": CentralityAssignmentPolicy,
    "dist_centrality": ResidualCoveragePolicy,
    "district": DistrictPolicy,
    "ordered": OrderedDispatchPolicy,
    "coverage": MarginalCoveragePolicy,
    "tipat": BatchExcessTimePolicy,
}


def make_policy(name: str, ctx: PolicyContext) -> BasePolicy:
    if name not in POLICIES:
        raise KeyError(f"unknown policy {name!r}; known: {', '.join(sorted(POLICIES))}")
    return POLICIES[name](ctx)
