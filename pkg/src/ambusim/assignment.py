"""Exact solvers for the dispatch and reassignment decision problem.

One decision assigns each ambulance at most one action: idle (station)
ambulances may serve a pending emergency or stay put; on-task ambulances
must either serve an emergency after finishing their current job or pick a
station to return to. Every emergency receives at most one ambulance, and
unserved emergencies pay a per-class queue penalty.

Two objective variants are supported. The linear variant prices fleet
changes with precomputed one-step cost-rate deltas (remove_delta for taking
an idle ambulance away from its station, add_delta for returning an on-task
ambulance) and is solved exactly: the constraint matrix is an assignment
polytope (totally unimodular), station choices of on-task ambulances
decouple because stations are uncapacitated, and the rest is a rectangular
matching solved with a shortest-augmenting-path routine plus padding rows
and columns for the idle no-op and unserved-emergency arcs. The nonlinear
variant evaluates the preparedness table at the full post-decision fleet of
every station and is minimized by exhaustive search under a leaf budget.

Ties among optimal linear solutions are broken lexicographically: for each
emergency in ascending id, prefer serving it, with the smallest-id
ambulance that keeps the objective optimal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment


class ModelingError(ValueError):
    """The problem instance is structurally invalid."""


class BudgetExceeded(RuntimeError):
    """Exhaustive search hit its leaf budget before finishing."""


@dataclass
class DispatchProblem:
    """One decision epoch.

    idle_ambs:   (amb_id, amb_type, station_id) for dispatchable ambulances,
                 each counted in its station's fleet vector.
    ontask_ambs: (amb_id, amb_type, release_loc, release_time); release data
                 is carried for provenance, costs are already baked into r.
    r:           (amb_id, emergency_id) -> dispatch cost; absent pairs are
                 forbidden (no arc), never big-M.
    queue_penalty: emergency_id -> cost of leaving it unserved this epoch.
    remove_delta[(amb_type, station)]: cost-rate change from dispatching an
                 idle ambulance away; add_delta likewise for returning one.
    prep_weight: weight on the preparedness terms.
    fleets/table: current fleet vectors and the preparedness table, needed
                 only by the nonlinear variant.
    """

    idle_ambs: list
    ontask_ambs: list
    emergencies: list
    stations: list
    r: dict
    queue_penalty: dict
    remove_delta: dict
    add_delta: dict
    prep_weight: float = 0.0
    fleets: dict = field(default_factory=dict)
    table: object = None

    def validate(self) -> None:
        ids = [a for a, *_ in self.idle_ambs] + [a for a, *_ in self.ontask_ambs]
        if len(set(ids)) != len(ids):
            raise ModelingError("duplicate ambulance id")
        if len(set(self.emergencies)) != len(self.emergencies):
            raise ModelingError("duplicate emergency id")
        if self.ontask_ambs and not self.stations:
            raise ModelingError("on-task ambulances need at least one station")
        for key, val in self.r.items():
            if not math.isfinite(val):
                raise ModelingError(f"non-finite cost for pair {key}")
        for e in self.emergencies:
            if e not in self.queue_penalty:
                raise ModelingError(f"missing queue penalty for emergency {e}")


@dataclass
class DispatchDecision:
    serve: dict  # amb_id -> emergency_id
    station: dict  # amb_id -> station_id (on-task ambulances only)
    objective: float

    def served_emergencies(self) -> set:
        return set(self.serve.values())


def _amb_entries(problem: DispatchProblem):
    """Ambulances in ascending id with their default (no-serve) action."""
    entries = []
    for aid, atype, station in problem.idle_ambs:
        entries.append(
            {
                "id": aid,
                "type": atype,
                "idle": True,
                "station": station,
                "default_cost": 0.0,
                "serve_extra": problem.prep_weight
                * problem.remove_delta.get((atype, station), 0.0),
            }
        )
    for aid, atype, *_ in problem.ontask_ambs:
        best_sid, best_val = None, math.inf
        for sid in problem.stations:
            val = problem.prep_weight * problem.add_delta.get((atype, sid), 0.0)
            if val < best_val:  # strict: ties keep the first (smallest) id
                best_sid, best_val = sid, val
        entries.append(
            {
                "id": aid,
                "type": atype,
                "idle": False,
                "station": best_sid,
                "default_cost": best_val,
                "serve_extra": 0.0,
            }
        )
    entries.sort(key=lambda e: e["id"])
    return entries


def solve_linear(problem: DispatchProblem) -> DispatchDecision:
    """Exact minimizer of the linearized dispatch objective.

    Builds the padded matching matrix where entry (a, i) holds the net cost
    of serving i with a relative to a's default action, solves it, then
    applies the lexicographic tie-break by re-solving with pinned pairs.
    """
    problem.validate()
    ambs = _amb_entries(problem)
    eids = sorted(problem.emergencies)
    n_a, n_e = len(ambs), len(eids)
    const = sum(a["default_cost"] for a in ambs) + sum(
        problem.queue_penalty[e] for e in eids
    )
    if n_a == 0 or n_e == 0:
        serve = {}
        station = {a["id"]: a["station"] for a in ambs if not a["idle"]}
        return DispatchDecision(serve=serve, station=station, objective=const)

    size = n_a + n_e
    C = np.full((size, size), np.inf)
    for ai, a in enumerate(ambs):
        for ei, e in enumerate(eids):
            cost = problem.r.get((a["id"], e))
            if cost is None:
                continue
            C[ai, ei] = (
                cost
                + a["serve_extra"]
                - problem.queue_penalty[e]
                - a["default_cost"]
            )
        C[ai, n_e + ai] = 0.0  # no-op / default action
    for ei in range(n_e):
        C[n_a + ei, ei] = 0.0  # emergency stays queued
    C[n_a:, n_e:] = 0.0

    def lsa_value(mat):
        rows, cols = linear_sum_assignment(mat)
        return float(mat[rows, cols].sum()), rows, cols

    best_val, rows, cols = lsa_value(C)
    tol = 1e-9 * max(1.0, abs(best_val) + abs(const))

    # lexicographic refinement: serve each emergency with the smallest
    # ambulance id consistent with optimality, in ascending emergency order
    fixed = C.copy()
    for ei in range(n_e):
        pinned = False
        for ai in range(n_a):
            if not np.isfinite(fixed[ai, ei]):
                continue
            trial = fixed.copy()
            trial[ai, :] = np.inf
            trial[:, ei] = np.inf
            trial[ai, ei] = fixed[ai, ei]
            val, _, _ = lsa_value(trial)
            if val <= best_val + tol:
                fixed = trial
                pinned = True
                break
        if not pinned:
            # leaving ei unserved must then be optimal
            fixed[:n_a, ei] = np.inf
            val, _, _ = lsa_value(fixed)
            if val > best_val + tol:
                raise ModelingError("tie-break refinement lost the optimum")

    _, rows, cols = lsa_value(fixed)
    serve, station = {}, {}
    matched_emergencies = set()
    for rr, cc in zip(rows, cols):
        if rr < n_a and cc < n_e and np.isfinite(fixed[rr, cc]):
            serve[ambs[rr]["id"]] = eids[cc]
            matched_emergencies.add(cc)
    for a in ambs:
        if not a["idle"] and a["id"] not in serve:
            station[a["id"]] = a["station"]

    # exact objective, recomputed from the decision itself
    objective = 0.0
    for a in ambs:
        aid = a["id"]
        if aid in serve:
            objective += problem.r[(aid, serve[aid])] + a["serve_extra"]
        elif a["idle"]:
            pass
        else:
            objective += problem.prep_weight * problem.add_delta.get(
                (a["type"], station[aid]), 0.0
            )
    for e in eids:
        if e not in set(serve.values()):
            objective += problem.queue_penalty[e]

    decision = DispatchDecision(serve=serve, station=station, objective=objective)
    _check_decision(problem, decision)
    return decision


def _check_decision(problem: DispatchProblem, decision: DispatchDecision) -> None:
    """Post-hoc feasibility check on every returned solution."""
    idle_ids = {a for a, *_ in problem.idle_ambs}
    ontask_ids = {a for a, *_ in problem.ontask_ambs}
    served = list(decision.serve.values())
    if len(served) != len(set(served)):
        raise ModelingError("emergency served twice")
    for aid, eid in decision.serve.items():
        if (aid, eid) not in problem.r:
            raise ModelingError(f"forbidden pair dispatched: {(aid, eid)}")
        if aid in decision.station:
            raise ModelingError(f"ambulance {aid} given two actions")
    for aid in ontask_ids:
        if (aid in decision.serve) == (aid in decision.station):
            raise ModelingError(f"on-task ambulance {aid} needs exactly one action")
    for aid in decision.station:
        if aid in idle_ids:
            raise ModelingError("idle ambulances do not take station actions")
        if decision.station[aid] not in problem.stations:
            raise ModelingError("unknown station in decision")


def nonlinear_objective(problem: DispatchProblem, decision: DispatchDecision) -> float:
    """Full objective with table lookups at post-decision fleet vectors."""
    if problem.table is None:
        raise ModelingError("nonlinear objective needs a preparedness table")
    value = 0.0
    for aid, eid in decision.serve.items():
        value += problem.r[(aid, eid)]
    served = decision.served_emergencies()
    for e in problem.emergencies:
        if e not in served:
            value += problem.queue_penalty[e]
    deltas = {sid: list(problem.fleets[sid]) for sid in problem.fleets}
    amb_station = {a: (t, s) for a, t, s in problem.idle_ambs}
    for aid, eid in decision.serve.items():
        if aid in amb_station:
            atype, sid = amb_station[aid]
            deltas[sid][atype] -= 1
    ontask_types = {a: t for a, t, *_ in problem.ontask_ambs}
    for aid, sid in decision.station.items():
        deltas[sid][ontask_types[aid]] += 1
    for sid, fleet in deltas.items():
        if min(fleet) < 0:
            raise ModelingError("negative post-decision fleet")
        value += problem.prep_weight * problem.table.lookup(sid, tuple(fleet))
    return value


def solve_nonlinear(problem: DispatchProblem, leaf_budget: int = 10**6) -> DispatchDecision:
    """Exact minimizer of the nonlinear objective by exhaustive search.

    Enumerates every feasible action combination in ascending ambulance id
    order (serve options by emergency id, then the default action, then
    stations by id) and keeps the first strictly best leaf, so ties resolve
    deterministically. Raises BudgetExceeded past leaf_budget leaves.
    """
    problem.validate()
    if problem.table is None:
        raise ModelingError("solve_nonlinear needs a preparedness table")
    ambs = _amb_entries(problem)
    eids = sorted(problem.emergencies)
    best = {"objective": math.inf, "decision": None}
    leaves = [0]

    def leaf(serve, station):
        leaves[0] += 1
        if leaves[0] > leaf_budget:
            raise BudgetExceeded(f"more than {leaf_budget} leaves")
        decision = DispatchDecision(serve=dict(serve), station=dict(station), objective=0.0)
        value = nonlinear_objective(problem, decision)
        if value < best["objective"] - 0.0:
            decision.objective = value
            best["objective"] = value
            best["decision"] = decision

    def rec(k, serve, station, used):
        if k == len(ambs):
            leaf(serve, station)
            return
        a = ambs[k]
        aid = a["id"]
        for e in eids:
            if e in used or (aid, e) not in problem.r:
                continue
            serve[aid] = e
            used.add(e)
            rec(k + 1, serve, station, used)
            used.discard(e)
            del serve[aid]
        if a["idle"]:
            rec(k + 1, serve, station, used)
        else:
            for sid in problem.stations:
                station[aid] = sid
                rec(k + 1, serve, station, used)
                del station[aid]

    rec(0, {}, {}, set())
    decision = best["decision"]
    decision.objective = best["objective"]
    _check_decision(problem, decision)
    return decision


def enumerate_linear_optimum(problem: DispatchProblem) -> float:
    """Brute-force optimal value of the linear objective (test oracle)."""
    problem.validate()
    ambs = _amb_entries(problem)
    eids = sorted(problem.emergencies)
    best = [math.inf]

    def rec(k, acc, used):
        if k == len(ambs):
            total = acc + sum(problem.queue_penalty[e] for e in eids if e not in used)
            best[0] = min(best[0], total)
            return
        a = ambs[k]
        aid = a["id"]
        for e in eids:
            if e in used or (aid, e) not in problem.r:
                continue
            used.add(e)
            rec(k + 1, acc + problem.r[(aid, e)] + a["serve_extra"], used)
            used.discard(e)
        if a["idle"]:
            rec(k + 1, acc, used)
        else:
            for sid in problem.stations:
                rec(
                    k + 1,
                    acc + problem.prep_weight * problem.add_delta.get((a["type"], sid), 0.0),
                    used,
                )

    rec(0, 0.0, set())
    return best[0]
