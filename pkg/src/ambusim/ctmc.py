"""Per-station continuous-time Markov chain behind the preparedness metric.

Each station is modeled in isolation. The state counts busy ambulances per
(ambulance type, emergency class) pair; an arrival of class c seizes the most
preferred available type for c, a busy pair (a, c) completes at rate
mu(a, c) times its count. Whenever no compatible type is available, class-c
arrivals are lost at a penalty rate lam(c) * phi(c). The long-run penalty
rate of that lost demand, one number per station and fleet vector, is the
preparedness cost the dispatch policies trade off against response time.

State enumeration factorizes over ambulance types: the full space is the
cartesian product of per-type simplices {x : sum(x) <= fleet[t]}, kept in
lexicographic order, so a state index is an exact mixed-radix code (no
hashing involved) and generator assembly is vectorized per transition kind.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .linalg import (
    SolveReport,
    SolverFailure,
    build_reduced_matrix,
    cg_normal_solve,
    coo_to_csr,
    gmres_solve,
)

FleetVector = tuple  # busy-capacity per ambulance type, e.g. (n_als, n_bls)

DEFAULT_TOL = 1e-10
RESIDUAL_BOUND = 1e-8
NEGATIVE_FAILURE = -1e-9


@dataclass
class StationModel:
    """Arrival, service and penalty parameters of one station.

    pref[c] lists the ambulance type indexes that may serve class c, most
    preferred first (ascending mismatch cost, ties to the lower type index).
    mu[t][c] must be positive for every pair that pref enumerates.
    """

    station_id: int
    n_amb_types: int
    lam: np.ndarray  # (n_classes,) arrivals per second
    mu: np.ndarray  # (n_amb_types, n_classes) completions per second
    pref: list  # per class: ordered list of amb type indexes
    phi: np.ndarray  # (n_classes,) penalty per lost arrival

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        n_classes = len(self.lam)
        if self.mu.shape != (self.n_amb_types, n_classes):
            raise ValueError("mu must be (n_amb_types, n_classes)")
        if len(self.pref) != n_classes or len(self.phi) != n_classes:
            raise ValueError("pref and phi must have one entry per class")
        if (self.lam < 0).any() or (self.phi < 0).any():
            raise ValueError("rates and penalties must be nonnegative")
        for c, order in enumerate(self.pref):
            if len(set(order)) != len(order):
                raise ValueError("duplicate type in preference order")
            for t in order:
                if not 0 <= t < self.n_amb_types:
                    raise ValueError(f"bad ambulance type {t} in pref[{c}]")
                if self.mu[t, c] <= 0:
                    raise ValueError(f"mu must be positive for pair ({t}, {c})")

    @property
    def n_classes(self) -> int:
        return len(self.lam)

    def pairs(self) -> list:
        """Compatible (type, class) pairs grouped by type, classes ascending."""
        out = []
        for t in range(self.n_amb_types):
            for c in range(self.n_classes):
                if t in self.pref[c]:
                    out.append((t, c))
        return out

    def param_key(self) -> dict:
        return {
            "station_id": self.station_id,
            "n_amb_types": self.n_amb_types,
            "lam": self.lam.tolist(),
            "mu": self.mu.tolist(),
            "pref": [list(p) for p in self.pref],
            "phi": self.phi.tolist(),
        }


def _simplex_tuples(k: int, cap: int) -> list:
    """All k-tuples of nonnegative ints with sum <= cap, lexicographic."""
    if k == 0:
        return [()]
    out = []

    def rec(prefix, budget):
        if len(prefix) == k - 1:
            for v in range(budget + 1):
                out.append(prefix + (v,))
            return
        for v in range(budget + 1):
            rec(prefix + (v,), budget - v)

    rec((), cap)
    return out


@dataclass
class StateSpace:
    """Product state space for one station and fleet vector.

    The global index of a state is the mixed-radix combination of its
    per-type block indexes, type 0 most significant, matching lexicographic
    order of the concatenated state tuple.
    """

    fleet: FleetVector
    pairs: list  # (type, class) in enumeration order
    type_pairs: list  # per type: list of its local class list
    blocks: list  # per type: list of block tuples, lex order
    block_index: list  # per type: dict block -> local index
    sizes: list
    strides: list
    n: int
    block_sums: list  # per type: np.ndarray of block occupancy totals
    _axis_codes: list = field(default_factory=list, repr=False)

    def axis_codes(self, t: int) -> np.ndarray:
        """Block index of type t for every global state index."""
        if not self._axis_codes:
            self._axis_codes = [
                (np.arange(self.n) // self.strides[u]) % self.sizes[u]
                for u in range(len(self.sizes))
            ]
        return self._axis_codes[t]

    def index_of(self, state: tuple) -> int:
        g = 0
        pos = 0
        for t, classes in enumerate(self.type_pairs):
            k = len(classes)
            g += self.block_index[t][tuple(state[pos : pos + k])] * self.strides[t]
            pos += k
        return g

    def states(self) -> list:
        """All state tuples in index order."""
        out = []

        def rec(t, prefix):
            if t == len(self.blocks):
                out.append(prefix)
                return
            for b in self.blocks[t]:
                rec(t + 1, prefix + b)

        rec(0, ())
        return out


def enumerate_states(model: StationModel, fleet: FleetVector) -> StateSpace:
    """Enumerate all busy configurations for the given fleet vector."""
    if len(fleet) != model.n_amb_types:
        raise ValueError("fleet vector length must match n_amb_types")
    if any(m < 0 for m in fleet):
        raise ValueError("fleet counts must be nonnegative")
    pairs = model.pairs()
    type_pairs = [[c for (t, c) in pairs if t == u] for u in range(model.n_amb_types)]
    blocks = [_simplex_tuples(len(tp), fleet[u]) for u, tp in enumerate(type_pairs)]
    sizes = [len(b) for b in blocks]
    strides = [0] * len(sizes)
    acc = 1
    for t in range(len(sizes) - 1, -1, -1):
        strides[t] = acc
        acc *= sizes[t]
    block_sums = [np.array([sum(b) for b in bl], dtype=int) for bl in blocks]
    return StateSpace(
        fleet=tuple(fleet),
        pairs=pairs,
        type_pairs=type_pairs,
        blocks=blocks,
        block_index=[{b: i for i, b in enumerate(bl)} for bl in blocks],
        sizes=sizes,
        strides=strides,
        n=acc,
        block_sums=block_sums,
    )


def preferred_available_type(
    model: StationModel, space: StateSpace, state: tuple, c: int
) -> Optional[int]:
    """Most preferred type for class c with an ambulance free in `state`."""
    busy = {}
    pos = 0
    for t, classes in enumerate(space.type_pairs):
        busy[t] = sum(state[pos : pos + len(classes)])
        pos += len(classes)
    for t in model.pref[c]:
        if busy[t] < space.fleet[t]:
            return t
    return None


def build_generator(model: StationModel, fleet: FleetVector):
    """Sparse generator Q for the station chain at the given fleet.

    Returns (Q, space) with Q in CSR form, rows summing to zero.
    """
    space = enumerate_states(model, fleet)
    n = space.n
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    avail = [space.block_sums[t] < fleet[t] for t in range(model.n_amb_types)]

    def emit(src: np.ndarray, dst: np.ndarray, rate: np.ndarray):
        rows.append(src)
        cols.append(dst)
        vals.append(rate)
        np.add.at(diag, src, -rate)

    # completion transitions: pair (t, c) with count x completes at x * mu
    for t in range(model.n_amb_types):
        classes = space.type_pairs[t]
        if not classes:
            continue
        stride, size = space.strides[t], space.sizes[t]
        # global indexes whose type-t block is 0, reused for every block
        outer = np.arange(n // (size * stride)) * (size * stride)
        base = (outer[:, None] + np.arange(stride)[None, :]).ravel()
        bidx = space.block_index[t]
        for b_local, block in enumerate(space.blocks[t]):
            for j, c in enumerate(classes):
                if block[j] == 0:
                    continue
                nxt = list(block)
                nxt[j] -= 1
                b_dst = bidx[tuple(nxt)]
                src = base + b_local * stride
                emit(src, base + b_dst * stride, np.full(len(src), block[j] * model.mu[t, c]))

    # arrival transitions: class c seizes the most preferred available type
    for c in range(model.n_classes):
        if model.lam[c] <= 0 or not model.pref[c]:
            continue
        remaining = np.ones(n, dtype=bool)
        for t in model.pref[c]:
            codes = space.axis_codes(t)
            take = remaining & avail[t][codes]
            remaining &= ~take
            src = np.nonzero(take)[0]
            if len(src) == 0:
                continue
            j = space.type_pairs[t].index(c)
            bidx = space.block_index[t]
            up = np.full(space.sizes[t], -1, dtype=np.int64)
            for b_local, block in enumerate(space.blocks[t]):
                if sum(block) < fleet[t]:
                    nxt = list(block)
                    nxt[j] += 1
                    up[b_local] = bidx[tuple(nxt)]
            b_src = codes[src]
            dst = src + (up[b_src] - b_src) * space.strides[t]
            emit(src, dst, np.full(len(src), model.lam[c]))

    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    Q = coo_to_csr(n, n, np.concatenate(rows), np.concatenate(cols), np.concatenate(vals))
    return Q, space


def blocked_mask(model: StationModel, space: StateSpace, c: int) -> np.ndarray:
    """Boolean per state: no compatible ambulance type available for class c."""
    blk = np.ones(space.n, dtype=bool)
    for t in model.pref[c]:
        blk &= ~(space.block_sums[t] < space.fleet[t])[space.axis_codes(t)]
    return blk


def cost_rate_vector(model: StationModel, space: StateSpace) -> np.ndarray:
    """Instantaneous lost-demand penalty rate per state."""
    cost = np.zeros(space.n)
    for c in range(model.n_classes):
        if model.lam[c] <= 0:
            continue
        cost += model.lam[c] * model.phi[c] * blocked_mask(model, space, c)
    return cost


def stationary_distribution(
    Q,
    method: str = "cg",
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
) -> tuple[np.ndarray, SolveReport]:
    """Stationary distribution of a generator via the reduced system.

    The generator is rescaled to unit magnitude before solving (stationary
    vectors are invariant under positive scaling), the iterate is clamped and
    renormalized, and the balance residual is checked. Raises SolverFailure
    on non-convergence, components below -1e-9, or residual above 1e-8
    (relative to the rate scale).
    """
    n = Q.shape[0]
    if n == 1:
        return np.array([1.0]), SolveReport("direct", 1, 0, 0.0, True, 0.0)
    scale = float(np.abs(Q.diagonal()).max())
    if scale <= 0.0:
        raise SolverFailure("generator has no transitions")
    Qs = Q.multiply(1.0 / scale).tocsr()
    D = build_reduced_matrix(Qs, ref_state=0)
    if method not in ("gmres", "cg"):
        raise ValueError(f"unknown method {method!r}")

    def attempt(run_tol):
        if method == "gmres":
            nu, report = gmres_solve(D, tol=run_tol, max_iter=max_iter)
        else:
            nu, report = cg_normal_solve(D, tol=run_tol, max_iter=max_iter)
        if not report.converged:
            raise SolverFailure(
                f"{report.method} did not converge: residual {report.residual:.3e}"
            )
        total = nu.sum()
        if total <= 0.0:
            raise SolverFailure("stationary mass vanished")
        nu = nu / total  # negativity is judged on unit mass, not the raw iterate
        if nu.min() < NEGATIVE_FAILURE:
            raise SolverFailure(
                f"stationary component {nu.min():.3e} below {NEGATIVE_FAILURE}"
            )
        nu = np.where(nu < 0.0, 0.0, nu)
        nu = nu / nu.sum()
        res = float(np.abs(Qs.T @ nu).max())
        if res > RESIDUAL_BOUND:
            raise SolverFailure(f"balance residual {res:.3e} above {RESIDUAL_BOUND}")
        return nu, report

    # solver noise can dip just past the gates at a loose tolerance; tighten
    # before declaring the chain unsolvable
    last = None
    run_tol = tol
    for _ in range(3):
        try:
            return attempt(run_tol)
        except SolverFailure as exc:
            last = exc
            run_tol = max(run_tol * 1e-2, 1e-15)
    raise last


def steady_state_cost(
    model: StationModel,
    fleet: FleetVector,
    method: str = "cg",
    tol: float = DEFAULT_TOL,
) -> float:
    """Long-run lost-demand penalty rate for one station and fleet vector."""
    Q, space = build_generator(model, fleet)
    nu, _ = stationary_distribution(Q, method=method, tol=tol)
    return float(nu @ cost_rate_vector(model, space))


@dataclass
class PreparednessTable:
    """Steady-state penalty rate per (station, fleet vector), precomputed.

    Lookups clamp each fleet component to the table cap, matching the
    diminishing effect of additional ambulances beyond the cap.
    """

    caps: tuple
    values: dict  # (station_id, fleet_tuple) -> float
    param_hash: str = ""

    def lookup(self, station_id: int, fleet: FleetVector) -> float:
        key = tuple(min(int(m), c) for m, c in zip(fleet, self.caps))
        return self.values[(station_id, key)]

    def add_delta(self, station_id: int, fleet: FleetVector, t: int) -> float:
        """Cost-rate change from adding one type-t ambulance."""
        up = list(fleet)
        up[t] += 1
        return self.lookup(station_id, tuple(up)) - self.lookup(station_id, fleet)

    def remove_delta(self, station_id: int, fleet: FleetVector, t: int) -> float:
        """Cost-rate change from removing one type-t ambulance."""
        if fleet[t] <= 0:
            raise ValueError("cannot remove from an empty type")
        down = list(fleet)
        down[t] -= 1
        return self.lookup(station_id, tuple(down)) - self.lookup(station_id, fleet)

    def save_csv(self, path: str) -> None:
        tmp_fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
        try:
            with os.fdopen(tmp_fd, "w", newline="") as fh:
                fh.write(f"# hash={self.param_hash}\n")
                writer = csv.writer(fh)
                writer.writerow(
                    ["station_id"]
                    + [f"m_{t}" for t in range(len(self.caps))]
                    + ["cost_rate"]
                )
                for (sid, fleet), val in sorted(self.values.items()):
                    writer.writerow([sid, *fleet, repr(val)])
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @staticmethod
    def load_csv(path: str) -> "PreparednessTable":
        with open(path, newline="") as fh:
            first = fh.readline().strip()
            if not first.startswith("# hash="):
                raise ValueError("preparedness cache missing hash header")
            param_hash = first.split("=", 1)[1]
            reader = csv.reader(fh)
            header = next(reader)
            n_types = len(header) - 2
            values = {}
            for row in reader:
                sid = int(row[0])
                fleet = tuple(int(v) for v in row[1 : 1 + n_types])
                values[(sid, fleet)] = float(row[-1])
        caps = tuple(
            max(k[1][t] for k in values) if values else 0 for t in range(n_types)
        )
        return PreparednessTable(caps=caps, values=values, param_hash=param_hash)


def table_param_hash(models: list, caps: tuple) -> str:
    payload = json.dumps(
        {"caps": list(caps), "models": [m.param_key() for m in models]},
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()


def build_preparedness_table(
    models: list,
    caps: tuple,
    method: str = "cg",
    tol: float = DEFAULT_TOL,
    cache_path: Optional[str] = None,
) -> PreparednessTable:
    """Solve every station chain on the fleet grid prod_t {0..caps[t]}.

    When cache_path exists and its parameter hash matches, the cached table
    is returned without solving; otherwise the table is rebuilt and the
    cache rewritten atomically.
    """
    want_hash = table_param_hash(models, caps)
    if cache_path and os.path.exists(cache_path):
        try:
            cached = PreparednessTable.load_csv(cache_path)
        except (ValueError, OSError):
            cached = None
        if cached is not None and cached.param_hash == want_hash and cached.caps == tuple(caps):
            return cached
    values = {}
    grids = list(np.ndindex(*[c + 1 for c in caps]))
    for model in models:
        for fleet in grids:
            if model.lam.sum() <= 0.0:
                values[(model.station_id, tuple(fleet))] = 0.0
                continue
            Q, space = build_generator(model, fleet)
            nu, _ = stationary_distribution(Q, method=method, tol=tol)
            values[(model.station_id, tuple(fleet))] = float(
                nu @ cost_rate_vector(model, space)
            )
    table = PreparednessTable(caps=tuple(caps), values=values, param_hash=want_hash)
    if cache_path:
        table.save_csv(cache_path)
    return table


def calibrate_station_models(
    instance,
    cost_model,
    service,
    blocking_window: float = 1800.0,
) -> list:
    """Station models from a city instance and simulator timing parameters.

    Arrival rates sum the weekly-average zone rates over each station's
    catchment. Service rates invert the expected busy span of one job seen
    from the station: travel to a catchment zone, on-scene care, then the
    transport and cleaning legs weighted by their probabilities (travel legs
    approximated by catchment means). The lost-arrival penalty is the class
    urgency weight times blocking_window seconds.
    """
    n_classes = cost_model.n_etypes
    n_types = cost_model.n_amb_types
    models = []
    zone_rate = np.zeros((len(instance.zones), n_classes))
    for z in instance.zones:
        for c in range(n_classes):
            zone_rate[z.id, c] = instance.rates.weekly_average(z.id, c)
    for sid, spoint in enumerate(instance.stations):
        zone_ids = [z.id for z in instance.zones if instance.station_zone_map[z.id] == sid]
        lam = zone_rate[zone_ids].sum(axis=0) if zone_ids else np.zeros(n_classes)
        weights = zone_rate[zone_ids].sum(axis=1) if zone_ids else np.array([])
        if zone_ids and weights.sum() > 0:
            w = weights / weights.sum()
            t_scene = sum(
                wi * instance.travel.travel_time(spoint, instance.zones[zid].centroid)
                for wi, zid in zip(w, zone_ids)
            )
            t_hosp = sum(
                wi
                * instance.travel.travel_time(
                    instance.zones[zid].centroid,
                    instance.hospitals[instance.nearest_hospital(instance.zones[zid].centroid)],
                )
                for wi, zid in zip(w, zone_ids)
            )
        else:
            t_scene = t_hosp = 0.0
        mu = np.zeros((n_types, n_classes))
        for c in range(n_classes):
            busy = (
                t_scene
                + service.on_scene_mean_s
                + service.p_transport * (t_hosp + service.hospital_mean_s)
                + service.p_cleaning * (t_scene + service.cleaning_mean_s)
            )
            mu[:, c] = 1.0 / busy if busy > 0 else 1.0 / 600.0
        pref = [cost_model.preference_order(c) for c in range(n_classes)]
        phi = np.array(
            [cost_model.urgency_weight(c) * blocking_window for c in range(n_classes)]
        )
        models.append(
            StationModel(
                station_id=sid,
                n_amb_types=n_types,
                lam=lam,
                mu=mu,
                pref=pref,
                phi=phi,
            )
        )
    return models
