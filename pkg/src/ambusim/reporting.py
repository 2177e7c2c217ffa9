"""Result files and rendered reports.

A simulation batch produces two kinds of delimited text files:

  <setup>_<policy>_<n_amb>_<n_scen>.txt   one block per scenario: a line with
      the number of served emergencies N, then N lines of
      "amb_index response_time allocation_cost finish_instant"
      ordered by emergency id.

  <setup>_calls_<n_scen>.txt   same block layout with rows
      "time zone etype lat lon", in the same order, so row k of a result
      block and row k of the calls block describe the same emergency.

The report step folds every result file in a directory into one summary CSV
per setup and renders comparison figures next to it.
"""

from __future__ import annotations

import os
import tempfile
from collections import namedtuple

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import summarize, write_summary_csv

ParsedName = namedtuple("ParsedName", "setup policy n_ambulances n_scenarios")
RecordView = namedtuple("RecordView", "response_time allocation_cost etype")


def result_filename(setup: str, policy: str, n_ambulances: int, n_scenarios: int) -> str:
    return f"{setup}_{policy}_{n_ambulances}_{n_scenarios}.txt"


def calls_filename(setup: str, n_scenarios: int) -> str:
    return f"{setup}_calls_{n_scenarios}.txt"


def parse_result_filename(name: str):
    """ParsedName for a result file, None for anything else (calls files,
    stray text). Policy names may themselves contain underscores."""
    stem, ext = os.path.splitext(os.path.basename(name))
    if ext != ".txt":
        return None
    parts = stem.split("_")
    if len(parts) < 4:
        return None
    try:
        n_amb, n_scen = int(parts[-2]), int(parts[-1])
    except ValueError:
        return None
    policy = "_".join(parts[1:-2])
    if not policy or policy == "calls":
        return None
    return ParsedName(parts[0], policy, n_amb, n_scen)


def _atomic_write(path: str, text: str) -> None:
    tmp_fd, tmp = tempfile.mkstemp(dir=os.path.dirname(os.path.abspath(path)) or ".")
    try:
        with os.fdopen(tmp_fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def result_rows(result) -> list:
    """(amb_index, response, cost, finish) per emergency, id order."""
    return [
        (r.amb_id, r.response_time, r.allocation_cost, r.finish_time)
        for r in result.records
    ]


def call_rows(calls) -> list:
    """(time, zone, etype, lat, lon) per emergency, id order."""
    return [
        (c.time, c.zone, c.etype, c.location.lat, c.location.lon)
        for c in sorted(calls, key=lambda c: c.id)
    ]


def write_result_file(path: str, scenario_rows: list) -> None:
    lines = []
    for rows in scenario_rows:
        lines.append(str(len(rows)))
        for amb, rt, cost, finish in rows:
            lines.append(f"{int(amb)} {rt:.6f} {cost:.6f} {finish:.6f}")
    _atomic_write(path, "\n".join(lines) + "\n")


def write_calls_file(path: str, scenario_calls: list) -> None:
    lines = []
    for rows in scenario_calls:
        lines.append(str(len(rows)))
        for t, zone, etype, lat, lon in rows:
            lines.append(f"{t:.6f} {int(zone)} {int(etype)} {lat:.6f} {lon:.6f}")
    _atomic_write(path, "\n".join(lines) + "\n")


def _read_blocks(path: str, n_fields: int) -> list:
    blocks = []
    with open(path) as fh:
        lines = [ln for ln in (s.strip() for s in fh) if ln]
    i = 0
    while i < len(lines):
        n = int(lines[i])
        i += 1
        if i + n > len(lines):
            raise ValueError(f"{path}: truncated block of {n} rows")
        rows = []
        for ln in lines[i : i + n]:
            vals = ln.split()
            if len(vals) != n_fields:
                raise ValueError(f"{path}: expected {n_fields} fields, got {len(vals)}")
            rows.append(vals)
        blocks.append(rows)
        i += n
    return blocks


def read_result_file(path: str) -> list:
    out = []
    for rows in _read_blocks(path, 4):
        out.append([(int(a), float(rt), float(c), float(f)) for a, rt, c, f in rows])
    return out


def read_calls_file(path: str) -> list:
    out = []
    for rows in _read_blocks(path, 5):
        out.append(
            [(float(t), int(z), int(e), float(la), float(lo)) for t, z, e, la, lo in rows]
        )
    return out


def _joined_records(result_blocks: list, call_blocks: list, path: str) -> list:
    if len(result_blocks) != len(call_blocks):
        raise ValueError(f"{path}: {len(result_blocks)} scenarios vs {len(call_blocks)} call blocks")
    scenario_records = []
    for k, (res, cal) in enumerate(zip(result_blocks, call_blocks)):
        if len(res) != len(cal):
            raise ValueError(f"{path}: scenario {k} has {len(res)} results but {len(cal)} calls")
        scenario_records.append(
            [
                RecordView(response_time=rt, allocation_cost=cost, etype=row[2])
                for (_, rt, cost, _), row in zip(res, cal)
            ]
        )
    return scenario_records


def _write_series_csv(path: str, series: dict, value_name: str) -> None:
    """Figure-family CSV: one row per fleet size, one column per policy."""
    policies = sorted(series)
    fleet_sizes = sorted({n for pts in series.values() for n, _ in pts})
    lookup = {(p, n): v for p, pts in series.items() for n, v in pts}
    lines = ["n_ambulances," + ",".join(policies)]
    for n in fleet_sizes:
        cells = [
            f"{lookup[(p, n)]:.6f}" if (p, n) in lookup else "" for p in policies
        ]
        lines.append(f"{n}," + ",".join(cells))
    _atomic_write(path, f"# {value_name}\n" + "\n".join(lines) + "\n")


def _write_extra_time_csv(path: str, rows: list) -> None:
    lines = ["policy,n_ambulances,mean_extra_high,mean_extra_low"]
    for policy, n_amb, stats in rows:
        lines.append(
            f"{policy},{n_amb},{stats.mean_extra_high_s:.6f},{stats.mean_extra_low_s:.6f}"
        )
    _atomic_write(path, "\n".join(lines) + "\n")


def _bar_figure(path: str, labels: list, values: list, title: str, ylabel: str) -> None:
    fig, ax = plt.subplots(figsize=(max(6.0, 0.9 * len(labels)), 4.0))
    ax.bar(range(len(labels)), values, color="tab:blue")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, rotation=30, ha="right")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _lines_figure(path: str, series: dict, title: str, xlabel: str, ylabel: str) -> None:
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    for label in sorted(series):
        xs, ys = zip(*sorted(series[label]))
        ax.plot(xs, ys, marker="o", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _cdf_figure(path: str, samples: dict, title: str) -> None:
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    for label in sorted(samples):
        xs = np.sort(np.asarray(samples[label]))
        if len(xs) == 0:
            continue
        ax.step(xs, np.arange(1, len(xs) + 1) / len(xs), where="post", label=label)
    ax.set_xlabel("response time (s)")
    ax.set_ylabel("fraction of emergencies")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def build_report(result_dir: str, out_dir: str = None, cost_model_lookup=None) -> list:
    """Summarize every result file in result_dir; write one summary CSV per
    setup plus comparison figures into out_dir. Returns the written paths."""
    if cost_model_lookup is None:
        from .instances import cost_model_for

        cost_model_lookup = cost_model_for
    out_dir = out_dir or result_dir
    os.makedirs(out_dir, exist_ok=True)
    groups: dict = {}
    for name in sorted(os.listdir(result_dir)):
        parsed = parse_result_filename(name)
        if parsed is None:
            continue
        groups.setdefault(parsed.setup, []).append((parsed, os.path.join(result_dir, name)))
    written = []
    for setup, entries in sorted(groups.items()):
        cm = cost_model_lookup(setup)
        call_cache: dict = {}
        rows = []
        mean_cost_series: dict = {}
        mean_rt_series: dict = {}
        cdf_samples: dict = {}
        max_namb = max(p.n_ambulances for p, _ in entries)
        for parsed, path in sorted(entries, key=lambda e: (e[0].policy, e[0].n_ambulances)):
            calls_path = os.path.join(result_dir, calls_filename(setup, parsed.n_scenarios))
            if parsed.n_scenarios not in call_cache:
                if not os.path.exists(calls_path):
                    raise FileNotFoundError(f"missing calls file {calls_path}")
                call_cache[parsed.n_scenarios] = read_calls_file(calls_path)
            result_blocks = read_result_file(path)
            records = _joined_records(result_blocks, call_cache[parsed.n_scenarios], path)
            stats = summarize(records, cm)
            rows.append((parsed.policy, parsed.n_ambulances, stats))
            mean_cost_series.setdefault(parsed.policy, []).append(
                (parsed.n_ambulances, stats.mean_allocation_cost)
            )
            mean_rt_series.setdefault(parsed.policy, []).append(
                (parsed.n_ambulances, stats.mean_response_s)
            )
            if parsed.n_ambulances == max_namb:
                cdf_samples[parsed.policy] = [
                    r.response_time for recs in records for r in recs
                ]
        csv_path = os.path.join(out_dir, f"{setup}_summary.csv")
        write_summary_csv(csv_path, rows)
        written.append(csv_path)
        path = os.path.join(out_dir, f"{setup}_fig_mean_cost.csv")
        _write_series_csv(path, mean_cost_series, "mean allocation cost by fleet size")
        written.append(path)
        path = os.path.join(out_dir, f"{setup}_fig_mean_response.csv")
        _write_series_csv(path, mean_rt_series, "mean response time (s) by fleet size")
        written.append(path)
        path = os.path.join(out_dir, f"{setup}_fig_extra_time.csv")
        _write_extra_time_csv(path, rows)
        written.append(path)
        at_max = [(p, n, s) for p, n, s in rows if n == max_namb]
        labels = [p for p, _, _ in at_max]
        fig = os.path.join(out_dir, f"{setup}_cost_by_policy.png")
        _bar_figure(
            fig,
            labels,
            [s.mean_allocation_cost for _, _, s in at_max],
            f"{setup}: mean allocation cost, {max_namb} ambulances",
            "mean allocation cost",
        )
        written.append(fig)
        fig = os.path.join(out_dir, f"{setup}_response_by_policy.png")
        _bar_figure(
            fig,
            labels,
            [s.mean_response_s for _, _, s in at_max],
            f"{setup}: mean response time, {max_namb} ambulances",
            "mean response time (s)",
        )
        written.append(fig)
        fig = os.path.join(out_dir, f"{setup}_response_cdf.png")
        _cdf_figure(fig, cdf_samples, f"{setup}: response-time distribution, {max_namb} ambulances")
        written.append(fig)
        if len({n for _, n, _ in rows}) > 1:
            fig = os.path.join(out_dir, f"{setup}_cost_vs_fleet.png")
            _lines_figure(
                fig,
                mean_cost_series,
                f"{setup}: mean allocation cost by fleet size",
                "ambulances",
                "mean allocation cost",
            )
            written.append(fig)
            fig = os.path.join(out_dir, f"{setup}_response_vs_fleet.png")
            _lines_figure(
                fig,
                mean_rt_series,
                f"{setup}: mean response time by fleet size",
                "ambulances",
                "mean response time (s)",
            )
            written.append(fig)
    return written
