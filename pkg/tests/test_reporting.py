"""Result file formats, parsing, and report generation."""

import os

import pytest

from ambusim.instances import cost_model_for
from ambusim.metrics import summarize
from ambusim.reporting import (
    ParsedName,
    build_report,
    call_rows,
    calls_filename,
    parse_result_filename,
    read_calls_file,
    read_result_file,
    result_filename,
    result_rows,
    write_calls_file,
    write_result_file,
    _joined_records,
)
from ambusim.simulator import run_scenario


def test_filename_round_trip():
    name = result_filename("rj", "markov_preparedness", 12, 100)
    assert name == "rj_markov_preparedness_12_100.txt"
    assert parse_result_filename(name) == ParsedName("rj", "markov_preparedness", 12, 100)
    assert parse_result_filename("/some/dir/" + name).policy == "markov_preparedness"
    assert calls_filename("rj", 100) == "rj_calls_100.txt"


def test_filename_rejects_non_results():
    for bad in [
        "rj_calls_100.txt",  # too few parts
        "rj_calls_12_100.txt",  # the calls sidecar is not a result
        "summary.csv",
        "rj_dummy_12_100.dat",
        "a_b_c.txt",
        "setup__12_100.txt",
        "s_p_12_x.txt",
        "s_p_x_10.txt",
    ]:
        assert parse_result_filename(bad) is None, bad


def test_result_file_round_trip(tmp_path):
    path = str(tmp_path / "synthetic_dummy_queue_2_2.txt")
    rows = [
        [(0, 123.4567891, 493.8271564, 1500.0), (1, 0.25, 1.0, 2.125)],
        [],  # a scenario can legitimately have zero emergencies
        [(3, 9999.999999, 0.0, 86400.0)],
    ]
    write_result_file(path, rows)
    back = read_result_file(path)
    assert len(back) == 3 and back[1] == []
    for want, got in zip(rows, back):
        for (a, rt, c, f), (a2, rt2, c2, f2) in zip(want, got):
            assert a2 == a
            assert rt2 == float(f"{rt:.6f}")
            assert c2 == float(f"{c:.6f}")
            assert f2 == float(f"{f:.6f}")
    assert not [p for p in os.listdir(tmp_path) if p.startswith("tmp")]


def test_calls_file_round_trip(tmp_path):
    path = str(tmp_path / "synthetic_calls_2.txt")
    rows = [
        [(10.123456789, 4, 2, -23.01234567, -43.19876543)],
        [(0.0, 0, 0, -22.9, -43.2), (3600.0, 35, 3, -22.85, -43.15)],
    ]
    write_calls_file(path, rows)
    back = read_calls_file(path)
    assert back[0][0][1:3] == (4, 2)
    assert back[0][0][0] == float(f"{rows[0][0][0]:.6f}")
    assert back[1][1][3] == pytest.approx(-22.85, abs=5e-7)


def test_reader_validation(tmp_path):
    trunc = tmp_path / "t.txt"
    trunc.write_text("2\n1 2.0 3.0 4.0\n")
    with pytest.raises(ValueError, match="truncated"):
        read_result_file(str(trunc))
    short = tmp_path / "s.txt"
    short.write_text("1\n1 2.0\n")
    with pytest.raises(ValueError, match="expected 4 fields"):
        read_result_file(str(short))
    wide = tmp_path / "w.txt"
    wide.write_text("1\n1 2 3\n")
    with pytest.raises(ValueError, match="expected 5 fields"):
        read_calls_file(str(wide))


def test_joined_records_pair_results_with_calls():
    results = [[(0, 700.0, 2800.0, 900.0)], [(1, 10.0, 40.0, 60.0)]]
    calls = [[(0.0, 3, 2, -22.9, -43.2)], [(5.0, 1, 0, -22.8, -43.3)]]
    joined = _joined_records(results, calls, "x.txt")
    assert joined[0][0].response_time == 700.0
    assert joined[0][0].allocation_cost == 2800.0
    assert joined[0][0].etype == 2
    assert joined[1][0].etype == 0
    with pytest.raises(ValueError, match="scenarios"):
        _joined_records(results, calls[:1], "x.txt")
    with pytest.raises(ValueError, match="results but"):
        _joined_records([results[0] * 2, results[1]], calls, "x.txt")


@pytest.fixture(scope="module")
def report_dir(tmp_path_factory, synth_instance, rj_cm, synth_cfg):
    """Two policies at two fleet sizes, two scenarios each, plus a stray file."""
    d = tmp_path_factory.mktemp("results")
    n_scen = 2
    calls_blocks = None
    for policy in ("dummy_queue", "ordered"):
        for n_amb in (2, 3):
            blocks = []
            call_blocks = []
            for s in range(n_scen):
                result = run_scenario(
                    synth_instance,
                    rj_cm,
                    synth_cfg.service,
                    policy,
                    n_ambulances=n_amb,
                    seed=s,
                    horizon_s=10800.0,
                )
                blocks.append(result_rows(result))
                call_blocks.append(call_rows(result.calls))
            write_result_file(
                str(d / result_filename("synthetic", policy, n_amb, n_scen)), blocks
            )
            if calls_blocks is None:
                calls_blocks = call_blocks
                write_calls_file(str(d / calls_filename("synthetic", n_scen)), call_blocks)
            else:
                assert call_blocks == calls_blocks  # arrivals shared across runs
    (d / "notes.txt").write_text("scratch\n")
    return d


def test_build_report_outputs(report_dir, tmp_path):
    out = tmp_path / "report"
    written = build_report(str(report_dir), str(out))
    names = sorted(os.path.basename(p) for p in written)
    assert names == [
        "synthetic_cost_by_policy.png",
        "synthetic_cost_vs_fleet.png",
        "synthetic_fig_extra_time.csv",
        "synthetic_fig_mean_cost.csv",
        "synthetic_fig_mean_response.csv",
        "synthetic_response_by_policy.png",
        "synthetic_response_cdf.png",
        "synthetic_response_vs_fleet.png",
        "synthetic_summary.csv",
    ]
    for p in written:
        assert os.path.getsize(p) > 0
    lines = (out / "synthetic_fig_mean_response.csv").read_text().splitlines()
    assert lines[0] == "# mean response time (s) by fleet size"
    assert lines[1] == "n_ambulances,dummy_queue,ordered"
    assert [ln.split(",")[0] for ln in lines[2:]] == ["2", "3"]
    # cross-check one cell against a direct recomputation from the files
    res_path = report_dir / "synthetic_dummy_queue_2_2.txt"
    calls_path = report_dir / "synthetic_calls_2.txt"
    records = _joined_records(
        read_result_file(str(res_path)), read_calls_file(str(calls_path)), "x"
    )
    stats = summarize(records, cost_model_for("synthetic"))
    assert lines[2].split(",")[1] == f"{stats.mean_response_s:.6f}"
    extra = (out / "synthetic_fig_extra_time.csv").read_text().splitlines()
    assert extra[0] == "policy,n_ambulances,mean_extra_high,mean_extra_low"
    assert len(extra) == 1 + 4
    summary = (out / "synthetic_summary.csv").read_text().splitlines()
    assert len(summary) == 1 + 4


def test_build_report_is_deterministic(report_dir, tmp_path):
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    build_report(str(report_dir), str(out1))
    build_report(str(report_dir), str(out2))
    for name in os.listdir(out1):
        if name.endswith(".csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_build_report_requires_calls_file(report_dir, tmp_path):
    lonely = tmp_path / "lonely"
    lonely.mkdir()
    src = report_dir / "synthetic_dummy_queue_2_2.txt"
    (lonely / src.name).write_bytes(src.read_bytes())
    with pytest.raises(FileNotFoundError, match="calls"):
        build_report(str(lonely))