# tests/test_io.py
import numpy as np

from backend.lib.avgctl_core.io import (REPORT_HEADER, bounds_summary, control_to_csv, fmt, format_report_table,
                                        nonconverged_total, parse_report_csv, report_to_csv, trajectory_to_csv,
                                        value_grid_to_csv)
from backend.lib.avgctl_core.models import (ControlSignal, ConvergenceReport, ConvergenceRow, StateGrid, Trajectory,
                                            ValueGrid)


def sample_report(constant=7.38905609893065):
    rows = [
        ConvergenceRow(n=1, alpha1=0.5, w1=1.125, error=0.0312345678),
        ConvergenceRow(n=2, alpha1=0.75, w1=0.5625, error=0.0156, order=1.0016, nonconverged=2),
        ConvergenceRow(n=3, alpha1=0.875, w1=0.28125, error=float("nan"), failed=True),
    ]
    if constant is not None:
        for r in rows[:2]:
            r.bound_rhs = constant * r.w1
            r.bound_ok = True
    return ConvergenceReport("test1", 1.0, constant, rows)


def test_fmt():
    assert fmt(0.0312345678) == "0.0312346"
    assert fmt(1.0) == "1"
    assert fmt(None) == ""


def test_report_csv_layout():
    text = report_to_csv(sample_report())
    lines = text.splitlines()
    assert lines[0] == ",".join(REPORT_HEADER)
    assert lines[1] == "1,0.5,1.125,0.0312346,,8.31269,true"
    assert lines[2] == "2,0.75,0.5625,0.0156,1.0016,4.15634,true"
    assert lines[3] == "3,0.875,0.28125,,,,"
    assert text.endswith("\n")


def test_report_csv_parses_back():
    rows = parse_report_csv(report_to_csv(sample_report(constant=None)))
    assert [r["N"] for r in rows] == [1, 2, 3]
    assert rows[0]["order"] is None
    assert rows[1]["order"] == 1.0016
    assert rows[2]["error"] is None
    assert all(r["bound_rhs"] is None and r["bound_ok"] is None for r in rows)


def test_trajectory_csv_columns():
    times = np.linspace(0.0, 1.0, 3)
    states = np.arange(12, dtype=float).reshape(2, 3, 2)
    lines = trajectory_to_csv(Trajectory(times, states, ("f1", "f2"))).splitlines()
    assert lines[0] == "time,atom1_x1,atom1_x2,atom2_x1,atom2_x2"
    assert lines[1] == "0.0,0.0,1.0,6.0,7.0"
    assert lines[3] == "1.0,4.0,5.0,10.0,11.0"


def test_control_csv_uses_left_knots():
    u = ControlSignal(0.0, 1.0, np.array([[0.5], [-0.25]]))
    assert control_to_csv(u) == "time,u_1\n0.0,0.5\n0.5,-0.25\n"


def test_value_grid_csv():
    grid = StateGrid((-1.0, 0.0), (1.0, 1.0), (2,))
    vg = ValueGrid(grid, np.array([1.0, 2.0, 3.0, 4.0]), np.array([True, True, False, True]))
    lines = value_grid_to_csv(vg).splitlines()
    assert lines[0] == "x0_1,x0_2,value,converged"
    assert lines[1] == "-1.0,0.0,1.0,true"
    assert lines[3] == "1.0,0.0,3.0,false"


def test_table_and_summary():
    report = sample_report()
    table = format_report_table(report).splitlines()
    assert table[0] == "test1: horizon 1, C = 7.38906"
    assert table[2].split() == ["1", "0.5", "1.125", "0.0312346", "-", "8.31269", "ok"]
    assert "FAILED" in table[4]
    summary = bounds_summary(report)
    assert "N=1: error 0.0312346 <= C*W1 8.31269" in summary
    assert summary.splitlines()[-1] == "violations: 0, smallest margin: 4.14074"
    assert bounds_summary(sample_report(constant=None)) == "test1: bound check disabled\n"
    assert nonconverged_total(report) == 2
