# backend/lib/avgctl_core/io.py
import csv
from io import StringIO
from typing import Dict, List, Optional

from .models import ControlSignal, ConvergenceReport, Trajectory, ValueGrid

REPORT_HEADER = ["N", "alpha1", "w1", "error", "order", "bound_rhs", "bound_ok"]


def fmt(value: Optional[float]) -> str:
    """6 significant digits; None becomes an empty cell."""
    if value is None:
        return ""
    return f"{float(value):.6g}"


def _write(header: List[str], rows) -> str:
    f = StringIO()
    writer = csv.writer(f, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return f.getvalue()


def report_to_csv(report: ConvergenceReport) -> str:
    """
    One row per N. Failed rows keep N, alpha1 and W1 and leave the rest empty;
    order is empty on the first row and after a failure; the bound columns are
    empty when the bound check is disabled.
    """
    rows = []
    for r in report.rows:
        ok = "" if r.bound_ok is None else ("true" if r.bound_ok else "false")
        error = "" if r.failed else fmt(r.error)
        rows.append([str(r.n), fmt(r.alpha1), fmt(r.w1), error, fmt(r.order), fmt(r.bound_rhs), ok])
    return _write(REPORT_HEADER, rows)


def parse_report_csv(csv_text: str) -> List[Dict[str, Optional[float]]]:
    """
    Parse a report CSV back into dicts keyed by the header. Empty cells map to
    None, bound_ok to a bool.
    """
    reader = csv.DictReader(StringIO(csv_text.strip()))
    if reader.fieldnames != REPORT_HEADER:
        raise ValueError(f"unexpected report header: {reader.fieldnames}")
    rows = []
    for row in reader:
        parsed: Dict[str, Optional[float]] = {"N": int(row["N"])}
        for key in REPORT_HEADER[1:-1]:
            parsed[key] = float(row[key]) if row[key] else None
        parsed["bound_ok"] = None if not row["bound_ok"] else row["bound_ok"] == "true"
        rows.append(parsed)
    return rows


def trajectory_to_csv(traj: Trajectory) -> str:
    """Columns: time, then atom<i>_x<j> for every atom i and state coordinate j (1-based)."""
    atoms, _, n = traj.states.shape
    header = ["time"] + [f"atom{i + 1}_x{j + 1}" for i in range(atoms) for j in range(n)]
    flat = traj.states.transpose(1, 0, 2).reshape(len(traj.times), atoms * n)
    rows = [[repr(float(t))] + [repr(float(v)) for v in line] for t, line in zip(traj.times, flat)]
    return _write(header, rows)


def control_to_csv(u: ControlSignal) -> str:
    """Left knot of every interval with the control held on it."""
    header = ["time"] + [f"u_{j + 1}" for j in range(u.control_dim)]
    rows = [[repr(float(t))] + [repr(float(v)) for v in values] for t, values in zip(u.times[:-1], u.values)]
    return _write(header, rows)


def value_grid_to_csv(vg: ValueGrid) -> str:
    points = vg.grid.points
    header = [f"x0_{j + 1}" for j in range(vg.grid.dim)] + ["value", "converged"]
    rows = [[repr(float(v)) for v in x] + [repr(float(value)), "true" if ok else "false"]
            for x, value, ok in zip(points, vg.values, vg.converged)]
    return _write(header, rows)


def format_report_table(report: ConvergenceReport) -> str:
    """Fixed-width table for the terminal."""
    lines = [f"{report.name}: horizon {fmt(report.horizon)}"
             + ("" if report.constant is None else f", C = {fmt(report.constant)}")]
    lines.append(f"{'N':>3} {'alpha1':>12} {'W1':>12} {'error':>12} {'order':>8} {'C*W1':>12} {'bound':>6}")
    for r in report.rows:
        if r.failed:
            lines.append(f"{r.n:>3} {fmt(r.alpha1):>12} {fmt(r.w1):>12} {'FAILED':>12}")
            continue
        bound = "" if r.bound_ok is None else ("ok" if r.bound_ok else "VIOL")
        lines.append(f"{r.n:>3} {fmt(r.alpha1):>12} {fmt(r.w1):>12} {fmt(r.error):>12} "
                     f"{fmt(r.order) or '-':>8} {fmt(r.bound_rhs) or '-':>12} {bound:>6}")
    return "\n".join(lines)


def bounds_summary(report: ConvergenceReport) -> str:
    if report.constant is None:
        return f"{report.name}: bound check disabled\n"
    lines = [f"{report.name}: C = {fmt(report.constant)} on a horizon of length {fmt(report.horizon)}"]
    checked = [(r, m) for r, m in zip(report.rows, report.margins) if m is not None]
    for r, margin in checked:
        lines.append(f"N={r.n}: error {fmt(r.error)} <= C*W1 {fmt(r.bound_rhs)} "
                     f"(margin {fmt(margin)}) {'ok' if r.bound_ok else 'VIOLATED'}")
    worst = min((m for _, m in checked), default=None)
    lines.append(f"violations: {len(report.violations)}, smallest margin: {fmt(worst) or '-'}")
    return "\n".join(lines) + "\n"


def nonconverged_total(report: ConvergenceReport) -> int:
    return sum(r.nonconverged for r in report.rows)
