"""File formats: sectioned data-record CSV, trajectory CSV, diagnostics CSV,
and the per-step certificate table.

All floats are written with 17 significant digits so files round-trip
bit-exactly and are golden-file testable.
"""

from __future__ import annotations

import csv
from typing import Sequence

import numpy as np

from .linsys import DataRecord, Trajectory
from .mhc import StepRecord

__all__ = [
    "save_data_record", "load_data_record",
    "save_trajectory", "load_trajectory",
    "save_diagnostics", "load_diagnostics",
    "save_certificates", "load_certificates",
]


def _f(x: float) -> str:
    return format(float(x), ".17g")


def save_data_record(rec: DataRecord, path) -> None:
    """Sections X_minus, X_plus, U, W, alpha; one '# section NAME rows cols'
    header line each, comma-separated rows below."""
    with open(path, "w", newline="") as fh:
        for name, M in (("X_minus", rec.X_minus), ("X_plus", rec.X_plus),
                        ("U", rec.U), ("W", rec.W),
                        ("alpha", rec.alpha_per_step.reshape(1, -1))):
            fh.write(f"# section {name} {M.shape[0]} {M.shape[1]}\n")
            for row in M:
                fh.write(",".join(_f(v) for v in row) + "\n")


def load_data_record(path) -> DataRecord:
    sections = {}
    name, rows, want = None, [], 0
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("# section"):
                if name is not None:
                    sections[name] = np.array(rows)
                parts = line.split()
                name, want = parts[2], int(parts[3])
                rows = []
            else:
                rows.append([float(v) for v in line.split(",")])
    if name is not None:
        sections[name] = np.array(rows)
    missing = {"X_minus", "X_plus", "U", "W", "alpha"} - set(sections)
    if missing:
        raise ValueError(f"data file is missing sections: {sorted(missing)}")
    return DataRecord(sections["X_minus"], sections["X_plus"], sections["U"],
                      sections["W"], sections["alpha"].ravel())


def save_trajectory(traj: Trajectory, path) -> None:
    """One row per time step, columns grouped x/u/w/y1/y2; the final state
    row leaves the input/disturbance/output cells empty."""
    p = traj.states.shape[1]
    q = traj.inputs.shape[1]
    l = traj.disturbances.shape[1]
    q1 = traj.perf_outputs.shape[1]
    q2 = traj.constr_outputs.shape[1]
    header = (["t"] + [f"x{i+1}" for i in range(p)] + [f"u{i+1}" for i in range(q)]
              + [f"w{i+1}" for i in range(l)] + [f"y1_{i+1}" for i in range(q1)]
              + [f"y2_{i+1}" for i in range(q2)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        n = traj.length
        for t in range(n):
            w.writerow([t] + [_f(v) for v in traj.states[t]]
                       + [_f(v) for v in traj.inputs[t]]
                       + [_f(v) for v in traj.disturbances[t]]
                       + [_f(v) for v in traj.perf_outputs[t]]
                       + [_f(v) for v in traj.constr_outputs[t]])
        w.writerow([n] + [_f(v) for v in traj.states[n]]
                   + [""] * (q + l + q1 + q2))


def load_trajectory(path) -> Trajectory:
    import re

    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row for row in reader if row]

    def count(pattern):
        return sum(1 for h in header if re.fullmatch(pattern, h))

    p, q, l = count(r"x\d+"), count(r"u\d+"), count(r"w\d+")
    q1, q2 = count(r"y1_\d+"), count(r"y2_\d+")
    n = len(rows) - 1
    xs = np.zeros((n + 1, p))
    us = np.zeros((n, q))
    ws = np.zeros((n, l))
    y1s = np.zeros((n, q1))
    y2s = np.zeros((n, q2))
    for row in rows:
        t = int(row[0])
        vals = row[1:]
        xs[t] = [float(v) for v in vals[:p]]
        if t < n:
            off = p
            us[t] = [float(v) for v in vals[off:off + q]]
            off += q
            ws[t] = [float(v) for v in vals[off:off + l]]
            off += l
            y1s[t] = [float(v) for v in vals[off:off + q1]]
            off += q1
            y2s[t] = [float(v) for v in vals[off:off + q2]]
    return Trajectory(xs, us, ws, y1s, y2s)


DIAG_COLUMNS = ["t", "sigma_t", "gamma_t", "feasible", "fallback_count", "solve_ms"]


def save_diagnostics(history: Sequence[StepRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DIAG_COLUMNS)
        for r in history:
            w.writerow([r.t, _f(r.sigma), _f(r.gamma), int(r.feasible),
                        r.fallback_count, _f(r.solve_ms)])


def load_diagnostics(path) -> list[dict]:
    with open(path) as fh:
        return [dict(t=int(row["t"]), sigma_t=float(row["sigma_t"]),
                     gamma_t=float(row["gamma_t"]), feasible=bool(int(row["feasible"])),
                     fallback_count=int(row["fallback_count"]),
                     solve_ms=float(row["solve_ms"]))
                for row in csv.DictReader(fh)]


def save_certificates(history: Sequence[StepRecord], path) -> None:
    """Per-step certificate table: t, gamma_t, p_t, sigma_t, upper-tri P_t."""
    if not history:
        raise ValueError("empty history")
    p = history[0].P.shape[0]
    cols = ["t", "gamma_t", "p_t", "sigma_t"] + \
        [f"P_{i+1}_{j+1}" for i in range(p) for j in range(i, p)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in history:
            tri = [_f(r.P[i, j]) for i in range(p) for j in range(i, p)]
            w.writerow([r.t, _f(r.gamma), _f(r.p_t), _f(r.sigma)] + tri)


def load_certificates(path):
    """Returns (P_seq, gamma_seq, p_seq, sigma_seq)."""
    with open(path) as fh:
        reader = csv.DictReader(fh)
        names = [c for c in reader.fieldnames if c.startswith("P_")]
        p = max(int(c.split("_")[1]) for c in names)
        P_seq, gam, pt, sig = [], [], [], []
        for row in reader:
            P = np.zeros((p, p))
            for c in names:
                _, i, j = c.split("_")
                i, j = int(i) - 1, int(j) - 1
                P[i, j] = P[j, i] = float(row[c])
            P_seq.append(P)
            gam.append(float(row["gamma_t"]))
            pt.append(float(row["p_t"]))
            sig.append(float(row["sigma_t"]))
    return P_seq, np.array(gam), np.array(pt), np.array(sig)
