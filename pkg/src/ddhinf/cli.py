"""Command-line front end.

Subcommands::

    ddhinf collect --config cfg.txt [--out DIR] [--seed N]
    ddhinf design  --config cfg.txt --data data.csv [--out DIR]
    ddhinf run     --config cfg.txt --data data.csv [--out DIR] [--seed N]
    ddhinf verify  --config cfg.txt [--out DIR]
    ddhinf compare --config cfg.txt --data data.csv [--out DIR] [--seed N]

Exit codes: 0 success, 2 infeasible design, 3 verification failure,
4 configuration error.  ``verify`` reads the trajectory and certificate
files that ``run`` wrote into the output directory.
"""

from __future__ import annotations

import argparse
import sys as _sys
from pathlib import Path

import numpy as np

from . import conic, io, verify
from .config import ConfigError, ExperimentConfig, parse_config
from .linsys import LtiSystem, collect_data, disturbance_sequence, simulate_closed_loop
from .mhc import ControlError, init as mhc_init, run as mhc_run
from .synthesis import OutputMaps, build_static_problem, extract_solution

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_VERIFY_FAILED = 3
EXIT_CONFIG = 4


def collect_experiment_data(sys: LtiSystem, cfg: ExperimentConfig, seed_seq=None):
    """Generate the offline record: standard-normal initial state and inputs,
    disturbances rescaled to the per-step energy bound."""
    rng = np.random.default_rng(cfg.seeds()[0] if seed_seq is None else seed_seq)
    x0 = rng.standard_normal(sys.p)
    u_seq = rng.standard_normal((cfg.T, sys.q))
    w_seq = disturbance_sequence(sys.l, cfg.alpha_t, cfg.T, rng)
    return collect_data(sys, x0, u_seq, w_seq,
                        alpha_per_step=np.full(cfg.T, cfg.alpha_t))


def _outdir(cfg: ExperimentConfig, args) -> Path:
    out = Path(args.out) if args.out else cfg.base_dir / cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(args):
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = ExperimentConfig(**{**cfg.__dict__, "seed": args.seed})
    return cfg, cfg.load_plant()


def cmd_collect(args) -> int:
    cfg, plant = _load(args)
    out = _outdir(cfg, args)
    rec = collect_experiment_data(plant, cfg)
    path = out / "data.csv"
    io.save_data_record(rec, path)
    print(f"wrote {path} (T={rec.T}, alpha_total={rec.alpha_total:.6g})")
    return EXIT_OK


def _data_quality(rec) -> tuple[bool, float]:
    """Best-fit residual of the record: ~0 for dynamically consistent data."""
    from .linsys import identify_unique_system

    ident = identify_unique_system(rec)
    if ident is None:
        return False, float("nan")
    A, B, E = ident
    R = rec.X_plus - A @ rec.X_minus - B @ rec.U - E @ rec.W
    return True, float(np.linalg.norm(R))


def cmd_design(args) -> int:
    cfg, plant = _load(args)
    out = _outdir(cfg, args)
    rec = io.load_data_record(args.data)
    prob = build_static_problem(rec, cfg.design_config(), cfg.x0,
                                OutputMaps.from_system(plant))
    rep = conic.solve(prob)
    path = out / "design_report.txt"
    identifiable, fit_residual = _data_quality(rec)
    lines = [f"status {rep.status}",
             f"attempts {rep.attempts}",
             f"iterations {rep.iterations}",
             f"wall_time_s {rep.wall_time:.6g}",
             f"data_identifiable {int(identifiable)}",
             f"data_fit_residual {fit_residual:.6g}"]
    if rep.status == "optimal":
        res = extract_solution(rep, prob.layout)
        lines += [
            f"objective {rep.objective:.17g}",
            f"gamma {res.gamma:.17g}",
            f"gamma_sq {res.gamma_sq:.17g}",
            f"sigma {res.sigma:.17g}",
            f"lambda {res.lam:.17g}",
            f"beta {res.beta:.17g}",
            f"duality_gap {rep.gap:.6g}",
            "K " + "; ".join(" ".join(f"{v:.17g}" for v in row) for row in res.K),
            "P " + "; ".join(" ".join(f"{v:.17g}" for v in row) for row in res.P),
            "residuals " + " ".join(f"{lmi.name}={r:.3e}"
                                    for lmi, r in zip(prob.lmis, rep.lmi_residuals)),
        ]
    else:
        lines.append(f"message {rep.message}")
        if rep.infeasibility_certificate is not None:
            lines.append(f"infeasibility_certificate {rep.infeasibility_certificate:.6g}")
    path.write_text("\n".join(lines) + "\n")
    print(f"wrote {path} (status {rep.status})")
    return EXIT_OK if rep.status == "optimal" else EXIT_INFEASIBLE


def cmd_run(args) -> int:
    cfg, plant = _load(args)
    out = _outdir(cfg, args)
    rec = io.load_data_record(args.data)
    w_seq = disturbance_sequence(plant.l, cfg.alpha_t, cfg.N, cfg.seeds()[1])
    try:
        traj, state = mhc_run(rec, cfg.design_config(), plant, cfg.x0, w_seq, cfg.N)
    except ControlError as exc:
        print(f"controller failed: {exc}", file=_sys.stderr)
        return EXIT_INFEASIBLE
    io.save_trajectory(traj, out / "trajectory.csv")
    io.save_diagnostics(state.history, out / "diagnostics.csv")
    io.save_certificates(state.history, out / "certificates.csv")
    _plot_run(traj, cfg, out)
    print(f"wrote trajectory/diagnostics/certificates to {out} "
          f"(N={cfg.N}, final |x|={np.linalg.norm(traj.states[-1]):.4g})")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg, plant = _load(args)
    out = _outdir(cfg, args)
    traj = io.load_trajectory(out / "trajectory.csv")
    P_seq, gamma_seq, p_seq, _ = io.load_certificates(out / "certificates.csv")
    lines, ok = [], True

    diss = verify.check_dissipation_trace(traj, P_seq, gamma_seq)
    lines.append(f"{'PASS' if diss.passed else 'FAIL'} dissipation_trace "
                 f"worst_margin={diss.worst_margin:.3e}")
    ok &= diss.passed

    gamma_bar = float(np.max(gamma_seq))
    p0 = p_seq[0]
    cum_ok = all(
        verify.check_cumulative_attenuation(traj, t0, P_seq[t0], p0, p_seq[t0], gamma_bar)
        for t0 in range(traj.length))
    lines.append(f"{'PASS' if cum_ok else 'FAIL'} cumulative_attenuation gamma_bar={gamma_bar:.6g}")
    ok &= cum_ok

    ledger_ok = bool(np.all(p0 - p_seq >= -1e-8))
    lines.append(f"{'PASS' if ledger_ok else 'FAIL'} dissipation_ledger "
                 f"min(p0-p_t)={float(np.min(p0 - p_seq)):.3e}")
    ok &= ledger_ok

    outc = verify.check_output_constraint(traj, cfg.y2_max)
    lines.append(f"{'PASS' if outc.passed else 'FAIL'} output_constraint "
                 f"max_ratio={outc.worst_margin:.6g}"
                 + (f" first_violation_t={outc.first_violation}" if not outc.passed else ""))
    ok &= outc.passed

    path = out / "verify_report.txt"
    path.write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"wrote {path}")
    return EXIT_OK if ok else EXIT_VERIFY_FAILED


def cmd_compare(args) -> int:
    cfg, plant = _load(args)
    out = _outdir(cfg, args)
    rec = io.load_data_record(args.data)
    dcfg = cfg.design_config()
    maps = OutputMaps.from_system(plant)
    w_seq = disturbance_sequence(plant.l, cfg.alpha_t, cfg.N, cfg.seeds()[1])
    try:
        state0, _ = mhc_init(rec, dcfg, cfg.x0, maps)
        traj_mh, state = mhc_run(rec, dcfg, plant, cfg.x0, w_seq, cfg.N)
    except ControlError as exc:
        print(f"design failed: {exc}", file=_sys.stderr)
        return EXIT_INFEASIBLE
    res0 = state0.last_result
    traj_static = simulate_closed_loop(plant, cfg.x0, lambda t, x: res0.K @ x, w_seq, cfg.N)

    rows = []
    for r in state.history:
        rows.append((r.t, res0.sigma, r.sigma, res0.gamma, r.gamma))
    path = out / "comparison.csv"
    with open(path, "w") as fh:
        fh.write("t,sigma_static,sigma_mh,gamma_static,gamma_mh\n")
        for t, ss, sm, gs, gm in rows:
            fh.write(f"{t},{ss:.17g},{sm:.17g},{gs:.17g},{gm:.17g}\n")
    _plot_compare(rows, out)
    io.save_trajectory(traj_static, out / "trajectory_static.csv")
    io.save_trajectory(traj_mh, out / "trajectory_mh.csv")
    print(f"wrote {path}")
    return EXIT_OK


def _plot_run(traj, cfg: ExperimentConfig, out: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 4))
    for i in range(traj.states.shape[1]):
        ax.plot(traj.states[:, i], label=f"x{i+1}")
    ax.set_xlabel("t")
    ax.set_ylabel("state")
    ax.legend()
    ax.set_title("closed-loop state trajectories")
    fig.savefig(out / "states.svg", bbox_inches="tight")
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 4))
    for i in range(traj.constr_outputs.shape[1]):
        ax.plot(traj.constr_outputs[:, i], label=f"y2_{i+1}")
        ax.axhline(cfg.y2_max[i], color="k", ls="--", lw=0.8)
        ax.axhline(-cfg.y2_max[i], color="k", ls="--", lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("constrained output")
    ax.legend()
    ax.set_title("constrained output vs bound")
    fig.savefig(out / "outputs.svg", bbox_inches="tight")
    plt.close(fig)


def _plot_compare(rows, out: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ts = [r[0] for r in rows]
    for idx, name in ((1, "sigma"), (3, "gamma")):
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.plot(ts, [r[idx] for r in rows], label=f"{name} static", ls="--")
        ax.plot(ts, [r[idx + 1] for r in rows], label=f"{name} moving horizon")
        ax.set_xlabel("t")
        ax.set_ylabel(name)
        ax.legend()
        ax.set_title(f"{name}: static vs moving horizon")
        fig.savefig(out / f"{name}_compare.svg", bbox_inches="tight")
        plt.close(fig)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="ddhinf",
                                     description="data-driven H-infinity predictive control")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, needs_data in (("collect", cmd_collect, False),
                                 ("design", cmd_design, True),
                                 ("run", cmd_run, True),
                                 ("verify", cmd_verify, False),
                                 ("compare", cmd_compare, True)):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--data", required=needs_data)
        sp.add_argument("--out", default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.set_defaults(fn=fn)
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=_sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=_sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
