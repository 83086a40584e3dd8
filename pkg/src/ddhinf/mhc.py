"""Moving-horizon controller: init, per-step solve with dissipation hand-over,
inflation fallback, and the p_t ledger.

Step acceptance keeps the previous certificate as an *incumbent*: the
previous solution (with sigma re-evaluated at the current state) is a
feasible point of the step problem whenever the state stays inside the
budget ellipsoid, so a fresh optimum is installed only when it both lowers
the objective and does not raise the certified attenuation level.  That is
what makes the gamma_t sequence non-increasing in practice; the fresh
step optimum alone can exceed gamma_0 while the dissipation constraint is
binding.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import conic
from .linsys import DataRecord, LtiSystem, Trajectory, step as plant_step
from .lmicore import sym
from .synthesis import (
    DecisionLayout,
    DesignConfig,
    OutputMaps,
    SynthesisResult,
    build_mh_problem,
    build_static_problem,
    extract_solution,
)

__all__ = ["ControllerState", "StepRecord", "ControlError", "init", "step", "run"]

EQUILIBRIUM_GUARD = 1e-12   # below this state norm the previous gain is reused
RESIDUAL_TOL = 1e-6
GAMMA_SLACK = 1e-9          # fresh solutions may not raise gamma beyond this


class ControlError(RuntimeError):
    """Init or step failure; carries the effective cap and the last report."""

    def __init__(self, message: str, cap: float, report: Optional[conic.SolveReport]):
        super().__init__(message)
        self.cap = cap
        self.report = report


@dataclass
class StepRecord:
    """One diagnostics row of the controller history."""

    t: int
    sigma: float
    gamma: float
    feasible: bool
    fallback_count: int
    solve_ms: float
    accepted: str            # fresh | incumbent | guard
    p_t: float
    P: np.ndarray = field(repr=False, default=None)
    K: np.ndarray = field(repr=False, default=None)


@dataclass
class ControllerState:
    """Single-owner mutable bookkeeping of the moving-horizon loop."""

    rec: DataRecord
    cfg: DesignConfig
    maps: OutputMaps
    layout: DecisionLayout
    t: int
    P_prev: np.ndarray
    p_prev: float
    p0: float
    sigma_s_eff: float
    last_result: SynthesisResult
    history: list = field(default_factory=list)
    _z_prev: np.ndarray = field(repr=False, default=None)

    @property
    def eta(self) -> float:
        """Accumulated inflation: effective cap = sigma_s * (1 + eta)."""
        return self.sigma_s_eff / self.cfg.sigma_s - 1.0


def _objective(cfg: DesignConfig, sigma: float, gamma_sq: float) -> float:
    return cfg.r1 * sigma + cfg.r2 * gamma_sq


def init(rec: DataRecord, cfg: DesignConfig, x0, maps: OutputMaps):
    """Solve the design at x0, inflating the cap geometrically on infeasibility.

    Returns (state, u0) with u0 = K0 x0.  Raises :class:`ControlError` when
    still infeasible after cfg.max_inflations retries.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    cap = cfg.sigma_s
    report = None
    t_start = time.time()
    for inflations in range(cfg.max_inflations + 1):
        prob = build_static_problem(rec, cfg, x0, maps, sigma_cap=cap)
        report = conic.solve(prob, tol=RESIDUAL_TOL)
        if report.status == "optimal":
            break
        if report.status == "numerical-failure":
            raise ControlError(f"initial design failed numerically: {report.message}",
                               cap, report)
        cap *= cfg.eta_growth
    else:
        raise ControlError(
            f"initial design infeasible after {cfg.max_inflations} inflations "
            f"(final cap {cap:.6g})", cap, report)
    res = extract_solution(report, prob.layout)
    p0 = float(x0 @ res.P @ x0)
    rec0 = StepRecord(t=0, sigma=res.sigma, gamma=res.gamma, feasible=True,
                      fallback_count=inflations, solve_ms=1e3 * (time.time() - t_start),
                      accepted="fresh", p_t=p0, P=res.P, K=res.K)
    state = ControllerState(rec=rec, cfg=cfg, maps=maps, layout=prob.layout,
                            t=1, P_prev=res.P, p_prev=p0, p0=p0,
                            sigma_s_eff=cap, last_result=res, history=[rec0],
                            _z_prev=report.z.copy())
    return state, res.K @ x0


def _incumbent_candidate(state: ControllerState, prob, x_t):
    """Previous solution with sigma re-evaluated at x_t, if still feasible."""
    if state._z_prev is None:
        return None
    sigma_reuse = float(x_t @ state.P_prev @ x_t)
    if sigma_reuse > state.sigma_s_eff * (1 + 1e-12):
        return None
    z = state._z_prev.copy()
    z[prob.layout.sigma] = sigma_reuse
    mins, slacks = conic.residual_check(prob, z)
    if min(mins) < -RESIDUAL_TOL or (slacks.size and slacks.min() < -1e-8):
        return None
    prev = state.last_result
    report = conic.SolveReport(status="optimal", z=z, objective=float(prob.c @ z),
                               lmi_residuals=mins, lin_slacks=slacks,
                               message="incumbent reuse")
    return SynthesisResult(Q=prev.Q, L=prev.L, lam=prev.lam, beta=prev.beta,
                           gamma_sq=prev.gamma_sq, sigma=sigma_reuse,
                           K=prev.K, P=prev.P, report=report)


def step(state: ControllerState, x_t):
    """Advance one step at measured state x_t; returns (state, u_t).

    Infeasible fresh solves inflate the persistent cap by cfg.eta_growth
    (up to cfg.max_inflations per step); a numerically failed fresh solve
    falls back to the incumbent when that is still feasible, and aborts
    otherwise.
    """
    x_t = np.asarray(x_t, dtype=float).ravel()
    cfg = state.cfg
    t_start = time.time()

    if np.linalg.norm(x_t) < EQUILIBRIUM_GUARD:
        res = state.last_result
        state.history.append(StepRecord(t=state.t, sigma=0.0, gamma=res.gamma,
                                        feasible=True, fallback_count=0,
                                        solve_ms=1e3 * (time.time() - t_start),
                                        accepted="guard", p_t=state.p_prev,
                                        P=res.P, K=res.K))
        state.t += 1
        return state, res.K @ x_t

    fresh = None
    incumbent = None
    report = None
    for fallback in range(cfg.max_inflations + 1):
        prob = build_mh_problem(state.rec, cfg, x_t, state.P_prev, state.p0,
                                state.p_prev, state.sigma_s_eff, state.maps)
        report = conic.solve(prob, tol=RESIDUAL_TOL)
        fresh = extract_solution(report, prob.layout) if report.status == "optimal" else None
        incumbent = _incumbent_candidate(state, prob, x_t)
        if fresh is not None or incumbent is not None:
            break
        if report.status == "numerical-failure":
            raise ControlError(f"step {state.t} failed numerically: {report.message}",
                               state.sigma_s_eff, report)
        state.sigma_s_eff *= cfg.eta_growth
    else:
        raise ControlError(
            f"step {state.t} infeasible after {cfg.max_inflations} inflations "
            f"(final cap {state.sigma_s_eff:.6g})", state.sigma_s_eff, report)

    if fresh is not None and incumbent is not None:
        improves = _objective(cfg, fresh.sigma, fresh.gamma_sq) <= \
            _objective(cfg, incumbent.sigma, incumbent.gamma_sq)
        no_regress = fresh.gamma_sq <= state.last_result.gamma_sq + GAMMA_SLACK
        chosen, tag = (fresh, "fresh") if (improves and no_regress) else (incumbent, "incumbent")
    elif fresh is not None:
        chosen, tag = fresh, "fresh"
    else:
        chosen, tag = incumbent, "incumbent"

    p_t = state.p_prev - float(x_t @ state.P_prev @ x_t) + float(x_t @ chosen.P @ x_t)
    state.history.append(StepRecord(t=state.t, sigma=chosen.sigma, gamma=chosen.gamma,
                                    feasible=True, fallback_count=fallback,
                                    solve_ms=1e3 * (time.time() - t_start),
                                    accepted=tag, p_t=p_t, P=chosen.P, K=chosen.K))
    state.P_prev = sym(chosen.P)
    state.p_prev = p_t
    state.last_result = chosen
    state._z_prev = chosen.report.z.copy()
    state.t += 1
    return state, chosen.K @ x_t


def run(rec: DataRecord, cfg: DesignConfig, sys: LtiSystem, x0, w_seq, N: int):
    """Close the loop for N steps against the simulated plant.

    Returns (trajectory, state); the state's history carries per-step
    sigma_t, gamma_t, the certificates P_t and gains K_t, and the p_t
    ledger needed by the verification module.
    """
    w_seq = np.atleast_2d(np.asarray(w_seq, dtype=float)) if N > 0 else np.zeros((0, sys.l))
    if w_seq.shape[0] < N:
        raise ValueError(f"need at least {N} disturbances, got {w_seq.shape[0]}")
    maps = OutputMaps.from_system(sys)
    state, u = init(rec, cfg, np.asarray(x0, dtype=float), maps)
    xs = np.zeros((N + 1, sys.p))
    us = np.zeros((N, sys.q))
    ws = np.zeros((N, sys.l))
    y1s = np.zeros((N, sys.q1))
    y2s = np.zeros((N, sys.q2))
    xs[0] = np.asarray(x0, dtype=float).ravel()
    for t in range(N):
        us[t], ws[t] = u, w_seq[t]
        xs[t + 1], y1s[t], y2s[t] = plant_step(sys, xs[t], u, w_seq[t])
        if t + 1 < N:
            state, u = step(state, xs[t + 1])
    traj = Trajectory(xs, us, ws, y1s, y2s)
    return traj, state
