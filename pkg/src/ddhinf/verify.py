"""Independent oracles for the closed-loop guarantees.

Every guarantee the synthesis certifies is re-checked here against the
true plant: spectral stability, the achieved attenuation level (bounded
real bisection cross-checked by a frequency grid), the stepwise
dissipativity inequality, the cumulative attenuation bound, and the output
constraint.  The model-based design (known dynamics, same congruence) acts
as the conservatism reference.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import conic
from .lmicore import smat_unit, spectral_radius, svec_dim
from .linsys import LtiSystem, Trajectory
from .synthesis import DesignConfig, SynthesisResult, build_model_problem, extract_solution

__all__ = [
    "DesignInfeasibleError",
    "closed_loop_stable",
    "hinf_norm_bounded_real",
    "hinf_norm_freq_grid",
    "CheckReport",
    "check_dissipation_trace",
    "check_cumulative_attenuation",
    "check_output_constraint",
    "model_based_static_design",
]

STABILITY_MARGIN = 1e-10


class DesignInfeasibleError(RuntimeError):
    def __init__(self, report: conic.SolveReport):
        super().__init__(f"design infeasible ({report.message})")
        self.report = report


def _closed_loop(sys: LtiSystem, K) -> tuple[np.ndarray, np.ndarray]:
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape != (sys.q, sys.p):
        raise ValueError(f"K has shape {K.shape}, expected {(sys.q, sys.p)}")
    return sys.A + sys.B @ K, sys.C1 + sys.D1 @ K


def closed_loop_stable(sys: LtiSystem, K) -> bool:
    """True iff spectral_radius(A + B K) < 1 - 1e-10."""
    Acl, _ = _closed_loop(sys, K)
    return spectral_radius(Acl) < 1.0 - STABILITY_MARGIN


def _bounded_real_feasible(Acl, Ecl, Ccl, Dcl, gsq: float) -> bool:
    """Strict feasibility of the performance LMI in P alone at level sqrt(gsq).

    Decided by maximizing the margin m in
        [P - A'PA - C'C, -A'PE - C'D; *, gsq I - E'PE - D'D] >= m I,
        P >= m I,  m <= 1,
    with the performance block scaled by 1/max(1, gsq) so entries stay O(1).
    """
    p, lw = Acl.shape[0], Ecl.shape[1]
    scl = 1.0 / max(1.0, gsq)
    n_p = svec_dim(p)
    nz = n_p + 1
    nc = p + lw
    F0 = np.zeros((nc, nc))
    F0[:p, :p] = -Ccl.T @ Ccl
    F0[:p, p:] = -Ccl.T @ Dcl
    F0[p:, :p] = F0[:p, p:].T
    F0[p:, p:] = gsq * np.eye(lw) - Dcl.T @ Dcl
    F0 *= scl
    coeffs = {}
    for k in range(n_p):
        Pk = smat_unit(k, p)
        Fk = np.zeros((nc, nc))
        Fk[:p, :p] = Pk - Acl.T @ Pk @ Acl
        Fk[:p, p:] = -Acl.T @ Pk @ Ecl
        Fk[p:, :p] = Fk[:p, p:].T
        Fk[p:, p:] = -Ecl.T @ Pk @ Ecl
        coeffs[k] = Fk * scl
    coeffs[n_p] = -np.eye(nc)
    perf = conic.LmiConstraint(F0, coeffs, name="bounded-real")
    pos = conic.LmiConstraint(np.zeros((p, p)),
                              {**{k: smat_unit(k, p) for k in range(n_p)},
                               n_p: -np.eye(p)},
                              name="P-floor")
    c = np.zeros(nz)
    c[n_p] = -1.0
    A = np.zeros((1, nz))
    A[0, n_p] = 1.0
    prob = conic.ConicProblem(c, [perf, pos], A, np.array([1.0]))
    rep = conic.solve(prob)
    if rep.status != "optimal":
        return False
    return -rep.objective > 1e-10 * min(1.0, max(gsq, 1e-300))


def hinf_norm_bounded_real(sys: LtiSystem, K, tol: float = 1e-6,
                           lo: float = 1e-6, hi_cap: float = 1e6,
                           max_iters: int = 60) -> float:
    """Closed-loop H-infinity norm of w -> y1 by bisection on the level.

    Returns a certified-feasible upper endpoint; the bracket is
    [lo, hi_cap] with the upper end seeded from a coarse frequency grid
    and expanded until feasible.  Raises on an unstable closed loop.
    """
    Acl, Ccl = _closed_loop(sys, K)
    if spectral_radius(Acl) >= 1.0 - STABILITY_MARGIN:
        raise ValueError("closed loop is not stable; the norm is unbounded")
    hi = min(hi_cap, max(2.0 * hinf_norm_freq_grid(sys, K, 64), 10.0 * lo, 1.0))
    while not _bounded_real_feasible(Acl, sys.E, Ccl, sys.E1, hi * hi):
        hi *= 4.0
        if hi > hi_cap:
            raise RuntimeError(f"no feasible level below the bracket cap {hi_cap:g}")
    if _bounded_real_feasible(Acl, sys.E, Ccl, sys.E1, lo * lo):
        return lo
    for _ in range(max_iters):
        if hi - lo <= tol * max(1.0, lo):
            break
        mid = 0.5 * (lo + hi)
        if _bounded_real_feasible(Acl, sys.E, Ccl, sys.E1, mid * mid):
            hi = mid
        else:
            lo = mid
    return hi


def hinf_norm_freq_grid(sys: LtiSystem, K, grid_size: int = 2048) -> float:
    """Lower bound: max over the frequency grid of the largest singular value
    of C_cl (e^{jw} I - A_cl)^-1 E + E1, w in [0, pi]."""
    Acl, Ccl = _closed_loop(sys, K)
    I = np.eye(sys.p)
    best = 0.0
    for w in np.linspace(0.0, np.pi, grid_size):
        T = Ccl @ np.linalg.solve(np.exp(1j * w) * I - Acl, sys.E) + sys.E1
        best = max(best, float(np.linalg.svd(T, compute_uv=False)[0]))
    return best


@dataclass
class CheckReport:
    """Outcome of a trajectory-level audit."""

    passed: bool
    worst_margin: float
    first_violation: Optional[int] = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.passed


def check_dissipation_trace(traj: Trajectory, P_seq: Sequence[np.ndarray],
                            gamma_seq: Sequence[float], tol: float = 1e-6) -> CheckReport:
    """Stepwise storage bound: with V(x) = x' P_t x,
    V(x(t+1)) - V(x(t)) <= gamma_t^2 ||w(t)||^2 - ||y1(t)||^2 + tol."""
    n = traj.length
    if len(P_seq) < n or len(gamma_seq) < n:
        raise ValueError(f"need {n} certificates, got {len(P_seq)}/{len(gamma_seq)}")
    worst = np.inf
    first = None
    for t in range(n):
        P = np.asarray(P_seq[t])
        x0, x1 = traj.states[t], traj.states[t + 1]
        lhs = float(x1 @ P @ x1 - x0 @ P @ x0)
        rhs = float(gamma_seq[t] ** 2 * (traj.disturbances[t] @ traj.disturbances[t])
                    - traj.perf_outputs[t] @ traj.perf_outputs[t])
        margin = rhs - lhs
        if margin < worst:
            worst = margin
        if margin < -tol and first is None:
            first = t
    if n == 0:
        worst = 0.0
    return CheckReport(passed=first is None, worst_margin=float(worst),
                       first_violation=first,
                       detail=f"stepwise dissipativity over {n} steps")


def check_cumulative_attenuation(traj: Trajectory, t0: int, P_t0: np.ndarray,
                                 p0: float, p_t0: float, gamma_bar: float,
                                 tol: float = 1e-6) -> bool:
    """Sum_{i=t0}^{t} (||y1||^2 - gamma_bar^2 ||w||^2)
    <= x(t0)' P_t0 x(t0) + p0 - p_t0 + tol, for every t >= t0."""
    n = traj.length
    if not 0 <= t0 < max(n, 1):
        raise ValueError(f"t0={t0} outside the trajectory")
    bound = float(traj.states[t0] @ np.asarray(P_t0) @ traj.states[t0]) + p0 - p_t0
    acc = 0.0
    for t in range(t0, n):
        acc += float(traj.perf_outputs[t] @ traj.perf_outputs[t]
                     - gamma_bar ** 2 * (traj.disturbances[t] @ traj.disturbances[t]))
        if acc > bound + tol:
            return False
    return True


def check_output_constraint(traj: Trajectory, y2_max) -> CheckReport:
    """|y2_m(t)| <= y2_max_m for all m, t; the margin is the max ratio."""
    y2_max = np.asarray(y2_max, dtype=float).ravel()
    if traj.length == 0:
        return CheckReport(passed=True, worst_margin=0.0, detail="empty trajectory")
    ratios = np.abs(traj.constr_outputs) / y2_max
    worst = float(ratios.max())
    viol = np.nonzero((ratios > 1.0).any(axis=1))[0]
    return CheckReport(passed=viol.size == 0, worst_margin=worst,
                       first_violation=int(viol[0]) if viol.size else None,
                       detail=f"max |y2|/y2_max = {worst:.6g}")


def model_based_static_design(sys: LtiSystem, cfg: DesignConfig, x) -> SynthesisResult:
    """Reference design with known (A, B, E); the conservatism oracle.

    Raises :class:`DesignInfeasibleError` when the model-based problem is
    infeasible (e.g. an unstabilizable pair).
    """
    prob = build_model_problem(sys, cfg, x)
    rep = conic.solve(prob)
    if rep.status == "infeasible":
        raise DesignInfeasibleError(rep)
    if rep.status != "optimal":
        raise RuntimeError(f"model-based design failed: {rep.message}")
    return extract_solution(rep, prob.layout)
