"""Canonical SDP standard form and the interior-point solver boundary.

A :class:`ConicProblem` is ``min c'z`` subject to PSD blocks
``F0 + sum_i z_i F_i >= 0`` and scalar rows ``a'z <= b``.  Solves are
delegated to Clarabel; every answer is re-audited against the *original*
constraints with our own eigensolver, so solver status is never trusted
alone.

Presolve: a decision variable that has a positive-semidefinite coefficient
in exactly one PSD block and appears nowhere else (objective, rows, other
blocks) is a pure feasibility multiplier.  Its block is replaced by the
projection onto the coefficient's null space (an exact elimination), the
projection is tightened by a small margin so the multiplier can be
recovered at a finite value, and after the solve the multiplier is set by
maximizing the concave minimum-eigenvalue curve.  This removes the
extreme scale mixing such blocks otherwise inject into the KKT system.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.sparse as sp
import clarabel

from .lmicore import min_eigenvalue, sym

__all__ = ["LmiConstraint", "ConicProblem", "SolveReport", "solve", "residual_check", "dump_problem"]

_ACCEPT_STATUSES = frozenset(["Solved", "AlmostSolved", "InsufficientProgress", "MaxIterations"])
_INFEASIBLE_STATUSES = frozenset(["PrimalInfeasible", "AlmostPrimalInfeasible"])

# tightening margins tried for eliminated-multiplier blocks, in order
_MARGIN_LADDER = (3e-5, 3e-4, 3e-3)
_GAP_ACCEPT = 1e-5     # relative duality gap accepted as optimal
_LIN_ACCEPT = -1e-8    # slack floor for scalar rows


@lru_cache(maxsize=64)
def _triu_colmajor(n: int):
    """(rows, cols, scale) realizing the scaled column-major upper triangle."""
    rows, cols, scale = [], [], []
    for j in range(n):
        for i in range(j + 1):
            rows.append(i)
            cols.append(j)
            scale.append(1.0 if i == j else np.sqrt(2.0))
    return np.array(rows), np.array(cols), np.array(scale)


def _svec_fast(S: np.ndarray) -> np.ndarray:
    r, c, s = _triu_colmajor(S.shape[0])
    return S[r, c] * s


@dataclass
class LmiConstraint:
    """Affine-symmetric constraint F0 + sum_i z_i F_i >= 0.

    ``coeffs`` maps decision indices to symmetric coefficient matrices.
    Strict constraints carry their eps shift inside F0 already
    (``strict_shift`` records it), so the sense is always ">= 0".
    """

    F0: np.ndarray
    coeffs: dict[int, np.ndarray]
    name: str = ""
    strict_shift: float = 0.0

    def __post_init__(self):
        self.F0 = sym(np.asarray(self.F0, dtype=float))
        n = self.F0.shape[0]
        for i, Fi in list(self.coeffs.items()):
            Fi = np.asarray(Fi, dtype=float)
            if Fi.shape != (n, n):
                raise ValueError(f"coefficient {i} of '{self.name}' has shape {Fi.shape}, expected {(n, n)}")
            if not np.allclose(Fi, Fi.T, atol=1e-12):
                raise ValueError(f"coefficient {i} of '{self.name}' is not symmetric")
            self.coeffs[i] = sym(Fi)

    @property
    def order(self) -> int:
        return self.F0.shape[0]

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        F = self.F0.copy()
        for i, Fi in self.coeffs.items():
            F += z[i] * Fi
        return F

    def residual(self, z: np.ndarray) -> float:
        return min_eigenvalue(self.evaluate(z))


@dataclass
class ConicProblem:
    """Objective, PSD blocks, scalar rows, over a flat decision vector."""

    c: np.ndarray
    lmis: list[LmiConstraint]
    lin_A: np.ndarray = None   # k x n
    lin_b: np.ndarray = None   # k
    layout: object = None      # optional DecisionLayout handle

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        if not np.all(np.isfinite(self.c)):
            raise ValueError("objective has non-finite entries")
        n = self.c.size
        if self.lin_A is None:
            self.lin_A = np.zeros((0, n))
            self.lin_b = np.zeros(0)
        self.lin_A = np.atleast_2d(np.asarray(self.lin_A, dtype=float))
        self.lin_b = np.asarray(self.lin_b, dtype=float).ravel()
        if self.lin_A.shape != (self.lin_b.size, n):
            raise ValueError(f"linear rows have shape {self.lin_A.shape}, expected ({self.lin_b.size},{n})")
        for lmi in self.lmis:
            bad = [i for i in lmi.coeffs if not 0 <= i < n]
            if bad:
                raise ValueError(f"constraint '{lmi.name}' references out-of-range index {bad[0]}")

    @property
    def n_vars(self) -> int:
        return self.c.size


@dataclass
class SolveReport:
    """Outcome of one :func:`solve` call."""

    status: str                       # optimal | infeasible | numerical-failure
    z: Optional[np.ndarray] = None
    objective: Optional[float] = None
    lmi_residuals: Optional[list] = None   # per-constraint min eigenvalues
    lin_slacks: Optional[np.ndarray] = None
    gap: Optional[float] = None            # relative duality gap at acceptance
    iterations: int = 0
    wall_time: float = 0.0
    attempts: int = 0
    infeasibility_certificate: Optional[float] = None
    message: str = ""


def residual_check(problem: ConicProblem, z: np.ndarray):
    """Exact per-constraint audit: (min eigenvalues, linear slacks)."""
    z = np.asarray(z, dtype=float).ravel()
    if z.size != problem.n_vars:
        raise ValueError(f"z has length {z.size}, expected {problem.n_vars}")
    mins = [lmi.residual(z) for lmi in problem.lmis]
    slacks = problem.lin_b - problem.lin_A @ z
    return mins, slacks


def _eliminable_multipliers(problem: ConicProblem):
    """Map lmi_index -> variable index for pure feasibility multipliers."""
    n = problem.c.size
    usage = np.zeros((n, len(problem.lmis)), dtype=int)
    for k, lmi in enumerate(problem.lmis):
        for i in lmi.coeffs:
            usage[i, k] = 1
    out = {}
    for k, lmi in enumerate(problem.lmis):
        for i in sorted(lmi.coeffs):
            if problem.c[i] != 0.0 or np.any(problem.lin_A[:, i]):
                continue
            if usage[i].sum() != 1:
                continue
            G = lmi.coeffs[i]
            w = np.linalg.eigvalsh(G)
            if w[-1] > 0 and w[0] >= -1e-12 * w[-1]:
                out[k] = i
                break
    return out


def _project_block(lmi: LmiConstraint, var: int, margin: float):
    """Project the block onto null(G); returns (projected lmi, recovery info)."""
    G = lmi.coeffs[var]
    w, V = np.linalg.eigh(G)
    nullmask = w <= 1e-10 * w[-1]
    Vn = V[:, nullmask]
    pos = ~nullmask
    G_clip = (V[:, pos] * np.maximum(w[pos], 0.0)) @ V[:, pos].T
    coeffs = {i: Vn.T @ Fi @ Vn for i, Fi in lmi.coeffs.items() if i != var}
    proj = LmiConstraint(Vn.T @ lmi.F0 @ Vn - margin * np.eye(Vn.shape[1]),
                         coeffs, name=f"{lmi.name}|proj")
    return proj, (var, lmi, G_clip, Vn)


def _recover_multiplier(z: np.ndarray, lmi: LmiConstraint, var: int, G: np.ndarray) -> float:
    """argmax over lam >= 0 of mineig(F(z) + lam G); f is concave in lam."""
    zz = z.copy()
    zz[var] = 0.0
    base = lmi.evaluate(zz)

    def f(lam):
        return min_eigenvalue(base + lam * G)

    lo, flo = 0.0, f(0.0)
    b, fb = 1.0, f(1.0)
    while fb < flo and b > 1e-12:
        b *= 0.25
        fb = f(b)
    hi, prev_f = 4.0 * max(b, 1.0), fb
    while hi < 1e15:
        fhi = f(hi)
        if fhi < prev_f:
            break
        prev_f = fhi
        hi *= 4.0
    gr = 0.5 * (np.sqrt(5.0) - 1.0)
    x1, x2 = hi - gr * (hi - lo), lo + gr * (hi - lo)
    f1, f2 = f(x1), f(x2)
    for _ in range(80):
        if f1 < f2:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + gr * (hi - lo)
            f2 = f(x2)
        else:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - gr * (hi - lo)
            f1 = f(x1)
    return max(0.0, 0.5 * (x1 + x2))


def _clarabel_once(c, lmis, lin_A, lin_b, max_iter, equilibrate):
    n = c.size
    Arows, brows, cones = [], [], []
    if lin_b.size:
        Arows.append(lin_A)
        brows.append(lin_b)
        cones.append(clarabel.NonnegativeConeT(lin_b.size))
    for lmi in lmis:
        m = lmi.order
        r, ccol, s = _triu_colmajor(m)
        Ak = np.zeros((r.size, n))
        for i, Fi in lmi.coeffs.items():
            Ak[:, i] = -(Fi[r, ccol] * s)
        Arows.append(Ak)
        brows.append(lmi.F0[r, ccol] * s)
        cones.append(clarabel.PSDTriangleConeT(m))
    A = sp.csc_matrix(np.vstack(Arows))
    b = np.concatenate(brows)
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.max_iter = max_iter
    settings.equilibrate_enable = equilibrate
    solver = clarabel.DefaultSolver(sp.csc_matrix((n, n)), c, A, b, cones, settings)
    return solver.solve()


def _certify_infeasible(problem: ConicProblem, dual, lmis_run, proj_bases) -> Optional[float]:
    """Validate a Farkas certificate against the *original* problem.

    The solver certifies infeasibility of the (possibly tightened or
    projected) problem it was given; the dual point lifts through each
    null-space projection as Y -> Vn Y Vn'.  Returns a normalized quality
    metric (how negative the certified value is) when the certificate is
    valid for the original data, else None.
    """
    dual = np.asarray(dual, dtype=float)
    k0 = problem.lin_b.size
    y_lin = dual[:k0]
    lifted = []
    off = k0
    for k, lmi in enumerate(lmis_run):
        m = lmi.order
        r, c, s = _triu_colmajor(m)
        tri = dual[off:off + r.size]
        off += r.size
        Y = np.zeros((m, m))
        Y[r, c] = tri / s
        Y[c, r] = tri / s
        diag = np.arange(m)
        Y[diag, diag] = tri[r == c]
        Vn = proj_bases.get(k)
        lifted.append(Y if Vn is None else Vn @ Y @ Vn.T)
    scale = float(np.sum(np.abs(y_lin)) + sum(np.trace(np.abs(Y)) for Y in lifted))
    if scale <= 0:
        return None
    if y_lin.size and y_lin.min() < -1e-9 * scale:
        return None
    if any(min_eigenvalue(Y) < -1e-9 * scale for Y in lifted):
        return None
    # stationarity over the original coefficients: A'y - <F_i, Y> = 0 per i
    resid = problem.lin_A.T @ y_lin if y_lin.size else np.zeros(problem.n_vars)
    for orig, Y in zip(problem.lmis, lifted):
        for i, Fi in orig.coeffs.items():
            resid[i] -= float(np.tensordot(Fi, Y))
    if np.linalg.norm(resid, np.inf) > 1e-6 * scale:
        return None
    val = float(problem.lin_b @ y_lin) if y_lin.size else 0.0
    val += sum(float(np.tensordot(orig.F0, Y))
               for orig, Y in zip(problem.lmis, lifted))
    if val >= -1e-9 * scale:
        return None
    return -val / scale


def _monotone_vars(problem: ConicProblem, which: str):
    """Variables whose constraint set is monotone increasing in their value:
    PSD coefficients everywhere they appear, and every row entry either
    nonnegative or a pure single-variable lower bound.

    which='objective' selects those with positive objective weight (safe to
    bisect down); which='flat' those with zero weight (flat directions that
    get a tiny anchor so the solver returns their canonical minimum).
    Returns (index, involved lmis, lower bound) triples.
    """
    out = []
    for i in range(problem.n_vars):
        if which == "objective" and problem.c[i] <= 0.0:
            continue
        if which == "flat" and problem.c[i] != 0.0:
            continue
        lo = 0.0
        clean = True
        for r in range(problem.lin_b.size):
            a = problem.lin_A[r, i]
            if a >= 0.0:
                continue
            if np.any(problem.lin_A[r, :i]) or np.any(problem.lin_A[r, i + 1:]):
                clean = False
                break
            lo = max(lo, problem.lin_b[r] / a)
        if not clean:
            continue
        involved = [lmi for lmi in problem.lmis if i in lmi.coeffs]
        if not involved:
            continue
        if all(np.linalg.eigvalsh(lmi.coeffs[i]).min() >= -1e-12 for lmi in involved):
            out.append((i, involved, lo))
    return out


def _polish(problem: ConicProblem, z: np.ndarray, target: float = 1e-9) -> np.ndarray:
    """Bisect each monotone objective/flat variable down to its conditional
    minimum on the original constraints; everything else stays fixed."""
    z = z.copy()
    for i, involved, lo in _monotone_vars(problem, "objective") + _monotone_vars(problem, "flat"):
        def ok(v):
            zz = z.copy()
            zz[i] = v
            return all(lmi.residual(zz) >= target for lmi in involved)

        cur = float(max(z[i], lo))
        if not ok(cur):
            continue
        hi = cur
        if ok(lo):
            z[i] = lo
            continue
        lo_b = lo
        for _ in range(100):
            mid = 0.5 * (lo_b + hi)
            if ok(mid):
                hi = mid
            else:
                lo_b = mid
        z[i] = hi
    return z


def solve(problem: ConicProblem, tol: float = 1e-6, max_iter: int = 200) -> SolveReport:
    """Solve the conic problem; ``tol`` is the accepted residual floor.

    status='optimal' guarantees every LMI has min eigenvalue >= -tol and
    every scalar row holds within 1e-8 at the returned point (re-verified
    here with our own eigensolver, never taken from the solver), with the
    solver's relative duality gap <= 1e-5 on the problem it solved.
    status='infeasible' is declared only on a solver infeasibility
    certificate.  Anything else is a numerical failure.

    Interior-point accuracy is relative, so attempts that fail the
    absolute audit are retried with each violating constraint tightened by
    a margin sized from the observed violation; monotone objective
    variables (the ellipsoid level, the squared attenuation) are then
    bisected back down against the *original* constraints, which removes
    most of the tightening bias.
    """
    t_start = time.time()
    elim = _eliminable_multipliers(problem)
    n_lmis = len(problem.lmis)
    tighten = np.zeros(n_lmis)
    for k in elim:
        tighten[k] = _MARGIN_LADDER[0]
    base_tighten = tighten.copy()
    iters_total = 0
    last_msg = ""
    best = None
    # anchor flat monotone directions (e.g. the ellipsoid level under a
    # gamma-only objective) so the central path does not wander along them
    c_run = problem.c.copy()
    anchor = 1e-6 * max(1.0, float(np.abs(problem.c).max()))
    for i, _, _ in _monotone_vars(problem, "flat"):
        c_run[i] = anchor

    def finish(z, gap, attempt, mins=None, slacks=None):
        if mins is None:
            mins, slacks = residual_check(problem, z)
        return SolveReport(status="optimal", z=z, objective=float(problem.c @ z),
                           lmi_residuals=mins, lin_slacks=slacks, gap=gap,
                           iterations=iters_total, wall_time=time.time() - t_start,
                           attempts=attempt)

    for attempt in range(1, 7):
        lmis_run, recovery = [], []
        proj_bases = {}
        for k, lmi in enumerate(problem.lmis):
            if k in elim:
                proj, info = _project_block(lmi, elim[k], tighten[k])
                lmis_run.append(proj)
                recovery.append(info)
                proj_bases[k] = info[3]
            elif tighten[k] > 0.0:
                lmis_run.append(LmiConstraint(lmi.F0 - tighten[k] * np.eye(lmi.order),
                                              lmi.coeffs, name=lmi.name))
            else:
                lmis_run.append(lmi)
        sol = _clarabel_once(c_run, lmis_run, problem.lin_A, problem.lin_b,
                             max_iter, equilibrate=attempt < 6)
        status = str(sol.status)
        iters_total += sol.iterations
        if status in _INFEASIBLE_STATUSES:
            quality = _certify_infeasible(problem, np.array(sol.z), lmis_run, proj_bases)
            if quality is not None:
                return SolveReport(status="infeasible", iterations=iters_total,
                                   wall_time=time.time() - t_start, attempts=attempt,
                                   infeasibility_certificate=quality,
                                   message=f"solver status {status}")
            # certificate does not survive against the original problem:
            # treat as an over-tightening artifact and back off
            last_msg = f"uncertified {status}; backing off"
            tighten = np.maximum(base_tighten, 0.25 * tighten)
            continue
        if status == "DualInfeasible":
            return SolveReport(status="numerical-failure", iterations=iters_total,
                               wall_time=time.time() - t_start, attempts=attempt,
                               message="dual infeasible (objective unbounded below)")
        if status not in _ACCEPT_STATUSES:
            last_msg = f"solver status {status}"
            for k in elim:
                tighten[k] *= 10.0
            continue
        z = np.array(sol.x)
        for var, lmi, G, _ in recovery:
            z[var] = _recover_multiplier(z, lmi, var, G)
        z = _polish(problem, z)
        mins, slacks = residual_check(problem, z)
        gap = abs(sol.obj_val - sol.obj_val_dual) / max(1.0, abs(sol.obj_val))
        lin_ok = (slacks.min() if slacks.size else 0.0) >= _LIN_ACCEPT
        if min(mins) >= -0.5 * tol and lin_ok and gap <= _GAP_ACCEPT:
            return finish(z, gap, attempt, mins, slacks)
        last_msg = (f"audit failed at attempt {attempt}: min residual {min(mins):.2e}, "
                    f"gap {gap:.2e}")
        if lin_ok and gap <= _GAP_ACCEPT and (best is None or min(mins) > best[0]):
            best = (min(mins), z, gap)
        # tighten whatever violated, sized from the violation and the block scale
        for k, (lmi, res) in enumerate(zip(problem.lmis, mins)):
            if res < -0.5 * tol or (k in elim and res < 0.25 * tol):
                scale = np.linalg.norm(lmi.evaluate(z), 2)
                tighten[k] = max(1.5 * tighten[k],
                                 2.0 * max(0.0, -res) + 1e-9 * scale,
                                 base_tighten[k])
    if best is not None and best[0] >= -tol:
        return finish(best[1], best[2], 6)
    # last resort: a pure feasibility phase often lets the solver certify
    # infeasibility cleanly when the objective pull kept it from converging
    lmis_run, proj_bases = [], {}
    for k, lmi in enumerate(problem.lmis):
        if k in elim:
            proj, info = _project_block(lmi, elim[k], base_tighten[k])
            lmis_run.append(proj)
            proj_bases[k] = info[3]
        else:
            lmis_run.append(lmi)
    for equilibrate in (True, False):
        sol = _clarabel_once(np.zeros(problem.n_vars), lmis_run, problem.lin_A,
                             problem.lin_b, max_iter, equilibrate)
        iters_total += sol.iterations
        if str(sol.status) in _INFEASIBLE_STATUSES:
            quality = _certify_infeasible(problem, np.array(sol.z), lmis_run, proj_bases)
            if quality is not None:
                return SolveReport(status="infeasible", iterations=iters_total,
                                   wall_time=time.time() - t_start, attempts=7,
                                   infeasibility_certificate=quality,
                                   message=f"feasibility phase: {sol.status}")
    return SolveReport(status="numerical-failure", iterations=iters_total,
                       wall_time=time.time() - t_start, attempts=7,
                       message=last_msg or "no attempt accepted")


def dump_problem(problem: ConicProblem, path) -> None:
    """Plain-text standard form for external cross-validation.

    Layout: objective coefficients, linear rows, then each PSD block's
    matrices as indexed entry triplets, all with 17 significant digits.
    """
    lines = [f"nvars {problem.n_vars}", "objective"]
    lines += [f"  {i} {v:.17g}" for i, v in enumerate(problem.c) if v != 0.0]
    lines.append(f"linrows {problem.lin_b.size}")
    for r in range(problem.lin_b.size):
        terms = " ".join(f"{i}:{problem.lin_A[r, i]:.17g}"
                         for i in np.nonzero(problem.lin_A[r])[0])
        lines.append(f"  {terms} <= {problem.lin_b[r]:.17g}")
    for k, lmi in enumerate(problem.lmis):
        lines.append(f"block {k} order {lmi.order} name {lmi.name or '-'}")
        def emit(tag, M):
            for i in range(lmi.order):
                for j in range(i, lmi.order):
                    if M[i, j] != 0.0:
                        lines.append(f"  {tag} {i} {j} {M[i, j]:.17g}")
        emit("F0", lmi.F0)
        for vi in sorted(lmi.coeffs):
            emit(f"F{vi}", lmi.coeffs[vi])
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
