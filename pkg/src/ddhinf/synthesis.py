"""Feedback-synthesis LMIs over the decision vector (Q, L, lambda, beta, g, sigma).

The decision variables follow the congruence parametrization Q = P^-1,
L = K Q, with g = gamma^2 the squared attenuation level and sigma the
ellipsoid level at the current state.  Every builder returns an
:class:`~ddhinf.conic.LmiConstraint` that is affine in the flat decision
vector laid out by :class:`DecisionLayout`.

Conventions fixed here once:
  * C_L = C1 Q + D1 L (the closed-loop performance map times Q);
  * gains extract as K = L Q^-1 and certificates as P = Q^-1;
  * strict inequalities are realized as ">= eps I" with the shift folded
    into the constraint's constant term;
  * beta carries the strictness of the robust quadratic-form bound and is
    therefore kept positive through a scalar row (beta >= eps).  Left
    free, the data LMI admits beta -> -inf solutions that certify nothing
    (and demonstrably destabilize).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .conic import ConicProblem, LmiConstraint, SolveReport
from .lmicore import min_eigenvalue, smat_unit, svec_dim, svec_indices, sym
from .linsys import DataRecord, LtiSystem

__all__ = [
    "DecisionLayout",
    "DesignConfig",
    "OutputMaps",
    "SynthesisResult",
    "hinf_data_lmi",
    "hinf_aux_lmi",
    "output_constraint_lmi",
    "ellipsoid_lmi",
    "dissipation_lmi",
    "q_floor_lmi",
    "model_hinf_lmi",
    "build_static_problem",
    "build_mh_problem",
    "build_model_problem",
    "extract_solution",
]


@dataclass(frozen=True)
class DecisionLayout:
    """Offsets of the flat decision vector [svec(Q); vec(L); lam; beta; g; sigma]."""

    p: int
    q: int

    @property
    def n_q(self) -> int:
        return svec_dim(self.p)

    @property
    def n_l(self) -> int:
        return self.q * self.p

    @property
    def q_off(self) -> int:
        return 0

    @property
    def l_off(self) -> int:
        return self.n_q

    @property
    def lam(self) -> int:
        return self.n_q + self.n_l

    @property
    def beta(self) -> int:
        return self.lam + 1

    @property
    def g(self) -> int:
        return self.beta + 1

    @property
    def sigma(self) -> int:
        return self.g + 1

    @property
    def size(self) -> int:
        return self.n_q + self.n_l + 4

    def q_basis(self):
        """(index, basis matrix) pairs for the svec'd Q variable."""
        return [(self.q_off + k, smat_unit(k, self.p)) for k in range(self.n_q)]

    def l_basis(self):
        """(index, unit matrix) pairs for the row-major vec'd L variable."""
        out = []
        for a in range(self.q):
            for b in range(self.p):
                Lu = np.zeros((self.q, self.p))
                Lu[a, b] = 1.0
                out.append((self.l_off + a * self.p + b, Lu))
        return out

    def extract_q(self, z: np.ndarray) -> np.ndarray:
        Q = np.zeros((self.p, self.p))
        for k, (i, j) in enumerate(svec_indices(self.p)):
            v = z[self.q_off + k] * (1.0 if i == j else 1.0 / np.sqrt(2.0))
            Q[i, j] = Q[j, i] = v
        return Q

    def extract_l(self, z: np.ndarray) -> np.ndarray:
        return z[self.l_off:self.l_off + self.n_l].reshape(self.q, self.p).copy()


@dataclass(frozen=True)
class OutputMaps:
    """The known output matrices of the plant (the dynamics stay unknown)."""

    C1: np.ndarray
    D1: np.ndarray
    E1: np.ndarray
    C2: np.ndarray
    D2: np.ndarray

    @classmethod
    def from_system(cls, sys: LtiSystem) -> "OutputMaps":
        return cls(sys.C1, sys.D1, sys.E1, sys.C2, sys.D2)

    @property
    def dims(self):
        q1, p = np.atleast_2d(self.C1).shape
        q2 = np.atleast_2d(self.C2).shape[0]
        q = np.atleast_2d(self.D1).shape[1]
        l = np.atleast_2d(self.E1).shape[1]
        return p, q, l, q1, q2


@dataclass(frozen=True)
class DesignConfig:
    """Design knobs: ellipsoid budget, output-bound shaping, weights, fallback."""

    sigma_s: float
    Lambda: np.ndarray
    y2_max: np.ndarray
    r1: float = 1.0
    r2: float = 1.0
    eps_strict: float = 1e-8
    eta_growth: float = 1.1
    max_inflations: int = 50

    def __post_init__(self):
        object.__setattr__(self, "Lambda", np.atleast_2d(np.asarray(self.Lambda, dtype=float)))
        object.__setattr__(self, "y2_max", np.asarray(self.y2_max, dtype=float).ravel())
        if self.sigma_s <= 0:
            raise ValueError("sigma_s must be positive")
        q2 = self.Lambda.shape[0]
        if self.Lambda.shape != (q2, q2) or not np.allclose(self.Lambda, self.Lambda.T):
            raise ValueError("Lambda must be symmetric")
        if self.y2_max.size != q2 or np.any(self.y2_max <= 0):
            raise ValueError("y2_max must be positive with one entry per constrained output")
        diag = np.diag(self.Lambda)
        if np.any(diag > self.y2_max ** 2 * (1 + 1e-12)):
            raise ValueError("Lambda_ii must not exceed y2_max_i^2")
        if self.r1 < 0 or self.r2 < 0 or self.r1 + self.r2 <= 0:
            raise ValueError("weights must be nonnegative with r1 + r2 > 0")
        if self.eps_strict <= 0:
            raise ValueError("eps_strict must be positive")
        if self.eta_growth <= 1:
            raise ValueError("eta_growth must exceed 1")
        if self.max_inflations < 0:
            raise ValueError("max_inflations must be nonnegative")

    @classmethod
    def batch_reactor_defaults(cls, **overrides) -> "DesignConfig":
        """sigma_s=10, Lambda=1.2 I, r1=r2=1, y2_max chosen so Lambda_ii = y2_max^2."""
        kw = dict(sigma_s=10.0, Lambda=1.2 * np.eye(1), y2_max=np.array([np.sqrt(1.2)]),
                  r1=1.0, r2=1.0)
        kw.update(overrides)
        return cls(**kw)


def _c_l_terms(layout: DecisionLayout, C1, D1):
    """C_L^T = Q C1^T + L^T D1^T decomposed per decision variable."""
    terms = []
    for idx, Qk in layout.q_basis():
        terms.append((idx, Qk @ C1.T))
    for idx, Lu in layout.l_basis():
        terms.append((idx, Lu.T @ D1.T))
    return terms


def hinf_data_lmi(rec: DataRecord, C1, D1, E1, layout: Optional[DecisionLayout] = None) -> LmiConstraint:
    """The 7-block data-driven attenuation LMI with multiplier lambda.

    Block partition (p, p, q, l, p, l, q1); rows 1-4 carry
    lambda * M M^T with M = [X_plus; -X_minus; -U; -W; 0; 0; 0], rows 5-7
    carry the performance condition in (Q, L, g).  Sense ">= 0".
    """
    C1, D1, E1 = np.atleast_2d(C1), np.atleast_2d(D1), np.atleast_2d(E1)
    p, T = rec.X_minus.shape
    q, l, q1 = rec.U.shape[0], rec.W.shape[0], C1.shape[0]
    if C1.shape[1] != p or D1.shape != (q1, q) or E1.shape != (q1, l):
        raise ValueError("output-map dimensions do not match the data record")
    layout = layout or DecisionLayout(p, q)
    sizes = [p, p, q, l, p, l, q1]
    offs = np.concatenate(([0], np.cumsum(sizes)))
    nc = int(offs[-1])

    def put(F, bi, bj, blk):
        blk = np.atleast_2d(blk)
        F[offs[bi]:offs[bi] + blk.shape[0], offs[bj]:offs[bj] + blk.shape[1]] += blk
        if bi != bj:
            F[offs[bj]:offs[bj] + blk.shape[1], offs[bi]:offs[bi] + blk.shape[0]] += blk.T

    M = np.vstack([rec.X_plus, -rec.X_minus, -rec.U, -rec.W, np.zeros((p + l + q1, T))])
    F0 = np.zeros((nc, nc))
    put(F0, 3, 5, np.eye(l))
    put(F0, 5, 5, -E1.T @ E1)
    put(F0, 6, 6, np.eye(q1))

    coeffs = {}
    for idx, Qk in layout.q_basis():
        Fk = np.zeros((nc, nc))
        put(Fk, 0, 0, Qk)
        put(Fk, 1, 4, Qk)
        put(Fk, 4, 4, Qk)
        put(Fk, 4, 5, -Qk @ C1.T @ E1)
        put(Fk, 4, 6, Qk @ C1.T)
        coeffs[idx] = Fk
    for idx, Lu in layout.l_basis():
        Fk = np.zeros((nc, nc))
        put(Fk, 2, 4, Lu)
        put(Fk, 4, 5, -Lu.T @ D1.T @ E1)
        put(Fk, 4, 6, Lu.T @ D1.T)
        coeffs[idx] = Fk
    coeffs[layout.lam] = M @ M.T
    Fb = np.zeros((nc, nc))
    put(Fb, 0, 0, -np.eye(p))
    coeffs[layout.beta] = Fb
    Fg = np.zeros((nc, nc))
    put(Fg, 5, 5, np.eye(l))
    coeffs[layout.g] = Fg
    return LmiConstraint(F0, coeffs, name="hinf-data")


def hinf_aux_lmi(C1, D1, E1, layout: DecisionLayout, eps: float = 1e-8) -> LmiConstraint:
    """Companion strict 3-block condition, partition (p, l, q1), ">= eps I"."""
    C1, D1, E1 = np.atleast_2d(C1), np.atleast_2d(D1), np.atleast_2d(E1)
    p, l, q1 = layout.p, E1.shape[1], C1.shape[0]
    nc = p + l + q1
    F0 = np.zeros((nc, nc))
    F0[p:p + l, p:p + l] = -E1.T @ E1
    F0[p + l:, p + l:] = np.eye(q1)
    F0 -= eps * np.eye(nc)
    coeffs = {}
    for idx, Mt in _c_l_terms(layout, C1, D1):
        Fk = np.zeros((nc, nc))
        Fk[:p, p:p + l] = -Mt @ E1
        Fk[p:p + l, :p] = Fk[:p, p:p + l].T
        Fk[:p, p + l:] = Mt
        Fk[p + l:, :p] = Mt.T
        coeffs[idx] = coeffs.get(idx, np.zeros((nc, nc))) + Fk
    for idx, Qk in layout.q_basis():
        coeffs[idx][:p, :p] += Qk
    Fg = np.zeros((nc, nc))
    Fg[p:p + l, p:p + l] = np.eye(l)
    coeffs[layout.g] = Fg
    return LmiConstraint(F0, coeffs, name="hinf-aux", strict_shift=eps)


def output_constraint_lmi(C2, D2, sigma_bound: float, Lambda,
                          layout: DecisionLayout) -> LmiConstraint:
    """Output-bound LMI [(1/sigma) Lambda, C2 Q + D2 L; *, Q] >= 0.

    The diagonal side conditions Lambda_ii <= y2_max_i^2 live in
    :class:`DesignConfig`, not here.
    """
    if sigma_bound <= 0:
        raise ValueError("sigma_bound must be positive")
    C2, D2 = np.atleast_2d(C2), np.atleast_2d(D2)
    Lambda = np.atleast_2d(np.asarray(Lambda, dtype=float))
    q2, p = C2.shape
    nc = q2 + p
    F0 = np.zeros((nc, nc))
    F0[:q2, :q2] = Lambda / sigma_bound
    coeffs = {}
    for idx, Qk in layout.q_basis():
        Fk = np.zeros((nc, nc))
        Fk[:q2, q2:] = C2 @ Qk
        Fk[q2:, :q2] = Fk[:q2, q2:].T
        Fk[q2:, q2:] = Qk
        coeffs[idx] = Fk
    for idx, Lu in layout.l_basis():
        Fk = np.zeros((nc, nc))
        Fk[:q2, q2:] = D2 @ Lu
        Fk[q2:, :q2] = Fk[:q2, q2:].T
        coeffs[idx] = Fk
    return LmiConstraint(F0, coeffs, name="output")


def _corner_lmi(x, corner: float, layout: DecisionLayout, name: str,
                sigma_in_corner: bool) -> LmiConstraint:
    """Shared shape of the ellipsoid/dissipation blocks [c, x'; x, Q] >= 0."""
    x = np.asarray(x, dtype=float).ravel()
    p = layout.p
    nc = 1 + p
    F0 = np.zeros((nc, nc))
    F0[0, 0] = corner
    F0[0, 1:] = x
    F0[1:, 0] = x
    coeffs = {}
    for idx, Qk in layout.q_basis():
        Fk = np.zeros((nc, nc))
        Fk[1:, 1:] = Qk
        coeffs[idx] = Fk
    if sigma_in_corner:
        Fs = np.zeros((nc, nc))
        Fs[0, 0] = 1.0
        coeffs[layout.sigma] = Fs
    return LmiConstraint(F0, coeffs, name=name)


def ellipsoid_lmi(x, layout: DecisionLayout) -> LmiConstraint:
    """[sigma, x'; x, Q] >= 0: by Schur, sigma >= x' Q^-1 x when Q > 0."""
    return _corner_lmi(x, 0.0, layout, "ellipsoid", sigma_in_corner=True)


def dissipation_lmi(x, P_prev: np.ndarray, p0: float, p_prev: float,
                    layout: DecisionLayout) -> LmiConstraint:
    """[x'P_prev x + p0 - p_prev, x'; x, Q] >= 0 (storage hand-over bound)."""
    P_prev = np.asarray(P_prev, dtype=float)
    if min_eigenvalue(P_prev) <= 0:
        raise ValueError("P_prev must be positive definite")
    x = np.asarray(x, dtype=float).ravel()
    corner = float(x @ P_prev @ x + p0 - p_prev)
    return _corner_lmi(x, corner, layout, "dissipation", sigma_in_corner=False)


def q_floor_lmi(layout: DecisionLayout, eps: float = 1e-8) -> LmiConstraint:
    """Q >= eps I (the certificate parametrization assumes Q positive)."""
    coeffs = {idx: Qk for idx, Qk in layout.q_basis()}
    return LmiConstraint(-eps * np.eye(layout.p), coeffs, name="q-floor", strict_shift=eps)


def model_hinf_lmi(sys: LtiSystem, layout: DecisionLayout, eps: float = 1e-8) -> LmiConstraint:
    """Model-based synthesis LMI (known A, B, E) via the same congruence.

    Partition (p, l, p, q1):
        [Q, 0, (AQ+BL)', (C1Q+D1L)'; *, gI, E', E1'; *, *, Q, 0; *, *, *, I]
    Strict ">= eps I"; used by the verification oracle as the
    informativity-free reference design.
    """
    p, q, l, q1 = sys.p, sys.q, sys.l, sys.q1
    sizes = [p, l, p, q1]
    offs = np.concatenate(([0], np.cumsum(sizes)))
    nc = int(offs[-1])
    F0 = np.zeros((nc, nc))
    F0[offs[2]:offs[3], offs[1]:offs[2]] = sys.E
    F0[offs[1]:offs[2], offs[2]:offs[3]] = sys.E.T
    F0[offs[3]:, offs[1]:offs[2]] = sys.E1
    F0[offs[1]:offs[2], offs[3]:] = sys.E1.T
    F0[offs[3]:, offs[3]:] = np.eye(q1)
    F0 -= eps * np.eye(nc)
    coeffs = {}
    for idx, Qk in layout.q_basis():
        Fk = np.zeros((nc, nc))
        Fk[:p, :p] = Qk
        Fk[offs[2]:offs[3], offs[2]:offs[3]] = Qk
        Fk[offs[2]:offs[3], :p] = sys.A @ Qk
        Fk[:p, offs[2]:offs[3]] = (sys.A @ Qk).T
        Fk[offs[3]:, :p] = sys.C1 @ Qk
        Fk[:p, offs[3]:] = (sys.C1 @ Qk).T
        coeffs[idx] = Fk
    for idx, Lu in layout.l_basis():
        Fk = np.zeros((nc, nc))
        Fk[offs[2]:offs[3], :p] = sys.B @ Lu
        Fk[:p, offs[2]:offs[3]] = (sys.B @ Lu).T
        Fk[offs[3]:, :p] = sys.D1 @ Lu
        Fk[:p, offs[3]:] = (sys.D1 @ Lu).T
        coeffs[idx] = Fk
    Fg = np.zeros((nc, nc))
    Fg[offs[1]:offs[2], offs[1]:offs[2]] = np.eye(l)
    coeffs[layout.g] = Fg
    return LmiConstraint(F0, coeffs, name="hinf-model", strict_shift=eps)


def _scalar_rows(layout: DecisionLayout, sigma_cap: float, eps: float):
    """sigma <= cap, g >= 0, beta >= eps."""
    A = np.zeros((3, layout.size))
    b = np.zeros(3)
    A[0, layout.sigma] = 1.0
    b[0] = sigma_cap
    A[1, layout.g] = -1.0
    A[2, layout.beta] = -1.0
    b[2] = -eps
    return A, b


def _objective(layout: DecisionLayout, cfg: DesignConfig) -> np.ndarray:
    c = np.zeros(layout.size)
    c[layout.sigma] = cfg.r1
    c[layout.g] = cfg.r2
    return c


def build_static_problem(rec: DataRecord, cfg: DesignConfig, x,
                         maps: OutputMaps, sigma_cap: Optional[float] = None) -> ConicProblem:
    """Feedback design at state x: min r1*sigma + r2*g over all LMIs.

    ``sigma_cap`` overrides cfg.sigma_s (used by the inflation fallback);
    the output LMI's 1/sigma factor tracks the effective cap.
    """
    p, q, l, q1, q2 = maps.dims
    if rec.X_minus.shape[0] != p or rec.U.shape[0] != q or rec.W.shape[0] != l:
        raise ValueError("data record dimensions do not match the output maps")
    cap = cfg.sigma_s if sigma_cap is None else float(sigma_cap)
    if cap <= 0:
        raise ValueError("sigma cap must be positive")
    layout = DecisionLayout(p, q)
    lmis = [
        hinf_data_lmi(rec, maps.C1, maps.D1, maps.E1, layout),
        hinf_aux_lmi(maps.C1, maps.D1, maps.E1, layout, cfg.eps_strict),
        output_constraint_lmi(maps.C2, maps.D2, cap, cfg.Lambda, layout),
        ellipsoid_lmi(x, layout),
        q_floor_lmi(layout, cfg.eps_strict),
    ]
    A, b = _scalar_rows(layout, cap, cfg.eps_strict)
    return ConicProblem(_objective(layout, cfg), lmis, A, b, layout=layout)


def build_mh_problem(rec: DataRecord, cfg: DesignConfig, x_t, P_prev: np.ndarray,
                     p0: float, p_prev: float, sigma_cap: float,
                     maps: OutputMaps) -> ConicProblem:
    """Static problem at x_t plus the dissipation hand-over constraint."""
    prob = build_static_problem(rec, cfg, x_t, maps, sigma_cap=sigma_cap)
    prob.lmis.append(dissipation_lmi(x_t, P_prev, p0, p_prev, prob.layout))
    return prob


def build_model_problem(sys: LtiSystem, cfg: DesignConfig, x,
                        sigma_cap: Optional[float] = None) -> ConicProblem:
    """Model-based counterpart of :func:`build_static_problem` (oracle side)."""
    cap = cfg.sigma_s if sigma_cap is None else float(sigma_cap)
    layout = DecisionLayout(sys.p, sys.q)
    lmis = [
        model_hinf_lmi(sys, layout, cfg.eps_strict),
        output_constraint_lmi(sys.C2, sys.D2, cap, cfg.Lambda, layout),
        ellipsoid_lmi(x, layout),
        q_floor_lmi(layout, cfg.eps_strict),
    ]
    A, b = _scalar_rows(layout, cap, cfg.eps_strict)
    return ConicProblem(_objective(layout, cfg), lmis, A, b, layout=layout)


@dataclass
class SynthesisResult:
    """Solved design: certificate pair (Q, P), gain K, levels and multipliers."""

    Q: np.ndarray
    L: np.ndarray
    lam: float
    beta: float
    gamma_sq: float
    sigma: float
    K: np.ndarray
    P: np.ndarray
    report: SolveReport = field(repr=False, default=None)

    @property
    def gamma(self) -> float:
        return float(np.sqrt(max(self.gamma_sq, 0.0)))


def extract_solution(report: SolveReport, layout: DecisionLayout) -> SynthesisResult:
    """Pull (Q, L, ...) out of an optimal report; K via linear solve.

    Raises on non-optimal reports and on numerically singular Q
    (min eigenvalue below 1e-10).
    """
    if report.status != "optimal":
        raise ValueError(f"cannot extract from a report with status '{report.status}'")
    z = report.z
    Q = layout.extract_q(z)
    L = layout.extract_l(z)
    if min_eigenvalue(Q) < 1e-10:
        raise ValueError("certificate extraction failed: Q is numerically singular")
    K = np.linalg.solve(Q.T, L.T).T
    P = sym(np.linalg.inv(Q))
    return SynthesisResult(
        Q=Q, L=L,
        lam=float(z[layout.lam]), beta=float(z[layout.beta]),
        gamma_sq=float(z[layout.g]), sigma=float(z[layout.sigma]),
        K=K, P=P, report=report,
    )
