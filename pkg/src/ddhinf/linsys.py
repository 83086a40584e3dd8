"""Discrete LTI plant, trajectory simulation, and offline data collection.

The plant is

    x(t+1) = A x(t) + B u(t) + E w(t)
    y1(t)  = C1 x(t) + D1 u(t) + E1 w(t)      (performance output)
    y2(t)  = C2 x(t) + D2 u(t)                (constrained output)

with disturbances energy-bounded per step, ||w(t)||^2 <= alpha_t.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .lmicore import spectral_radius

__all__ = [
    "LtiSystem",
    "Trajectory",
    "DataRecord",
    "step",
    "simulate_closed_loop",
    "sample_bounded_disturbance",
    "disturbance_sequence",
    "collect_data",
    "data_consistency_residual",
    "identify_unique_system",
    "batch_reactor",
]


def _mat(x, name: str) -> np.ndarray:
    a = np.atleast_2d(np.asarray(x, dtype=float))
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite entries")
    return a


@dataclass(frozen=True)
class LtiSystem:
    """Plant matrices; dimension consistency is checked at construction."""

    A: np.ndarray
    B: np.ndarray
    E: np.ndarray
    C1: np.ndarray
    D1: np.ndarray
    E1: np.ndarray
    C2: np.ndarray
    D2: np.ndarray

    def __post_init__(self):
        for name in ("A", "B", "E", "C1", "D1", "E1", "C2", "D2"):
            object.__setattr__(self, name, _mat(getattr(self, name), name))
        p = self.A.shape[0]
        if self.A.shape != (p, p):
            raise ValueError(f"A must be square, got {self.A.shape}")
        q, l = self.B.shape[1], self.E.shape[1]
        q1, q2 = self.C1.shape[0], self.C2.shape[0]
        checks = {
            "B": (self.B.shape, (p, q)),
            "E": (self.E.shape, (p, l)),
            "C1": (self.C1.shape, (q1, p)),
            "D1": (self.D1.shape, (q1, q)),
            "E1": (self.E1.shape, (q1, l)),
            "C2": (self.C2.shape, (q2, p)),
            "D2": (self.D2.shape, (q2, q)),
        }
        for name, (got, want) in checks.items():
            if got != want:
                raise ValueError(f"{name} has shape {got}, expected {want}")
        if min(p, q, l, q1, q2) < 1:
            raise ValueError("all dimensions must be >= 1")

    @property
    def p(self) -> int:
        return self.A.shape[0]

    @property
    def q(self) -> int:
        return self.B.shape[1]

    @property
    def l(self) -> int:
        return self.E.shape[1]

    @property
    def q1(self) -> int:
        return self.C1.shape[0]

    @property
    def q2(self) -> int:
        return self.C2.shape[0]

    def open_loop_spectral_radius(self) -> float:
        return spectral_radius(self.A)


@dataclass(frozen=True)
class Trajectory:
    """Closed- or open-loop rollout: len(states) == len(inputs) + 1."""

    states: np.ndarray        # (N+1, p)
    inputs: np.ndarray        # (N, q)
    disturbances: np.ndarray  # (N, l)
    perf_outputs: np.ndarray  # (N, q1)
    constr_outputs: np.ndarray  # (N, q2)

    def __post_init__(self):
        for name in ("states", "inputs", "disturbances", "perf_outputs", "constr_outputs"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        n = self.length
        for name in ("inputs", "disturbances", "perf_outputs", "constr_outputs"):
            arr = getattr(self, name)
            if arr.shape[0] != n and not (n == 0 and arr.size == 0):
                raise ValueError(f"{name} has {arr.shape[0]} rows, expected {n}")

    @property
    def length(self) -> int:
        """Number of applied steps N."""
        return self.states.shape[0] - 1


@dataclass(frozen=True)
class DataRecord:
    """Offline data matrices (columns are time-ordered samples)."""

    X_minus: np.ndarray   # p x T
    X_plus: np.ndarray    # p x T
    U: np.ndarray         # q x T
    W: np.ndarray         # l x T
    alpha_per_step: np.ndarray = field(default=None)  # length T, ||w_t||^2 <= alpha_t

    def __post_init__(self):
        for name in ("X_minus", "X_plus", "U", "W"):
            object.__setattr__(self, name, _mat(getattr(self, name), name))
        T = self.X_minus.shape[1]
        if T < 1:
            raise ValueError("need at least one data column")
        for name in ("X_plus", "U", "W"):
            if getattr(self, name).shape[1] != T:
                raise ValueError(f"{name} has {getattr(self, name).shape[1]} columns, expected {T}")
        if self.X_plus.shape[0] != self.X_minus.shape[0]:
            raise ValueError("X_plus/X_minus row mismatch")
        norms = np.sum(self.W ** 2, axis=0)
        if self.alpha_per_step is None:
            object.__setattr__(self, "alpha_per_step", norms.copy())
        else:
            a = np.asarray(self.alpha_per_step, dtype=float).ravel()
            if a.size != T:
                raise ValueError(f"alpha_per_step has length {a.size}, expected {T}")
            if np.any(a < 0):
                raise ValueError("alpha_per_step must be nonnegative")
            bad = np.nonzero(norms > a * (1 + 1e-12) + 1e-300)[0]
            if bad.size:
                raise ValueError(f"disturbance bound violated at column {bad[0]}: "
                                 f"||w||^2={norms[bad[0]]:.3e} > alpha_t={a[bad[0]]:.3e}")
            object.__setattr__(self, "alpha_per_step", a)

    @property
    def T(self) -> int:
        return self.X_minus.shape[1]

    @property
    def alpha_total(self) -> float:
        """Overall energy bound, sum of the per-step bounds."""
        return float(np.sum(self.alpha_per_step))


def step(sys: LtiSystem, x, u, w):
    """One plant step; returns (x_next, y1, y2)."""
    x = np.asarray(x, dtype=float).ravel()
    u = np.asarray(u, dtype=float).ravel()
    w = np.asarray(w, dtype=float).ravel()
    if x.size != sys.p or u.size != sys.q or w.size != sys.l:
        raise ValueError(f"dimension mismatch: got ({x.size},{u.size},{w.size}), "
                         f"expected ({sys.p},{sys.q},{sys.l})")
    x_next = sys.A @ x + sys.B @ u + sys.E @ w
    y1 = sys.C1 @ x + sys.D1 @ u + sys.E1 @ w
    y2 = sys.C2 @ x + sys.D2 @ u
    return x_next, y1, y2


def simulate_closed_loop(sys: LtiSystem, x0, policy: Callable[[int, np.ndarray], np.ndarray],
                         w_seq, N: int) -> Trajectory:
    """Roll the plant N steps under u = policy(t, x).

    ``w_seq`` must provide at least N disturbance vectors.  A policy
    returning a wrong-dimension input raises with the offending step index.
    """
    x = np.asarray(x0, dtype=float).ravel()
    if x.size != sys.p:
        raise ValueError(f"x0 has dimension {x.size}, expected {sys.p}")
    w_seq = np.atleast_2d(np.asarray(w_seq, dtype=float)) if N > 0 else np.zeros((0, sys.l))
    if w_seq.shape[0] < N:
        raise ValueError(f"need at least {N} disturbances, got {w_seq.shape[0]}")
    xs = np.zeros((N + 1, sys.p))
    us = np.zeros((N, sys.q))
    ws = np.zeros((N, sys.l))
    y1s = np.zeros((N, sys.q1))
    y2s = np.zeros((N, sys.q2))
    xs[0] = x
    for t in range(N):
        u = np.asarray(policy(t, xs[t]), dtype=float).ravel()
        if u.size != sys.q:
            raise ValueError(f"policy returned dimension {u.size} at step {t}, expected {sys.q}")
        xs[t + 1], y1s[t], y2s[t] = step(sys, xs[t], u, w_seq[t])
        us[t], ws[t] = u, w_seq[t]
    return Trajectory(xs, us, ws, y1s, y2s)


def sample_bounded_disturbance(l: int, alpha_t: float, rng) -> np.ndarray:
    """Standard-normal draw rescaled by min(1, sqrt(alpha_t)/||w||).

    ``rng`` is a seed or a ``numpy.random.Generator``; the same seed always
    yields the same vector.  The bound ||w||^2 <= alpha_t holds exactly.
    """
    if alpha_t < 0:
        raise ValueError("alpha_t must be nonnegative")
    gen = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    w = gen.standard_normal(l)
    if alpha_t == 0.0:
        return np.zeros(l)
    nrm = np.linalg.norm(w)
    if nrm > 0:
        w = w * min(1.0, np.sqrt(alpha_t) / nrm)
    # guard against the rescale rounding a hair above the bound
    while w @ w > alpha_t:
        w = w * (1.0 - 1e-15)
    return w


def disturbance_sequence(l: int, alpha_t: float, N: int, rng) -> np.ndarray:
    """N bounded disturbance draws from one generator stream; shape (N, l)."""
    gen = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    return np.array([sample_bounded_disturbance(l, alpha_t, gen) for _ in range(N)]).reshape(N, l)


def collect_data(sys: LtiSystem, x0, u_seq, w_seq,
                 alpha_per_step=None) -> DataRecord:
    """Open-loop rollout packaged as the offline data record.

    The record satisfies X_plus = A X_minus + B U + E W exactly by
    construction.  When ``alpha_per_step`` is omitted the per-step bounds
    are set to the realized energies ||w_t||^2.
    """
    u_seq = np.atleast_2d(np.asarray(u_seq, dtype=float))
    w_seq = np.atleast_2d(np.asarray(w_seq, dtype=float))
    T = u_seq.shape[0]
    if w_seq.shape[0] != T:
        raise ValueError(f"got {T} inputs but {w_seq.shape[0]} disturbances")
    x = np.asarray(x0, dtype=float).ravel()
    Xm = np.zeros((sys.p, T))
    Xp = np.zeros((sys.p, T))
    for t in range(T):
        Xm[:, t] = x
        x, _, _ = step(sys, x, u_seq[t], w_seq[t])
        Xp[:, t] = x
    return DataRecord(Xm, Xp, u_seq.T.copy(), w_seq.T.copy(), alpha_per_step)


def data_consistency_residual(sys: LtiSystem, rec: DataRecord) -> float:
    """Frobenius norm of X_plus - A X_minus - B U - E W (0 iff sys fits rec)."""
    R = rec.X_plus - sys.A @ rec.X_minus - sys.B @ rec.U - sys.E @ rec.W
    return float(np.linalg.norm(R))


def identify_unique_system(rec: DataRecord, rtol: float = 1e-9
                           ) -> Optional[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Recover (A, B, E) when the stacked data matrix pins them down.

    Returns None when rank([X_minus; U; W]) < p + q + l (decided at
    ``rtol`` times the largest singular value), i.e. when the consistency
    set contains more than one system.
    """
    Z = np.vstack([rec.X_minus, rec.U, rec.W])
    p, q = rec.X_minus.shape[0], rec.U.shape[0]
    sv = np.linalg.svd(Z, compute_uv=False)
    if sv.size == 0 or np.sum(sv > rtol * sv[0]) < Z.shape[0]:
        return None
    Theta = rec.X_plus @ np.linalg.pinv(Z, rcond=rtol)
    return Theta[:, :p], Theta[:, p:p + q], Theta[:, p + q:]


def batch_reactor() -> LtiSystem:
    """The open-loop unstable batch-reactor benchmark plant."""
    A = np.array([[1.178, 0.001, 0.511, -0.403],
                  [-0.051, 0.661, -0.011, 0.061],
                  [0.076, 0.335, 0.560, 0.382],
                  [0.0, 0.335, 0.089, 0.849]])
    B = np.array([[0.004, -0.087],
                  [0.467, 0.001],
                  [0.213, -0.235],
                  [0.213, -0.016]])
    return LtiSystem(
        A=A,
        B=B,
        E=np.eye(4),
        C1=np.array([[1.0, 0.0, 1.0, -1.0]]),
        D1=np.zeros((1, 2)),
        E1=np.eye(1, 4),
        C2=np.array([[0.5, 0.5, 1.0, 1.0]]),
        D2=np.array([[0.0, 1.0]]),
    )
