"""Dense symmetric-matrix utilities shared by the LMI machinery.

Everything here operates on plain ``numpy`` arrays; matrices passed as
"symmetric" are symmetrized defensively where cheap and validated where it
matters.  The ``*`` convention of block LMIs (lower triangle mirrors the
upper one) is realized by :func:`assemble_blocks`.
"""

from __future__ import annotations

import numpy as np

SQRT2 = np.sqrt(2.0)


def svec_indices(n: int) -> list[tuple[int, int]]:
    """Upper-triangle (i, j) pairs, i <= j, in column-major order."""
    return [(i, j) for j in range(n) for i in range(j + 1)]


def svec_dim(n: int) -> int:
    return n * (n + 1) // 2


def svec(S: np.ndarray) -> np.ndarray:
    """Vectorize a symmetric matrix, scaling off-diagonals by sqrt(2).

    The scaling makes the map an isometry:
    ``svec(S1) @ svec(S2) == <S1, S2>_F`` and ``smat(svec(S)) == S``.
    """
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    if S.shape != (n, n):
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    out = np.empty(svec_dim(n))
    for k, (i, j) in enumerate(svec_indices(n)):
        out[k] = S[i, j] if i == j else S[i, j] * SQRT2
    return out


def smat(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`svec`; raises on non-triangular length."""
    v = np.asarray(v, dtype=float).ravel()
    m = v.size
    n = int((np.sqrt(8 * m + 1) - 1) / 2)
    if svec_dim(n) != m:
        raise ValueError(f"length {m} is not a triangular number")
    S = np.zeros((n, n))
    for k, (i, j) in enumerate(svec_indices(n)):
        if i == j:
            S[i, i] = v[k]
        else:
            S[i, j] = S[j, i] = v[k] / SQRT2
    return S


def smat_unit(k: int, n: int) -> np.ndarray:
    """smat of the k-th unit vector; basis matrix for a svec'd variable."""
    S = np.zeros((n, n))
    i, j = svec_indices(n)[k]
    if i == j:
        S[i, i] = 1.0
    else:
        S[i, j] = S[j, i] = 1.0 / SQRT2
    return S


def sym(S: np.ndarray) -> np.ndarray:
    """Symmetric part (S + S.T)/2."""
    S = np.asarray(S, dtype=float)
    return 0.5 * (S + S.T)


def min_eigenvalue(S: np.ndarray) -> float:
    """Smallest eigenvalue of a symmetric matrix."""
    S = np.asarray(S, dtype=float)
    if S.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(sym(S))[0])


def is_psd(S: np.ndarray, tol: float = 1e-8) -> bool:
    """True when the smallest eigenvalue is >= -tol."""
    return min_eigenvalue(S) >= -tol


def spectral_radius(M: np.ndarray) -> float:
    """max |eig| of a (not necessarily symmetric) square matrix."""
    M = np.asarray(M, dtype=float)
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def block_offsets(sizes) -> np.ndarray:
    """Cumulative offsets [0, s0, s0+s1, ...] of a block partition."""
    sizes = np.asarray(sizes, dtype=int)
    if sizes.size and sizes.min() < 1:
        raise ValueError("block sizes must be positive")
    return np.concatenate(([0], np.cumsum(sizes)))


def assemble_blocks(sizes, blocks: dict) -> np.ndarray:
    """Assemble a symmetric matrix from upper-triangle blocks.

    Args:
        sizes: partition sizes; the result is square of order sum(sizes).
        blocks: maps (block_row, block_col) with block_row <= block_col to a
            dense array (scalars are promoted).  Lower-triangle blocks are
            filled with the transposes, the paper-style ``*`` convention.
            Diagonal blocks must be symmetric.

    Raises:
        ValueError: on a shape mismatch (names the offending block), a
            lower-triangle key, or an asymmetric diagonal block.
    """
    offs = block_offsets(sizes)
    n = int(offs[-1])
    F = np.zeros((n, n))
    for (bi, bj), blk in blocks.items():
        if bi > bj:
            raise ValueError(f"block ({bi},{bj}) is below the diagonal; specify upper blocks only")
        blk = np.atleast_2d(np.asarray(blk, dtype=float))
        want = (offs[bi + 1] - offs[bi], offs[bj + 1] - offs[bj])
        if blk.shape != want:
            raise ValueError(f"block ({bi},{bj}) has shape {blk.shape}, expected {want}")
        if bi == bj and not np.array_equal(blk, blk.T):
            raise ValueError(f"diagonal block ({bi},{bi}) must be symmetric")
        F[offs[bi]:offs[bi + 1], offs[bj]:offs[bj + 1]] = blk
        if bi != bj:
            F[offs[bj]:offs[bj + 1], offs[bi]:offs[bi + 1]] = blk.T
    return F
