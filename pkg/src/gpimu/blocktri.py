"""Symmetric positive-definite block-tridiagonal linear algebra.

A matrix with K+1 diagonal blocks of size D is stored as two stacked arrays:
``diag`` of shape (K+1, D, D) and ``off`` of shape (K, D, D), where
``off[k]`` is the *lower* block M[k+1, k].  The upper blocks are implied by
symmetry.  Every routine here costs O(K D^3).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, NotPositiveDefinite


@dataclass(frozen=True)
class BlockTriDiag:
    diag: np.ndarray
    off: np.ndarray

    def __post_init__(self):
        diag = np.asarray(self.diag, dtype=float)
        if diag.ndim != 3 or diag.shape[1] != diag.shape[2]:
            raise DimensionMismatch(f"diag must have shape (K+1, D, D), got {diag.shape}")
        n, d = diag.shape[0], diag.shape[1]
        off = np.asarray(self.off, dtype=float).reshape(-1, d, d) if n > 1 else np.zeros((0, d, d))
        if off.shape != (n - 1, d, d):
            raise DimensionMismatch(f"off must have shape {(n - 1, d, d)}, got {off.shape}")
        object.__setattr__(self, "diag", diag)
        object.__setattr__(self, "off", off)

    @property
    def n_blocks(self) -> int:
        return self.diag.shape[0]

    @property
    def block_dim(self) -> int:
        return self.diag.shape[1]

    @classmethod
    def zeros(cls, n_blocks: int, block_dim: int) -> "BlockTriDiag":
        return cls(np.zeros((n_blocks, block_dim, block_dim)),
                   np.zeros((max(n_blocks - 1, 0), block_dim, block_dim)))

    @classmethod
    def from_dense(cls, m: np.ndarray, block_dim: int) -> "BlockTriDiag":
        """Extract the block-tridiagonal part of a dense matrix."""
        m = np.asarray(m, dtype=float)
        n = m.shape[0] // block_dim
        if m.shape != (n * block_dim, n * block_dim):
            raise DimensionMismatch(f"dense matrix {m.shape} incompatible with block size {block_dim}")
        d = block_dim
        diag = np.stack([m[k * d:(k + 1) * d, k * d:(k + 1) * d] for k in range(n)])
        off = np.stack([m[(k + 1) * d:(k + 2) * d, k * d:(k + 1) * d] for k in range(n - 1)]) \
            if n > 1 else np.zeros((0, d, d))
        return cls(diag, off)

    def upper(self, k: int) -> np.ndarray:
        """Block M[k, k+1]."""
        return self.off[k].T

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """Multiply by a block vector of shape (K+1, D) or (K+1, D, m)."""
        x = _check_rhs(self, x)
        y = np.einsum("kij,kj...->ki...", self.diag, x)
        if self.n_blocks > 1:
            y[1:] += np.einsum("kij,kj...->ki...", self.off, x[:-1])
            y[:-1] += np.einsum("kji,kj...->ki...", self.off, x[1:])
        return y

    def asymmetry(self) -> float:
        """Largest deviation of a diagonal block from its transpose."""
        return float(np.max(np.abs(self.diag - np.swapaxes(self.diag, 1, 2)), initial=0.0))


@dataclass(frozen=True)
class BlockCholesky:
    """Lower block-bidiagonal factor with M = L L^T.

    ``diag[k]`` is the lower-triangular pivot factor L_k and ``sub[k]`` the
    block L[k+1, k].
    """

    diag: np.ndarray
    sub: np.ndarray

    @property
    def n_blocks(self) -> int:
        return self.diag.shape[0]

    @property
    def block_dim(self) -> int:
        return self.diag.shape[1]


def _check_rhs(m, b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if b.ndim < 2 or b.shape[0] != m.n_blocks or b.shape[1] != m.block_dim:
        raise DimensionMismatch(
            f"block vector shape {b.shape} does not match ({m.n_blocks}, {m.block_dim}, ...)")
    return b


def _chol(block: np.ndarray, k: int) -> np.ndarray:
    try:
        return np.linalg.cholesky(block)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(block=k) from None


def factorize(m: BlockTriDiag) -> BlockCholesky:
    n, d = m.n_blocks, m.block_dim
    ldiag = np.empty((n, d, d))
    lsub = np.empty((max(n - 1, 0), d, d))
    ldiag[0] = _chol(m.diag[0], 0)
    for k in range(n - 1):
        # B_k = M[k+1,k] L_k^{-T}
        lsub[k] = solve_triangular(ldiag[k], m.off[k].T, lower=True, check_finite=False).T
        schur = m.diag[k + 1] - lsub[k] @ lsub[k].T
        ldiag[k + 1] = _chol(0.5 * (schur + schur.T), k + 1)
    return BlockCholesky(ldiag, lsub)


def solve(f: BlockCholesky, b: np.ndarray) -> np.ndarray:
    """Solve M x = b for a block vector b of shape (K+1, D) or (K+1, D, m)."""
    b = _check_rhs(f, b)
    n = f.n_blocks
    z = np.empty_like(b)
    z[0] = solve_triangular(f.diag[0], b[0], lower=True, check_finite=False)
    for k in range(1, n):
        z[k] = solve_triangular(f.diag[k], b[k] - f.sub[k - 1] @ z[k - 1],
                                lower=True, check_finite=False)
    x = np.empty_like(b)
    x[n - 1] = solve_triangular(f.diag[n - 1], z[n - 1], lower=True, trans="T", check_finite=False)
    for k in range(n - 2, -1, -1):
        x[k] = solve_triangular(f.diag[k], z[k] - f.sub[k].T @ x[k + 1],
                                lower=True, trans="T", check_finite=False)
    return x


def log_det(f: BlockCholesky) -> float:
    return 2.0 * float(np.sum(np.log(np.diagonal(f.diag, axis1=1, axis2=2))))


def partial_inverse(f: BlockCholesky) -> BlockTriDiag:
    """Block-tridiagonal entries of M^{-1} by backward recursion.

    From L^T S = L^{-1}, row k gives
    S[k, k+1] = -L_k^{-T} B_k^T S[k+1, k+1] and
    S[k, k] = L_k^{-T} (L_k^{-1} - B_k^T S[k+1, k]).
    """
    n, d = f.n_blocks, f.block_dim
    eye = np.eye(d)
    linv = np.stack([solve_triangular(f.diag[k], eye, lower=True, check_finite=False)
                     for k in range(n)])
    sdiag = np.empty((n, d, d))
    soff = np.empty((max(n - 1, 0), d, d))
    sdiag[-1] = linv[-1].T @ linv[-1]
    for k in range(n - 2, -1, -1):
        upper = -linv[k].T @ (f.sub[k].T @ sdiag[k + 1])
        soff[k] = upper.T
        s = linv[k].T @ (linv[k] - f.sub[k].T @ soff[k])
        sdiag[k] = 0.5 * (s + s.T)
    return BlockTriDiag(sdiag, soff)


def dense_assemble(m: BlockTriDiag) -> np.ndarray:
    n, d = m.n_blocks, m.block_dim
    out = np.zeros((n * d, n * d))
    for k in range(n):
        out[k * d:(k + 1) * d, k * d:(k + 1) * d] = m.diag[k]
    for k in range(n - 1):
        out[(k + 1) * d:(k + 2) * d, k * d:(k + 1) * d] = m.off[k]
        out[k * d:(k + 1) * d, (k + 1) * d:(k + 2) * d] = m.off[k].T
    return out


def blocks_of(x: np.ndarray, block_dim: int) -> np.ndarray:
    """Reshape a stacked vector into block-vector form (K+1, D)."""
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, block_dim, *x.shape[1:])
