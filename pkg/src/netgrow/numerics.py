"""Dense linear-algebra primitives with explicit rank conventions.

All routines work in float64 and reject non-finite input.  Small singular or
eigen values are cut relative to the largest one; the cut-off is ``rcond``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericalError

DEFAULT_RCOND = 1e-10
# slack used when deciding whether a symmetric matrix is PSD
PSD_SLACK = 1e-8


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD ``M = U @ diag(sigma) @ V.T`` with orthonormal columns in U, V."""

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.U * self.sigma) @ self.V.T


def as_finite_matrix(M, name: str = "matrix") -> np.ndarray:
    a = np.asarray(M, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(-1, 1)
    if a.ndim != 2:
        raise DomainError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DomainError(f"{name} contains NaN or Inf")
    return a


def _fix_signs(U: np.ndarray, V: np.ndarray) -> None:
    # largest |entry| of each left vector made non-negative (argmax picks the first on ties)
    if U.size == 0:
        return
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    U *= signs
    V *= signs


def svd(M) -> SvdResult:
    """Thin SVD with non-increasing singular values and a fixed sign convention."""
    a = as_finite_matrix(M)
    try:
        U, s, Vt = np.linalg.svd(a, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    if not (np.all(np.isfinite(U)) and np.all(np.isfinite(s)) and np.all(np.isfinite(Vt))):
        raise NumericalError("SVD produced non-finite factors")
    U = np.ascontiguousarray(U)
    V = np.ascontiguousarray(Vt.T)
    _fix_signs(U, V)
    return SvdResult(U, s, V)


def numerical_rank(sigma: np.ndarray, rcond: float = DEFAULT_RCOND) -> int:
    if sigma.size == 0 or sigma[0] <= 0.0:
        return 0
    return int(np.count_nonzero(sigma > rcond * sigma[0]))


def pinv(M, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """Moore-Penrose pseudo-inverse; singular values ``<= rcond * max`` count as zero."""
    if rcond < 0:
        raise DomainError("rcond must be non-negative")
    res = svd(M)
    r = numerical_rank(res.sigma, rcond)
    if r == 0:
        return np.zeros((res.V.shape[0], res.U.shape[0]))
    return (res.V[:, :r] / res.sigma[:r]) @ res.U[:, :r].T


def _psd_eigh(S, rcond: float) -> tuple[np.ndarray, np.ndarray]:
    a = as_finite_matrix(S, "S")
    if a.shape[0] != a.shape[1]:
        raise DomainError(f"S must be square, got {a.shape}")
    a = 0.5 * (a + a.T)
    try:
        w, O = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    top = w[-1] if w.size else 0.0
    if w.size and w[0] < -max(rcond, PSD_SLACK) * max(top, 0.0) and w[0] < 0:
        raise DomainError(f"matrix is not PSD (eigenvalue {w[0]:.3e}, largest {top:.3e})")
    return w, O


def inv_sqrt_psd(S, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """``O diag(w^-1/2) O^T`` for PSD ``S``; eigenvalues ``<= rcond * max`` map to 0."""
    w, O = _psd_eigh(S, rcond)
    top = w[-1] if w.size else 0.0
    keep = w > rcond * top if top > 0 else np.zeros_like(w, dtype=bool)
    inv = np.zeros_like(w)
    inv[keep] = 1.0 / np.sqrt(w[keep])
    out = (O * inv) @ O.T
    return 0.5 * (out + out.T)


def sqrt_psd(S, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """PSD square root, negative rounding noise clamped to zero."""
    w, O = _psd_eigh(S, rcond)
    out = (O * np.sqrt(np.clip(w, 0.0, None))) @ O.T
    return 0.5 * (out + out.T)


def range_projector(M, rcond: float = DEFAULT_RCOND) -> np.ndarray:
    """Orthogonal projector onto the column space of ``M``."""
    res = svd(M)
    r = numerical_rank(res.sigma, rcond)
    Ur = res.U[:, :r]
    return Ur @ Ur.T


def gen_eig_pairs(A, B, K: int | None = None, rcond: float = DEFAULT_RCOND) -> list[tuple[float, np.ndarray]]:
    """Top generalized eigenpairs of ``A x = mu B x`` for PSD ``A`` and ``B``.

    Solved by whitening with ``B^-1/2`` and taking the SVD of the resulting
    symmetric PSD matrix, so no iterative solver is involved.  Returned vectors
    satisfy ``x^T B x = 1``.  When ``K`` exceeds the numerical rank only
    rank-many pairs come back.
    """
    a = as_finite_matrix(A, "A")
    a = 0.5 * (a + a.T)
    W = inv_sqrt_psd(B, rcond)
    if W.shape[0] != a.shape[0]:
        raise DomainError(f"A {a.shape} and B {W.shape} differ in size")
    C = W @ a @ W
    res = svd(0.5 * (C + C.T))
    r = numerical_rank(res.sigma, rcond)
    if K is not None:
        r = min(r, int(K))
    vecs = W @ res.U[:, :r]
    return [(float(res.sigma[k]), vecs[:, k].copy()) for k in range(r)]
