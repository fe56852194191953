"""Small dense matrix kernels.

Everything here works on plain numpy arrays. Functions that take square
matrices also accept stacks of them (leading batch axes), which is how the
optimiser evaluates many replications at once.
"""

import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "NotPositiveDefiniteError",
    "n_adversary_params",
    "cholesky_unit_det",
    "adversary_gradient",
    "determinant",
    "trace_quadratic_form",
    "spd_solve",
    "spd_inverse",
]

# Cholesky pivots below this fraction of the largest diagonal entry count as singular.
SPD_RELATIVE_TOL = 1e-12


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a matrix expected to be SPD fails its Cholesky factorisation."""


def n_adversary_params(p):
    """Length of the unconstrained vector parameterising a unit-det p x p Cholesky factor."""
    if p < 1:
        raise ValueError(f"parameter dimension must be positive, got {p}")
    return p * (p + 1) // 2 - 1


def _check_eta(eta, p):
    eta = np.asarray(eta, dtype=float)
    q = n_adversary_params(p)
    if eta.ndim == 0 or eta.shape[-1] != q:
        raise ValueError(f"eta must have trailing length {q} for p={p}, got shape {eta.shape}")
    return eta


def cholesky_unit_det(eta, p):
    """Map unconstrained ``eta`` to a lower-triangular matrix with determinant one.

    ``eta`` holds the first p-1 log-diagonal entries followed by the strictly
    lower entries in row-major order. The last diagonal entry is fixed at
    ``exp(-sum(eta_diag))`` so the diagonal product is exactly one.
    """
    eta = _check_eta(eta, p)
    batch = eta.shape[:-1]
    A = np.zeros(batch + (p, p))
    log_diag = eta[..., : p - 1]
    idx = np.arange(p - 1)
    A[..., idx, idx] = np.exp(log_diag)
    A[..., p - 1, p - 1] = np.exp(-log_diag.sum(axis=-1))
    rows, cols = np.tril_indices(p, -1)
    A[..., rows, cols] = eta[..., p - 1 :]
    return A


def adversary_gradient(M, eta):
    """Gradient of ``-tr(A(eta)^T M A(eta))`` with respect to ``eta`` for symmetric M."""
    M = np.asarray(M, dtype=float)
    p = M.shape[-1]
    if M.shape[-2] != p:
        raise ValueError(f"M must be square, got shape {M.shape}")
    eta = _check_eta(eta, p)
    A = cholesky_unit_det(eta, p)
    G = 2.0 * M @ A  # d tr(A^T M A) / dA
    idx = np.arange(p - 1)
    last = G[..., p - 1, p - 1] * A[..., p - 1, p - 1]
    diag_part = G[..., idx, idx] * A[..., idx, idx] - last[..., None]
    rows, cols = np.tril_indices(p, -1)
    off_part = G[..., rows, cols]
    return -np.concatenate([diag_part, off_part], axis=-1)


def determinant(M):
    """Determinant via LU with partial pivoting (LAPACK getrf); singular input gives 0."""
    M = np.asarray(M, dtype=float)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise ValueError(f"determinant needs square input, got shape {M.shape}")
    return np.linalg.det(M)


def trace_quadratic_form(A, M):
    """tr(A^T M A) without forming the product: sum over (M A) * A elementwise."""
    A = np.asarray(A, dtype=float)
    M = np.asarray(M, dtype=float)
    if A.shape[-2:] != M.shape[-2:] or A.shape[-1] != A.shape[-2]:
        raise ValueError(f"non-conformable shapes {A.shape} and {M.shape}")
    return np.einsum("...ij,...ij->...", M @ A, A)


def _cholesky(M):
    M = np.asarray(M, dtype=float)
    if M.ndim < 2 or M.shape[-1] != M.shape[-2]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as err:
        raise NotPositiveDefiniteError(str(err)) from None
    scale = np.max(np.abs(np.diagonal(M, axis1=-2, axis2=-1)), axis=-1)
    pivots = np.diagonal(L, axis1=-2, axis2=-1) ** 2
    if np.any(pivots <= SPD_RELATIVE_TOL * scale[..., None]):
        raise NotPositiveDefiniteError("matrix is numerically singular")
    return L


def spd_solve(M, B):
    """Solve ``M X = B`` for symmetric positive-definite M using its Cholesky factor."""
    L = _cholesky(M)
    B = np.asarray(B, dtype=float)
    rows = B.shape[0] if B.ndim == 1 else B.shape[-2]
    if rows != L.shape[-1]:
        raise ValueError(f"right-hand side has {rows} rows, expected {L.shape[-1]}")
    if L.ndim == 2:
        Y = solve_triangular(L, B, lower=True)
        return solve_triangular(L.T, Y, lower=False)
    # batched: fall back to generic solves against the triangular factors
    Y = np.linalg.solve(L, B)
    return np.linalg.solve(np.swapaxes(L, -1, -2), Y)


def spd_inverse(M):
    M = np.asarray(M, dtype=float)
    eye = np.broadcast_to(np.eye(M.shape[-1]), M.shape)
    return spd_solve(M, eye)
