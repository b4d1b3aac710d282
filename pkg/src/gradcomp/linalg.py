"""Dense matrix helpers: products, Gram-Schmidt, and a slow-but-sure
best rank-r oracle built on converged subspace iteration.

Everything operates on 2-d float64 numpy arrays (row-major). Results are
deterministic for a fixed process; no general-purpose SVD is used anywhere,
so the iterative code paths below can be checked against each other.
"""

from dataclasses import dataclass

import numpy as np

# Columns whose post-projection mass falls below this (relative) floor are
# treated as degenerate and replaced by a seeded pseudo-random direction.
DEGENERATE_EPS = 1e-12

GS_REPLACEMENT_TAG = 0x67736673  # seeds the degenerate-column redraws


class ContractViolation(ValueError):
    """An argument broke a documented precondition."""


def as_matrix(a, name="matrix"):
    """Validate and return `a` as a 2-d float64 array.

    Raises ContractViolation on wrong rank, empty dims, or non-finite
    entries.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ContractViolation(f"{name} must be 2-d, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ContractViolation(f"{name} has an empty dimension: {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractViolation(f"{name} contains non-finite entries")
    return a


def matmul(a, b):
    """Matrix product with shape checking.

    The accumulation order is fixed for the lifetime of the process, which
    is what the bit-stability tests rely on.
    """
    a = as_matrix(a, "left operand")
    b = as_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ContractViolation(
            f"inner dimensions differ: {a.shape} @ {b.shape}")
    return a @ b


def _replacement_column(n, column_index, attempt):
    rng = np.random.default_rng(
        np.random.SeedSequence([GS_REPLACEMENT_TAG, column_index, attempt]))
    v = rng.standard_normal(n)
    return v / np.sqrt(v @ v)


def orthogonalize(p):
    """Column-wise classical Gram-Schmidt, in order, returning a fresh array.

    The output has orthonormal columns and the same column span for
    non-degenerate input. A column whose norm after projection is below
    DEGENERATE_EPS * (norm before projection + 1) is replaced by a
    deterministic pseudo-random unit vector (seeded by the column index),
    itself re-projected against the earlier columns. Requires rank <= rows.
    """
    p = as_matrix(p, "orthogonalize input")
    n, r = p.shape
    if r > n:
        raise ContractViolation(f"cannot orthonormalize {r} columns in R^{n}")
    out = p.copy()
    for j in range(r):
        col = out[:, j]
        before = np.sqrt(col @ col)
        for i in range(j):
            col -= (out[:, i] @ col) * out[:, i]
        norm = np.sqrt(col @ col)
        attempt = 0
        while norm < DEGENERATE_EPS * (before + 1.0):
            col[:] = _replacement_column(n, j, attempt)
            before = 1.0
            for i in range(j):
                col -= (out[:, i] @ col) * out[:, i]
            norm = np.sqrt(col @ col)
            attempt += 1
        col /= norm
    return out


def orthogonalize_flops(n, r):
    """Scalar-op estimate for orthogonalize on an n-by-r input.

    Counts dots, axpys and the normalizations; used by the cost accounting,
    not by the numerics.
    """
    return 2 * n * r * r + 3 * n * r


@dataclass
class LowRankFactors:
    """A rank-r approximation left @ right.T with orthonormal left columns."""

    left: np.ndarray   # n x r
    right: np.ndarray  # m x r

    @property
    def rank(self):
        return self.left.shape[1]

    def product(self):
        return self.left @ self.right.T


def reconstruction_error(m, factors):
    """Frobenius norm of m - left @ right.T."""
    diff = m - factors.product()
    return float(np.sqrt(np.sum(diff * diff)))


def _fresh_start(m_cols, r, seed):
    rng = np.random.default_rng(np.random.SeedSequence([seed, m_cols, r]))
    return rng.standard_normal((m_cols, r))


def best_rank_r(m, r, seed=0, tol=1e-12, max_sweeps=10000):
    """Best rank-r approximation of m by converged subspace iteration.

    Iterates an orthonormal basis X of R^cols against m.T @ m from a fresh
    random start until successive squared reconstruction errors differ by
    less than `tol` (capped at `max_sweeps`). Returns LowRankFactors with
    orthonormal `left`. Deliberately shares no code with the single-step
    compression path it is used to judge.
    """
    m = as_matrix(m, "best_rank_r input")
    n, cols = m.shape
    if not 1 <= r <= min(n, cols):
        raise ContractViolation(f"rank {r} invalid for shape {m.shape}")
    gram = m.T @ m
    x = orthogonalize(_fresh_start(cols, r, seed))
    prev = None
    for _ in range(max_sweeps):
        x = orthogonalize(gram @ x)
        approx = (m @ x) @ x.T
        diff = m - approx
        err = float(np.sum(diff * diff))
        if prev is not None and abs(prev - err) < tol:
            break
        prev = err
    left = orthogonalize(m @ x)
    right = m.T @ left
    return LowRankFactors(left=left, right=right)


def spectral_decomposition(m, seed=0, tol=1e-11, max_sweeps=10000):
    """All singular triples of m via simultaneous iteration on m.T @ m.

    Returns (u, sigma, v) with u: n x p, v: cols x p, p = min(n, cols),
    sigma sorted descending. Columns of u belonging to zero singular values
    are zero. Converges on the off-diagonal mass of X.T (m.T m) X because a
    reconstruction-error test cannot distinguish bases at full rank.
    """
    m = as_matrix(m, "spectral_decomposition input")
    n, cols = m.shape
    p = min(n, cols)
    gram = m.T @ m
    scale = max(float(np.max(np.abs(gram))), 1.0)
    x = orthogonalize(_fresh_start(cols, p, seed + 1))
    for _ in range(max_sweeps):
        x = orthogonalize(gram @ x)
        b = x.T @ gram @ x
        off = b - np.diag(np.diag(b))
        if float(np.max(np.abs(off))) < tol * scale:
            break
    eigs = np.diag(x.T @ gram @ x).copy()
    order = np.argsort(-eigs)
    x = x[:, order]
    eigs = np.maximum(eigs[order], 0.0)
    sigma = np.sqrt(eigs)
    u = np.zeros((n, p))
    mx = m @ x
    for i in range(p):
        if sigma[i] > DEGENERATE_EPS * (scale + 1.0):
            u[:, i] = mx[:, i] / sigma[i]
        else:
            sigma[i] = 0.0
    return u, sigma, x
