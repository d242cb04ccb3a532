"""Lanczos iteration with full reorthogonalisation and locking.

Used for the low end of sparse symmetric spectra that are too large for a
dense solve.  In shift-invert mode the Krylov space is built from
``(A - sigma)^-1``, whose largest eigenvalues belong to the eigenvalues of
``A`` closest to ``sigma`` from above.
"""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .exceptions import EigNotConverged


def _orthogonalize(w, basis_blocks):
    # two passes of classical Gram-Schmidt (DGKS) are enough for full reorthogonalisation
    for _ in range(2):
        for B in basis_blocks:
            if B.shape[0]:
                w -= B.T @ (B @ w)
    return w


def _lanczos_run(apply_op, v0, m, locked):
    n = v0.size
    Q = np.zeros((m + 1, n))
    alpha = np.zeros(m)
    beta = np.zeros(m)
    q = _orthogonalize(v0.copy(), [locked])
    q /= np.linalg.norm(q)
    Q[0] = q
    steps = m
    for j in range(m):
        w = apply_op(Q[j])
        alpha[j] = Q[j] @ w
        w -= alpha[j] * Q[j]
        if j > 0:
            w -= beta[j - 1] * Q[j - 1]
        w = _orthogonalize(w, [Q[: j + 1], locked])
        b = np.linalg.norm(w)
        beta[j] = b
        if b < 1e-13 * max(1.0, abs(alpha[j])):
            steps = j + 1
            break
        Q[j + 1] = w / b
    T = np.diag(alpha[:steps]) + np.diag(beta[: steps - 1], 1) + np.diag(beta[: steps - 1], -1)
    theta, Y = np.linalg.eigh(T)
    return theta, Q[:steps].T @ Y, steps


def lanczos_lowest(A, k, tol=1e-9, sigma=None, max_restarts=50, seed=0, ncv=None):
    """Lowest ``k`` eigenpairs of the sparse symmetric matrix ``A``.

    Returns ``(values, vectors, residuals)`` with unit Euclidean vectors as
    columns.  A pair is accepted once ``||A x - lam x|| <= tol (||A|| + |lam|)``.
    Converged pairs are locked and the iteration restarts in their orthogonal
    complement; a final restart confirms nothing was missed below the ``k``-th
    value, which also recovers repeated eigenvalues.
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    if not 0 < k <= n:
        raise ValueError(f"k must lie in [1, {n}]")
    norm_est = float(abs(A).sum(axis=1).max())
    rng = np.random.default_rng(seed)
    if sigma is not None:
        lu = spla.splu(sp.csc_matrix(A - sigma * sp.identity(n)))
        apply_op = lu.solve
        order = lambda theta: np.argsort(-theta)  # noqa: E731
    else:
        apply_op = A.__matmul__
        order = np.argsort

    locked_vals, locked_vecs, locked_res = [], np.zeros((0, n)), []
    m = ncv or min(n, max(2 * k + 20, 40))
    last_res = None
    for _ in range(max_restarts):
        free = n - locked_vecs.shape[0]
        if free <= 0:
            break
        steps_cap = min(m, free)
        theta, X, steps = _lanczos_run(apply_op, rng.standard_normal(n), steps_cap, locked_vecs)
        new_vals, new_vecs, new_res = [], [], []
        for i in order(theta):
            x = X[:, i]
            x = x / np.linalg.norm(x)
            Ax = A @ x
            lam = float(x @ Ax)
            res = np.linalg.norm(Ax - lam * x) / (norm_est + abs(lam))
            if res > tol:
                last_res = res
                break
            new_vals.append(lam)
            new_vecs.append(x)
            new_res.append(res)
        if not new_vals:
            if steps_cap >= free:
                break
            m = min(n, 2 * m)
            continue
        if len(locked_vals) >= k:
            kth = sorted(locked_vals)[k - 1]
            if new_vals[0] >= kth - tol * (norm_est + abs(kth)):
                break
        locked_vals.extend(new_vals)
        locked_res.extend(new_res)
        locked_vecs = np.vstack([locked_vecs, np.array(new_vecs)])
    if len(locked_vals) < k:
        raise EigNotConverged(
            f"Lanczos found {len(locked_vals)} of {k} eigenpairs to tolerance {tol}",
            residuals=locked_res + ([last_res] if last_res is not None else []))
    idx = np.argsort(locked_vals, kind="stable")[:k]
    vals = np.asarray(locked_vals)[idx]
    vecs = locked_vecs[idx].T
    return vals, vecs, np.asarray(locked_res)[idx]
