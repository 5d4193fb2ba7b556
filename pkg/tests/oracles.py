"""Reference computations that share no code with the package."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg, eigsh


def _reflect(i: int, n: int) -> int:
    if i < 0:
        return -i
    if i >= n:
        return 2 * (n - 1) - i
    return i


def diffusion_matrix(T: int, H: int, W: int, nu: float, nu_t: float, ocean: np.ndarray) -> sp.csr_matrix:
    """Explicit sparse matrix of one diffusion step on a T x H x W grid.

    Reflect boundaries in space, replicate in time, land zeroed on input and
    output (C-order flattening).
    """
    idx = np.arange(T * H * W).reshape(T, H, W)
    rows, cols, vals = [], [], []
    for t in range(T):
        for i in range(H):
            for j in range(W):
                if not ocean[i, j]:
                    continue
                terms = [((t, i, j), 1.0 - 4 * nu - 2 * nu_t)]
                for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                    terms.append(((t, _reflect(i + di, H), _reflect(j + dj, W)), nu))
                for dt in (-1, 1):
                    terms.append(((min(max(t + dt, 0), T - 1), i, j), nu_t))
                for (tt, ii, jj), v in terms:
                    if ocean[ii, jj]:
                        rows.append(idx[t, i, j])
                        cols.append(idx[tt, ii, jj])
                        vals.append(v)
    n = T * H * W
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def quadratic(y: np.ndarray, omega: np.ndarray, ocean: np.ndarray, A, lam1: float, lam2: float):
    """Hessian/2 ``Q`` and linear term ``b`` of the cost, restricted to ocean unknowns.

    U(x) = x'Qx - 2b'x + c with Q = lam1 P + lam2 (I-A)' M (I-A).
    """
    T = y.shape[0]
    n = y.size
    sea = np.broadcast_to(ocean, y.shape).ravel()
    P = sp.diags(omega.ravel().astype(float))
    M = sp.diags(sea.astype(float))
    R = sp.identity(n) - A
    Q = (lam1 * P + lam2 * (R.T @ M @ R)).tocsr()
    b = lam1 * (omega * np.where(omega, y, 0.0)).ravel()
    keep = np.flatnonzero(sea)
    return Q[keep][:, keep], b[keep], keep


def cg_minimizer(y, omega, ocean, A, lam1, lam2) -> np.ndarray:
    Q, b, keep = quadratic(y, omega, ocean, A, lam1, lam2)
    sol, info = cg(Q, b, rtol=1e-14, atol=0.0, maxiter=20000)
    assert info == 0
    x = np.zeros(y.size)
    x[keep] = sol
    return x.reshape(y.shape)


def lipschitz(y, omega, ocean, A, lam1, lam2) -> float:
    """Largest eigenvalue of the cost Hessian 2Q."""
    Q, _, _ = quadratic(y, omega, ocean, A, lam1, lam2)
    return 2.0 * float(eigsh(Q, k=1, which="LA", return_eigenvectors=False)[0])


def quad_cost(x, y, omega, ocean, A, lam1, lam2) -> float:
    sea = np.broadcast_to(ocean, y.shape)
    fit = np.where(omega, x - np.where(omega, y, 0.0), 0.0)
    r = (x.ravel() - A @ x.ravel()).reshape(y.shape) * sea
    return float(lam1 * (fit ** 2).sum() + lam2 * (r ** 2).sum())


def central_difference(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g
