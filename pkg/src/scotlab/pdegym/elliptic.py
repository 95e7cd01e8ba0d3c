"""Steady problems on the unit square with Dirichlet data: Poisson and Helmholtz.

Both use the node grid x_i = i/(N-1), i = 0..N-1, whose outer ring carries the
boundary values, and the 5-point Laplacian on the (N-2)^2 interior nodes.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import cg

HELMHOLTZ_OMEGA = 5.0 * np.pi / 2.0


class SolverError(RuntimeError):
    pass


def node_coords(N: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, N)


def neg_laplacian(n: int, h: float) -> sp.csr_matrix:
    """-Lap on an n x n interior grid with homogeneous Dirichlet data, row-major (y, x)."""
    d = sp.diags([-1.0, 2.0, -1.0], [-1, 0, 1], shape=(n, n))
    eye = sp.identity(n)
    return ((sp.kron(eye, d) + sp.kron(d, eye)) / (h * h)).tocsr()


def poisson_solve(f: np.ndarray, rtol: float = 1e-10, maxiter: int | None = None) -> np.ndarray:
    """Solve -Lap u = f with u = 0 on the boundary; ``f`` lives on the N x N node grid."""
    f = np.asarray(f, dtype=np.float64)
    N = f.shape[-1]
    if f.shape != (N, N) or N < 3:
        raise ValueError(f"source must be a square grid with N >= 3, got {f.shape}")
    n = N - 2
    h = 1.0 / (N - 1)
    A = neg_laplacian(n, h)
    b = f[1:-1, 1:-1].reshape(-1)
    u = np.zeros((N, N))
    if not np.any(b):
        return u
    x, info = cg(A, b, rtol=rtol, atol=0.0, maxiter=maxiter or 20 * n * n)
    if info != 0:
        res = np.linalg.norm(A @ x - b) / np.linalg.norm(b)
        raise SolverError(f"CG did not converge (info={info}, relative residual {res:.2e})")
    u[1:-1, 1:-1] = x.reshape(n, n)
    return u


def helmholtz_system(a: np.ndarray, b: float, omega: float = HELMHOLTZ_OMEGA):
    """Banded matrix (lower=upper=n) and load vector for -Lap u - omega^2 a u = 0, u = b on the edge."""
    a = np.asarray(a, dtype=np.float64)
    N = a.shape[-1]
    n = N - 2
    h = 1.0 / (N - 1)
    m = n * n
    ih2 = 1.0 / (h * h)
    ab = np.zeros((2 * n + 1, m))
    diag = 4.0 * ih2 - omega**2 * a[1:-1, 1:-1].reshape(-1)
    ab[n] = diag
    # x neighbours (offset +-1) are absent across row ends
    off1 = np.full(m, -ih2)
    off1[np.arange(1, n + 1) * n - 1] = 0.0
    ab[n - 1, 1:] = off1[:-1]  # upper diagonal: A[i, i+1] stored at column i+1
    ab[n + 1, :-1] = off1[:-1]  # lower diagonal: A[i+1, i] stored at column i
    ab[0, n:] = -ih2
    ab[2 * n, :-n] = -ih2
    load = np.zeros((n, n))
    load[0, :] += b * ih2
    load[-1, :] += b * ih2
    load[:, 0] += b * ih2
    load[:, -1] += b * ih2
    return ab, load.reshape(-1)


def banded_matvec(ab: np.ndarray, x: np.ndarray, lower: int, upper: int) -> np.ndarray:
    m = x.size
    y = np.zeros(m)
    for k in range(-lower, upper + 1):
        row = ab[upper - k]
        if k >= 0:
            y[: m - k] += row[k:] * x[k:]
        else:
            y[-k:] += row[: m + k] * x[: m + k]
    return y


def helmholtz_solve(a: np.ndarray, b: float, omega: float = HELMHOLTZ_OMEGA) -> np.ndarray:
    """Solve -Lap u - omega^2 a u = 0 with u = b on the boundary (node grid)."""
    a = np.asarray(a, dtype=np.float64)
    N = a.shape[-1]
    n = N - 2
    ab, load = helmholtz_system(a, b, omega)
    try:
        x = solve_banded((n, n), ab, load)
    except np.linalg.LinAlgError as e:
        raise SolverError(f"Helmholtz system is singular (resonance): {e}") from None
    if not np.all(np.isfinite(x)):
        raise SolverError("Helmholtz system is singular (resonance)")
    u = np.full((N, N), float(b))
    u[1:-1, 1:-1] = x.reshape(n, n)
    return u
