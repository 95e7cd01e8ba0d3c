"""Random initial-condition and coefficient samplers.

Every sampler takes a ``numpy.random.Generator`` and a grid size and returns
plain arrays.  Velocity-type samplers return ``[2, N, N]`` (u_x, u_y), Euler
samplers return primitive ``[4, N, N]`` (rho, v_x, v_y, p).  Arrays are
indexed ``[y, x]``.
"""

from __future__ import annotations

import numpy as np

from .spectral import SpectralNSConfig, leray_project, ns_simulate, vorticity_to_velocity, _irfft, _rfft
from .wave import grid_coords

TWO_PI = 2.0 * np.pi


def periodic_mesh(N: int):
    x = np.arange(N) / N
    return np.meshgrid(x, x)


def _periodic_gauss(X, Y, xc, yc, s):
    dx = np.abs(X - xc)
    dy = np.abs(Y - yc)
    dx = np.minimum(dx, 1.0 - dx)
    dy = np.minimum(dy, 1.0 - dy)
    return np.exp(-(dx * dx + dy * dy) / (2.0 * s * s))


def project_velocity(u: np.ndarray) -> np.ndarray:
    N = u.shape[-1]
    return _irfft(leray_project(_rfft(u), N), N)


# ---------------------------------------------------------------------------
# incompressible flow


def ns_sines(rng: np.random.Generator, N: int, p: int = 10) -> np.ndarray:
    X, Y = periodic_mesh(N)
    alpha = rng.uniform(-1.0, 1.0, (p, p))
    beta = rng.uniform(0.0, TWO_PI, (p, p))
    gamma = rng.uniform(0.0, TWO_PI, (p, p))
    ux = np.zeros((N, N))
    uy = np.zeros((N, N))
    for i in range(1, p + 1):
        for j in range(1, p + 1):
            a = alpha[i - 1, j - 1] / np.sqrt(TWO_PI * (i + j))
            bx = TWO_PI * i * X + beta[i - 1, j - 1]
            gy = TWO_PI * j * Y + gamma[i - 1, j - 1]
            ux += a * np.sin(bx) * np.sin(gy)
            uy += a * np.cos(bx) * np.cos(gy)
    return project_velocity(np.stack([ux, uy]))


def gaussian_vorticity(rng: np.random.Generator, N: int, p: int = 100) -> np.ndarray:
    X, Y = periodic_mesh(N)
    alpha = rng.uniform(-1.0, 1.0, p)
    sigma = rng.uniform(0.01, 0.1, p)
    xc = rng.uniform(0.0, 1.0, p)
    yc = rng.uniform(0.0, 1.0, p)
    w = np.zeros((N, N))
    for a, s, x0, y0 in zip(alpha, sigma, xc, yc):
        w += a / s * _periodic_gauss(X, Y, x0, y0, s)
    return w


def ns_gauss(rng: np.random.Generator, N: int, p: int = 100) -> np.ndarray:
    return vorticity_to_velocity(gaussian_vorticity(rng, N, p))


def pwc_vorticity(rng: np.random.Generator, N: int, p: int = 10) -> np.ndarray:
    c = rng.uniform(-1.0, 1.0, (p, p))
    idx = np.minimum((np.arange(N) * p) // N, p - 1)
    return c[np.ix_(idx, idx)].T  # c[i, j] on x-block i, y-block j


def ns_pwc(rng: np.random.Generator, N: int, p: int = 10) -> np.ndarray:
    return vorticity_to_velocity(pwc_vorticity(rng, N, p))


def brownian_bridge_field(rng: np.random.Generator, N: int, kmax: int | None = None) -> np.ndarray:
    """Random field with |k|^(-3/2) spectral decay built from sin/cos products."""
    kmax = kmax or (N // 3)
    X, Y = periodic_mesh(N)
    w = np.zeros((N, N))
    sc = (np.sin, np.cos)
    for kx in range(0, kmax + 1):
        for ky in range(0, kmax + 1):
            if kx == 0 and ky == 0:
                continue
            amp = (kx * kx + ky * ky) ** -0.75
            a = rng.uniform(-1.0, 1.0, (2, 2))
            for m in range(2):
                for n in range(2):
                    w += amp * a[m, n] * sc[m](TWO_PI * kx * X) * sc[n](TWO_PI * ky * Y)
    return w


def ns_bb(rng: np.random.Generator, N: int, spinup: float = 0.5) -> np.ndarray:
    u = np.stack([brownian_bridge_field(rng, N), brownian_bridge_field(rng, N)])
    u = project_velocity(u)
    if spinup > 0:
        u = ns_simulate(u, SpectralNSConfig(N=N, T=spinup, n_snapshots=2))["u"][-1]
    return u


def ns_sl(rng: np.random.Generator, N: int, delta: float = 0.025) -> np.ndarray:
    X, Y = periodic_mesh(N)
    p = int(rng.integers(7, 13))
    alpha = rng.uniform(0.0, 1.0, p)
    beta = rng.uniform(0.0, TWO_PI, p)
    rho = rng.uniform(0.08, 0.12)
    xi = rng.uniform(-0.0625, 0.0625)
    k = np.arange(1, p + 1)
    sig = xi + delta * np.sum(alpha[:, None, None] * np.sin(TWO_PI * k[:, None, None] * X[None] - beta[:, None, None]), 0)
    lower = np.tanh(TWO_PI * (Y - 0.25) / rho)
    upper = np.tanh(TWO_PI * (0.75 - Y) / rho)
    ux = np.where(Y + sig <= 0.5, lower, upper)
    return project_velocity(np.stack([ux, np.zeros_like(ux)]))


def _svs_kernel(r: np.ndarray) -> np.ndarray:
    def cube(z):
        return np.maximum(z, 0.0) ** 3

    return 80.0 / (7.0 * np.pi) * (cube(r + 1) - 4 * cube(r + 0.5) + 6 * cube(r) - 4 * cube(r - 0.5) + cube(r - 1))


def ns_svs(rng: np.random.Generator, N: int, p: int = 10, rho: float = 5.0 / 128.0,
           n_curve: int | None = None) -> np.ndarray:
    alpha = rng.uniform(0.0, 0.003125, p)
    beta = rng.uniform(0.0, 1.0, p)
    n_curve = n_curve or 16 * N
    s = (np.arange(n_curve) + 0.5) / n_curve
    gy = 0.5 + 0.2 * np.sin(TWO_PI * s) + np.sum(alpha[:, None] * np.sin(TWO_PI * (s[None] + beta[:, None])), 0)
    dgy = 0.2 * TWO_PI * np.cos(TWO_PI * s) + np.sum(alpha[:, None] * TWO_PI * np.cos(TWO_PI * (s[None] + beta[:, None])), 0)
    ds = np.sqrt(1.0 + dgy**2) / n_curve
    x = np.arange(N) / N
    w = np.zeros((N, N))
    for xs, ys, d in zip(s, gy, ds):
        dx = np.abs(x - xs)
        dx = np.minimum(dx, 1.0 - dx)
        dy = np.abs(x - ys % 1.0)
        dy = np.minimum(dy, 1.0 - dy)
        if dx.min() > rho and dy.min() > rho:
            continue
        r = np.sqrt(dx[None, :] ** 2 + dy[:, None] ** 2) / rho
        w += d * _svs_kernel(r) / rho**2
    w -= w.mean()
    return vorticity_to_velocity(w)


def tracer_disc(N: int) -> np.ndarray:
    X, Y = periodic_mesh(N)
    return (((X - 0.5) ** 2 + (Y - 0.5) ** 2) < 0.25**2).astype(np.float64)


# ---------------------------------------------------------------------------
# compressible flow (primitive [rho, vx, vy, p])


def _draw_states(rng, shape, rho=(0.1, 1.0), vel=(-1.0, 1.0), pres=(0.1, 1.0)):
    r = rng.uniform(*rho, shape)
    vx = rng.uniform(*vel, shape)
    vy = rng.uniform(*vel, shape)
    p = rng.uniform(*pres, shape)
    return np.stack([r, vx, vy, p])


def ce_rp(rng: np.random.Generator, N: int, p: int = 2) -> np.ndarray:
    states = _draw_states(rng, (p, p))  # [4, i (x-block), j (y-block)]
    idx = np.minimum((np.arange(N) * p) // N, p - 1)
    return states[:, idx[None, :], idx[:, None]]


def _curved_partition(X, Y, rng, p: int, amp: float, freq_shift: int):
    ax = rng.uniform(-amp, amp, (p, p))
    ay = rng.uniform(-amp, amp, (p, p))
    bx = rng.uniform(0.0, 1.0, (p, p))
    by = rng.uniform(0.0, 1.0, (p, p))
    sx = np.zeros_like(X)
    sy = np.zeros_like(X)
    for i in range(1, p + 1):
        for j in range(1, p + 1):
            arg = TWO_PI * (i + freq_shift) * X + (j + freq_shift) * Y
            sx += ax[i - 1, j - 1] * np.sin(arg + bx[i - 1, j - 1])
            sy += ay[i - 1, j - 1] * np.sin(arg + by[i - 1, j - 1])

    def frac(z):
        return z - np.floor(np.abs(z)) * np.sign(z)

    fx = frac(X + sx + 1.0)
    fy = frac(Y + sy + 1.0)
    ix = np.clip(np.floor(fx * (p + 1)).astype(int), 0, p)
    iy = np.clip(np.floor(fy * (p + 1)).astype(int), 0, p)
    return ix, iy


def ce_crp(rng: np.random.Generator, N: int, p: int = 4) -> np.ndarray:
    X, Y = periodic_mesh(N)
    ix, iy = _curved_partition(X, Y, rng, p, 0.1, 0)
    states = _draw_states(rng, (p + 1, p + 1))
    return states[:, ix, iy]


def ce_rpui(rng: np.random.Generator, N: int, p: int = 2) -> np.ndarray:
    X, Y = periodic_mesh(N)
    ix, iy = _curved_partition(X, Y, rng, p, 0.01, 2 * p * p)
    states = _draw_states(rng, (p + 1, p + 1), rho=(1.0, 3.0), vel=(-10.0, 10.0), pres=(5.0, 7.0))
    return states[:, ix, iy]


def ce_kh(rng: np.random.Generator, N: int, p: int = 10, eps: float = 0.05) -> np.ndarray:
    X, Y = periodic_mesh(N)
    x = X[0]
    sig = []
    for _ in range(2):
        a = rng.uniform(0.0, 1.0, p)
        b = rng.uniform(0.0, 1.0, p)
        j = np.arange(1, p + 1)
        sig.append(eps / a.sum() * np.sum(a[:, None] * np.cos(TWO_PI * j[:, None] * (x[None] + b[:, None])), 0))
    outer = (Y < 0.25 + sig[0][None, :]) | (Y > 0.75 + sig[1][None, :])
    rho = np.where(outer, 1.0, 2.0)
    vx = np.where(outer, 0.5, -0.5)
    return np.stack([rho, vx, np.zeros_like(rho), np.full_like(rho, 2.5)])


def ce_gauss(rng: np.random.Generator, N: int, p: int = 100) -> np.ndarray:
    u = vorticity_to_velocity(gaussian_vorticity(rng, N, p))
    return np.stack([np.full((N, N), 0.1), u[0], u[1], np.full((N, N), 2.5)])


# ---------------------------------------------------------------------------
# wave, Allen-Cahn, elliptic


def wave_gauss_source(rng: np.random.Generator, N: int, boundary: str = "absorbing") -> np.ndarray:
    x = grid_coords(N, boundary)
    X, Y = np.meshgrid(x, x)
    n = int(rng.integers(2, 7))
    centers, sds = [], []
    for _ in range(1000):  # rejection sampling; gives up quietly on crowded draws
        if len(centers) == n:
            break
        c = rng.uniform(1 / 6, 5 / 6, 2)
        s = rng.uniform(0.039, 0.156)
        if all(np.hypot(*(c - c2)) >= 2 * max(s, s2) for c2, s2 in zip(centers, sds)):
            centers.append(c)
            sds.append(s)
    u = np.zeros((N, N))
    for (xc, yc), s in zip(centers, sds):
        u += np.exp(-((xc - X) ** 2 + (yc - Y) ** 2) / (2 * s * s))
    return u


def wave_gauss_speed(rng: np.random.Generator, N: int, boundary: str = "absorbing", speed_unit: float = 1000.0) -> np.ndarray:
    x = grid_coords(N, boundary)
    X, Y = np.meshgrid(x, x)
    c = np.full((N, N), rng.uniform(1500.0, 2500.0))
    for (px, py) in ((0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)):
        dx, dy = rng.uniform(-0.3125, 0.3125, 2)
        v = rng.uniform(1000.0, 2500.0)
        s = rng.uniform(1 / 12, 1 / 6)
        c += v * np.exp(-((px + dx - X) ** 2 + (py + dy - Y) ** 2) / (2 * s * s))
    return c / speed_unit


def ace_modes(rng: np.random.Generator, N: int) -> np.ndarray:
    X, Y = periodic_mesh(N)
    K = int(rng.integers(16, 33))
    r = rng.uniform(0.7, 1.0)
    a = rng.uniform(-1.0, 1.0, (K, K))
    i = np.arange(1, K + 1)
    sx = np.sin(np.pi * i[:, None, None] * X[None])  # [K, N, N]
    sy = np.sin(np.pi * i[:, None, None] * Y[None])
    coef = a * (i[:, None] ** 2 + i[None, :] ** 2) ** (-r)
    return np.einsum("ij,iyx,jyx->yx", coef, sx, sy) / K**2


def poisson_gauss_source(rng: np.random.Generator, N: int) -> np.ndarray:
    x = np.linspace(0.0, 1.0, N)
    X, Y = np.meshgrid(x, x)
    n = int(rng.geometric(0.4))
    f = np.zeros((N, N))
    for _ in range(n):
        mx, my = rng.uniform(0.0, 1.0, 2)
        s = rng.uniform(0.025, 0.1)
        f += np.exp(-((X - mx) ** 2 + (Y - my) ** 2) / (2 * s * s))
    return f


def helmholtz_coefficient(rng: np.random.Generator, N: int) -> tuple[np.ndarray, float]:
    x = np.linspace(0.0, 1.0, N)
    X, Y = np.meshgrid(x, x)
    n = int(rng.integers(2, 8))
    abar = np.zeros((N, N))
    for _ in range(n):
        A = rng.uniform(0.5, 10.0)
        s = rng.uniform(0.05, 0.1)
        xi, yi = rng.uniform(0.2, 0.8, 2)
        abar -= A * np.exp(-((xi - X) ** 2 + (yi - Y) ** 2) / (2 * s * s))
    a = (abar - abar.min()) / (abar.max() - abar.min())
    b = float(rng.uniform(0.25, 0.5))
    return a, b
