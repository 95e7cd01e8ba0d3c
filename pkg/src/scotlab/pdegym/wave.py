"""Acoustic wave equation u_tt = c^2 Lap u as the first-order system (u, v = u_t).

Second-order central differences in space, velocity-Verlet (staggered
leapfrog) in time.  Boundaries are either periodic or first-order Mur
absorbing conditions applied on the outermost ring of grid points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class WaveCFLError(ValueError):
    pass


@dataclass
class WaveConfig:
    N: int = 64
    T: float = 1.0
    n_snapshots: int = 11
    boundary: str = "absorbing"  # or "periodic"
    cfl: float = 0.5  # fraction of the stability limit h / (sqrt(2) c_max)
    dt: float | None = None

    def __post_init__(self):
        if self.boundary not in ("absorbing", "periodic"):
            raise ValueError(f"unknown wave boundary {self.boundary!r}")

    def times(self) -> np.ndarray:
        if self.n_snapshots == 1:
            return np.zeros(1)
        return np.linspace(0.0, self.T, self.n_snapshots)


def grid_coords(N: int, boundary: str) -> np.ndarray:
    """1-D coordinates: i/N for periodic grids, cell centres otherwise."""
    if boundary == "periodic":
        return np.arange(N) / N
    return (np.arange(N) + 0.5) / N


def _lap_periodic(u, h):
    return (np.roll(u, 1, 0) + np.roll(u, -1, 0) + np.roll(u, 1, 1) + np.roll(u, -1, 1) - 4.0 * u) / (h * h)


def _lap_interior(u, h):
    out = np.zeros_like(u)
    out[1:-1, 1:-1] = (u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2] - 4.0 * u[1:-1, 1:-1]) / (h * h)
    return out


def _mur(u_new, u_old, c, dt, h):
    """First-order Mur update of the four edges (corners take the average)."""
    def coef(ci):
        return (ci * dt - h) / (ci * dt + h)

    left = u_old[:, 1] + coef(c[:, 0]) * (u_new[:, 1] - u_old[:, 0])
    right = u_old[:, -2] + coef(c[:, -1]) * (u_new[:, -2] - u_old[:, -1])
    bottom = u_old[1, :] + coef(c[0, :]) * (u_new[1, :] - u_old[0, :])
    top = u_old[-2, :] + coef(c[-1, :]) * (u_new[-2, :] - u_old[-1, :])
    u_new[:, 0] = left
    u_new[:, -1] = right
    u_new[0, 1:-1] = bottom[1:-1]
    u_new[-1, 1:-1] = top[1:-1]
    for (j, i) in ((0, 0), (0, -1), (-1, 0), (-1, -1)):
        jj = 1 if j == 0 else -2
        ii = 1 if i == 0 else -2
        u_new[j, i] = 0.5 * (u_new[jj, i] + u_new[j, ii])
    return u_new


def wave_fd_simulate(u0: np.ndarray, c: np.ndarray, cfg: WaveConfig, v0: np.ndarray | None = None) -> dict:
    """Return ``times`` and ``state`` ([time, 3, N, N]: u, u_t, c) for the wave equation."""
    u = np.array(u0, dtype=np.float64)
    N = u.shape[-1]
    c = np.broadcast_to(np.asarray(c, dtype=np.float64), u.shape).copy()
    if np.any(c <= 0):
        raise ValueError("propagation speed must be positive everywhere")
    v = np.zeros_like(u) if v0 is None else np.array(v0, dtype=np.float64)
    h = 1.0 / N
    limit = h / (np.sqrt(2.0) * c.max())
    if cfg.dt is not None:
        if cfg.dt > limit:
            raise WaveCFLError(f"dt={cfg.dt:.3e} exceeds the CFL limit {limit:.3e}")
        dt0 = cfg.dt
    else:
        dt0 = cfg.cfl * limit
    periodic = cfg.boundary == "periodic"
    lap = _lap_periodic if periodic else _lap_interior
    c2 = c * c
    times = cfg.times()
    snaps = []
    t = 0.0
    acc = c2 * lap(u, h)
    for ts in times:
        n = int(np.ceil((ts - t) / dt0 - 1e-9))
        if n > 0:
            dt = (ts - t) / n
            for _ in range(n):
                vh = v + 0.5 * dt * acc
                u_old = u
                u = u + dt * vh
                if not periodic:
                    u = _mur(u, u_old, c, dt, h)
                acc = c2 * lap(u, h)
                v = vh + 0.5 * dt * acc
                if not periodic:
                    edge = np.ones_like(u, dtype=bool)
                    edge[1:-1, 1:-1] = False
                    v[edge] = ((u - u_old) / dt)[edge]
            t = ts
        snaps.append(np.stack([u, v, c]))
    out = np.stack(snaps)
    if not np.all(np.isfinite(out)):
        raise WaveCFLError("wave solution became non-finite")
    return {"times": times, "state": out}


def wave_energy(u: np.ndarray, v: np.ndarray, c: np.ndarray) -> float:
    """Discrete energy 0.5 * sum(v^2 / c^2 + |grad u|^2) * h^2 over interior differences."""
    N = u.shape[-1]
    h = 1.0 / N
    gx = np.diff(u, axis=1) / h
    gy = np.diff(u, axis=0) / h
    return 0.5 * h * h * float(np.sum(v * v / (c * c)) + np.sum(gx * gx) + np.sum(gy * gy))
