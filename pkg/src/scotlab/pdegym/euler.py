"""First-order finite-volume solver for the 2-D compressible Euler equations.

Periodic unit square, cell-centred N x N grid, Rusanov (local Lax-Friedrichs)
interface fluxes in both directions applied in one unsplit forward-Euler
update.  The update is a flux difference, so cell sums of the conserved
variables telescope to round-off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GAMMA = 1.4


class EulerStateError(RuntimeError):
    pass


@dataclass
class EulerConfig:
    N: int = 64
    T: float = 1.0
    n_snapshots: int = 11
    cfl: float = 0.4
    gamma: float = GAMMA
    max_steps: int = 1_000_000

    def times(self) -> np.ndarray:
        if self.n_snapshots == 1:
            return np.zeros(1)
        return np.linspace(0.0, self.T, self.n_snapshots)


def primitive_to_conserved(rho, vx, vy, p, gamma: float = GAMMA) -> np.ndarray:
    E = p / (gamma - 1.0) + 0.5 * rho * (vx * vx + vy * vy)
    return np.stack([rho, rho * vx, rho * vy, E])


def conserved_to_primitive(U: np.ndarray, gamma: float = GAMMA) -> np.ndarray:
    rho, mx, my, E = U
    vx = mx / rho
    vy = my / rho
    p = (gamma - 1.0) * (E - 0.5 * rho * (vx * vx + vy * vy))
    return np.stack([rho, vx, vy, p])


def _check_state(rho, p, where: str) -> None:
    bad = (rho <= 0) | (p <= 0) | ~np.isfinite(rho) | ~np.isfinite(p)
    if bad.any():
        j, i = np.argwhere(bad)[0]
        raise EulerStateError(
            f"non-physical state {where} at cell (y={j}, x={i}): rho={rho[j, i]:.4g}, p={p[j, i]:.4g}"
        )


def _normal_flux(rho, un, ut, p, E):
    """Flux along the normal direction for state ordered [rho, m_n, m_t, E]."""
    mn = rho * un
    return np.stack([mn, mn * un + p, mn * ut, (E + p) * un])


def _rusanov(U, rho, un, ut, p, c, axis: int):
    """Interface flux between each cell and its +1 neighbour along ``axis``.

    ``U`` is ordered [rho, m_n, m_t, E] for this direction.
    """
    F = _normal_flux(rho, un, ut, p, U[3])
    s = np.abs(un) + c
    smax = np.maximum(s, np.roll(s, -1, axis))
    UR = np.roll(U, -1, axis + 1)
    FR = np.roll(F, -1, axis + 1)
    return 0.5 * (F + FR) - 0.5 * smax * (UR - U)


def rusanov_step(U: np.ndarray, dt: float, dx: float, gamma: float = GAMMA) -> np.ndarray:
    rho, mx, my, E = U
    vx = mx / rho
    vy = my / rho
    p = (gamma - 1.0) * (E - 0.5 * rho * (vx * vx + vy * vy))
    c = np.sqrt(gamma * p / rho)
    # x fluxes (axis 1), state order [rho, mx, my, E]
    Fx = _rusanov(U, rho, vx, vy, p, c, axis=1)
    # y fluxes (axis 0), state order [rho, my, mx, E]
    Uy = U[[0, 2, 1, 3]]
    Fy = _rusanov(Uy, rho, vy, vx, p, c, axis=0)[[0, 2, 1, 3]]
    dFx = Fx - np.roll(Fx, 1, axis=2)
    dFy = Fy - np.roll(Fy, 1, axis=1)
    return U - (dt / dx) * (dFx + dFy)


def stable_dt(U: np.ndarray, dx: float, cfl: float, gamma: float = GAMMA) -> float:
    rho, vx, vy, p = conserved_to_primitive(U, gamma)
    c = np.sqrt(gamma * p / rho)
    sx = float(np.max(np.abs(vx) + c))
    sy = float(np.max(np.abs(vy) + c))
    return cfl * dx / (sx + sy)


def euler_fv_simulate(prim0: np.ndarray, cfg: EulerConfig) -> dict:
    """Evolve primitive initial data [rho, vx, vy, p] and return primitive snapshots.

    Returns ``times`` and ``prim`` ([time, 4, N, N], float64).
    """
    prim0 = np.asarray(prim0, dtype=np.float64)
    N = prim0.shape[-1]
    if prim0.shape != (4, N, N):
        raise ValueError(f"Euler state must be [4, N, N], got {prim0.shape}")
    _check_state(prim0[0], prim0[3], "in the initial data")
    g = cfg.gamma
    U = primitive_to_conserved(*prim0, gamma=g)
    dx = 1.0 / N
    times = cfg.times()
    snaps = []
    t = 0.0
    steps = 0
    for ts in times:
        while t < ts - 1e-14:
            dt = min(stable_dt(U, dx, cfg.cfl, g), ts - t)
            U = rusanov_step(U, dt, dx, g)
            t += dt
            steps += 1
            prim = conserved_to_primitive(U, g)
            _check_state(prim[0], prim[3], f"at t={t:.5f}")
            if steps > cfg.max_steps:
                raise EulerStateError(f"exceeded {cfg.max_steps} steps before t={ts}")
        t = max(t, ts)
        snaps.append(conserved_to_primitive(U, g))
    return {"times": times, "prim": np.stack(snaps)}


def conserved_totals(prim: np.ndarray, gamma: float = GAMMA) -> np.ndarray:
    return primitive_to_conserved(*prim, gamma=gamma).sum(axis=(1, 2))
