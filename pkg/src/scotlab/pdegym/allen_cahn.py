"""Allen-Cahn reaction-diffusion u_t = Lap u - eps^2 u (u^2 - 1), periodic, explicit RK2."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class BlowUpError(RuntimeError):
    pass


@dataclass
class AllenCahnConfig:
    N: int = 64
    T: float = 2e-4
    n_snapshots: int = 11
    eps: float = 220.0
    safety: float = 0.9
    bound: float = 10.0

    def times(self) -> np.ndarray:
        if self.n_snapshots == 1:
            return np.zeros(1)
        return np.linspace(0.0, self.T, self.n_snapshots)

    def max_dt(self) -> float:
        h = 1.0 / self.N
        return self.safety * min(h * h / 4.0, 1.0 / self.eps**2)


def _rhs(u, h, eps2):
    lap = (np.roll(u, 1, 0) + np.roll(u, -1, 0) + np.roll(u, 1, 1) + np.roll(u, -1, 1) - 4.0 * u) / (h * h)
    return lap - eps2 * u * (u * u - 1.0)


def allen_cahn_simulate(u0: np.ndarray, cfg: AllenCahnConfig) -> dict:
    u = np.array(u0, dtype=np.float64)
    N = u.shape[-1]
    h = 1.0 / N
    eps2 = cfg.eps**2
    dmax = cfg.max_dt()
    times = cfg.times()
    snaps = []
    t = 0.0
    for ts in times:
        n = int(np.ceil((ts - t) / dmax - 1e-9))
        if n > 0:
            dt = (ts - t) / n
            for _ in range(n):
                k1 = _rhs(u, h, eps2)
                k2 = _rhs(u + dt * k1, h, eps2)
                u = u + 0.5 * dt * (k1 + k2)
                if not np.all(np.abs(u) <= cfg.bound):
                    raise BlowUpError(f"|u| exceeded {cfg.bound} near t={t:.3e}")
            t = ts
        snaps.append(u.copy())
    return {"times": times, "u": np.stack(snaps)}
