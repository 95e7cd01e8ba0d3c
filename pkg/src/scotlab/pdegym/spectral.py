"""Pseudo-spectral incompressible Navier-Stokes on the periodic unit square.

The state is kept in Fourier space (``rfft2`` layout, axis 0 = y, axis 1 = x)
and truncated to the 2/3-rule band so that the quadratic products are
computed without aliasing.  Dissipation comes only from a spectral
hyperviscosity that leaves the modes with ``|k| <= m_N`` untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

TWO_PI = 2.0 * np.pi


class CFLError(RuntimeError):
    pass


@dataclass
class SpectralNSConfig:
    N: int = 64
    T: float = 1.0
    n_snapshots: int = 11
    theta: float = 0.5
    alpha_q: float = 4.0
    k0: float | None = None  # defaults to m_N
    eps_scale: float = 0.05
    cfl: float = 0.5
    forcing: bool = False
    forcing_amplitude: float = 0.1
    tracer: bool = False
    tracer_kappa: float | None = None  # defaults to eps_N
    dt_floor: float = 1e-7
    max_dt: float = 1e-2

    def __post_init__(self):
        if self.N < 8 or self.N % 2:
            raise ValueError(f"spectral grids need even N >= 8, got {self.N}")
        if self.n_snapshots < 1:
            raise ValueError("need at least one snapshot")

    @property
    def m_N(self) -> int:
        return int(round(np.sqrt(self.N)))

    @property
    def eps_N(self) -> float:
        return self.eps_scale / self.N

    @property
    def kappa(self) -> float:
        return self.eps_N if self.tracer_kappa is None else self.tracer_kappa

    def times(self) -> np.ndarray:
        if self.n_snapshots == 1:
            return np.zeros(1)
        return np.linspace(0.0, self.T, self.n_snapshots)


@dataclass(frozen=True)
class Wavenumbers:
    ky: np.ndarray  # [N, 1] integer modes along y
    kx: np.ndarray  # [1, N//2+1] integer modes along x
    dky: np.ndarray  # derivative modes, Nyquist zeroed
    dkx: np.ndarray
    kabs: np.ndarray  # |k|
    dk2: np.ndarray  # |dk|^2 with the zero mode set to 1
    band: np.ndarray  # 2/3-rule mask


@lru_cache(maxsize=8)
def wavenumbers(N: int) -> Wavenumbers:
    ky = np.fft.fftfreq(N, 1.0 / N)[:, None]
    kx = np.fft.rfftfreq(N, 1.0 / N)[None, :]
    dky = ky.copy()
    dky[N // 2, 0] = 0.0
    dkx = kx.copy()
    dkx[0, N // 2] = 0.0
    kabs = np.sqrt(ky**2 + kx**2)
    dk2 = dkx**2 + dky**2
    dk2[dk2 == 0] = 1.0  # zero and pure-Nyquist modes carry no derivative
    kmax = int(np.ceil(N / 3)) - 1
    band = (np.abs(ky) <= kmax) & (np.abs(kx) <= kmax)
    return Wavenumbers(ky, kx, dky, dkx, kabs, dk2, band)


def hyperviscosity_multiplier(N: int, m_N: int, k0: float | None = None, alpha: float = 4.0) -> np.ndarray:
    """Q_k on the rfft lattice: 0 for |k| <= m_N, 1 - exp(-(|k|/k0)^alpha) above."""
    k0 = float(m_N if k0 is None else k0)
    kabs = wavenumbers(N).kabs
    q = 1.0 - np.exp(-((kabs / k0) ** alpha))
    q[kabs <= m_N] = 0.0
    return q


def _rfft(f):
    return np.fft.rfft2(f, axes=(-2, -1))


def _irfft(fh, N):
    return np.fft.irfft2(fh, s=(N, N), axes=(-2, -1))


def leray_project(uh: np.ndarray, N: int) -> np.ndarray:
    """Remove the gradient part of a velocity [2, ...] in Fourier space."""
    w = wavenumbers(N)
    div = w.dkx * uh[0] + w.dky * uh[1]
    return np.stack([uh[0] - w.dkx * div / w.dk2, uh[1] - w.dky * div / w.dk2])


def spectral_divergence(u: np.ndarray) -> float:
    """Max-norm of div u computed with spectral derivatives; u is [2, N, N]."""
    N = u.shape[-1]
    w = wavenumbers(N)
    uh = _rfft(u)
    div = 1j * TWO_PI * (w.dkx * uh[0] + w.dky * uh[1])
    return float(np.abs(_irfft(div, N)).max())


def vorticity_to_velocity(omega: np.ndarray) -> np.ndarray:
    """Velocity [2, N, N] whose curl is ``omega`` (mean and Nyquist modes dropped).

    Solves Lap psi = -omega and sets u = (d_y psi, -d_x psi).
    """
    omega = np.asarray(omega, dtype=np.float64)
    N = omega.shape[-1]
    if omega.shape != (N, N):
        raise ValueError(f"vorticity must be square [N, N], got {omega.shape}")
    w = wavenumbers(N)
    wh = _rfft(omega)
    psi = wh / (TWO_PI**2 * w.dk2)
    psi[0, 0] = 0.0
    ux = 1j * TWO_PI * w.dky * psi
    uy = -1j * TWO_PI * w.dkx * psi
    return _irfft(np.stack([ux, uy]), N)


def curl(u: np.ndarray) -> np.ndarray:
    N = u.shape[-1]
    w = wavenumbers(N)
    uh = _rfft(u)
    return _irfft(1j * TWO_PI * (w.dkx * uh[1] - w.dky * uh[0]), N)


def kinetic_energy(u: np.ndarray) -> float:
    return 0.5 * float(np.mean(np.sum(u * u, axis=0)))


def kolmogorov_forcing(N: int, amplitude: float = 0.1) -> np.ndarray:
    x = np.arange(N) / N
    X, Y = np.meshgrid(x, x)
    return amplitude * np.sin(TWO_PI * (X + Y))


class SpectralNS:
    """Time stepper for velocity (and optionally a passive tracer)."""

    def __init__(self, cfg: SpectralNSConfig):
        self.cfg = cfg
        N = cfg.N
        self.N = N
        self.w = wavenumbers(N)
        q = hyperviscosity_multiplier(N, cfg.m_N, cfg.k0, cfg.alpha_q)
        lap = (TWO_PI**2) * self.w.kabs**2
        self.damp = cfg.eps_N * lap * q  # u_t = ... - damp * u_hat
        self.tdamp = cfg.kappa * lap
        self.band = self.w.band.astype(np.float64)
        self.fh = None
        if cfg.forcing:
            f = kolmogorov_forcing(N, cfg.forcing_amplitude)
            fh = _rfft(np.stack([f, np.zeros_like(f)]))
            self.fh = leray_project(fh * self.band, N)

    def _grad_div(self, prod_h):
        w = self.w
        return 1j * TWO_PI * (w.dkx * prod_h[0] + w.dky * prod_h[1])

    def rhs(self, uh: np.ndarray, ch: np.ndarray | None):
        N = self.N
        u = _irfft(uh, N)
        ux, uy = u
        # d_j (u_i u_j)
        fx = self._grad_div(_rfft(np.stack([ux * ux, ux * uy])))
        fy = self._grad_div(_rfft(np.stack([uy * ux, uy * uy])))
        nl = np.stack([fx, fy]) * self.band
        du = -nl - self.damp * uh
        if self.fh is not None:
            du = du + self.fh
        du = leray_project(du, N)
        dc = None
        if ch is not None:
            c = _irfft(ch, N)
            dc = -self._grad_div(_rfft(np.stack([ux * c, uy * c]))) * self.band - self.tdamp * ch
        return du, dc

    def stable_dt(self, uh: np.ndarray) -> float:
        cfg = self.cfg
        u = _irfft(uh, self.N)
        vmax = float(np.abs(u[0]).max() + np.abs(u[1]).max())
        dt = cfg.max_dt
        if vmax > 0:
            dt = min(dt, cfg.cfl / (self.N * vmax))
        dmax = max(float(self.damp.max()), float(self.tdamp.max()) if self.cfg.tracer else 0.0)
        if dmax > 0:
            dt = min(dt, 2.5 / dmax * cfg.cfl)
        return dt

    def step(self, uh, ch, dt):
        """One SSP-RK3 step."""
        k1, c1 = self.rhs(uh, ch)
        u1 = uh + dt * k1
        h1 = ch + dt * c1 if ch is not None else None
        k2, c2 = self.rhs(u1, h1)
        u2 = 0.75 * uh + 0.25 * (u1 + dt * k2)
        h2 = 0.75 * ch + 0.25 * (h1 + dt * c2) if ch is not None else None
        k3, c3 = self.rhs(u2, h2)
        un = uh / 3.0 + 2.0 / 3.0 * (u2 + dt * k3)
        cn = ch / 3.0 + 2.0 / 3.0 * (h2 + dt * c3) if ch is not None else None
        return un, cn

    def prepare(self, u0: np.ndarray, c0: np.ndarray | None = None):
        u0 = np.asarray(u0, dtype=np.float64)
        if u0.shape != (2, self.N, self.N):
            raise ValueError(f"velocity must be [2, {self.N}, {self.N}], got {u0.shape}")
        uh = leray_project(_rfft(u0) * self.band, self.N)
        ch = None
        if self.cfg.tracer:
            if c0 is None:
                raise ValueError("tracer run needs an initial concentration")
            ch = _rfft(np.asarray(c0, dtype=np.float64)) * self.band
        return uh, ch

    def advance(self, uh, ch, t0: float, t1: float, max_steps: int | None = None):
        t = t0
        n = 0
        while t < t1 - 1e-14:
            dt = self.stable_dt(uh)
            if dt < self.cfg.dt_floor:
                vmax = float(np.abs(_irfft(uh, self.N)).max())
                raise CFLError(f"time step collapsed to {dt:.3e} at t={t:.4f} (max |u| = {vmax:.3e})")
            dt = min(dt, t1 - t)
            uh, ch = self.step(uh, ch, dt)
            t += dt
            n += 1
            if max_steps is not None and n >= max_steps:
                break
        return uh, ch, t


def ns_simulate(u0: np.ndarray, cfg: SpectralNSConfig, c0: np.ndarray | None = None) -> dict:
    """Evolve ``u0`` and return snapshots at ``cfg.times()``.

    Returns a dict with ``times``, ``u`` ([time, 2, N, N], float64) and, for
    tracer runs, ``c`` ([time, N, N]).  The initial datum is band-limited and
    projected before the first snapshot is taken.
    """
    solver = SpectralNS(cfg)
    uh, ch = solver.prepare(u0, c0)
    times = cfg.times()
    us, cs = [], []
    t = 0.0
    for ts in times:
        if ts > t:
            uh, ch, t = solver.advance(uh, ch, t, ts)
            t = ts
        us.append(_irfft(uh, cfg.N))
        if ch is not None:
            cs.append(_irfft(ch, cfg.N))
    out = {"times": times, "u": np.stack(us)}
    if cs:
        out["c"] = np.stack(cs)
    if not np.all(np.isfinite(out["u"])):
        raise CFLError("non-finite velocity in spectral NS run")
    return out


def ns_steps(u0: np.ndarray, cfg: SpectralNSConfig, n_steps: int, dt: float | None = None) -> np.ndarray:
    """Take ``n_steps`` RK3 steps of fixed size (diagnostic use)."""
    solver = SpectralNS(cfg)
    uh, ch = solver.prepare(u0)
    for _ in range(n_steps):
        h = solver.stable_dt(uh) if dt is None else dt
        uh, ch = solver.step(uh, ch, h)
    return _irfft(uh, cfg.N)


def taylor_green(N: int) -> np.ndarray:
    x = np.arange(N) / N
    X, Y = np.meshgrid(x, x)
    return np.stack([np.sin(TWO_PI * X) * np.cos(TWO_PI * Y), -np.cos(TWO_PI * X) * np.sin(TWO_PI * Y)])
