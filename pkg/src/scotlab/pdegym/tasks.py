"""Task registry: which sampler feeds which solver, and how snapshots are stored."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import samplers as S
from .allen_cahn import AllenCahnConfig, allen_cahn_simulate
from .dataset import TrajectoryDataset
from .elliptic import helmholtz_solve, poisson_solve
from .euler import EulerConfig, euler_fv_simulate
from .spectral import SpectralNSConfig, kolmogorov_forcing, ns_simulate
from .wave import WaveConfig, wave_fd_simulate


@dataclass(frozen=True)
class TaskSpec:
    name: str
    pde: str
    ic: str
    channels: tuple[str, ...]
    boundary: str
    T: float
    steady: bool
    run: Callable  # (rng, N, times) -> [time, channel, N, N]


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for one trajectory, independent of generation order."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(index)]))


def _times_cfg(times):
    return float(times[-1]), len(times)


def _ns_runner(sampler):
    def run(rng, N, times):
        T, n = _times_cfg(times)
        out = ns_simulate(sampler(rng, N), SpectralNSConfig(N=N, T=T, n_snapshots=n))
        return out["u"]

    return run


def _tracer_run(rng, N, times):
    T, n = _times_cfg(times)
    out = ns_simulate(S.ns_pwc(rng, N), SpectralNSConfig(N=N, T=T, n_snapshots=n, tracer=True), c0=S.tracer_disc(N))
    return np.concatenate([out["u"], out["c"][:, None]], axis=1)


def _fns_run(rng, N, times):
    T, n = _times_cfg(times)
    cfg = SpectralNSConfig(N=N, T=T, n_snapshots=n, forcing=True)
    out = ns_simulate(S.ns_pwc(rng, N), cfg)
    f = np.broadcast_to(kolmogorov_forcing(N, cfg.forcing_amplitude), (n, 1, N, N))
    return np.concatenate([out["u"], f], axis=1)


def _euler_runner(sampler):
    def run(rng, N, times):
        T, n = _times_cfg(times)
        return euler_fv_simulate(sampler(rng, N), EulerConfig(N=N, T=T, n_snapshots=n))["prim"]

    return run


def _wave_run(rng, N, times):
    T, n = _times_cfg(times)
    u0 = S.wave_gauss_source(rng, N)
    c = S.wave_gauss_speed(rng, N)
    return wave_fd_simulate(u0, c, WaveConfig(N=N, T=T, n_snapshots=n))["state"]


def _ace_run(rng, N, times):
    T, n = _times_cfg(times)
    return allen_cahn_simulate(S.ace_modes(rng, N), AllenCahnConfig(N=N, T=T, n_snapshots=n))["u"][:, None]


def _poisson_run(rng, N, times):
    f = S.poisson_gauss_source(rng, N)
    u = poisson_solve(f)
    return np.stack([f, u])[:, None]


def _helmholtz_run(rng, N, times):
    a, b = S.helmholtz_coefficient(rng, N)
    u = helmholtz_solve(a, b)
    bf = np.full((N, N), b)
    return np.stack([np.stack([a, bf]), np.stack([u, bf])])


NS_CH = ("u_x", "u_y")
CE_CH = ("rho", "v_x", "v_y", "p")

TASKS: dict[str, TaskSpec] = {}


def _register(*specs: TaskSpec):
    for s in specs:
        TASKS[s.name] = s


_register(
    TaskSpec("ns-sines", "ns", "sines", NS_CH, "periodic", 1.0, False, _ns_runner(S.ns_sines)),
    TaskSpec("ns-gauss", "ns", "gauss", NS_CH, "periodic", 1.0, False, _ns_runner(S.ns_gauss)),
    TaskSpec("ns-pwc", "ns", "pwc", NS_CH, "periodic", 1.0, False, _ns_runner(S.ns_pwc)),
    TaskSpec("ns-bb", "ns", "bb", NS_CH, "periodic", 1.0, False, _ns_runner(S.ns_bb)),
    TaskSpec("ns-sl", "ns", "sl", NS_CH, "periodic", 1.0, False, _ns_runner(S.ns_sl)),
    TaskSpec("ns-svs", "ns", "svs", NS_CH, "periodic", 1.0, False, _ns_runner(S.ns_svs)),
    TaskSpec("ns-tracer-pwc", "ns-tracer", "pwc", NS_CH + ("c",), "periodic", 1.0, False, _tracer_run),
    TaskSpec("fns-kf", "fns", "pwc", NS_CH + ("f",), "periodic", 1.0, False, _fns_run),
    TaskSpec("ce-rp", "euler", "rp", CE_CH, "periodic", 1.0, False, _euler_runner(S.ce_rp)),
    TaskSpec("ce-crp", "euler", "crp", CE_CH, "periodic", 1.0, False, _euler_runner(S.ce_crp)),
    TaskSpec("ce-kh", "euler", "kh", CE_CH, "periodic", 1.0, False, _euler_runner(S.ce_kh)),
    TaskSpec("ce-gauss", "euler", "gauss", CE_CH, "periodic", 1.0, False, _euler_runner(S.ce_gauss)),
    TaskSpec("ce-rpui", "euler", "rpui", CE_CH, "periodic", 1.0, False, _euler_runner(S.ce_rpui)),
    TaskSpec("wave-gauss", "wave", "gauss", ("u", "u_t", "c"), "absorbing", 1.0, False, _wave_run),
    TaskSpec("ace", "allen-cahn", "modes", ("u",), "periodic", 2e-4, False, _ace_run),
    TaskSpec("poisson-gauss", "poisson", "gauss", ("u",), "dirichlet", 1.0, True, _poisson_run),
    TaskSpec("helmholtz", "helmholtz", "gauss", ("u", "b"), "dirichlet", 1.0, True, _helmholtz_run),
)


def valid_ics(pde: str) -> list[str]:
    return sorted(s.ic for s in TASKS.values() if s.pde == pde)


def valid_pdes() -> list[str]:
    return sorted({s.pde for s in TASKS.values()})


def resolve_task(pde: str | None = None, ic: str | None = None, task: str | None = None) -> TaskSpec:
    if task is not None:
        if task not in TASKS:
            raise KeyError(f"unknown task {task!r}; valid tasks: {sorted(TASKS)}")
        return TASKS[task]
    if pde not in valid_pdes():
        raise KeyError(f"unknown pde {pde!r}; valid pdes: {valid_pdes()}")
    for s in TASKS.values():
        if s.pde == pde and s.ic == ic:
            return s
    raise KeyError(f"unknown ic {ic!r} for pde {pde!r}; valid ic kinds: {valid_ics(pde)}")


def snapshot_times(spec: TaskSpec, n_snapshots: int = 11, T: float | None = None) -> np.ndarray:
    if spec.steady:
        return np.array([0.0, 1.0])
    T = spec.T if T is None else T
    return np.linspace(0.0, T, n_snapshots)


def generate_trajectory(spec: TaskSpec, seed: int, index: int, N: int, times) -> np.ndarray:
    return np.asarray(spec.run(trajectory_rng(seed, index), N, np.asarray(times)), dtype=np.float64)


def generate(task: str | TaskSpec, n: int, N: int = 64, seed: int = 0, n_snapshots: int = 11,
             T: float | None = None, start: int = 0, workers: int = 1) -> TrajectoryDataset:
    """Generate trajectories ``start .. start+n-1`` of a task.

    Each trajectory draws from its own (seed, index) stream, so the result
    does not depend on ``workers`` or on which indices are generated together.
    """
    spec = TASKS[task] if isinstance(task, str) else task
    times = snapshot_times(spec, n_snapshots, T)
    idx = list(range(start, start + n))

    def one(i):
        return generate_trajectory(spec, seed, i, N, times)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            trajs = list(ex.map(one, idx))
    else:
        trajs = [one(i) for i in idx]
    data = np.stack(trajs).astype(np.float32)
    prov = {"task": spec.name, "seed": int(seed), "start_index": int(start), "N": int(N),
            "n_snapshots": int(len(times)), "T": float(times[-1]), "steady": spec.steady}
    return TrajectoryDataset(spec.name, spec.pde, list(spec.channels), data, times, spec.boundary, prov)
