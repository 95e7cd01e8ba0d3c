"""Error metrics, rollout evaluation, sample-efficiency gains and scaling fits."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.ndimage import map_coordinates

from .model import homogeneous_schedule, rollout, rollout_states
from .pdegym.dataset import TrajectoryDataset
from .training import TaskData, to_layout

# functions of interest per pde family, as groups of layout channels; a group
# with several channels is a vector evaluated jointly
FUNCTIONS_OF_INTEREST: dict[str, list[list[int]]] = {
    "ns": [[1, 2]],
    "fns": [[1, 2]],
    "ns-tracer": [[1, 2], [4]],
    "euler": [[0], [1, 2], [3]],
    "wave": [[0]],
    "allen-cahn": [[0]],
    "poisson": [[0]],
    "helmholtz": [[0]],
}


class EvaluationError(ValueError):
    pass


@dataclass
class ErrorRecord:
    task: str
    model_id: str
    n_train_samples: int
    errors: list[float]  # per test sample, nan where flagged
    channels: list[list[int]]
    flagged: list[int] = field(default_factory=list)
    schedule: str = "direct"
    noise_nsr: float = 0.0
    resample_to: int | None = None
    t_target: float | None = None

    @property
    def n_test(self) -> int:
        return len(self.errors)

    def valid_errors(self) -> np.ndarray:
        e = np.asarray(self.errors, dtype=np.float64)
        return e[~np.isnan(e)]

    @property
    def median(self) -> float:
        v = self.valid_errors()
        return float(np.median(v)) if v.size else math.nan

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("errors")
        d.update(median=self.median, n_test=self.n_test)
        return d


@dataclass
class ScalingCurve:
    n_samples: list[int]
    errors: list[float]
    model_id: str = ""
    task: str = ""

    def __post_init__(self):
        if len(self.n_samples) != len(self.errors):
            raise ValueError("n_samples and errors differ in length")
        if any(b <= a for a, b in zip(self.n_samples, self.n_samples[1:])):
            raise ValueError(f"n_samples must be strictly increasing, got {self.n_samples}")

    def at(self, s: int) -> float:
        if s not in self.n_samples:
            raise KeyError(f"curve {self.model_id!r} has no point at {s} samples (has {self.n_samples})")
        return float(self.errors[self.n_samples.index(s)])


@dataclass
class RolloutSchedule:
    """``direct``, ``homogeneous`` with ``steps`` equal sub-steps, or ``explicit`` absolute times."""

    kind: str = "direct"
    steps: int = 1
    times: list[float] | None = None

    @classmethod
    def parse(cls, text: str) -> "RolloutSchedule":
        kind, _, arg = text.partition(":")
        if kind == "direct":
            return cls("direct")
        if kind == "homogeneous":
            return cls("homogeneous", int(arg or 1))
        if kind == "explicit":
            return cls("explicit", times=[float(v) for v in arg.split(",") if v])
        raise ValueError(f"unknown rollout schedule {text!r}; use direct, homogeneous:K or explicit:t1,t2,...")

    def absolute(self, t_star: float) -> list[float]:
        if self.kind == "direct":
            return [t_star]
        if self.kind == "homogeneous":
            return homogeneous_schedule(t_star, self.steps)
        ts = [float(v) for v in (self.times or [])]
        if not ts or abs(ts[-1] - t_star) > 1e-12 * max(1.0, abs(t_star)):
            raise EvaluationError(f"explicit schedule {ts} must end at the target time {t_star}")
        return ts[:-1] + [t_star]

    def __str__(self) -> str:
        if self.kind == "homogeneous":
            return f"homogeneous:{self.steps}"
        if self.kind == "explicit":
            return "explicit:" + ",".join(repr(t) for t in self.times or [])
        return "direct"


# ---------------------------------------------------------------------------
# per-sample errors


def sample_errors(preds: np.ndarray, targets: np.ndarray, groups: Sequence[Sequence[int]]):
    """Per-sample mean over functions of interest of ||pred - target||_1 / ||target||_1.

    Returns ``(errors, flagged)`` where samples with a zero-norm target in any
    function carry ``nan`` and are listed in ``flagged``.
    """
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise EvaluationError(f"prediction {preds.shape} and target {targets.shape} differ")
    if not groups or any(len(g) == 0 for g in groups):
        raise EvaluationError("channel set must be nonempty")
    n = preds.shape[0]
    per = np.empty((n, len(groups)))
    for j, g in enumerate(groups):
        g = list(g)
        num = np.abs(preds[:, g] - targets[:, g]).reshape(n, -1).sum(axis=1)
        den = np.abs(targets[:, g]).reshape(n, -1).sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            per[:, j] = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)
    err = per.mean(axis=1)
    flagged = [int(i) for i in np.flatnonzero(np.isnan(err))]
    return err, flagged


def median_rel_l1(preds, targets, groups) -> tuple[np.ndarray, float, list[int]]:
    err, flagged = sample_errors(preds, targets, groups)
    valid = err[~np.isnan(err)]
    return err, (float(np.median(valid)) if valid.size else math.nan), flagged


# ---------------------------------------------------------------------------
# resampling and noise


def resample(fields: np.ndarray, n_out: int, periodic: bool = True) -> np.ndarray:
    """Bilinear resampling of the last two axes to ``n_out`` x ``n_out``.

    Periodic grids use cell coordinates i/N with wrap-around; bounded grids
    use node coordinates i/(N-1) so the corners are kept.
    """
    a = np.asarray(fields)
    n_in = a.shape[-1]
    if n_in == n_out:
        return a.copy()
    if periodic:
        c = np.arange(n_out) * (n_in / n_out)
        mode = "grid-wrap"
    else:
        c = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        mode = "nearest"
    yy, xx = np.meshgrid(c, c, indexing="ij")
    flat = a.reshape(-1, n_in, n_in)
    out = np.stack([map_coordinates(f.astype(np.float64), [yy, xx], order=1, mode=mode) for f in flat])
    return out.reshape(a.shape[:-2] + (n_out, n_out)).astype(a.dtype)


def add_noise(inputs: np.ndarray, nsr: float, seed: int, start: int = 0) -> np.ndarray:
    """Gaussian noise with std = nsr * per-channel RMS of each clean input; stream per sample index."""
    if nsr == 0:
        return inputs
    out = np.array(inputs, copy=True)
    for i in range(out.shape[0]):
        rng = np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), 0xA015E000 + start + i]))
        rms = np.sqrt(np.mean(out[i].astype(np.float64) ** 2, axis=(-2, -1), keepdims=True))
        out[i] = out[i] + (nsr * rms * rng.standard_normal(out[i].shape)).astype(out.dtype)
    return out


# ---------------------------------------------------------------------------
# model evaluation


def _as_task(data) -> TaskData:
    return to_layout(data) if isinstance(data, TrajectoryDataset) else data


def _time_index(times: np.ndarray, t: float) -> int:
    hit = np.flatnonzero(np.abs(times - t) <= 1e-9 * max(1.0, abs(t)))
    if hit.size == 0:
        raise EvaluationError(f"time {t} is not a dataset snapshot time {times.tolist()}; no interpolation of ground truth")
    return int(hit[0])


def _pde_of(task: TaskData, pde: str | None) -> str:
    if pde:
        return pde
    from .pdegym.tasks import TASKS

    if task.name in TASKS:
        return TASKS[task.name].pde
    raise EvaluationError(f"cannot infer the pde family of {task.name!r}; pass pde=")


def _predict(model, inputs: np.ndarray, schedule_norm: list[float], batch_size: int, workers: int,
             all_states: bool = False):
    J = model.config.J
    starts = list(range(0, inputs.shape[0], batch_size))

    def run(s):
        x = inputs[s:s + batch_size].astype(model.dtype, copy=False)
        if all_states:
            return rollout_states(model, x, schedule_norm)
        return rollout(model, x, schedule_norm)

    if inputs.shape[-1] != J:
        raise EvaluationError(f"inputs on a {inputs.shape[-1]} grid but model expects {J}")
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    if all_states:
        return [np.concatenate([p[k] for p in parts]) for k in range(len(schedule_norm))]
    return np.concatenate(parts)


def evaluate_model(model, data, schedule: RolloutSchedule | str = "direct", t_target: float | None = None,
                   resample_to: int | None = None, noise_nsr: float = 0.0, seed: int = 0, pde: str | None = None,
                   model_id: str = "", n_train_samples: int = 0, batch_size: int = 16, workers: int = 1,
                   time_scale: float | None = None, periodic: bool | None = None) -> ErrorRecord:
    """Roll the model from the first snapshot to ``t_target`` (default: last) and score against the dataset.

    When the dataset grid differs from the model grid, or ``resample_to`` is
    given, inputs are resampled to the model grid and outputs back.
    """
    if isinstance(schedule, str):
        schedule = RolloutSchedule.parse(schedule)
    periodic = (data.boundary == "periodic") if periodic is None and isinstance(data, TrajectoryDataset) else periodic
    task = _as_task(data)
    periodic = True if periodic is None else periodic
    pde = _pde_of(task, pde)
    times = task.times
    t_star = float(times[-1]) if t_target is None else float(t_target)
    if task.steady:
        k_star, sched_norm = len(times) - 1, [1.0]
    else:
        k_star = _time_index(times, t_star)
        scale = float(times[-1] - times[0]) if time_scale is None else float(time_scale)
        sched_norm = [(t - times[0]) / scale for t in schedule.absolute(t_star - times[0])]
    inputs = task.data[:, 0]
    targets = task.data[:, k_star]
    N = inputs.shape[-1]
    J = model.config.J
    if resample_to is not None and resample_to != J:
        raise EvaluationError(f"resample_to={resample_to} does not match the model grid {J}")
    x = add_noise(inputs, noise_nsr, seed)
    if N != J:
        x = resample(x, J, periodic)
    pred = _predict(model, x, sched_norm, batch_size, workers)
    if N != J:
        pred = resample(pred, N, periodic)
    groups = FUNCTIONS_OF_INTEREST[pde]
    err, flagged = sample_errors(pred, targets, groups)
    return ErrorRecord(task.name, model_id, n_train_samples, [float(e) for e in err], groups, flagged,
                       str(schedule), float(noise_nsr), None if N == J else J, t_star)


def error_over_time(model, data, schedule: RolloutSchedule | str | None = None, pde: str | None = None,
                    batch_size: int = 16, workers: int = 1, time_scale: float | None = None,
                    t_target: float | None = None) -> list[tuple[float, float]]:
    """Median error at each rollout state, each of which must land on a dataset snapshot.

    The default schedule steps through every snapshot after the first.
    ``time_scale`` fixes the lead-time normalisation, so times beyond the
    training horizon give lead times above 1.
    """
    task = _as_task(data)
    pde = _pde_of(task, pde)
    times = task.times
    t_star = float(times[-1]) if t_target is None else float(t_target)
    if schedule is None:
        k = _time_index(times, t_star)
        schedule = RolloutSchedule("explicit", times=[float(t - times[0]) for t in times[1:k + 1]])
    elif isinstance(schedule, str):
        schedule = RolloutSchedule.parse(schedule)
    rel = schedule.absolute(t_star - times[0])
    idx = [_time_index(times, times[0] + t) for t in rel]
    scale = float(times[-1] - times[0]) if time_scale is None else float(time_scale)
    states = _predict(model, task.data[:, 0], [t / scale for t in rel], batch_size, workers, all_states=True)
    groups = FUNCTIONS_OF_INTEREST[pde]
    out = []
    for k, s in zip(idx, states):
        _, med, _ = median_rel_l1(s, task.data[:, k], groups)
        out.append((float(times[k]), med))
    return out


def error_histogram(record: ErrorRecord, bins: int | Sequence[float] = 10) -> tuple[np.ndarray, np.ndarray]:
    v = record.valid_errors()
    if v.size == 0:
        raise EvaluationError("record has no valid errors")
    return np.histogram(v, bins=bins)


# ---------------------------------------------------------------------------
# gains and scaling fits


def _loglog_interp(x0, y0, x1, y1, y) -> float:
    """x where the log-log line through (x0, y0), (x1, y1) attains y."""
    lx0, lx1, ly0, ly1, ly = map(math.log, (x0, x1, y0, y1, y))
    if ly1 == ly0:
        return x0
    return math.exp(lx0 + (ly - ly0) * (lx1 - lx0) / (ly1 - ly0))


def _curve_value(curve: ScalingCurve, s: float) -> float:
    if s in curve.n_samples:
        return curve.at(int(s))
    xs = curve.n_samples
    if not xs[0] < s < xs[-1]:
        raise EvaluationError(f"{s} samples is outside the reference range {xs[0]}..{xs[-1]}")
    j = int(np.searchsorted(xs, s))
    lx = (math.log(s) - math.log(xs[j - 1])) / (math.log(xs[j]) - math.log(xs[j - 1]))
    return math.exp((1 - lx) * math.log(curve.errors[j - 1]) + lx * math.log(curve.errors[j]))


@dataclass
class GainResult:
    eg: float
    ag: float
    eg_flag: str = ""  # "", "lower-bound", "not-reached"
    samples_to_match: float | None = None


def eg_ag(model_curve: ScalingCurve, ref_curve: ScalingCurve, S_eg: int, S_ag: int) -> GainResult:
    """Efficiency gain S_eg / s with E_model(s) = E_ref(S_eg), and accuracy gain E_ref(S_ag) / E_model(S_ag)."""
    ag = ref_curve.at(S_ag) / model_curve.at(S_ag)
    level = _curve_value(ref_curve, S_eg)
    xs, ys = model_curve.n_samples, model_curve.errors
    if ys[0] <= level:
        return GainResult(S_eg / xs[0], ag, "lower-bound" if ys[0] < level else "", float(xs[0]))
    for j in range(1, len(xs)):
        if ys[j] == level:
            return GainResult(S_eg / xs[j], ag, "", float(xs[j]))
        if ys[j] < level:
            s = _loglog_interp(xs[j - 1], ys[j - 1], xs[j], ys[j], level)
            return GainResult(S_eg / s, ag, "", s)
    return GainResult(0.0, ag, "not-reached", None)


@dataclass
class PowerFit:
    C: float
    alpha: float
    residual: float


def fit_power_law(n_samples, errors) -> PowerFit:
    """Least squares of log E = log C - alpha log M."""
    x = np.asarray(n_samples, dtype=np.float64)
    y = np.asarray(errors, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least two points to fit a power law")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power-law fit needs positive sample counts and errors")
    A = np.stack([np.ones_like(x), -np.log(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, np.log(y), rcond=None)
    r = A @ coef - np.log(y)
    return PowerFit(float(math.exp(coef[0])), float(coef[1]), float(r @ r))


@dataclass
class BiphasicFit:
    M_pt: float
    alpha_w: float
    alpha_l: float
    C_w: float
    C_l: float
    residual: float


def fit_biphasic(n_samples, errors) -> BiphasicFit:
    """Best interior breakpoint with separate power laws on [M_0, M_pt] and [M_pt, M_n]."""
    x = list(n_samples)
    y = list(errors)
    if len(x) < 4:
        raise ValueError("need at least four points for a biphasic fit")
    best = None
    for i in range(1, len(x) - 1):
        w = fit_power_law(x[: i + 1], y[: i + 1])
        l_ = fit_power_law(x[i:], y[i:])
        res = w.residual + l_.residual
        if best is None or res < best.residual - 1e-15:
            best = BiphasicFit(float(x[i]), w.alpha, l_.alpha, w.C, l_.C, res)
    return best


def gain_table(curves: dict[str, dict[str, ScalingCurve]], reference: str, S_eg: int, S_ag: int) -> list[dict]:
    """Rows per task and model with EG and AG against ``reference`` (curves[task][model])."""
    rows = []
    for task, by_model in curves.items():
        if reference not in by_model:
            raise EvaluationError(f"task {task!r} has no reference curve {reference!r}")
        ref = by_model[reference]
        for mid, c in by_model.items():
            g = eg_ag(c, ref, S_eg, S_ag)
            rows.append({"task": task, "model": mid, "EG": g.eg, "AG": g.ag, "flag": g.eg_flag})
    return rows


# ---------------------------------------------------------------------------
# artifact writers


def write_errors_csv(path: str, record: ErrorRecord) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample_id", "error"])
        for i, e in enumerate(record.errors):
            w.writerow([i, "" if math.isnan(e) else repr(float(e))])


def write_scaling_csv(path: str, curve: ScalingCurve) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["n_samples", "median_error"])
        for s, e in zip(curve.n_samples, curve.errors):
            w.writerow([int(s), repr(float(e))])


def read_scaling_csv(path: str, model_id: str = "", task: str = "") -> ScalingCurve:
    with open(path) as f:
        rows = list(csv.DictReader(f))
    rows.sort(key=lambda r: int(r["n_samples"]))
    return ScalingCurve([int(r["n_samples"]) for r in rows], [float(r["median_error"]) for r in rows], model_id, task)


def write_timeline_csv(path: str, timeline: Sequence[tuple[float, float]]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "error"])
        for t, e in timeline:
            w.writerow([repr(float(t)), repr(float(e))])


def write_histogram_csv(path: str, counts, edges) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["bin_lo", "bin_hi", "count"])
        for c, lo, hi in zip(counts, edges[:-1], edges[1:]):
            w.writerow([repr(float(lo)), repr(float(hi)), int(c)])


def write_json(path: str, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True, default=float)
