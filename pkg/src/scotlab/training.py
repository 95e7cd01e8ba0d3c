"""Pair sampling, the masked relative-L1 objective, pretraining and finetuning loops."""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .model import (EMBED_RECOVER, ScotConfig, ScotModel, init_param, param_group,
                    param_specs, save_checkpoint)
from .optim import AdamW, LrSchedule, ParamGroup, clip_grad_norm, lr_at
from .pdegym.dataset import TrajectoryDataset
from .tensor import Tensor

log = logging.getLogger("scotlab.training")

LOSS_EPS = 1e-10


# ---------------------------------------------------------------------------
# pair enumeration


def _check_times(times, K: int | None = None) -> np.ndarray:
    t = np.asarray(times, dtype=np.float64)
    if K is not None and len(t) != K + 1:
        raise ValueError(f"need K+1 = {K + 1} times, got {len(t)}")
    if np.any(np.diff(t) <= 0):
        raise ValueError(f"times must be strictly increasing, got {t.tolist()}")
    return t


def enumerate_all2all(K: int, times=None) -> list[tuple[int, int]]:
    """All (k, kbar) with 0 <= k <= kbar <= K: (K+1)(K+2)/2 pairs."""
    if times is not None:
        _check_times(times, K)
    return [(k, kb) for k in range(K + 1) for kb in range(k, K + 1)]


def enumerate_vanilla(K: int, times=None) -> list[tuple[int, int]]:
    """Pairs anchored at the initial snapshot: (0, kbar) for kbar = 0..K."""
    if times is not None:
        _check_times(times, K)
    return [(0, kb) for kb in range(K + 1)]


def select_subset(K: int, stride: int) -> list[int]:
    """Snapshot indices {0, j, 2j, ...} plus K."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    idx = list(range(0, K + 1, stride))
    if idx[-1] != K:
        idx.append(K)
    return idx


@dataclass(frozen=True)
class TrainPair:
    task: int
    traj: int
    k: int
    kbar: int
    lead_time: float


@dataclass
class PairSamplerConfig:
    mode: str = "all2all"  # all2all | vanilla | all2all-on-subset
    subset_stride: int = 1
    seed: int = 0


def pairs_for_indices(indices: Sequence[int], mode: str) -> list[tuple[int, int]]:
    """Map an all2all/vanilla enumeration over a snapshot subset back to snapshot indices."""
    K = len(indices) - 1
    base = enumerate_vanilla(K) if mode == "vanilla" else enumerate_all2all(K)
    return [(indices[a], indices[b]) for a, b in base]


def build_pairs(task: int, times, n_traj: int, sampler: PairSamplerConfig, steady: bool = False,
                time_scale: float | None = None, max_index: int | None = None) -> list[TrainPair]:
    times = _check_times(times)
    if steady:
        return [TrainPair(task, i, 0, len(times) - 1, 1.0) for i in range(n_traj)]
    K = len(times) - 1 if max_index is None else max_index
    scale = float(times[-1] - times[0]) if time_scale is None else float(time_scale)
    if sampler.mode == "all2all-on-subset" or sampler.subset_stride > 1:
        indices = select_subset(K, sampler.subset_stride)
    else:
        indices = list(range(K + 1))
    mode = "vanilla" if sampler.mode == "vanilla" else "all2all"
    ij = pairs_for_indices(indices, mode)
    return [TrainPair(task, i, k, kb, float((times[kb] - times[k]) / scale)) for i in range(n_traj) for k, kb in ij]


def epoch_permutation(n: int, seed: int, epoch: int) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), 0x5EED0000 + int(epoch)]))
    return rng.permutation(n)


# ---------------------------------------------------------------------------
# loss


def relative_l1_loss(pred: Tensor, target, mask=None, eps: float = LOSS_EPS) -> Tensor:
    """Channel-averaged ratio sum|pred-target| / (sum|target| + eps) over batch and grid.

    ``mask`` is ``[C]`` or per-sample ``[B, C]`` in {0, 1}; masked entries are
    dropped from numerator and denominator, and channels masked everywhere are
    dropped from the average.
    """
    tgt = target.data if isinstance(target, Tensor) else np.asarray(target)
    if pred.shape != tgt.shape:
        raise T.ShapeError(f"prediction {pred.shape} and target {tgt.shape} differ")
    B, C = pred.shape[:2]
    m = np.ones((B, C)) if mask is None else np.broadcast_to(np.asarray(mask, dtype=np.float64), (B, C))
    active = m.max(axis=0) > 0
    if not active.any():
        raise ValueError("every channel is masked; the objective is undefined")
    w = m.reshape(B, C, *([1] * (pred.ndim - 2))).astype(pred.dtype)
    tgt = tgt.astype(pred.dtype, copy=False)
    diff = T.tabs(pred - Tensor(tgt)) * Tensor(np.ascontiguousarray(np.broadcast_to(w, pred.shape)))
    axes = (0,) + tuple(range(2, pred.ndim))
    num = diff.sum(axis=axes)  # [C]
    den = (np.abs(tgt) * w).sum(axis=axes) + eps
    den = np.where(active, den, 1.0)  # inactive channels contribute 0, never 0/0
    ratio = num * Tensor((active / den).astype(pred.dtype))
    return ratio.sum() * (1.0 / float(active.sum()))


def relative_l1_numpy(pred: np.ndarray, target: np.ndarray, mask=None, eps: float = LOSS_EPS) -> float:
    return float(relative_l1_loss(Tensor(np.asarray(pred, dtype=np.float64)), np.asarray(target, dtype=np.float64),
                                  mask, eps).data)


# ---------------------------------------------------------------------------
# channel layouts

# layout channels and loss mask per pde family; "fill" entries are constants
LAYOUTS: dict[str, dict] = {
    "ns": {"channels": ["rho", "u_x", "u_y", "p"], "source": [None, "u_x", "u_y", None], "fill": [1.0, None, None, 0.0],
           "mask": [0, 1, 1, 0]},
    "euler": {"channels": ["rho", "v_x", "v_y", "p"], "source": ["rho", "v_x", "v_y", "p"], "fill": [None] * 4,
              "mask": [1, 1, 1, 1]},
    "ns-tracer": {"channels": ["rho", "u_x", "u_y", "p", "c"], "source": [None, "u_x", "u_y", None, "c"],
                  "fill": [1.0, None, None, 0.0, None], "mask": [0, 1, 1, 0, 1]},
    "fns": {"channels": ["rho", "u_x", "u_y", "p", "f"], "source": [None, "u_x", "u_y", None, "f"],
            "fill": [1.0, None, None, 0.0, None], "mask": [0, 1, 1, 0, 0]},
    "wave": {"channels": ["u", "u_t", "c"], "source": ["u", "u_t", "c"], "fill": [None] * 3, "mask": [1, 1, 0]},
    "allen-cahn": {"channels": ["u", "pad1", "pad2", "pad3"], "source": ["u", None, None, None],
                   "fill": [None, 0.0, 0.0, 0.0], "mask": [1, 0, 0, 0]},
    "poisson": {"channels": ["u", "pad1", "pad2", "pad3"], "source": ["u", None, None, None],
                "fill": [None, 0.0, 0.0, 0.0], "mask": [1, 0, 0, 0]},
    "helmholtz": {"channels": ["u", "b", "pad2", "pad3"], "source": ["u", "b", None, None],
                  "fill": [None, None, 0.0, 0.0], "mask": [1, 0, 0, 0]},
}

STEADY_PDES = ("poisson", "helmholtz")


def mask_for_task(pde: str) -> tuple[list[int], dict]:
    """Loss mask and layout description for a pde family (or task name)."""
    from .pdegym.tasks import TASKS

    if pde in TASKS:
        pde = TASKS[pde].pde
    if pde not in LAYOUTS:
        raise KeyError(f"unknown task {pde!r}; known: {sorted(LAYOUTS)}")
    lay = LAYOUTS[pde]
    return list(lay["mask"]), lay


@dataclass
class TaskData:
    """A dataset mapped into its training layout."""

    name: str
    data: np.ndarray  # [traj, time, C, N, N]
    times: np.ndarray
    mask: np.ndarray
    steady: bool

    @property
    def n_channels(self) -> int:
        return self.data.shape[2]


def to_layout(ds: TrajectoryDataset, dtype=np.float32) -> TaskData:
    mask, lay = mask_for_task(ds.pde)
    n, nt, _, N, _ = ds.data.shape
    out = np.empty((n, nt, len(lay["channels"]), N, N), dtype=dtype)
    for c, (src, fill) in enumerate(zip(lay["source"], lay["fill"])):
        if src is None:
            out[:, :, c] = fill
        else:
            if src not in ds.channels:
                raise ValueError(f"dataset {ds.name!r} lacks channel {src!r} needed by the {ds.pde} layout")
            out[:, :, c] = ds.data[:, :, ds.channels.index(src)]
    return TaskData(ds.name, out, np.asarray(ds.times), np.asarray(mask, dtype=np.float64), ds.pde in STEADY_PDES)


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    epochs: int = 10
    steps: int | None = None  # overrides epochs when set
    batch_size: int = 16
    lr: float = 1e-3
    weight_decay: float = 1e-6
    warmup_frac: float = 0.05
    schedule: str = "cosine-with-linear-warmup"
    clip: float = 5.0
    seed: int = 0
    sampler: str = "all2all"
    subset_stride: int = 1
    log_every: int = 10
    time_scale: float | None = None
    max_time_index: int | None = None


@dataclass
class FinetuneConfig(TrainConfig):
    lr: float = 5e-4  # unused for finetuning; the three group rates below apply
    lr_backbone: float = 5e-5
    lr_embed_recover: float = 5e-4
    lr_time_norm: float = 5e-4
    schedule: str = "cosine"
    warmup_frac: float = 0.0
    replace_embedding: bool = False
    frozen_latent: bool = False
    from_scratch: bool = False
    init_seed: int = 0

    def __post_init__(self):
        if self.lr_embed_recover < self.lr_backbone or self.lr_time_norm < self.lr_backbone:
            raise ValueError("embedding/recovery and time-norm rates must be >= the backbone rate")


@dataclass
class TrainResult:
    model: ScotModel
    history: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val: float = math.inf
    steps: int = 0


class PairBank:
    """All training pairs of a task mixture with batch assembly."""

    def __init__(self, tasks: Sequence[TaskData], cfg: TrainConfig):
        self.tasks = list(tasks)
        if not self.tasks:
            raise ValueError("empty task mixture")
        nc = {t.n_channels for t in self.tasks}
        if len(nc) != 1:
            raise ValueError(f"channel-layout conflict across mixture tasks: {sorted(nc)}")
        sampler = PairSamplerConfig(cfg.sampler, cfg.subset_stride, cfg.seed)
        self.pairs: list[TrainPair] = []
        for ti, t in enumerate(self.tasks):
            self.pairs += build_pairs(ti, t.times, t.data.shape[0], sampler, t.steady, cfg.time_scale,
                                      cfg.max_time_index)

    def __len__(self) -> int:
        return len(self.pairs)

    def batch(self, idx: Sequence[int], dtype):
        ps = [self.pairs[i] for i in idx]
        x = np.stack([self.tasks[p.task].data[p.traj, p.k] for p in ps]).astype(dtype, copy=False)
        y = np.stack([self.tasks[p.task].data[p.traj, p.kbar] for p in ps]).astype(dtype, copy=False)
        t = np.array([p.lead_time for p in ps], dtype=dtype)
        m = np.stack([self.tasks[p.task].mask for p in ps])
        return x, y, t, m


def evaluate_pairs(model: ScotModel, bank: PairBank, batch_size: int = 16) -> float:
    """Pair-count-weighted mean of batch relative-L1 over the whole bank (no shuffling)."""
    total, count = 0.0, 0
    for s in range(0, len(bank), batch_size):
        idx = list(range(s, min(s + batch_size, len(bank))))
        x, y, t, m = bank.batch(idx, model.dtype)
        pred = model.forward(x, t)
        total += float(relative_l1_loss(pred, y, m).data) * len(idx)
        count += len(idx)
    return total / max(count, 1)


def per_pair_errors(model: ScotModel, bank: PairBank, batch_size: int = 16) -> np.ndarray:
    """Relative-L1 of every pair individually."""
    out = []
    for s in range(0, len(bank), batch_size):
        idx = list(range(s, min(s + batch_size, len(bank))))
        x, y, t, m = bank.batch(idx, model.dtype)
        pred = model(x, t)
        for b in range(len(idx)):
            out.append(relative_l1_numpy(pred[b:b + 1], y[b:b + 1], m[b:b + 1]))
    return np.array(out)


def _snapshot(model: ScotModel) -> dict[str, np.ndarray]:
    return {k: v.data.copy() for k, v in model.params.items()}


def _restore(model: ScotModel, snap: dict[str, np.ndarray]) -> None:
    for k, v in snap.items():
        model.params[k].data[...] = v


def _save_state(path: str, model: ScotModel, opt: AdamW, epoch: int, step: int, best: dict | None,
                best_val: float, best_epoch: int, history: list[dict]) -> None:
    os.makedirs(path, exist_ok=True)
    arrays = {f"param/{k}": v.data for k, v in model.params.items()}
    sd = opt.state_dict()
    for i, (m, v) in enumerate(zip(sd["m"], sd["v"])):
        arrays[f"m/{i}"] = m
        arrays[f"v/{i}"] = v
    if best is not None:
        arrays.update({f"best/{k}": v for k, v in best.items()})
    meta = np.array([epoch, step, sd["t"], best_epoch], dtype=np.int64)
    tmp = os.path.join(path, "train_state.tmp.npz")
    np.savez(tmp, meta=meta, best_val=np.array(best_val), **arrays)
    os.replace(tmp, os.path.join(path, "train_state.npz"))
    _write_history(os.path.join(path, "history.csv"), history)


def _load_state(path: str, model: ScotModel, opt: AdamW):
    z = np.load(os.path.join(path, "train_state.npz"))
    epoch, step, t, best_epoch = (int(v) for v in z["meta"])
    for k in model.params:
        model.params[k].data[...] = z[f"param/{k}"]
    n = len(opt.params)
    opt.load_state_dict({"t": t, "m": [z[f"m/{i}"] for i in range(n)] if t else [],
                         "v": [z[f"v/{i}"] for i in range(n)] if t else []})
    best = {k: z[f"best/{k}"].copy() for k in model.params} if f"best/{next(iter(model.params))}" in z else None
    return epoch, step, best, float(z["best_val"]), best_epoch


def _read_history(path: str) -> list[dict]:
    if not os.path.exists(path):
        return []
    with open(path) as f:
        rows = [{k: (float(v) if v != "" else "") for k, v in row.items()} for row in csv.DictReader(f)]
    for row in rows:
        row["step"] = int(row["step"])
    return rows


def _write_history(path: str, history: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["step", "lr", "train_loss", "val_loss"])
        w.writeheader()
        for row in history:
            w.writerow({k: row.get(k, "") for k in w.fieldnames})


def train_loop(model: ScotModel, groups: list[ParamGroup], bank: PairBank, cfg: TrainConfig,
               val_bank: PairBank | None = None, out_dir: str | None = None, resume: bool = False,
               stop_after_epoch: int | None = None) -> TrainResult:
    """Shared optimisation loop: seeded epoch permutations, AdamW, schedule, clipping, best-val retention.

    The retained model is the one with the lowest validation loss (training
    loss of the epoch when no validation bank is given).
    """
    dtype = model.dtype
    n = len(bank)
    bs = max(1, min(cfg.batch_size, n))
    per_epoch = math.ceil(n / bs)
    if cfg.steps is not None:
        total = int(cfg.steps)
        epochs = math.ceil(total / per_epoch)
    else:
        epochs = int(cfg.epochs)
        total = epochs * per_epoch
    warm = int(round(cfg.warmup_frac * total)) if cfg.schedule == "cosine-with-linear-warmup" else 0
    warm = min(warm, total - 1)
    sched = LrSchedule(cfg.schedule, 1.0, warm, max(total, 1))
    opt = AdamW(groups)
    peak = max(g.lr for g in groups)
    trained = opt.params
    all_params = list(model.params.values())
    pos = {id(p): i for i, p in enumerate(all_params)}
    history: list[dict] = []
    best, best_val, best_epoch = None, math.inf, -1
    step, start_epoch = 0, 0
    if resume and out_dir and os.path.exists(os.path.join(out_dir, "train_state.npz")):
        start_epoch, step, best, best_val, best_epoch = _load_state(out_dir, model, opt)
        history = _read_history(os.path.join(out_dir, "history.csv"))
        log.info("resumed at epoch %d, step %d", start_epoch, step)

    run_loss, run_n = 0.0, 0
    for epoch in range(start_epoch, epochs):
        perm = epoch_permutation(n, cfg.seed, epoch)
        ep_loss, ep_n = 0.0, 0
        for s in range(0, n, bs):
            if step >= total:
                break
            x, y, t, m = bank.batch(perm[s:s + bs], dtype)
            with T.Tape() as tape:
                loss = relative_l1_loss(model.forward(x, t), y, m)
                grads = tape.gradient(loss, all_params)
            g = [grads[pos[id(p)]] for p in trained]
            g, _ = clip_grad_norm(g, cfg.clip)
            scale = lr_at(sched, step)
            opt.step(g, scale)
            step += 1
            lv = float(loss.data)
            run_loss += lv
            run_n += 1
            ep_loss += lv
            ep_n += 1
            if step % cfg.log_every == 0:
                history.append({"step": step, "lr": peak * scale, "train_loss": run_loss / run_n, "val_loss": ""})
                run_loss, run_n = 0.0, 0
        val = evaluate_pairs(model, val_bank, bs) if val_bank is not None else ep_loss / max(ep_n, 1)
        history.append({"step": step, "lr": peak * lr_at(sched, min(step, total)),
                        "train_loss": (run_loss / run_n) if run_n else ep_loss / max(ep_n, 1), "val_loss": val})
        run_loss, run_n = 0.0, 0
        log.info("epoch %d step %d val %.5f", epoch, step, val)
        if val < best_val:
            best_val, best_epoch, best = val, epoch, _snapshot(model)
            if out_dir:
                save_checkpoint(model, os.path.join(out_dir, "best"), extra={"epoch": epoch, "val_loss": val})
        if out_dir:
            _save_state(out_dir, model, opt, epoch + 1, step, best, best_val, best_epoch, history)
        if stop_after_epoch is not None and epoch + 1 >= stop_after_epoch:
            break
        if step >= total:
            break
    if best is not None:
        _restore(model, best)
    return TrainResult(model, history, best_epoch, best_val, step)


def pretrain_groups(model: ScotModel, cfg: TrainConfig) -> list[ParamGroup]:
    decay = [p for k, p in model.params.items() if param_group(k) != "time_norm"]
    no_decay = [p for k, p in model.params.items() if param_group(k) == "time_norm"]
    return [ParamGroup(decay, cfg.lr, cfg.weight_decay, "decay"), ParamGroup(no_decay, cfg.lr, 0.0, "time_norm")]


def pretrain(model: ScotModel, tasks: Sequence[TaskData], cfg: TrainConfig, val_tasks: Sequence[TaskData] | None = None,
             out_dir: str | None = None, resume: bool = False, stop_after_epoch: int | None = None) -> TrainResult:
    """Train on the pooled pairs of all tasks; tasks must share one channel layout."""
    bank = PairBank(tasks, cfg)
    if bank.tasks[0].n_channels != model.config.n_in:
        raise ValueError(f"tasks have {bank.tasks[0].n_channels} channels, model expects {model.config.n_in}")
    val_bank = PairBank(val_tasks, cfg) if val_tasks else None
    return train_loop(model, pretrain_groups(model, cfg), bank, cfg, val_bank, out_dir, resume, stop_after_epoch)


def prepare_finetune_model(pretrained: ScotModel, n_channels: int, cfg: FinetuneConfig) -> ScotModel:
    """Copy pretrained weights into a model for an ``n_channels`` task.

    With ``replace_embedding`` the embedding/recovery/mixup parameters are drawn
    fresh from ``cfg.init_seed``; everything else is transferred.
    """
    pc = pretrained.config
    new_cfg = ScotConfig(**{**pc.to_dict(), "n_in": n_channels, "n_out": n_channels})
    if cfg.from_scratch:
        return ScotModel(new_cfg, seed=cfg.init_seed)
    if n_channels != pc.n_in and not cfg.replace_embedding:
        raise ValueError(
            f"task has {n_channels} channels but the pretrained model has {pc.n_in}; set replace_embedding"
        )
    dt = np.dtype(new_cfg.dtype)
    params = {}
    for name, shape, rule in param_specs(new_cfg):
        if cfg.replace_embedding and name in EMBED_RECOVER:
            arr = init_param(name, shape, rule, cfg.init_seed, dt)
        else:
            arr = pretrained.params[name].data.copy()
        params[name] = Tensor(arr, requires_grad=True, name=name)
    return ScotModel(new_cfg, params)


def finetune_groups(model: ScotModel, cfg: FinetuneConfig) -> list[ParamGroup]:
    by = model.groups()
    groups = [
        ParamGroup([model.params[k] for k in by["embed_recover"]], cfg.lr_embed_recover, cfg.weight_decay, "embed_recover"),
        ParamGroup([model.params[k] for k in by["time_norm"]], cfg.lr_time_norm, 0.0, "time_norm"),
    ]
    if not cfg.frozen_latent:
        groups.insert(0, ParamGroup([model.params[k] for k in by["backbone"]], cfg.lr_backbone, cfg.weight_decay,
                                    "backbone"))
    return groups


def finetune(pretrained: ScotModel, task: TaskData, cfg: FinetuneConfig, val_task: TaskData | None = None,
             out_dir: str | None = None) -> TrainResult:
    model = prepare_finetune_model(pretrained, task.n_channels, cfg)
    bank = PairBank([task], cfg)
    val_bank = PairBank([val_task], cfg) if val_task is not None else None
    return train_loop(model, finetune_groups(model, cfg), bank, cfg, val_bank, out_dir)


def config_dict(cfg) -> dict:
    return asdict(cfg)
