"""``scotlab`` command line: generate, pretrain, finetune, evaluate, rollout, fit-scaling.

Every command takes ``--config run.json``; explicit flags override config
fields, and the merged settings are echoed to ``<out>/resolved_config.json``.
Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys

import numpy as np

from . import evaluation as E
from .model import ScotConfig, ScotModel, load_checkpoint, micro_config, rollout_states, save_checkpoint
from .pdegym.dataset import read_dataset, write_dataset
from .pdegym.tasks import generate, resolve_task
from .training import FinetuneConfig, TrainConfig, finetune, pretrain, to_layout

log = logging.getLogger("scotlab")


class ConfigError(ValueError):
    pass


PRESETS = {"mu": lambda: ScotConfig(), "micro": lambda: micro_config(dtype="float32")}

DEFAULTS: dict[str, dict] = {
    "generate": {"task": None, "pde": None, "ic": None, "n": 16, "grid": 64, "seed": None, "snapshots": 11,
                 "T": None, "start": 0, "workers": 1, "out": None},
    "pretrain": {"data": [], "val_data": [], "model": "mu", "model_config": None, "dtype": "float32", "epochs": 10,
                 "steps": None, "batch_size": 16, "lr": 1e-3, "weight_decay": 1e-6, "warmup_frac": 0.05,
                 "sampler": "all2all", "subset_stride": 1, "clip": 5.0, "log_every": 10, "seed": None,
                 "resume": False, "out": None},
    "finetune": {"checkpoint": None, "data": None, "val_data": None, "train_size": None, "epochs": 10, "steps": None,
                 "batch_size": 16, "lr_backbone": 5e-5, "lr_embed": 5e-4, "lr_norm": 5e-4, "weight_decay": 1e-6,
                 "sampler": "all2all", "subset_stride": 1, "clip": 5.0, "log_every": 10, "frozen_latent": False,
                 "replace_embedding": False, "from_scratch": False, "seed": None, "out": None},
    "evaluate": {"checkpoint": None, "data": None, "rollout": ["direct"], "noise_nsr": 0.0, "resample": None,
                 "t_target": None, "model_id": "", "n_train": 0, "timeline": False, "hist_bins": 10,
                 "append_scaling": None, "batch_size": 16, "workers": 1, "seed": None, "out": None},
    "rollout": {"checkpoint": None, "data": None, "index": 0, "rollout": "direct", "t_target": None, "seed": None,
                "out": None},
    "fit-scaling": {"curve": [], "reference": None, "s_eg": None, "s_ag": None, "biphasic": False, "out": None},
}


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scotlab", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    S = argparse.SUPPRESS

    def cmd(name):
        p = sub.add_parser(name, argument_default=S)
        p.add_argument("--config", help="JSON run config; flags override its fields")
        p.add_argument("--out")
        p.add_argument("--seed", type=int)
        return p

    g = cmd("generate")
    g.add_argument("--task")
    g.add_argument("--pde")
    g.add_argument("--ic")
    g.add_argument("--n", type=int)
    g.add_argument("--grid", type=int)
    g.add_argument("--snapshots", type=int)
    g.add_argument("--T", type=float)
    g.add_argument("--start", type=int)
    g.add_argument("--workers", type=int)

    def train_flags(p):
        p.add_argument("--epochs", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--weight-decay", type=float)
        p.add_argument("--sampler", choices=["all2all", "vanilla", "all2all-on-subset"])
        p.add_argument("--subset-stride", type=int)
        p.add_argument("--clip", type=float)
        p.add_argument("--log-every", type=int)

    p = cmd("pretrain")
    p.add_argument("--data", action="append")
    p.add_argument("--val-data", action="append")
    p.add_argument("--model", choices=sorted(PRESETS))
    p.add_argument("--model-config")
    p.add_argument("--dtype", choices=["float32", "float64"])
    p.add_argument("--lr", type=float)
    p.add_argument("--warmup-frac", type=float)
    p.add_argument("--resume", action="store_true")
    train_flags(p)

    f = cmd("finetune")
    f.add_argument("--checkpoint")
    f.add_argument("--data")
    f.add_argument("--val-data")
    f.add_argument("--train-size", type=int)
    f.add_argument("--lr-backbone", type=float)
    f.add_argument("--lr-embed", type=float)
    f.add_argument("--lr-norm", type=float)
    f.add_argument("--frozen-latent", action="store_true")
    f.add_argument("--replace-embedding", action="store_true")
    f.add_argument("--from-scratch", action="store_true")
    train_flags(f)

    e = cmd("evaluate")
    e.add_argument("--checkpoint")
    e.add_argument("--data")
    e.add_argument("--rollout", action="append", help="direct | homogeneous:K | explicit:t1,t2,...")
    e.add_argument("--noise-nsr", type=float)
    e.add_argument("--resample", type=int)
    e.add_argument("--t-target", type=float)
    e.add_argument("--model-id")
    e.add_argument("--n-train", type=int)
    e.add_argument("--timeline", action="store_true")
    e.add_argument("--hist-bins", type=int)
    e.add_argument("--append-scaling")
    e.add_argument("--batch-size", type=int)
    e.add_argument("--workers", type=int)

    r = cmd("rollout")
    r.add_argument("--checkpoint")
    r.add_argument("--data")
    r.add_argument("--index", type=int)
    r.add_argument("--rollout")
    r.add_argument("--t-target", type=float)

    s = cmd("fit-scaling")
    s.add_argument("--curve", action="append", help="TASK:MODEL:path/to/scaling.csv")
    s.add_argument("--reference")
    s.add_argument("--s-eg", type=int)
    s.add_argument("--s-ag", type=int)
    s.add_argument("--biphasic", action="store_true")
    return ap


def resolve_config(command: str, args: dict) -> dict:
    """Defaults < config file < flags; seed falls back to SCOTLAB_SEED, then 0."""
    cfg = dict(DEFAULTS[command])
    path = args.pop("config", None)
    if path:
        try:
            with open(path) as f:
                doc = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        unknown = set(doc) - set(cfg)
        if unknown:
            raise ConfigError(f"unknown config field(s) {sorted(unknown)} for {command}")
        cfg.update(doc)
    cfg.update({k: v for k, v in args.items() if k in cfg})
    if "seed" in cfg and cfg["seed"] is None:
        env = os.environ.get("SCOTLAB_SEED")
        try:
            cfg["seed"] = int(env) if env is not None else 0
        except ValueError:
            raise ConfigError(f"SCOTLAB_SEED must be an integer, got {env!r}") from None
    if not cfg.get("out"):
        raise ConfigError("field 'out' is required")
    return cfg


def _require(cfg: dict, *names):
    for n in names:
        if cfg.get(n) in (None, [], ""):
            raise ConfigError(f"field {n!r} is required")


def _write_resolved(cfg: dict) -> None:
    os.makedirs(cfg["out"], exist_ok=True)
    with open(os.path.join(cfg["out"], "resolved_config.json"), "w") as f:
        json.dump(cfg, f, indent=1, sort_keys=True)


def _load_data(path: str):
    try:
        return read_dataset(path)
    except FileNotFoundError:
        raise ConfigError(f"no dataset at {path}") from None


def _load_ckpt(path: str) -> ScotModel:
    if not os.path.exists(os.path.join(path, "model.json")):
        raise ConfigError(f"no checkpoint at {path}")
    try:
        return load_checkpoint(path)
    except ValueError as e:
        raise ConfigError(f"incompatible checkpoint {path}: {e}") from None


# ---------------------------------------------------------------------------
# commands


def cmd_generate(cfg: dict) -> None:
    try:
        spec = resolve_task(cfg["pde"], cfg["ic"], cfg["task"])
    except KeyError as e:
        raise ConfigError(e.args[0]) from None
    for k in ("n", "grid", "snapshots"):
        if int(cfg[k]) < 1:
            raise ConfigError(f"field {k!r} must be >= 1")
    ds = generate(spec, int(cfg["n"]), N=int(cfg["grid"]), seed=int(cfg["seed"]), n_snapshots=int(cfg["snapshots"]),
                  T=cfg["T"], start=int(cfg["start"]), workers=int(cfg["workers"]))
    ds.provenance["solver"] = {"task": spec.name, "pde": spec.pde, "ic": spec.ic, "grid": int(cfg["grid"])}
    write_dataset(ds, cfg["out"])
    log.info("wrote %d trajectories of %s to %s", ds.n_trajectories, spec.name, cfg["out"])


def _model_config(cfg: dict) -> ScotConfig:
    mc = cfg["model_config"]
    try:
        if mc is not None:
            if isinstance(mc, str):
                with open(mc) as f:
                    mc = json.load(f)
            base = ScotConfig.from_dict(mc)
        else:
            if cfg["model"] not in PRESETS:
                raise ConfigError(f"field 'model' must be one of {sorted(PRESETS)}")
            base = PRESETS[cfg["model"]]()
        return ScotConfig(**{**base.to_dict(), "dtype": cfg["dtype"]})
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid model config: {e}") from None


def _train_cfg(cfg: dict, cls=TrainConfig, **extra):
    common = dict(epochs=int(cfg["epochs"]), steps=cfg["steps"], batch_size=int(cfg["batch_size"]),
                  weight_decay=float(cfg["weight_decay"]), clip=float(cfg["clip"]), seed=int(cfg["seed"]),
                  sampler=cfg["sampler"], subset_stride=int(cfg["subset_stride"]), log_every=int(cfg["log_every"]))
    common.update(extra)
    try:
        return cls(**common)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def cmd_pretrain(cfg: dict) -> None:
    _require(cfg, "data")
    mcfg = _model_config(cfg)
    tasks = [to_layout(_load_data(p), np.dtype(mcfg.dtype)) for p in cfg["data"]]
    val = [to_layout(_load_data(p), np.dtype(mcfg.dtype)) for p in cfg["val_data"]] or None
    chans = {t.n_channels for t in tasks + (val or [])}
    if len(chans) != 1:
        raise ConfigError(f"channel-layout conflict across mixture tasks: {sorted(chans)} channels")
    n = chans.pop()
    if n != mcfg.n_in or n != mcfg.n_out:
        mcfg = ScotConfig(**{**mcfg.to_dict(), "n_in": n, "n_out": n})
    model = ScotModel(mcfg, seed=int(cfg["seed"]))
    tc = _train_cfg(cfg, lr=float(cfg["lr"]), warmup_frac=float(cfg["warmup_frac"]))
    res = pretrain(model, tasks, tc, val, out_dir=cfg["out"], resume=bool(cfg["resume"]))
    save_checkpoint(res.model, os.path.join(cfg["out"], "best"), extra={"epoch": res.best_epoch,
                                                                         "val_loss": res.best_val})
    log.info("best epoch %d, validation loss %.5f", res.best_epoch, res.best_val)


def cmd_finetune(cfg: dict) -> None:
    _require(cfg, "checkpoint", "data")
    pre = _load_ckpt(cfg["checkpoint"])
    ds = _load_data(cfg["data"])
    if cfg["train_size"] is not None:
        k = int(cfg["train_size"])
        if not 1 <= k <= ds.n_trajectories:
            raise ConfigError(f"train_size must be in 1..{ds.n_trajectories}")
        ds = ds.subset(slice(0, k))
    dt = pre.dtype
    task = to_layout(ds, dt)
    val = to_layout(_load_data(cfg["val_data"]), dt) if cfg["val_data"] else None
    fc = _train_cfg(cfg, FinetuneConfig, lr_backbone=float(cfg["lr_backbone"]),
                    lr_embed_recover=float(cfg["lr_embed"]), lr_time_norm=float(cfg["lr_norm"]),
                    frozen_latent=bool(cfg["frozen_latent"]), replace_embedding=bool(cfg["replace_embedding"]),
                    from_scratch=bool(cfg["from_scratch"]), init_seed=int(cfg["seed"]))
    if fc.from_scratch:
        # the scratch baseline trains every group at the embedding rate
        fc.lr_backbone = fc.lr_embed_recover
    try:
        res = finetune(pre, task, fc, val, out_dir=cfg["out"])
    except ValueError as e:
        if "replace_embedding" in str(e):
            raise ConfigError(str(e)) from None
        raise
    save_checkpoint(res.model, os.path.join(cfg["out"], "best"), extra={"epoch": res.best_epoch,
                                                                         "val_loss": res.best_val})


def _slug(text: str) -> str:
    return re.sub(r"[^A-Za-z0-9.]+", "_", text).strip("_")


def cmd_evaluate(cfg: dict) -> None:
    _require(cfg, "checkpoint", "data")
    model = _load_ckpt(cfg["checkpoint"])
    ds = _load_data(cfg["data"])
    try:
        schedules = [E.RolloutSchedule.parse(s) for s in cfg["rollout"]]
    except ValueError as e:
        raise ConfigError(str(e)) from None
    out = cfg["out"]
    summaries = []
    for sch in schedules:
        rec = E.evaluate_model(model, ds, sch, t_target=cfg["t_target"], resample_to=cfg["resample"],
                               noise_nsr=float(cfg["noise_nsr"]), seed=int(cfg["seed"]), model_id=cfg["model_id"],
                               n_train_samples=int(cfg["n_train"]), batch_size=int(cfg["batch_size"]),
                               workers=int(cfg["workers"]))
        d = os.path.join(out, _slug(str(sch)))
        os.makedirs(d, exist_ok=True)
        E.write_errors_csv(os.path.join(d, "errors.csv"), rec)
        counts, edges = E.error_histogram(rec, int(cfg["hist_bins"]))
        E.write_histogram_csv(os.path.join(d, "histogram.csv"), counts, edges)
        E.write_json(os.path.join(d, "record.json"), rec.summary())
        if cfg["timeline"]:
            tl = E.error_over_time(model, ds, None, t_target=cfg["t_target"], batch_size=int(cfg["batch_size"]),
                                   workers=int(cfg["workers"]))
            E.write_timeline_csv(os.path.join(d, "timeline.csv"), tl)
        summaries.append(rec.summary())
        log.info("%s: median relative L1 %.5f over %d samples", sch, rec.median, rec.n_test)
    E.write_json(os.path.join(out, "records.json"), summaries)
    if cfg["append_scaling"]:
        path = cfg["append_scaling"]
        pts = {}
        if os.path.exists(path):
            c = E.read_scaling_csv(path)
            pts = dict(zip(c.n_samples, c.errors))
        pts[int(cfg["n_train"])] = summaries[0]["median"]
        keys = sorted(pts)
        E.write_scaling_csv(path, E.ScalingCurve(keys, [pts[k] for k in keys]))


def cmd_rollout(cfg: dict) -> None:
    _require(cfg, "checkpoint", "data")
    model = _load_ckpt(cfg["checkpoint"])
    task = to_layout(_load_data(cfg["data"]), model.dtype)
    i = int(cfg["index"])
    if not 0 <= i < task.data.shape[0]:
        raise ConfigError(f"index must be in 0..{task.data.shape[0] - 1}")
    try:
        sch = E.RolloutSchedule.parse(cfg["rollout"])
    except ValueError as e:
        raise ConfigError(str(e)) from None
    times = task.times
    t_star = float(times[-1]) if cfg["t_target"] is None else float(cfg["t_target"])
    scale = float(times[-1] - times[0])
    rel = sch.absolute(t_star - times[0])
    states = rollout_states(model, task.data[i, 0], [t / scale for t in rel])
    np.save(os.path.join(cfg["out"], "states.npy"), np.stack(states))
    E.write_json(os.path.join(cfg["out"], "rollout.json"), {"index": i, "times": [times[0] + t for t in rel],
                                                            "schedule": str(sch)})


def cmd_fit_scaling(cfg: dict) -> None:
    _require(cfg, "curve")
    curves: dict[str, dict[str, E.ScalingCurve]] = {}
    for spec in cfg["curve"]:
        parts = spec.split(":", 2)
        if len(parts) != 3:
            raise ConfigError(f"curve {spec!r} must be TASK:MODEL:PATH")
        task, mid, path = parts
        if not os.path.exists(path):
            raise ConfigError(f"no scaling csv at {path}")
        curves.setdefault(task, {})[mid] = E.read_scaling_csv(path, mid, task)
    fits = {}
    for task, by_model in curves.items():
        for mid, c in by_model.items():
            if len(c.n_samples) < 2:
                fits[f"{task}:{mid}"] = {"skipped": "fewer than two points"}
                continue
            pf = E.fit_power_law(c.n_samples, c.errors)
            entry = {"C": pf.C, "alpha": pf.alpha, "residual": pf.residual}
            if cfg["biphasic"] and len(c.n_samples) >= 4:
                bf = E.fit_biphasic(c.n_samples, c.errors)
                entry["biphasic"] = {"M_pt": bf.M_pt, "alpha_w": bf.alpha_w, "alpha_l": bf.alpha_l}
            fits[f"{task}:{mid}"] = entry
    E.write_json(os.path.join(cfg["out"], "fit.json"), fits)
    if cfg["reference"] is not None:
        _require(cfg, "s_eg", "s_ag")
        try:
            rows = E.gain_table(curves, cfg["reference"], int(cfg["s_eg"]), int(cfg["s_ag"]))
        except (E.EvaluationError, KeyError) as e:
            raise ConfigError(str(e.args[0] if e.args else e)) from None
        _write_gain_tables(cfg["out"], rows)


def _write_gain_tables(out: str, rows: list[dict]) -> None:
    """Long-form gains.csv plus EG and AG matrices with tasks as rows and models as columns."""
    import csv

    with open(os.path.join(out, "gains.csv"), "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["task", "model", "EG", "AG", "flag"])
        w.writeheader()
        w.writerows(rows)
    models = list(dict.fromkeys(r["model"] for r in rows))
    tasks = list(dict.fromkeys(r["task"] for r in rows))
    for key in ("EG", "AG"):
        with open(os.path.join(out, f"{key.lower()}_table.csv"), "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["task"] + models)
            for t in tasks:
                val = {r["model"]: r[key] for r in rows if r["task"] == t}
                w.writerow([t] + [repr(float(val[m])) if m in val else "" for m in models])


COMMANDS = {"generate": cmd_generate, "pretrain": cmd_pretrain, "finetune": cmd_finetune, "evaluate": cmd_evaluate,
            "rollout": cmd_rollout, "fit-scaling": cmd_fit_scaling}


def main(argv=None) -> int:
    ap = _parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    args = {k: v for k, v in vars(ns).items() if k not in ("command", "verbose")}
    try:
        cfg = resolve_config(ns.command, args)
        _write_resolved(cfg)
        COMMANDS[ns.command](cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
