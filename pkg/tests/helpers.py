"""Finite-difference gradient oracle and per-layer check harness shared by the tests."""

from __future__ import annotations

import numpy as np

from scotlab import model as Mo
from scotlab import tensor as T
from scotlab.tensor import Tensor

H = 1e-5
TOL = 1e-4


def gradcheck(f, arrays, h: float = H, max_coords: int = 48, seed: int = 0) -> float:
    """Worst relative error between tape gradients and central differences.

    ``f`` maps a list of Tensors to a scalar Tensor.  Up to ``max_coords``
    coordinates per input are probed, drawn deterministically.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    ts = [Tensor(a, requires_grad=True) for a in arrays]
    with T.Tape() as tape:
        loss = f(ts)
        grads = tape.gradient(loss, ts)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for a, g in zip(arrays, grads):
        n = a.size
        coords = np.arange(n) if n <= max_coords else rng.choice(n, max_coords, replace=False)
        num = np.empty(len(coords))
        for j, c in enumerate(coords):
            flat = a.reshape(-1)
            old = flat[c]
            flat[c] = old + h
            fp = float(f([Tensor(x) for x in arrays]).data)
            flat[c] = old - h
            fm = float(f([Tensor(x) for x in arrays]).data)
            flat[c] = old
            num[j] = (fp - fm) / (2 * h)
        ana = g.reshape(-1)[coords]
        scale = max(np.linalg.norm(num), np.linalg.norm(ana), 1e-10)
        worst = max(worst, float(np.linalg.norm(ana - num) / scale))
    return worst


def param_gradcheck(f, P: dict, names, extra_inputs=(), max_coords: int = 24, seed: int = 0) -> float:
    """Gradient check of ``f(P, *inputs)`` with respect to the named parameters and extra inputs."""
    names = list(names)
    base = dict(P)

    def g(ts):
        q = dict(base)
        q.update(zip(names, ts[: len(names)]))
        return f(q, *ts[len(names):])

    return gradcheck(g, [P[n].data for n in names] + [np.asarray(x) for x in extra_inputs], max_coords=max_coords,
                     seed=seed)


def random_micro(seed: int = 0, scale: float = 0.3, **overrides):
    """Micro config with every parameter randomised so no path is degenerate."""
    cfg = Mo.micro_config(**overrides)
    P = Mo.init_params(cfg, seed)
    rng = np.random.default_rng(seed + 100)
    for k, p in P.items():
        if k.endswith(".tau"):
            p.data[...] = 0.5 + rng.random(p.shape)
        elif k.endswith(".alpha_b"):
            p.data[...] = 1.0 + scale * rng.standard_normal(p.shape)
        else:
            p.data[...] = scale * rng.standard_normal(p.shape)
    return cfg, P


def _weighted(out: Tensor, seed: int) -> Tensor:
    R = np.random.default_rng(seed).standard_normal(out.shape)
    return (out * Tensor(R)).sum()


def layer_checks(seed: int = 0) -> dict[str, float]:
    """Worst gradient-check error per layer type on the micro configuration (f64)."""
    cfg, P = random_micro(seed, depths=[2, 2])
    rng = np.random.default_rng(seed)
    eps = cfg.ln_eps
    B, C, Pn = 2, cfg.C, cfg.P
    t = np.array([[0.3], [0.8]])
    tokens = rng.standard_normal((B, Pn, Pn, C))
    field = rng.standard_normal((B, cfg.n_in, cfg.J, cfg.J))
    out = {}

    def embed(q, a, tt):
        return _weighted(Mo.time_layer_norm(Mo.patch_embed(a, q, cfg.p), tt, q, "embed.norm", eps), 1)

    out["embedding"] = param_gradcheck(embed, P, ["embed.weight", "embed.bias"], [field, t])

    def tln(q, x, tt):
        return _weighted(Mo.time_layer_norm(x, tt, q, "embed.norm", eps), 2)

    out["time_layer_norm"] = param_gradcheck(tln, P, [f"embed.norm.{s}" for s in ("alpha_w", "alpha_b", "beta_w",
                                                                                  "beta_b")], [tokens, t])
    pre = "enc.0.block.0.attn"
    windows = Mo.window_partition(Tensor(tokens), cfg.M).data

    def attn(q, w):
        return _weighted(Mo.wmsa(w, q, pre, cfg.heads[0], cfg.M), 3)

    out["wmsa"] = param_gradcheck(attn, P, [f"{pre}.{s}" for s in ("wq", "bq", "wk", "wv", "bv", "wo", "bo", "tau",
                                                                  "bias_w1", "bias_b1", "bias_w2")], [windows])

    def mlp(q, x, tt):
        return _weighted(Mo.swin_block(x, tt, q, "enc.0.block.1", cfg.heads[0], cfg.M, shifted=True, eps=eps), 4)

    out["swin_block_shifted"] = param_gradcheck(mlp, P, [f"enc.0.block.1.mlp.{s}" for s in ("w1", "b1", "w2", "b2")]
                                                + ["enc.0.block.1.attn.wq", "enc.0.block.1.norm2.alpha_w"], [tokens, t])

    def merge(q, x, tt):
        return _weighted(Mo.patch_merge(x, tt, q, "enc.0.merge", eps), 5)

    out["patch_merge"] = param_gradcheck(merge, P, ["enc.0.merge.weight", "enc.0.merge.norm.beta_w"], [tokens, t])
    coarse = rng.standard_normal((B, Pn // 2, Pn // 2, 2 * C))

    def expand(q, x, tt):
        return _weighted(Mo.patch_expand(x, tt, q, "dec.0.expand", eps), 6)

    out["patch_expand"] = param_gradcheck(expand, P, ["dec.0.expand.w1", "dec.0.expand.w2", "dec.0.expand.norm.alpha_b"],
                                          [coarse, t])

    def convnext(q, x, tt):
        return _weighted(Mo.convnext_block(x, tt, q, "skip.0.0", eps), 7)

    out["convnext"] = param_gradcheck(convnext, P, [f"skip.0.0.{s}" for s in ("dw_weight", "dw_bias", "w1", "b1", "w2",
                                                                              "b2", "w3")], [tokens, t])

    def recover(q, x):
        return _weighted(Mo.patch_recover_mixup(x, q, cfg.p), 8)

    out["recovery_mixup"] = param_gradcheck(recover, P, ["recover.weight", "recover.bias", "mixup.weight"], [tokens])
    return out


def full_model_check(seed: int = 0) -> float:
    """Gradient check of the whole micro model w.r.t. a sample of parameters from every group and the input."""
    cfg, P = random_micro(seed)
    model = Mo.ScotModel(cfg, P)
    a = np.random.default_rng(seed).standard_normal((2, cfg.n_in, cfg.J, cfg.J))
    names = ["embed.weight", "enc.0.block.0.attn.wq", "enc.1.block.0.mlp.w1", "skip.0.0.dw_weight",
             "dec.0.expand.w1", "dec.0.block.0.norm1.alpha_w", "recover.weight", "mixup.weight"]

    def f(q, x):
        m = Mo.ScotModel(cfg, q)
        return _weighted(m.forward(x, np.array([0.25, 0.75])), 9)

    return param_gradcheck(f, model.params, names, [a], max_coords=12)
