"""The scOT operator transformer: a shifted-window U-Net with lead-time conditioned norms.

Token grids are channels-last ``[B, P, P, C]`` tensors.  Fields are
channels-first ``[B, n, J, J]``.  Every layer is a plain function of a
parameter dictionary and a name prefix so individual pieces can be tested
and differentiated in isolation.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.stats import truncnorm

from . import tensor as T
from .tensor import Tensor

TAU_MIN = 0.01
NORM_FLOOR = 1e-8
INIT_STD = 0.02
LAYER_SCALE_INIT = 1e-6


@dataclass
class ScotConfig:
    J: int = 64
    p: int = 4
    M: int = 4
    C: int = 32
    L: int = 3
    depths: list[int] = field(default_factory=lambda: [2, 2, 2])
    heads: list[int] = field(default_factory=lambda: [2, 4, 8])
    n_c: int = 2
    n_in: int = 4
    n_out: int = 4
    mlp_ratio: int = 4
    bias_mlp_width: int = 64
    ln_eps: float = 1e-5
    dtype: str = "float32"

    def __post_init__(self):
        self.depths = list(self.depths)
        self.heads = list(self.heads)
        self.validate()

    @property
    def P(self) -> int:
        return self.J // self.p

    def dim(self, level: int) -> int:
        return self.C * 2**level

    def validate(self) -> None:
        if self.L < 1:
            raise ValueError("L must be >= 1")
        if len(self.depths) != self.L or len(self.heads) != self.L:
            raise ValueError(f"depths and heads need {self.L} entries, got {self.depths} and {self.heads}")
        if any(d < 1 for d in self.depths):
            raise ValueError(f"every level needs at least one block, got {self.depths}")
        if self.J % self.p:
            raise ValueError(f"grid size J={self.J} is not divisible by patch size p={self.p}")
        if self.P % (self.M * 2 ** (self.L - 1)):
            raise ValueError(
                f"P=J/p={self.P} must be divisible by M*2^(L-1)={self.M * 2 ** (self.L - 1)}"
            )
        for i, h in enumerate(self.heads):
            if self.dim(i) % h:
                raise ValueError(f"level {i}: width {self.dim(i)} not divisible by {h} heads")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ScotConfig":
        return cls(**d)


def micro_config(**overrides) -> ScotConfig:
    """Tiny configuration used for gradient checks."""
    kw = dict(J=16, p=4, M=2, C=8, L=2, depths=[1, 1], heads=[2, 4], n_c=1, n_in=2, n_out=2,
              bias_mlp_width=8, dtype="float64")
    kw.update(overrides)
    return ScotConfig(**kw)


# ---------------------------------------------------------------------------
# parameter manifest and initialization

Params = dict  # name -> Tensor


def _norm_shapes(prefix: str, c: int) -> list[tuple[str, tuple, str]]:
    return [
        (f"{prefix}.alpha_w", (c,), "zeros"),
        (f"{prefix}.alpha_b", (c,), "ones"),
        (f"{prefix}.beta_w", (c,), "zeros"),
        (f"{prefix}.beta_b", (c,), "zeros"),
    ]


def _block_shapes(prefix: str, c: int, h: int, cfg: ScotConfig) -> list:
    hid = cfg.mlp_ratio * c
    nb = cfg.bias_mlp_width
    return [
        (f"{prefix}.attn.wq", (c, c), "normal"),
        (f"{prefix}.attn.bq", (c,), "zeros"),
        (f"{prefix}.attn.wk", (c, c), "normal"),
        (f"{prefix}.attn.wv", (c, c), "normal"),
        (f"{prefix}.attn.bv", (c,), "zeros"),
        (f"{prefix}.attn.wo", (c, c), "normal"),
        (f"{prefix}.attn.bo", (c,), "zeros"),
        (f"{prefix}.attn.tau", (h,), "ones"),
        (f"{prefix}.attn.bias_w1", (2, nb), "normal"),
        (f"{prefix}.attn.bias_b1", (nb,), "zeros"),
        (f"{prefix}.attn.bias_w2", (nb, h), "normal"),
        *_norm_shapes(f"{prefix}.norm1", c),
        (f"{prefix}.mlp.w1", (c, hid), "normal"),
        (f"{prefix}.mlp.b1", (hid,), "zeros"),
        (f"{prefix}.mlp.w2", (hid, c), "normal"),
        (f"{prefix}.mlp.b2", (c,), "zeros"),
        *_norm_shapes(f"{prefix}.norm2", c),
    ]


def _convnext_shapes(prefix: str, c: int, cfg: ScotConfig) -> list:
    hid = cfg.mlp_ratio * c
    return [
        (f"{prefix}.dw_weight", (c, 7, 7), "normal"),
        (f"{prefix}.dw_bias", (c,), "zeros"),
        *_norm_shapes(f"{prefix}.norm", c),
        (f"{prefix}.w1", (c, hid), "normal"),
        (f"{prefix}.b1", (hid,), "zeros"),
        (f"{prefix}.w2", (hid, c), "normal"),
        (f"{prefix}.b2", (c,), "zeros"),
        (f"{prefix}.w3", (c,), "layer_scale"),
    ]


def param_specs(cfg: ScotConfig) -> list[tuple[str, tuple, str]]:
    """Ordered (name, shape, init rule) for every parameter of the model."""
    C, p = cfg.C, cfg.p
    specs = [
        ("embed.weight", (C, cfg.n_in, p, p), "normal"),
        ("embed.bias", (C,), "zeros"),
        *_norm_shapes("embed.norm", C),
    ]
    for i in range(cfg.L):
        c = cfg.dim(i)
        for j in range(cfg.depths[i]):
            specs += _block_shapes(f"enc.{i}.block.{j}", c, cfg.heads[i], cfg)
        if i < cfg.L - 1:
            specs += [(f"enc.{i}.merge.weight", (4 * c, 2 * c), "normal"), *_norm_shapes(f"enc.{i}.merge.norm", 2 * c)]
            for j in range(cfg.n_c):
                specs += _convnext_shapes(f"skip.{i}.{j}", c, cfg)
    for i in reversed(range(cfg.L)):
        c = cfg.dim(i)
        for j in range(cfg.depths[i]):
            specs += _block_shapes(f"dec.{i}.block.{j}", c, cfg.heads[i], cfg)
        if i < cfg.L - 1:
            specs += [
                (f"dec.{i}.expand.w1", (2 * c, 4 * c), "normal"),
                *_norm_shapes(f"dec.{i}.expand.norm", c),
                (f"dec.{i}.expand.w2", (c, c), "normal"),
            ]
    specs += [
        ("recover.weight", (cfg.n_out, C, p, p), "normal"),
        ("recover.bias", (cfg.n_out,), "zeros"),
        ("mixup.weight", (cfg.n_out, cfg.n_out, 5, 5), "normal"),
    ]
    return specs


EMBED_RECOVER = ("embed.weight", "embed.bias", "recover.weight", "recover.bias", "mixup.weight")
NORM_SUFFIXES = (".alpha_w", ".alpha_b", ".beta_w", ".beta_b")


def param_group(name: str) -> str:
    """'embed_recover', 'time_norm' or 'backbone'."""
    if name in EMBED_RECOVER:
        return "embed_recover"
    if name.endswith(NORM_SUFFIXES):
        return "time_norm"
    return "backbone"


def _rng_for(seed: int, name: str) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), zlib.crc32(name.encode())]))


def init_param(name: str, shape: tuple, rule: str, seed: int, dtype) -> np.ndarray:
    if rule == "zeros":
        return np.zeros(shape, dtype=dtype)
    if rule == "ones":
        return np.ones(shape, dtype=dtype)
    if rule == "layer_scale":
        return np.full(shape, LAYER_SCALE_INIT, dtype=dtype)
    rng = _rng_for(seed, name)
    draw = truncnorm.rvs(-2.0, 2.0, size=shape, random_state=rng)
    return (INIT_STD * draw).astype(dtype)


def init_params(cfg: ScotConfig, seed: int = 0) -> Params:
    """Fresh parameters; each one is drawn from its own stream keyed by (seed, name)."""
    dt = np.dtype(cfg.dtype)
    return {
        name: Tensor(init_param(name, shape, rule, seed, dt), requires_grad=True, name=name)
        for name, shape, rule in param_specs(cfg)
    }


# ---------------------------------------------------------------------------
# layers


def _lead_time(t, batch: int, dtype) -> Tensor:
    arr = np.asarray(t, dtype=dtype).reshape(-1)
    if arr.size == 1:
        arr = np.full(batch, arr[0], dtype=dtype)
    if arr.shape != (batch,):
        raise ValueError(f"lead time has {arr.size} entries for batch {batch}")
    if np.any(arr < 0):
        raise ValueError("lead time must be non-negative")
    return Tensor(arr.reshape(batch, 1))


def time_layer_norm(x: Tensor, t: Tensor, P: Params, prefix: str, eps: float = 1e-5) -> Tensor:
    """Standardize the last axis, then scale by alpha(t) and shift by beta(t).

    ``t`` is a ``[B, 1]`` tensor; ``x`` has batch as its first axis.
    """
    if x.shape[-1] < 2:
        raise T.ShapeError("time_layer_norm needs at least 2 channels")
    y = T.layer_norm(x, eps)
    alpha = t * P[f"{prefix}.alpha_w"] + P[f"{prefix}.alpha_b"]
    beta = t * P[f"{prefix}.beta_w"] + P[f"{prefix}.beta_b"]
    shape = (x.shape[0],) + (1,) * (x.ndim - 2) + (x.shape[-1],)
    return y * alpha.reshape(shape) + beta.reshape(shape)


def patch_embed(a: Tensor, P: Params, p: int) -> Tensor:
    """[B, n, J, J] field -> [B, J/p, J/p, C] tokens, before the norm."""
    B, n, J, J2 = a.shape
    if J % p or J2 % p:
        raise T.ShapeError(f"grid {J}x{J2} is not divisible by patch size {p}")
    Pn = J // p
    patches = a.reshape(B, n, Pn, p, Pn, p).transpose(0, 2, 4, 1, 3, 5).reshape(B, Pn, Pn, n * p * p)
    w = P["embed.weight"]
    w2 = w.reshape(w.shape[0], -1).transpose()
    return patches @ w2 + P["embed.bias"]


@lru_cache(maxsize=None)
def rel_pos_features(M: int) -> np.ndarray:
    """[M*M, M*M, 2] table of sign(d)*log(1+|d|) for (dx, dy) between window slots."""
    ys, xs = np.divmod(np.arange(M * M), M)
    dx = (xs[:, None] - xs[None, :]).astype(np.float64)
    dy = (ys[:, None] - ys[None, :]).astype(np.float64)
    feat = np.stack([np.sign(dx) * np.log1p(np.abs(dx)), np.sign(dy) * np.log1p(np.abs(dy))], axis=-1)
    feat.setflags(write=False)
    return feat


def rel_pos_bias(M: int, P: Params, prefix: str) -> Tensor:
    """[heads, M*M, M*M] bias matrix from the log-relative-position MLP."""
    w1 = P[f"{prefix}.bias_w1"]
    feat = Tensor(rel_pos_features(M).astype(w1.dtype))
    hid = T.relu(feat @ w1 + P[f"{prefix}.bias_b1"])
    return (hid @ P[f"{prefix}.bias_w2"]).transpose(2, 0, 1)


def cyclic_shift(x: Tensor, offset: int) -> Tensor:
    """Circular roll of a [B, P, P, C] token grid by (offset, offset)."""
    return T.roll(x, (offset, offset), (1, 2))


def window_partition(x: Tensor, M: int) -> Tensor:
    B, Pn, _, C = x.shape
    if Pn % M:
        raise T.ShapeError(f"token grid {Pn} is not a multiple of window {M}")
    n = Pn // M
    return x.reshape(B, n, M, n, M, C).transpose(0, 1, 3, 2, 4, 5).reshape(B * n * n, M * M, C)


def window_reverse(w: Tensor, M: int, Pn: int) -> Tensor:
    n = Pn // M
    C = w.shape[-1]
    B = w.shape[0] // (n * n)
    return w.reshape(B, n, n, M, M, C).transpose(0, 1, 3, 2, 4, 5).reshape(B, Pn, Pn, C)


def wmsa(w: Tensor, P: Params, prefix: str, heads: int, M: int) -> Tensor:
    """Windowed multi-head cosine attention on [n_windows, M*M, C] tokens."""
    Bw, n, C = w.shape
    d = C // heads

    def split(z):
        return z.reshape(Bw, n, heads, d).transpose(0, 2, 1, 3)

    q = split(w @ P[f"{prefix}.wq"] + P[f"{prefix}.bq"])
    k = split(w @ P[f"{prefix}.wk"])
    v = split(w @ P[f"{prefix}.wv"] + P[f"{prefix}.bv"])
    qn = T.l2_normalize(q, -1, NORM_FLOOR)
    kn = T.l2_normalize(k, -1, NORM_FLOOR)
    tau = T.clamp_min(P[f"{prefix}.tau"], TAU_MIN).reshape(1, heads, 1, 1)
    scores = (qn @ kn.transpose(0, 1, 3, 2)) / tau + rel_pos_bias(M, P, prefix)
    attn = T.softmax(scores, -1)
    out = (attn @ v).transpose(0, 2, 1, 3).reshape(Bw, n, C)
    return out @ P[f"{prefix}.wo"] + P[f"{prefix}.bo"]


def swin_block(x: Tensor, t: Tensor, P: Params, prefix: str, heads: int, M: int,
               shifted: bool, eps: float = 1e-5) -> Tensor:
    """v' = v + LN_t(attn(v)); out = v' + LN_t(MLP(v')) on a [B, P, P, C] grid."""
    Pn = x.shape[1]
    shift = shifted and Pn > M
    xs = cyclic_shift(x, -(M // 2)) if shift else x
    a = window_reverse(wmsa(window_partition(xs, M), P, f"{prefix}.attn", heads, M), M, Pn)
    if shift:
        a = cyclic_shift(a, M // 2)
    x = x + time_layer_norm(a, t, P, f"{prefix}.norm1", eps)
    h = T.gelu(x @ P[f"{prefix}.mlp.w1"] + P[f"{prefix}.mlp.b1"]) @ P[f"{prefix}.mlp.w2"] + P[f"{prefix}.mlp.b2"]
    return x + time_layer_norm(h, t, P, f"{prefix}.norm2", eps)


def swin_stage(x: Tensor, t: Tensor, P: Params, prefix: str, depth: int, heads: int, M: int, eps: float) -> Tensor:
    for j in range(depth):
        x = swin_block(x, t, P, f"{prefix}.block.{j}", heads, M, shifted=bool(j % 2), eps=eps)
    return x


def patch_merge(x: Tensor, t: Tensor, P: Params, prefix: str, eps: float = 1e-5) -> Tensor:
    """[B, P, P, C] -> [B, P/2, P/2, 2C]: stack 2x2 groups, project, norm."""
    B, Pn, _, C = x.shape
    if Pn % 2:
        raise T.ShapeError(f"patch_merge needs an even token grid, got {Pn}")
    h = Pn // 2
    stacked = x.reshape(B, h, 2, h, 2, C).transpose(0, 1, 3, 2, 4, 5).reshape(B, h, h, 4 * C)
    return time_layer_norm(stacked @ P[f"{prefix}.weight"], t, P, f"{prefix}.norm", eps)


def patch_expand(x: Tensor, t: Tensor, P: Params, prefix: str, eps: float = 1e-5) -> Tensor:
    """[B, P, P, 2C] -> [B, 2P, 2P, C]: project to 4C, unstack 2x2, norm, project."""
    B, Pn, _, C2 = x.shape
    C = C2 // 2
    up = (x @ P[f"{prefix}.w1"]).reshape(B, Pn, Pn, 2, 2, C).transpose(0, 1, 3, 2, 4, 5).reshape(B, 2 * Pn, 2 * Pn, C)
    return time_layer_norm(up, t, P, f"{prefix}.norm", eps) @ P[f"{prefix}.w2"]


def convnext_block(x: Tensor, t: Tensor, P: Params, prefix: str, eps: float = 1e-5) -> Tensor:
    """Depthwise 7x7 conv, norm, pointwise MLP, layer scale, residual."""
    C = x.shape[-1]
    y = T.conv2d(x.transpose(0, 3, 1, 2), P[f"{prefix}.dw_weight"], depthwise=True)
    y = y.transpose(0, 2, 3, 1) + P[f"{prefix}.dw_bias"]
    y = time_layer_norm(y, t, P, f"{prefix}.norm", eps)
    y = T.gelu(y @ P[f"{prefix}.w1"] + P[f"{prefix}.b1"]) @ P[f"{prefix}.w2"] + P[f"{prefix}.b2"]
    return x + y * P[f"{prefix}.w3"]


def patch_recover(x: Tensor, P: Params, p: int) -> Tensor:
    """[B, P, P, C] tokens -> [B, n_out, J, J] assembled field (before mixup)."""
    B, Pn, _, C = x.shape
    w = P["recover.weight"]
    n_out = w.shape[0]
    w2 = w.transpose(1, 0, 2, 3).reshape(C, n_out * p * p)
    patches = (x @ w2).reshape(B, Pn, Pn, n_out, p, p)
    field_ = patches.transpose(0, 3, 1, 4, 2, 5).reshape(B, n_out, Pn * p, Pn * p)
    return field_ + P["recover.bias"].reshape(1, n_out, 1, 1)


def patch_recover_mixup(x: Tensor, P: Params, p: int) -> Tensor:
    return T.conv2d(patch_recover(x, P, p), P["mixup.weight"])


# ---------------------------------------------------------------------------
# model


class ScotModel:
    """Configuration plus named parameters; callable as ``model(a, t)``."""

    def __init__(self, config: ScotConfig, params: Params | None = None, seed: int = 0):
        self.config = config
        self.params = init_params(config, seed) if params is None else params

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(self.config.dtype)

    def names(self) -> list[str]:
        return list(self.params)

    def groups(self) -> dict[str, list[str]]:
        out = {"backbone": [], "embed_recover": [], "time_norm": []}
        for name in self.params:
            out[param_group(name)].append(name)
        return out

    def forward(self, a, t) -> Tensor:
        return forward(self, a, t)

    def __call__(self, a, t) -> np.ndarray:
        """Forward pass outside of any tape; accepts [n,J,J] or [B,n,J,J] arrays."""
        arr = np.asarray(a.data if isinstance(a, Tensor) else a, dtype=self.dtype)
        single = arr.ndim == 3
        out = forward(self, arr[None] if single else arr, t).data
        return out[0] if single else out

    def copy(self) -> "ScotModel":
        params = {k: Tensor(v.data.copy(), requires_grad=True, name=k) for k, v in self.params.items()}
        return ScotModel(self.config, params)

    def num_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))


def forward(model: ScotModel, a, t) -> Tensor:
    """Full U-shaped pipeline: embed, encoder, bottleneck, decoder with ConvNeXt skips, recover."""
    cfg, P = model.config, model.params
    eps = cfg.ln_eps
    if not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=model.dtype))
    if a.ndim == 3:
        a = a.reshape(1, *a.shape)
    B, n, J, J2 = a.shape
    if n != cfg.n_in or J != cfg.J or J2 != cfg.J:
        raise T.ShapeError(f"input {a.shape} does not match model ({cfg.n_in}, {cfg.J}, {cfg.J})")
    tt = _lead_time(t, B, a.dtype)

    x = time_layer_norm(patch_embed(a, P, cfg.p), tt, P, "embed.norm", eps)
    skips = []
    for i in range(cfg.L - 1):
        s = swin_stage(x, tt, P, f"enc.{i}", cfg.depths[i], cfg.heads[i], cfg.M, eps)
        k = s
        for j in range(cfg.n_c):
            k = convnext_block(k, tt, P, f"skip.{i}.{j}", eps)
        skips.append(k)
        x = patch_merge(s + x, tt, P, f"enc.{i}.merge", eps)
    last = cfg.L - 1
    y = swin_stage(x, tt, P, f"enc.{last}", cfg.depths[last], cfg.heads[last], cfg.M, eps)
    y = swin_stage(y, tt, P, f"dec.{last}", cfg.depths[last], cfg.heads[last], cfg.M, eps)
    for i in reversed(range(cfg.L - 1)):
        y = patch_expand(y, tt, P, f"dec.{i}.expand", eps) + skips[i]
        y = swin_stage(y, tt, P, f"dec.{i}", cfg.depths[i], cfg.heads[i], cfg.M, eps)
    return patch_recover_mixup(y, P, cfg.p)


def rollout(model: Callable, a, schedule: Sequence[float]):
    """Autoregressive evaluation reaching ``schedule[-1]``.

    The first call uses lead time ``schedule[0]``; later calls use the
    consecutive differences.  A one-entry schedule is a direct evaluation.
    """
    times = [float(s) for s in schedule]
    if not times:
        raise ValueError("rollout schedule is empty")
    if times[0] <= 0:
        raise ValueError(f"rollout schedule must start above 0, got {times[0]}")
    if any(b <= a_ for a_, b in zip(times, times[1:])):
        raise ValueError(f"rollout schedule must be strictly increasing, got {times}")
    u = a
    prev = 0.0
    for s in times:
        u = model(u, s - prev if prev else s)
        prev = s
    return u


def rollout_states(model: Callable, a, schedule: Sequence[float]) -> list:
    """Like :func:`rollout` but returns every intermediate state."""
    states = []
    prev = 0.0
    u = a
    for s in schedule:
        u = model(u, float(s) - prev if prev else float(s))
        prev = float(s)
        states.append(u)
    return states


def homogeneous_schedule(t_final: float, steps: int) -> list[float]:
    if steps < 1:
        raise ValueError("need at least one rollout step")
    return [t_final * (i + 1) / steps for i in range(steps)]


# ---------------------------------------------------------------------------
# checkpoints

FORMAT_VERSION = 1


def save_checkpoint(model: ScotModel, path: str, extra: dict | None = None) -> None:
    """Write ``model.json`` (config + manifest) and ``weights.bin`` into directory ``path``.

    float32 models are stored as little-endian f32; float64 models keep f64
    so that a round trip is bitwise exact in both cases.
    """
    os.makedirs(path, exist_ok=True)
    dt = model.dtype.newbyteorder("<")
    manifest, offset = [], 0
    blobs = []
    for name, p in model.params.items():
        buf = np.ascontiguousarray(p.data, dtype=dt).tobytes()
        manifest.append({"name": name, "shape": list(p.shape), "dtype": "f32" if dt.itemsize == 4 else "f64",
                         "byte_offset": offset})
        offset += len(buf)
        blobs.append(buf)
    meta = {"format_version": FORMAT_VERSION, "config": model.config.to_dict(), "manifest": manifest}
    if extra:
        meta["extra"] = extra
    tmp = os.path.join(path, "weights.bin.tmp")
    with open(tmp, "wb") as f:
        for b in blobs:
            f.write(b)
    os.replace(tmp, os.path.join(path, "weights.bin"))
    with open(os.path.join(path, "model.json"), "w") as f:
        json.dump(meta, f, indent=1)


def read_checkpoint(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(os.path.join(path, "model.json")) as f:
        meta = json.load(f)
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
    raw = open(os.path.join(path, "weights.bin"), "rb").read()
    arrays = {}
    for ent in meta["manifest"]:
        dt = np.dtype("<f4" if ent["dtype"] == "f32" else "<f8")
        n = int(np.prod(ent["shape"], dtype=np.int64))
        start = ent["byte_offset"]
        end = start + n * dt.itemsize
        if end > len(raw):
            raise ValueError(f"weights.bin too short for parameter {ent['name']!r}: need {end} bytes, have {len(raw)}")
        arrays[ent["name"]] = np.frombuffer(raw, dtype=dt, count=n, offset=start).reshape(ent["shape"])
    return meta, arrays


def check_manifest(expected: ScotConfig, arrays: dict[str, np.ndarray], skip: Sequence[str] = ()) -> None:
    want = {name: shape for name, shape, _ in param_specs(expected)}
    for name, shape in want.items():
        if name in skip:
            continue
        if name not in arrays:
            raise ValueError(f"checkpoint is missing parameter {name!r}")
        if tuple(arrays[name].shape) != tuple(shape):
            raise ValueError(
                f"parameter {name!r} has shape {tuple(arrays[name].shape)} in checkpoint, model expects {tuple(shape)}"
            )
    extra = set(arrays) - set(want)
    if extra:
        raise ValueError(f"checkpoint has unexpected parameters {sorted(extra)}")


def load_checkpoint(path: str, expect: ScotConfig | None = None) -> ScotModel:
    """Load a model; if ``expect`` is given the stored manifest must match it."""
    meta, arrays = read_checkpoint(path)
    cfg = ScotConfig.from_dict(meta["config"])
    check_manifest(expect if expect is not None else cfg, arrays)
    if expect is not None:
        cfg = expect
    dt = np.dtype(cfg.dtype)
    params = {name: Tensor(arrays[name].astype(dt), requires_grad=True, name=name) for name, _, _ in param_specs(cfg)}
    return ScotModel(cfg, params)
