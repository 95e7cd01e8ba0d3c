"""Trajectory dataset container: ``meta.json`` + raw little-endian f32 ``data.bin``."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1
LAYOUT = "[traj][time][channel][y][x]"


class DatasetFormatError(ValueError):
    pass


@dataclass
class TrajectoryDataset:
    name: str
    pde: str
    channels: list[str]
    data: np.ndarray  # [traj, time, channel, N, N] float32
    times: np.ndarray
    boundary: str = "periodic"
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.data.ndim != 5:
            raise DatasetFormatError(f"data must be 5-D {LAYOUT}, got shape {self.data.shape}")
        n, nt, nc, N, N2 = self.data.shape
        if N != N2:
            raise DatasetFormatError(f"grids must be square, got {N}x{N2}")
        if nt != len(self.times):
            raise DatasetFormatError(f"{nt} snapshots but {len(self.times)} times")
        if nc != len(self.channels):
            raise DatasetFormatError(f"{nc} channels but names {self.channels}")
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise DatasetFormatError("times must be strictly increasing")

    @property
    def N(self) -> int:
        return self.data.shape[-1]

    @property
    def n_trajectories(self) -> int:
        return self.data.shape[0]

    def subset(self, idx) -> "TrajectoryDataset":
        return TrajectoryDataset(self.name, self.pde, list(self.channels), self.data[idx], self.times,
                                 self.boundary, dict(self.provenance))

    def meta(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "name": self.name,
            "pde": self.pde,
            "channels": list(self.channels),
            "grid": {"N": self.N, "boundary": self.boundary},
            "times": [float(t) for t in self.times],
            "n_trajectories": self.n_trajectories,
            "dtype": "f32",
            "endianness": "little",
            "layout": LAYOUT,
            "provenance": self.provenance,
        }


def content_hash(data: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(data, dtype="<f4").tobytes()).hexdigest()


def write_dataset(ds: TrajectoryDataset, path: str) -> None:
    os.makedirs(path, exist_ok=True)
    raw = np.ascontiguousarray(ds.data, dtype="<f4").tobytes()
    meta = ds.meta()
    meta["provenance"] = dict(ds.provenance, content_sha256=hashlib.sha256(raw).hexdigest())
    tmp = os.path.join(path, "data.bin.tmp")
    with open(tmp, "wb") as f:
        f.write(raw)
    os.replace(tmp, os.path.join(path, "data.bin"))
    with open(os.path.join(path, "meta.json"), "w") as f:
        json.dump(meta, f, indent=1)


def read_dataset(path: str) -> TrajectoryDataset:
    with open(os.path.join(path, "meta.json")) as f:
        meta = json.load(f)
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"unsupported dataset format_version {version!r} (expected {FORMAT_VERSION})")
    if meta.get("dtype") != "f32" or meta.get("endianness") != "little":
        raise DatasetFormatError(f"unsupported payload {meta.get('dtype')}/{meta.get('endianness')}")
    n = int(meta["n_trajectories"])
    nt = len(meta["times"])
    nc = len(meta["channels"])
    N = int(meta["grid"]["N"])
    expected = 4 * n * nt * nc * N * N
    actual = os.path.getsize(os.path.join(path, "data.bin"))
    if actual != expected:
        raise DatasetFormatError(f"data.bin has {actual} bytes, header implies {expected} bytes")
    data = np.fromfile(os.path.join(path, "data.bin"), dtype="<f4").reshape(n, nt, nc, N, N)
    prov = dict(meta.get("provenance", {}))
    prov.pop("content_sha256", None)
    return TrajectoryDataset(meta["name"], meta["pde"], list(meta["channels"]), data.astype(np.float32),
                             np.array(meta["times"]), meta["grid"].get("boundary", "periodic"), prov)
