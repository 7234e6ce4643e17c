"""Analytic double-gyre flow, passive sensor advection and the mobile-sensor
reconstruction dataset built from it."""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from rs4d.errors import ConfigError, SizeError

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class GyreParams:
    amplitude: float = 0.5
    omega: float = 2 * math.pi
    epsilon: float = 0.25
    nx: int = 201
    ny: int = 101
    # +1: v = (-psi_y, +psi_x); -1 flips the y-velocity
    vy_sign: float = 1.0

    lx = 2.0
    ly = 1.0

    @property
    def h(self) -> float:
        return self.lx / (self.nx - 1)

    def grid(self) -> tuple[np.ndarray, np.ndarray]:
        return np.linspace(0.0, self.lx, self.nx), np.linspace(0.0, self.ly, self.ny)


def _f_terms(p: GyreParams, x, t):
    s = p.epsilon * np.sin(p.omega * t)
    f = s * x**2 + (1.0 - 2.0 * s) * x
    fx = 2.0 * s * x + 1.0 - 2.0 * s
    fxx = 2.0 * s
    return f, fx, fxx


def stream_function(p: GyreParams, x, y, t):
    f, _, _ = _f_terms(p, x, t)
    return p.amplitude * np.sin(np.pi * f) * np.sin(np.pi * y)


def velocity(p: GyreParams, x, y, t):
    f, fx, _ = _f_terms(p, x, t)
    pa = np.pi * p.amplitude
    vx = -pa * np.sin(np.pi * f) * np.cos(np.pi * y)
    vy = p.vy_sign * pa * np.cos(np.pi * f) * np.sin(np.pi * y) * fx
    return vx, vy


def vorticity(p: GyreParams, x, y, t):
    """dvy/dx - dvx/dy from the closed-form second derivatives of psi."""
    f, fx, fxx = _f_terms(p, x, t)
    a = p.amplitude
    sf, cf = np.sin(np.pi * f), np.cos(np.pi * f)
    sy = np.sin(np.pi * y)
    psi_xx = np.pi * a * sy * (cf * fxx - np.pi * sf * fx**2)
    psi_yy = -(np.pi**2) * a * sf * sy
    return p.vy_sign * psi_xx + psi_yy


def vorticity_grid(p: GyreParams, t) -> np.ndarray:
    """Field on the nx x ny grid; with array ``t`` the time axes lead."""
    xs, ys = p.grid()
    t = np.asarray(t, dtype=np.float64)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return vorticity(p, gx, gy, t[..., None, None])


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray  # (K,)
    positions: np.ndarray  # (K, 2)
    measurements: np.ndarray  # (K,)


def _clamp(p: GyreParams, xy: np.ndarray) -> np.ndarray:
    xy[..., 0] = np.clip(xy[..., 0], 0.0, p.lx)
    xy[..., 1] = np.clip(xy[..., 1], 0.0, p.ly)
    return xy


def _rhs(p: GyreParams, xy: np.ndarray, t) -> np.ndarray:
    vx, vy = velocity(p, xy[..., 0], xy[..., 1], t)
    return np.stack([vx, vy], axis=-1)


def advect_many(
    p: GyreParams,
    starts,
    t0,
    horizon: float,
    dt_sample: float = 0.005,
    substeps: int = 4,
) -> tuple[np.ndarray, np.ndarray]:
    """RK4-integrate many sensors at once.

    starts: (S, 2), t0: (S,). Returns times (S, K) and positions (S, K, 2)
    sampled every ``dt_sample`` including both endpoints.
    """
    xy = _clamp(p, np.array(starts, dtype=np.float64, ndmin=2))
    t0 = np.broadcast_to(np.asarray(t0, dtype=np.float64), (xy.shape[0],))
    nsamp = int(round(horizon / dt_sample)) + 1
    h = dt_sample / substeps
    out = np.empty((xy.shape[0], nsamp, 2))
    out[:, 0] = xy
    for k in range(1, nsamp):
        for j in range(substeps):
            t = (t0 + (k - 1) * dt_sample + j * h)[:, None]
            k1 = _rhs(p, xy, t[:, 0])
            k2 = _rhs(p, xy + 0.5 * h * k1, t[:, 0] + 0.5 * h)
            k3 = _rhs(p, xy + 0.5 * h * k2, t[:, 0] + 0.5 * h)
            k4 = _rhs(p, xy + h * k3, t[:, 0] + h)
            xy = _clamp(p, xy + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))
        out[:, k] = xy
    times = t0[:, None] + dt_sample * np.arange(nsamp)[None, :]
    return times, out


def advect(
    p: GyreParams,
    start,
    t0: float,
    horizon: float,
    dt_sample: float = 0.005,
    substeps: int = 4,
) -> Trajectory:
    times, pos = advect_many(p, np.asarray(start, dtype=np.float64)[None, :], [t0], horizon, dt_sample, substeps)
    meas = vorticity(p, pos[0, :, 0], pos[0, :, 1], times[0])
    return Trajectory(times[0], pos[0], meas)


@dataclass(frozen=True)
class NoiseSpec:
    mode: Literal["clean", "noisy", "disturbed"] = "clean"
    sigma: float = 0.1
    disturbance_magnitude: float = 5.0
    disturbance_step: int = -1

    def __post_init__(self):
        if self.mode not in ("clean", "noisy", "disturbed"):
            raise ConfigError(f"unknown noise mode {self.mode!r}")
        if self.sigma < 0:
            raise ConfigError("sigma must be >= 0")


MODE_CODES = {"clean": 0, "noisy": 1, "disturbed": 2}


@dataclass(frozen=True)
class DatasetConfig:
    params: GyreParams = field(default_factory=GyreParams)
    counts: tuple[int, int, int] = (2048, 512, 512)
    horizon: float = 4.0
    dt_sample: float = 0.005
    substeps: int = 4
    eval_fraction: float = 0.5
    eval_stride: int = 1


def preset(name: str) -> DatasetConfig:
    if name == "full":
        return DatasetConfig()
    if name == "desk":
        return DatasetConfig(GyreParams(nx=51, ny=26), (256, 64, 64), horizon=2.0, eval_stride=10)
    raise ConfigError(f"unknown dataset preset {name!r}")


def eval_indices(steps: int, fraction: float = 0.5, stride: int = 1) -> np.ndarray:
    """Evaluated steps in the last ceil(fraction * steps), always ending at the final step."""
    t_eval = max(1, math.ceil(fraction * steps))
    return np.arange(steps - 1, steps - 1 - t_eval, -stride)[::-1].copy()


@dataclass
class Split:
    inputs: np.ndarray  # (S, K, 3): standardized vorticity, x/2, y
    targets: np.ndarray  # (S, E, nx*ny) standardized vorticity
    t0: np.ndarray
    starts: np.ndarray


@dataclass
class Stats:
    meas_mean: float
    meas_std: float
    field_mean: float
    field_std: float

    def standardize(self, v):
        return (np.asarray(v) - self.meas_mean) / self.meas_std

    def unstandardize(self, v):
        return np.asarray(v) * self.meas_std + self.meas_mean


@dataclass
class SensorDataset:
    splits: dict[str, Split]
    stats: Stats
    eval_index: np.ndarray
    field_shape: tuple[int, int]
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    @property
    def seq_len(self) -> int:
        return self.splits["train"].inputs.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.splits["train"].inputs.shape[2]

    @property
    def output_dim(self) -> int:
        return self.field_shape[0] * self.field_shape[1]

    def counts(self) -> tuple[int, ...]:
        return tuple(self.splits[s].inputs.shape[0] for s in SPLITS)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for s in SPLITS:
            h.update(self.splits[s].inputs.tobytes())
            h.update(self.splits[s].targets.tobytes())
        return h.hexdigest()


def _sample_rng(seed: int, split: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, split, index])


def apply_noise(inputs: np.ndarray, noise: NoiseSpec, seed: int, split: int = 0) -> np.ndarray:
    """Corrupt the standardized measurement channel (feature 0) of each sample.

    noisy: Gaussian with std ``sigma`` at every step. disturbed: a single
    offset of +-``disturbance_magnitude`` at ``disturbance_step``.
    """
    out = np.array(inputs, dtype=np.float64, copy=True)
    if noise.mode == "clean":
        return out
    for i in range(out.shape[0]):
        rng = np.random.default_rng([seed, split, i, 1 + MODE_CODES[noise.mode]])
        if noise.mode == "noisy":
            out[i, :, 0] += noise.sigma * rng.standard_normal(out.shape[1])
        else:
            sign = 1.0 if rng.random() < 0.5 else -1.0
            out[i, noise.disturbance_step, 0] += sign * noise.disturbance_magnitude
    return out


def make_dataset(
    cfg: DatasetConfig,
    noise: NoiseSpec | None = None,
    seed: int = 0,
) -> SensorDataset:
    """Random starts uniform in the domain, start times uniform in [0, 1).

    Standardization statistics come from the clean train split and are
    applied to every split; ``noise`` then corrupts all splits.
    """
    noise = noise or NoiseSpec()
    p = cfg.params
    if min(cfg.counts) < 1:
        raise SizeError("every split needs at least one sample")
    raw = {}
    for si, name in enumerate(SPLITS):
        count = cfg.counts[si]
        draws = np.array([_sample_rng(seed, si, i).random(3) for i in range(count)])
        starts = np.column_stack([draws[:, 0] * p.lx, draws[:, 1] * p.ly])
        t0 = draws[:, 2]
        times, pos = advect_many(p, starts, t0, cfg.horizon, cfg.dt_sample, cfg.substeps)
        meas = vorticity(p, pos[..., 0], pos[..., 1], times)
        raw[name] = (times, pos, meas, starts, t0)
    steps = raw["train"][0].shape[1]
    eidx = eval_indices(steps, cfg.eval_fraction, cfg.eval_stride)
    train_meas = raw["train"][2]
    train_field = vorticity_grid(p, raw["train"][0][:, eidx])
    stats = Stats(
        float(train_meas.mean()),
        float(train_meas.std()),
        float(train_field.mean()),
        float(train_field.std()),
    )
    splits = {}
    for si, name in enumerate(SPLITS):
        times, pos, meas, starts, t0 = raw[name]
        inputs = np.stack(
            [stats.standardize(meas), pos[..., 0] / p.lx, pos[..., 1] / p.ly], axis=-1
        )
        inputs = apply_noise(inputs, noise, seed, si)
        fld = train_field if name == "train" else vorticity_grid(p, times[:, eidx])
        targets = ((fld - stats.field_mean) / stats.field_std).reshape(len(t0), len(eidx), -1)
        splits[name] = Split(inputs, targets, t0, starts)
    return SensorDataset(splits, stats, eidx, (p.nx, p.ny), noise)


# dataset file: "S4DS", u32 version, then header
#   u32 x3 counts, u32 seq_len, u32 feature_dim, u32 nx, u32 ny,
#   u32 n_eval, u32 x n_eval eval indices,
#   f64 x4 (meas_mean, meas_std, field_mean, field_std),
#   u32 noise mode, f64 sigma, f64 disturbance magnitude
# followed by per-sample inputs then targets as little-endian float32.
DATASET_MAGIC = b"S4DS"
DATASET_VERSION = 1


def write_dataset(ds: SensorDataset, path: str | Path) -> None:
    counts = ds.counts()
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<I", DATASET_VERSION))
        fh.write(struct.pack("<3I", *counts))
        fh.write(struct.pack("<4I", ds.seq_len, ds.feature_dim, *ds.field_shape))
        fh.write(struct.pack("<I", len(ds.eval_index)))
        fh.write(struct.pack(f"<{len(ds.eval_index)}I", *[int(i) for i in ds.eval_index]))
        st = ds.stats
        fh.write(struct.pack("<4d", st.meas_mean, st.meas_std, st.field_mean, st.field_std))
        fh.write(struct.pack("<Idd", MODE_CODES[ds.noise.mode], ds.noise.sigma, ds.noise.disturbance_magnitude))
        for name in SPLITS:
            sp = ds.splits[name]
            for i in range(sp.inputs.shape[0]):
                fh.write(sp.inputs[i].astype("<f4").tobytes())
                fh.write(sp.targets[i].astype("<f4").tobytes())


def read_header(fh) -> dict:
    magic = fh.read(4)
    if magic != DATASET_MAGIC:
        raise ConfigError("not a dataset file (bad magic)")
    (version,) = struct.unpack("<I", fh.read(4))
    if version != DATASET_VERSION:
        raise ConfigError(f"unsupported dataset version {version}")
    counts = struct.unpack("<3I", fh.read(12))
    seq_len, feat, nx, ny = struct.unpack("<4I", fh.read(16))
    (n_eval,) = struct.unpack("<I", fh.read(4))
    eidx = struct.unpack(f"<{n_eval}I", fh.read(4 * n_eval))
    stats = struct.unpack("<4d", fh.read(32))
    mode, sigma, mag = struct.unpack("<Idd", fh.read(20))
    modes = {v: k for k, v in MODE_CODES.items()}
    return {
        "version": version,
        "counts": counts,
        "seq_len": seq_len,
        "feature_dim": feat,
        "field_dims": (nx, ny),
        "eval_index": list(eidx),
        "stats": dict(zip(("meas_mean", "meas_std", "field_mean", "field_std"), stats)),
        "noise": {"mode": modes[mode], "sigma": sigma, "disturbance_magnitude": mag},
    }


def read_dataset(path: str | Path) -> SensorDataset:
    with open(path, "rb") as fh:
        hdr = read_header(fh)
        seq, feat = hdr["seq_len"], hdr["feature_dim"]
        nx, ny = hdr["field_dims"]
        ne = len(hdr["eval_index"])
        per_in, per_tg = seq * feat, ne * nx * ny
        splits = {}
        for name, count in zip(SPLITS, hdr["counts"]):
            block = np.frombuffer(fh.read(4 * count * (per_in + per_tg)), dtype="<f4")
            if block.size != count * (per_in + per_tg):
                raise ConfigError(f"{path}: truncated dataset file")
            block = block.reshape(count, per_in + per_tg).astype(np.float64)
            splits[name] = Split(
                block[:, :per_in].reshape(count, seq, feat),
                block[:, per_in:].reshape(count, ne, nx * ny),
                np.full(count, np.nan),
                np.full((count, 2), np.nan),
            )
    nz = hdr["noise"]
    return SensorDataset(
        splits,
        Stats(**hdr["stats"]),
        np.array(hdr["eval_index"]),
        (nx, ny),
        NoiseSpec(nz["mode"], nz["sigma"], nz["disturbance_magnitude"]),
    )


def describe(path: str | Path) -> str:
    with open(path, "rb") as fh:
        hdr = read_header(fh)
    eidx = hdr["eval_index"]
    lines = [
        f"format: S4DS v{hdr['version']}",
        "counts: train={} val={} test={}".format(*hdr["counts"]),
        f"seq_len: {hdr['seq_len']}",
        f"feature_dim: {hdr['feature_dim']}",
        "field_dims: {}x{}".format(*hdr["field_dims"]),
        f"eval_steps: {len(eidx)} ({eidx[0]}..{eidx[-1]})",
    ]
    lines += [f"{k}: {v:.12g}" for k, v in hdr["stats"].items()]
    nz = hdr["noise"]
    lines.append(f"noise: {nz['mode']} sigma={nz['sigma']:g} disturbance={nz['disturbance_magnitude']:g}")
    return "\n".join(lines)
