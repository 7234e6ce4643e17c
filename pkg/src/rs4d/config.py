"""Flat key=value run configuration.

Files hold one ``key = value`` per line, ``#`` starts a comment. Every key
is also a command-line flag (``--key value``) and flags win over the file.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from rs4d.errors import ConfigError


def _bool(v: str) -> bool:
    s = str(v).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _ints(v: str) -> tuple[int, ...]:
    s = str(v).strip()
    return tuple(int(x) for x in s.split(",")) if s else ()


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable[[str], Any]
    default: str
    help: str


KEYS = [
    Key("out_dir", str, "runs/default", "output directory for every command"),
    Key("seed", int, "0", "master seed (data generation and model init)"),
    Key("deterministic", _bool, "true", "single thread + deterministic torch kernels"),
    # data
    Key("preset", str, "desk", "dataset preset: desk or full"),
    Key("dataset", str, "", "dataset file (default: <out_dir>/dataset.s4ds)"),
    Key("counts", _ints, "", "train,val,test sample counts overriding the preset"),
    Key("horizon", float, "0", "trajectory length in flow periods (0: preset)"),
    Key("grid_nx", int, "0", "target grid points along x (0: preset)"),
    Key("grid_ny", int, "0", "target grid points along y (0: preset)"),
    Key("eval_stride", int, "0", "stride between evaluated steps (0: preset)"),
    Key("vy_sign", float, "1", "sign of the y-velocity (+1: v = (-psi_y, psi_x))"),
    Key("noise_mode", str, "clean", "corruption baked into gen-data output: clean, noisy, disturbed"),
    Key("noise_sigma", float, "0.1", "noisy-mode std in standardized units"),
    Key("disturbance", float, "5.0", "disturbed-mode offset in standardized units"),
    # model
    Key("model", str, "rs4d", "recurrent block: rs4d (Butterworth first layer) or s4d"),
    Key("hidden", int, "64", "features per recurrent layer"),
    Key("state", int, "64", "state size of each SSM"),
    Key("bw_state", int, "0", "state size of the Butterworth layer (0: same as state)"),
    Key("layers", int, "2", "number of recurrent layers"),
    Key("channels", int, "1", "output channels per SSM"),
    Key("init", str, "s4d_lin", "init of the memorization layers"),
    Key("decoder_hidden", _ints, "128,128", "decoder hidden widths"),
    Key("dt_min", float, "0.001", "lower bound of the log-uniform step size"),
    Key("dt_max", float, "0.1", "upper bound of the log-uniform step size"),
    Key("s4dc", _bool, "false", "H2-constrained X update after every optimizer step"),
    # training
    Key("epochs", int, "20", "training epochs"),
    Key("batch_size", int, "16", "minibatch size"),
    Key("lr", float, "0.001", "Adam learning rate for encoder, mixing and decoder"),
    Key("ssm_lr", float, "0.0001", "Adam learning rate for SSM parameters"),
    # evaluation / reports
    Key("checkpoint", str, "", "checkpoint file (default: <out_dir>/model.s4ck)"),
    Key("eval_split", str, "test", "split evaluated by eval"),
    Key("eval_seed", int, "1234", "seed for the noisy / disturbed evaluation draws"),
    Key("bode_per_decade", int, "200", "Bode samples per decade on [1e-2, 1e4]"),
    # kernel check
    Key("kc_states", _ints, "4,16,32", "state sizes for kernel-check"),
    Key("kc_lengths", _ints, "64,256,512", "kernel lengths for kernel-check (powers of two)"),
    Key("kc_dplr_dt", float, "0.05", "step size for the DPLR generating-function check"),
]
KEY_MAP = {k.name: k for k in KEYS}


class RunConfig(dict):
    """Resolved configuration: every key present, values parsed."""

    def __getattr__(self, name):
        try:
            return self[name]
        except KeyError as exc:
            raise AttributeError(name) from exc

    def dataset_path(self) -> Path:
        return Path(self.dataset) if self.dataset else Path(self.out_dir) / "dataset.s4ds"

    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else Path(self.out_dir) / "model.s4ck"

    def as_text(self) -> dict[str, str]:
        out = {}
        for k in KEYS:
            v = self[k.name]
            out[k.name] = ",".join(map(str, v)) if isinstance(v, tuple) else str(v).lower() if isinstance(v, bool) else str(v)
        return out


def parse_file(path: str | Path) -> dict[str, str]:
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in KEY_MAP:
                raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = value
    return values


def resolve(file_values: dict[str, str] | None = None, overrides: dict[str, str] | None = None) -> RunConfig:
    raw = {k.name: k.default for k in KEYS}
    for src in (file_values or {}, overrides or {}):
        for key, value in src.items():
            if key not in KEY_MAP:
                raise ConfigError(f"unknown config key {key!r}")
            raw[key] = value
    cfg = RunConfig()
    for k in KEYS:
        try:
            cfg[k.name] = k.parse(raw[k.name])
        except ValueError as exc:
            raise ConfigError(f"bad value for {k.name!r}: {raw[k.name]!r} ({exc})") from exc
    if cfg.model not in ("rs4d", "s4d"):
        raise ConfigError(f"model must be rs4d or s4d, got {cfg.model!r}")
    if cfg.noise_mode not in ("clean", "noisy", "disturbed"):
        raise ConfigError(f"unknown noise_mode {cfg.noise_mode!r}")
    if cfg.eval_split not in ("train", "val", "test"):
        raise ConfigError(f"unknown eval_split {cfg.eval_split!r}")
    return cfg
