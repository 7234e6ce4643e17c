"""Command-line entry point: ``rs4d <command> [--config FILE] [--key value ...]``.

Exit codes: 0 success, 1 tolerance or assertion failure, 2 config error,
3 IO error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from rs4d import __version__
from rs4d.config import KEYS, RunConfig, parse_file, resolve
from rs4d.errors import ConfigError
from rs4d.gyre import (
    SPLITS,
    NoiseSpec,
    apply_noise,
    describe,
    make_dataset,
    preset,
    read_dataset,
    write_dataset,
)
from rs4d.hippo import hippo_dplr
from rs4d.initialization import INIT_KINDS, InitSpec, bode_grid, h2_norm, init_diagonal, transfer_eval
from rs4d.kernels import discretize_bilinear, discretize_zoh, kernel_dplr_genfun, kernel_naive, kernel_vandermonde
from rs4d.model import ModelConfig, ShredModel, load_checkpoint, mean_h2, read_checkpoint, save_checkpoint
from rs4d.training import NonFiniteLoss, TrainConfig, constant_mean_rmse, predict, rmse, train

log = logging.getLogger("rs4d")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3
REPORT_SCHEMA = 1
VANDERMONDE_TOL = 1e-10
GENFUN_TOL = 1e-6


def _setup_torch(cfg: RunConfig) -> None:
    threads = int(os.environ.get("S4_THREADS", "0") or 0)
    if cfg.deterministic:
        threads = 1
        torch.use_deterministic_algorithms(True)
    if threads > 0:
        torch.set_num_threads(threads)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_manifest(cfg: RunConfig, command: str, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "code_version": __version__,
        "config": cfg.as_text(),
        "seeds": {"seed": cfg.seed, "eval_seed": cfg.eval_seed},
    }
    manifest.update(extra or {})
    _write_json(_out_dir(cfg) / f"manifest-{command}.json", manifest)


def dataset_config(cfg: RunConfig):
    dc = preset(cfg.preset)
    params = dc.params
    changes = {}
    if cfg.grid_nx or cfg.grid_ny or cfg.vy_sign != 1.0:
        params = replace(
            params,
            nx=cfg.grid_nx or params.nx,
            ny=cfg.grid_ny or params.ny,
            vy_sign=cfg.vy_sign,
        )
        changes["params"] = params
    if cfg.counts:
        if len(cfg.counts) != 3:
            raise ConfigError("counts needs three values: train,val,test")
        changes["counts"] = tuple(cfg.counts)
    if cfg.horizon:
        changes["horizon"] = cfg.horizon
    if cfg.eval_stride:
        changes["eval_stride"] = cfg.eval_stride
    if changes:
        dc = replace(dc, **changes)
    return dc


def noise_spec(cfg: RunConfig, mode: str | None = None) -> NoiseSpec:
    return NoiseSpec(mode or cfg.noise_mode, cfg.noise_sigma, cfg.disturbance)


def model_config(cfg: RunConfig, input_dim: int, output_dim: int) -> ModelConfig:
    return ModelConfig(
        input_dim=input_dim,
        output_dim=output_dim,
        hidden=cfg.hidden,
        state=cfg.state,
        layers=cfg.layers,
        channels=cfg.channels,
        robust=cfg.model == "rs4d",
        bw_state=cfg.bw_state or None,
        init=cfg.init,
        decoder_hidden=tuple(cfg.decoder_hidden),
        dt_min=cfg.dt_min,
        dt_max=cfg.dt_max,
        s4dc=cfg.s4dc,
        seed=cfg.seed,
    )


def _model_from_checkpoint(cfg: RunConfig, input_dim: int, output_dim: int) -> ShredModel:
    model = ShredModel(model_config(cfg, input_dim, output_dim))
    path = cfg.checkpoint_path()
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    load_checkpoint(model, path)
    return model


def _checkpoint_dims(cfg: RunConfig) -> tuple[int, int]:
    blocks = read_checkpoint(cfg.checkpoint_path())
    enc = blocks.get("encoder.weight")
    last = max((k for k in blocks if k.startswith("decoder.") and k.endswith(".bias")), default=None)
    if enc is None or last is None:
        raise ConfigError("checkpoint lacks encoder/decoder blocks")
    return enc.shape[1], blocks[last].shape[0]


def cmd_gen_data(cfg: RunConfig) -> int:
    dc = dataset_config(cfg)
    ds = make_dataset(dc, noise_spec(cfg), seed=cfg.seed)
    path = cfg.dataset_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(ds, path)
    write_manifest(cfg, "gen-data", {"dataset": str(path), "counts": list(ds.counts())})
    print(describe(path))
    return EXIT_OK


def cmd_describe(path: str) -> int:
    print(describe(path))
    return EXIT_OK


def kernel_check_rows(cfg: RunConfig) -> list[dict]:
    rows = []
    for n in cfg.kc_states:
        for length in cfg.kc_lengths:
            for kind in INIT_KINDS:
                rng = np.random.default_rng([cfg.seed, n, length])
                sys_ = init_diagonal(InitSpec(kind, n), rng)
                d = discretize_zoh(sys_, sys_.dt)
                diff = np.max(np.abs(kernel_vandermonde(d, length).values - kernel_naive(d, length).values))
                rows.append(dict(n=n, L=length, init=kind, path_a="vandermonde", path_b="naive",
                                 max_abs_diff=float(diff), tol=VANDERMONDE_TOL))
            rng = np.random.default_rng([cfg.seed, n, length, 1])
            dplr = hippo_dplr(n, c=rng.standard_normal(n) / np.sqrt(n))
            dt = cfg.kc_dplr_dt
            naive = kernel_naive(discretize_bilinear(dplr, dt), length).values
            gen = kernel_dplr_genfun(dplr, dt, length).values
            rows.append(dict(n=n, L=length, init="hippo_dplr", path_a="dplr_genfun", path_b="naive",
                             max_abs_diff=float(np.max(np.abs(gen - naive))), tol=GENFUN_TOL))
    return rows


def cmd_kernel_check(cfg: RunConfig) -> int:
    rows = kernel_check_rows(cfg)
    out = _out_dir(cfg) / "kernel_check.csv"
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "L", "init", "path_a", "path_b", "max_abs_diff"])
        for r in rows:
            w.writerow([r["n"], r["L"], r["init"], r["path_a"], r["path_b"], f"{r['max_abs_diff']:.6e}"])
    write_manifest(cfg, "kernel-check")
    bad = [r for r in rows if not r["max_abs_diff"] < r["tol"]]
    for r in rows:
        flag = "FAIL" if r in bad else "ok"
        print(f"{flag:4s} n={r['n']:<3d} L={r['L']:<5d} {r['init']:<10s} {r['path_a']} vs {r['path_b']}: {r['max_abs_diff']:.3e}")
    return EXIT_FAIL if bad else EXIT_OK


def _epoch_csv(path: Path, hist) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_mse", "val_rmse"])
        for i, (l, v) in enumerate(zip(hist.train_loss, hist.val_rmse), 1):
            w.writerow([i, repr(l), repr(v)])


def cmd_train(cfg: RunConfig) -> int:
    path = cfg.dataset_path()
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path} (run gen-data first)")
    ds = read_dataset(path)
    out = _out_dir(cfg)
    model = ShredModel(model_config(cfg, ds.feature_dim, ds.output_dim))
    tc = TrainConfig(cfg.epochs, cfg.batch_size, cfg.lr, cfg.ssm_lr, cfg.seed)
    start = time.perf_counter()
    try:
        hist = train(model, ds, tc)
    except NonFiniteLoss as exc:
        _write_json(out / "param_norms.json", exc.norms)
        log.error("%s", exc)
        print(f"error: {exc}; parameter norms written to {out / 'param_norms.json'}", file=sys.stderr)
        return EXIT_FAIL
    elapsed = time.perf_counter() - start
    save_checkpoint(model, cfg.checkpoint_path())
    _epoch_csv(out / "loss.csv", hist)
    split_rmse = {
        s: rmse(predict(model, ds.splits[s].inputs, ds.eval_index), ds.splits[s].targets) for s in SPLITS
    }
    report = {
        "schema_version": REPORT_SCHEMA,
        "model": cfg.model,
        "rmse": split_rmse,
        "baseline_rmse": {s: constant_mean_rmse(ds, s) for s in SPLITS},
        "h2_mean_per_layer": [mean_h2(layer) for layer in model.layers],
        "epoch_loss": hist.train_loss,
        "epoch_val_rmse": hist.val_rmse,
    }
    _write_json(out / "metrics.json", report)
    _write_json(out / "timing.json", {"train_seconds": elapsed})
    write_manifest(cfg, "train", {"dataset": str(path), "checkpoint": str(cfg.checkpoint_path())})
    print(f"val_rmse {split_rmse['val']:.6f} (constant-mean baseline {report['baseline_rmse']['val']:.6f})")
    return EXIT_OK


def evaluate_modes(model: ShredModel, ds, split: str, cfg: RunConfig) -> dict:
    sp = ds.splits[split]
    split_id = SPLITS.index(split)
    results = {}
    for mode in ("clean", "disturbed", "noisy"):
        inputs = apply_noise(sp.inputs, noise_spec(cfg, mode), cfg.eval_seed, split_id)
        pred = predict(model, inputs, ds.eval_index)
        results[mode] = {
            "rmse": rmse(pred, sp.targets),
            "last_step_rmse": rmse(pred[:, -1], sp.targets[:, -1]),
            "abs_err_last": np.abs(pred[:, -1] - sp.targets[:, -1]).mean(axis=0),
        }
    return results


def cmd_eval(cfg: RunConfig) -> int:
    ds = read_dataset(cfg.dataset_path())
    dims = _checkpoint_dims(cfg)
    if dims != (ds.feature_dim, ds.output_dim):
        raise ConfigError(f"checkpoint dims {dims} do not match dataset ({ds.feature_dim}, {ds.output_dim})")
    model = _model_from_checkpoint(cfg, ds.feature_dim, ds.output_dim)
    res = evaluate_modes(model, ds, cfg.eval_split, cfg)
    out = _out_dir(cfg)
    report = {
        "schema_version": REPORT_SCHEMA,
        "split": cfg.eval_split,
        "rmse": {m: r["rmse"] for m, r in res.items()},
        "last_step_rmse": {m: r["last_step_rmse"] for m, r in res.items()},
        "baseline_rmse": constant_mean_rmse(ds, cfg.eval_split),
    }
    _write_json(out / "eval_metrics.json", report)
    nx, ny = ds.field_shape
    with open(out / "abs_error.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["grid_index", "ix", "iy", "abs_err_clean", "abs_err_disturbed", "abs_err_noisy"])
        for g in range(nx * ny):
            ix, iy = divmod(g, ny)
            w.writerow([g, ix, iy] + [repr(float(res[m]["abs_err_last"][g])) for m in ("clean", "disturbed", "noisy")])
    write_manifest(cfg, "eval", {"checkpoint": str(cfg.checkpoint_path())})
    for m in ("clean", "disturbed", "noisy"):
        print(f"{cfg.eval_split} {m:9s} rmse {res[m]['rmse']:.6f}")
    return EXIT_OK


def _h2_rows(model: ShredModel) -> list[tuple[int, int, float]]:
    rows = []
    for li, layer in enumerate(model.layers):
        for si, s in enumerate(layer.systems()):
            rows.append((li, si, h2_norm(s).norm_sq))
    return rows


def _write_h2(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer_index", "ssm_index", "h2_norm_sq"])
        for li, si, v in rows:
            w.writerow([li, si, repr(v)])


def _layer_means(model: ShredModel, rows) -> list[float]:
    return [float(np.mean([v for li, _, v in rows if li == i])) for i in range(len(model.layers))]


def _load_for_reports(cfg: RunConfig) -> ShredModel:
    input_dim, output_dim = _checkpoint_dims(cfg)
    return _model_from_checkpoint(cfg, input_dim, output_dim)


def cmd_bode(cfg: RunConfig) -> int:
    model = _load_for_reports(cfg)
    out = _out_dir(cfg)
    omegas = bode_grid(per_decade=cfg.bode_per_decade)
    with open(out / "bode.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["omega", "magnitude_db", "phase_deg", "layer_index", "ssm_index"])
        for li, layer in enumerate(model.layers):
            for si, s in enumerate(layer.systems()):
                for w_ in omegas:
                    t = transfer_eval(s, float(w_))
                    w.writerow([f"{t.omega:.10g}", f"{t.magnitude_db:.10g}", f"{t.phase_deg:.10g}", li, si])
    with open(out / "eigenvalues.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["layer_index", "ssm_index", "state_index", "re", "im", "init"])
        for li, layer in enumerate(model.layers):
            for si, s in enumerate(layer.systems()):
                for k, a in enumerate(s.a):
                    w.writerow([li, si, k, repr(float(a.real)), repr(float(a.imag)), layer.init_kind])
    rows = _h2_rows(model)
    _write_h2(out / "h2.csv", rows)
    means = _layer_means(model, rows)
    _write_json(out / "h2_summary.json", {"schema_version": REPORT_SCHEMA, "h2_mean_per_layer": means})
    write_manifest(cfg, "bode", {"checkpoint": str(cfg.checkpoint_path())})
    for li, m in enumerate(means):
        print(f"layer {li} ({model.layers[li].init_kind}): mean H2^2 {m:.6g}")
    return EXIT_OK


def cmd_h2_report(cfg: RunConfig) -> int:
    model = _load_for_reports(cfg)
    out = _out_dir(cfg)
    rows = _h2_rows(model)
    _write_h2(out / "h2.csv", rows)
    means = _layer_means(model, rows)
    _write_json(out / "h2_summary.json", {"schema_version": REPORT_SCHEMA, "h2_mean_per_layer": means})
    write_manifest(cfg, "h2-report", {"checkpoint": str(cfg.checkpoint_path())})
    for li, m in enumerate(means):
        print(f"layer {li} ({model.layers[li].init_kind}): mean H2^2 {m:.6g}")
    return EXIT_OK


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate the double-gyre sensor dataset"),
    "kernel-check": (cmd_kernel_check, "check naive / Vandermonde / generating-function kernels agree"),
    "train": (cmd_train, "train SHRED-S4D or SHRED-rS4D"),
    "eval": (cmd_eval, "evaluate a checkpoint on clean, disturbed and noisy inputs"),
    "bode": (cmd_bode, "Bode data, H2 norms and eigenvalues of every SSM in a checkpoint"),
    "h2-report": (cmd_h2_report, "per-layer H2 norms of a checkpoint"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("-v", "--verbose", action="store_true")
    keys = common.add_argument_group("config keys (override the config file)")
    for k in KEYS:
        keys.add_argument(f"--{k.name}", dest=f"key_{k.name}", metavar="V", help=f"{k.help} [{k.default}]")
    parser = argparse.ArgumentParser(prog="rs4d", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, helptext) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=helptext, description=helptext)
    d = sub.add_parser("describe", help="print a dataset file header")
    d.add_argument("path")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "describe":
            return cmd_describe(args.path)
        file_values = parse_file(args.config) if args.config else {}
        overrides = {k.name: getattr(args, f"key_{k.name}") for k in KEYS if getattr(args, f"key_{k.name}") is not None}
        cfg = resolve(file_values, overrides)
        _setup_torch(cfg)
        return COMMANDS[args.command][0](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
