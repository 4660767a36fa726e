"""Command-line front end: data generation, training, sampling,
evaluation, and spectrum analysis driven by one strict JSON config."""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .mixture import GaussianMixture, sample_data
from .operator import DsnoConfig, forward, load_checkpoint, save_checkpoint
from .schedule import NoiseSchedule
from .spectrum import trajectory_spectrum_report, write_report
from .trajectories import TimeGrid, TrajectoryDataset, generate_dataset, make_time_grid
from .training import (TrainConfig, eval_trajectory_rmse, sliced_wasserstein,
                       train)


class ConfigError(ValueError):
    pass


_DEFAULTS = {
    "schedule": {"beta_min": 0.1, "beta_max": 20.0, "t_max": 1.0, "t_min": 1e-3},
    "mixture": {
        "weights": [0.5, 0.5],
        "means": [[2.0, 0.0], [-2.0, 0.0]],
        "variances": [0.01, 0.01],
    },
    "grid": {"M": 4, "scheme": "quadratic", "s": 1.0, "t_floor": 1e-3},
    "dataset": {"N": 1000, "base_seed": 0, "solver": "heun", "substeps": 64,
                "path": "trajectories.bin"},
    "model": {"C": 64, "L": 4, "J": 3, "E": 32, "slope": 0.01},
    "training": {"batch_size": 256, "total_steps": 20000, "base_lr": 2e-4,
                 "warmup_steps": 500, "beta1": 0.9, "beta2": 0.999, "eps": 1e-8,
                 "weighting": "snr_sqrt", "seed": 0},
    "out_dir": "runs/default",
}


def _merge_strict(defaults, given, path=""):
    if not isinstance(given, dict):
        raise ConfigError(f"config section {path or '<root>'} must be an object")
    out = {}
    for key in given:
        if key not in defaults:
            raise ConfigError(f"unknown config key {path + key!r}")
    for key, dval in defaults.items():
        if key in given:
            gval = given[key]
            if isinstance(dval, dict):
                out[key] = _merge_strict(dval, gval, path + key + ".")
            else:
                out[key] = gval
        else:
            out[key] = dval
    return out


class ExperimentConfig:
    """Materialized, validated experiment settings."""

    def __init__(self, raw: dict):
        cfg = _merge_strict(_DEFAULTS, raw)
        self.raw = cfg
        try:
            self.sched = NoiseSchedule(**cfg["schedule"])
        except ValueError as e:
            raise ConfigError(f"schedule: {e}") from e
        try:
            self.mixture = GaussianMixture(
                weights=np.array(cfg["mixture"]["weights"], dtype=float),
                means=np.array(cfg["mixture"]["means"], dtype=float),
                variances=np.array(cfg["mixture"]["variances"], dtype=float))
        except ValueError as e:
            raise ConfigError(f"mixture: {e}") from e
        g = cfg["grid"]
        try:
            self.grid = make_time_grid(g["M"], g["scheme"], g["s"], g["t_floor"])
        except ValueError as e:
            raise ConfigError(f"grid: {e}") from e
        m = cfg["model"]
        try:
            self.model = DsnoConfig(d=self.mixture.d, C=m["C"], L=m["L"], J=m["J"],
                                    M=g["M"], E=m["E"], slope=m["slope"])
        except ValueError as e:
            raise ConfigError(f"model: {e}") from e
        try:
            self.training = TrainConfig(**cfg["training"])
        except (TypeError, ValueError) as e:
            raise ConfigError(f"training: {e}") from e
        self.dataset = cfg["dataset"]
        self.out_dir = cfg["out_dir"]

    def flat_items(self):
        def walk(prefix, obj):
            if isinstance(obj, dict):
                for k, v in obj.items():
                    yield from walk(f"{prefix}{k}.", v)
            else:
                yield prefix[:-1], json.dumps(obj)
        yield from walk("", self.raw)

    def to_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, separators=(",", ":"))


def parse_config(path) -> ExperimentConfig:
    try:
        with open(path) as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"malformed config {path}: {e}") from e
    return ExperimentConfig(raw)


def _write_summary(cfg: ExperimentConfig, command: str, results: dict):
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "summary.tsv")
    with open(path, "w") as f:
        f.write("key\tvalue\n")
        f.write(f"command\t{command}\n")
        for k, v in cfg.flat_items():
            f.write(f"{k}\t{v}\n")
        for k, v in results.items():
            f.write(f"{k}\t{v}\n")


def _model_path(cfg: ExperimentConfig) -> str:
    return os.path.join(cfg.out_dir, "model.bin")


def cmd_gen_data(cfg: ExperimentConfig) -> dict:
    ds = cfg.dataset
    path = ds["path"]
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    generate_dataset(cfg.mixture, cfg.sched, cfg.grid, ds["N"], ds["base_seed"],
                     solver=ds["solver"], substeps=ds["substeps"], path=path)
    print(f"wrote {ds['N']} trajectories to {path}")
    return {"dataset_path": path, "dataset_N": ds["N"]}


def cmd_train(cfg: ExperimentConfig) -> dict:
    data = TrajectoryDataset.load(cfg.dataset["path"])
    os.makedirs(cfg.out_dir, exist_ok=True)
    result = train(data, cfg.training, cfg.model, out_dir=cfg.out_dir)
    save_checkpoint(_model_path(cfg), result.params,
                    extra={"steps": cfg.training.total_steps})
    final = result.loss_curve[-1][2] if result.loss_curve else float("nan")
    print(f"trained {cfg.training.total_steps} steps, final loss {final:.6g}")
    return {"model_path": _model_path(cfg), "final_loss": final}


def _sample_endpoints(cfg: ExperimentConfig, n: int, seed: int) -> np.ndarray:
    params, _ = load_checkpoint(_model_path(cfg))
    rng = np.random.default_rng(seed)
    out = np.empty((n, cfg.mixture.d))
    for lo in range(0, n, 4096):
        hi = min(lo + 4096, n)
        x_T = rng.standard_normal((hi - lo, cfg.mixture.d))
        out[lo:hi] = forward(params, x_T, cfg.grid)[:, -1, :]
    return out


def cmd_sample(cfg: ExperimentConfig, n: int, seed: int) -> dict:
    samples = _sample_endpoints(cfg, n, seed)
    path = os.path.join(cfg.out_dir, "samples.tsv")
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(path, "w") as f:
        f.write("\t".join(f"x{i}" for i in range(samples.shape[1])) + "\n")
        for row in samples:
            f.write("\t".join(f"{v:.8g}" for v in row) + "\n")
    print(f"wrote {n} one-call samples to {path}")
    return {"samples_path": path, "n_samples": n}


def cmd_eval(cfg: ExperimentConfig, n: int, seed: int) -> dict:
    params, _ = load_checkpoint(_model_path(cfg))
    # held-out solver trajectories, disjoint seeds from the training set
    heldout = generate_dataset(cfg.mixture, cfg.sched, cfg.grid, min(n, 2000),
                               base_seed=cfg.dataset["base_seed"] + 10_000_000,
                               solver=cfg.dataset["solver"],
                               substeps=cfg.dataset["substeps"])
    per_time, pooled = eval_trajectory_rmse(params, heldout)
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "eval.tsv"), "w") as f:
        f.write("time\trmse\n")
        for t, r in zip(cfg.grid.times, per_time):
            f.write(f"{t:.8g}\t{r:.10g}\n")
    model_samples = _sample_endpoints(cfg, n, seed + 1)
    data_samples = sample_data(cfg.mixture, n, seed + 2)
    sw = sliced_wasserstein(model_samples, data_samples, n_proj=128, seed=seed + 3)
    print(f"pooled trajectory RMSE {pooled:.6g}, sliced-Wasserstein {sw:.6g}")
    return {"rmse_pooled": pooled, "sliced_wasserstein": sw}


def cmd_spectrum(cfg: ExperimentConfig, n: int, seed: int) -> dict:
    report = trajectory_spectrum_report(cfg.mixture, cfg.sched, n_traj=n, seed=seed)
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, "spectrum.tsv")
    write_report(report, path)
    print(f"band fraction (modes<=5, non-DC) {report.band_fraction_j5_nodc:.6g}")
    return {"spectrum_path": path,
            "band_fraction_j5": report.band_fraction_j5,
            "band_fraction_j5_nodc": report.band_fraction_j5_nodc}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="flowop",
                                description="probability-flow trajectory distillation lab")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("gen-data", "train", "sample", "eval", "spectrum"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--steps", type=int, default=None)
        sp.add_argument("--out", default=None)
        if name in ("sample", "eval", "spectrum"):
            sp.add_argument("--n", type=int,
                            default={"sample": 1000, "eval": 10000, "spectrum": 100}[name])
    return p


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        cfg = parse_config(args.config)
        if args.steps is not None:
            cfg.raw["training"]["total_steps"] = args.steps
            cfg.training = TrainConfig(**cfg.raw["training"])
        if args.seed is not None:
            cfg.raw["training"]["seed"] = args.seed
            cfg.training = TrainConfig(**cfg.raw["training"])
        if args.out is not None:
            cfg.raw["out_dir"] = args.out
            cfg.out_dir = args.out
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    seed = args.seed if args.seed is not None else cfg.training.seed
    try:
        if args.command == "gen-data":
            results = cmd_gen_data(cfg)
        elif args.command == "train":
            results = cmd_train(cfg)
        elif args.command == "sample":
            results = cmd_sample(cfg, args.n, seed)
        elif args.command == "eval":
            results = cmd_eval(cfg, args.n, seed)
        elif args.command == "spectrum":
            results = cmd_spectrum(cfg, args.n, seed)
        else:  # pragma: no cover
            print(f"unknown command {args.command}", file=sys.stderr)
            return 2
        _write_summary(cfg, args.command, results)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))
