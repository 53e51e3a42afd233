"""Command-line entry point: generate -> train -> eval -> rollout -> export.

Precedence for every option: explicit CLI flag > config-file key > default.
The resolved configuration is echoed to `run_config.toml` in the output
directory so any run can be reproduced bit-for-bit.

Exit codes: 0 ok, 2 usage, 3 data, 4 numeric, 5 io.
"""

from __future__ import annotations

import argparse
import os
import sys
from typing import Dict, List, Optional

from . import __version__, kvdoc
from .datagen import GenConfig, build_dataset, load_dataset
from .errors import (ChannelError, ContractError, DegenerateLabel, FormatError,
                     GenerationError, GridTooSmall, HorizonError, IncompleteDataset,
                     InvalidObservation, MissingCheckpoint, NumericalError,
                     PartialPdeError, ShapeError, UnsupportedOperation, UsageError,
                     WindowError)
from .evaluate import evaluate_model, export_step_table, rollout_errors, write_report
from .models import (EncoderConfig, TransitionConfig, init_params, load_checkpoint,
                     save_checkpoint)
from .training import TrainConfig, run_schedule

_USAGE_ERRORS = (UsageError, ContractError)
_DATA_ERRORS = (IncompleteDataset, FormatError, InvalidObservation, GenerationError,
                MissingCheckpoint, DegenerateLabel, WindowError, ChannelError,
                HorizonError, ShapeError, GridTooSmall, UnsupportedOperation)

_DEFAULTS: Dict[str, Dict] = {
    "generate": {
        "out": None, "system": "burgers", "grid": 16, "wave_grid": None,
        "obs_gap": 4, "obs_points": "", "n_train": 4, "n_unlabeled": 4, "n_test": 2,
        "window": 2, "dt": 0.01, "horizon_t": 0.15, "seed": 0, "noise_pct": 0.0,
        "ic_std": None, "ic_length_scale": 0.25, "nu": None, "overwrite": False,
    },
    "train": {
        "dataset": None, "out": None, "epochs": 200, "q": 100, "m1": 10, "m2": 10,
        "pde_weight": 0.1, "no_finetune": False, "lr": 1e-3, "batch_size": 32,
        "weight_decay": 1e-4, "sched_factor": 0.5, "patience": 50, "seed": 0,
        "dtype": "f32", "perturb_std": 0.0, "perturb_seed": 99,
        "enc_width": 16, "enc_blocks": 4, "dropout": 0.1,
        "tr_width": 16, "tr_layers": 4, "modes": 6, "overwrite": False,
    },
    "eval": {
        "dataset": None, "checkpoint": None, "out": None, "horizon": 10,
        "overwrite": False,
    },
    "rollout": {
        "dataset": None, "checkpoint": None, "out": None, "horizon": 10,
        "overwrite": False,
    },
    "export": {
        "runs": None, "labels": None, "out": None, "overwrite": False,
    },
}

_REQUIRED = {
    "generate": ("out",),
    "train": ("dataset", "out"),
    "eval": ("dataset", "checkpoint", "out"),
    "rollout": ("dataset", "checkpoint", "out"),
    "export": ("runs", "labels", "out"),
}


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="partialpde",
                                description="PDE-residual-trained surrogates "
                                            "from partial observations")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(sp, name, **kw):
        flag = "--" + name.replace("_", "-")
        sp.add_argument(flag, default=argparse.SUPPRESS, **kw)

    g = sub.add_parser("generate", help="generate a trajectory dataset")
    add(g, "config", help="config file (key = value document)")
    add(g, "out", help="dataset output directory")
    add(g, "system", choices=["burgers", "wave", "nse", "lswe", "nswe"])
    add(g, "grid", type=int, help="fine grid extent N (N x N)")
    add(g, "obs_gap", type=int, help="regular observation gap")
    add(g, "obs_points", help="irregular points 'r0:c0,r1:c1,...' (overrides gap)")
    add(g, "n_train", type=int)
    add(g, "n_unlabeled", type=int)
    add(g, "n_test", type=int)
    add(g, "window", type=int, help="frames per observation window")
    add(g, "dt", type=float)
    add(g, "horizon_t", type=float, help="trajectory end time T")
    add(g, "seed", type=int)
    add(g, "noise_pct", type=float)
    add(g, "ic_std", type=float)
    add(g, "ic_length_scale", type=float)
    add(g, "nu", type=float, help="viscosity override where applicable")
    add(g, "overwrite", action="store_true")

    t = sub.add_parser("train", help="train a model on a dataset")
    add(t, "config")
    add(t, "dataset")
    add(t, "out")
    add(t, "epochs", type=int)
    add(t, "q", type=int)
    add(t, "m1", type=int)
    add(t, "m2", type=int)
    add(t, "pde_weight", type=float)
    add(t, "no_finetune", action="store_true")
    add(t, "lr", type=float)
    add(t, "batch_size", type=int)
    add(t, "weight_decay", type=float)
    add(t, "sched_factor", type=float)
    add(t, "patience", type=int)
    add(t, "seed", type=int)
    add(t, "dtype", choices=["f32", "f64"])
    add(t, "perturb_std", type=float)
    add(t, "perturb_seed", type=int)
    add(t, "enc_width", type=int)
    add(t, "enc_blocks", type=int)
    add(t, "dropout", type=float)
    add(t, "tr_width", type=int)
    add(t, "tr_layers", type=int)
    add(t, "modes", type=int)
    add(t, "overwrite", action="store_true")

    for name in ("eval", "rollout"):
        e = sub.add_parser(name, help=f"{name} a trained checkpoint")
        add(e, "config")
        add(e, "dataset")
        add(e, "checkpoint")
        add(e, "out")
        add(e, "horizon", type=int)
        add(e, "overwrite", action="store_true")

    x = sub.add_parser("export", help="merge rollout tables from several runs")
    add(x, "config")
    add(x, "runs", help="comma-separated run directories")
    add(x, "labels", help="comma-separated labels, one per run")
    add(x, "out", help="output CSV path")
    add(x, "overwrite", action="store_true")
    return p


def resolve_config(command: str, ns_dict: Dict) -> Dict:
    """defaults < config file < explicit CLI flags; unknown keys rejected."""
    merged = dict(_DEFAULTS[command])
    cfg_path = ns_dict.pop("config", None)
    if cfg_path:
        file_doc = kvdoc.load(cfg_path)
        for k, v in file_doc.items():
            key = k.replace("-", "_")
            if key not in merged:
                raise UsageError(f"unknown config key {k!r} for {command}")
            merged[key] = v
    for k, v in ns_dict.items():
        if k not in merged:
            raise UsageError(f"unknown flag {k!r} for {command}")
        merged[k] = v
    for k in _REQUIRED[command]:
        if merged.get(k) in (None, ""):
            raise UsageError(f"{command} requires --{k.replace('_', '-')}")
    return merged


def _echo_config(cfg: Dict, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    doc = {k: v for k, v in cfg.items() if v is not None}
    doc["code_version"] = __version__
    kvdoc.dump(doc, os.path.join(out_dir, "run_config.toml"))


def _refuse_clobber(path: str, overwrite: bool, marker: str) -> None:
    if not overwrite and os.path.exists(os.path.join(path, marker)):
        raise UsageError(f"{path} already contains {marker} (pass --overwrite)")


def _parse_points(text: str) -> Optional[List]:
    if not text:
        return None
    pts = []
    for tok in text.split(","):
        r, _, c = tok.partition(":")
        try:
            pts.append((int(r), int(c)))
        except ValueError as e:
            raise UsageError(f"bad point {tok!r}, expected row:col") from e
    return pts


def cmd_generate(cfg: Dict) -> int:
    grid = int(cfg["grid"])
    system = cfg["system"]
    params = {}
    if cfg.get("nu") is not None and system in ("burgers", "nse", "nswe"):
        params["nu"] = float(cfg["nu"])
    gen = GenConfig(
        system=system, system_params=params, ny=grid, nx=grid,
        obs_gap=int(cfg["obs_gap"]), obs_points=_parse_points(cfg["obs_points"]),
        n_window=int(cfg["window"]), dt=float(cfg["dt"]), T=float(cfg["horizon_t"]),
        n_train=int(cfg["n_train"]), n_unlabeled=int(cfg["n_unlabeled"]),
        n_test=int(cfg["n_test"]), master_seed=int(cfg["seed"]),
        noise_pct=float(cfg["noise_pct"]),
        ic_std=(None if cfg["ic_std"] is None else float(cfg["ic_std"])),
        ic_length_scale=float(cfg["ic_length_scale"]))
    build_dataset(gen, cfg["out"], overwrite=bool(cfg["overwrite"]))
    _echo_config(cfg, cfg["out"])
    print(f"dataset written to {cfg['out']}")
    return 0


def cmd_train(cfg: Dict) -> int:
    _refuse_clobber(cfg["out"], bool(cfg["overwrite"]), "run_config.toml")
    ds = load_dataset(cfg["dataset"])
    man = ds.manifest
    tc = TrainConfig(
        pde_weight=float(cfg["pde_weight"]), batch_size=int(cfg["batch_size"]),
        lr=float(cfg["lr"]), weight_decay=float(cfg["weight_decay"]),
        sched_factor=float(cfg["sched_factor"]), patience=int(cfg["patience"]),
        epochs=int(cfg["epochs"]), q=int(cfg["q"]), m1=int(cfg["m1"]),
        m2=int(cfg["m2"]), seed=int(cfg["seed"]),
        no_finetune=bool(cfg["no_finetune"]), dtype=cfg["dtype"],
        perturb_std=float(cfg["perturb_std"]), perturb_seed=int(cfg["perturb_seed"]))
    irregular = man.obs.kind == "irregular"
    coarse = (man.ny, man.nx) if irregular else man.obs.coarse_shape
    enc = EncoderConfig(
        n_frames=man.n_window, channels=man.channels, coarse_shape=coarse,
        out_shape=(man.ny, man.nx), width=int(cfg["enc_width"]),
        residual_blocks=int(cfg["enc_blocks"]), dropout=float(cfg["dropout"]),
        irregular=irregular)
    trans = TransitionConfig(
        channels=man.channels, grid_shape=(man.ny, man.nx),
        layers=int(cfg["tr_layers"]), modes=int(cfg["modes"]),
        width=int(cfg["tr_width"]))
    state = init_params(enc, trans, seed=tc.seed, dtype=tc.dtype)
    _echo_config(cfg, cfg["out"])
    state, history = run_schedule(state, ds, tc, out_dir=cfg["out"])
    print(f"trained {state.n_parameters()} parameters; "
          f"final train L_D {history[-1].l_d if history else float('nan'):.4g}; "
          f"checkpoint at {os.path.join(cfg['out'], 'final')}")
    return 0


def cmd_eval(cfg: Dict) -> int:
    _refuse_clobber(cfg["out"], bool(cfg["overwrite"]), "summary.toml")
    ds = load_dataset(cfg["dataset"])
    state = load_checkpoint(cfg["checkpoint"])
    report = evaluate_model(state, ds, k_steps=int(cfg["horizon"]))
    write_report(report, cfg["out"])
    _echo_config(cfg, cfg["out"])
    print(f"single-step L_D {report.single_step:.6g}  eps {report.reconstruction:.6g}")
    for k, v in report.interp_reconstruction.items():
        print(f"eps[{k}] {v:.6g}")
    return 0


def cmd_rollout(cfg: Dict) -> int:
    _refuse_clobber(cfg["out"], bool(cfg["overwrite"]), "rollout.csv")
    ds = load_dataset(cfg["dataset"])
    state = load_checkpoint(cfg["checkpoint"])
    errs = rollout_errors(state, ds, int(cfg["horizon"]))
    os.makedirs(cfg["out"], exist_ok=True)
    import csv as _csv

    with open(os.path.join(cfg["out"], "rollout.csv"), "w", newline="") as f:
        wr = _csv.writer(f)
        wr.writerow(["method"] + [f"step_{k}" for k in range(1, len(errs) + 1)])
        wr.writerow(["model"] + [repr(float(x)) for x in errs])
    _echo_config(cfg, cfg["out"])
    print("rollout errors: " + " ".join(f"{e:.4g}" for e in errs))
    return 0


def cmd_export(cfg: Dict) -> int:
    runs = [s for s in str(cfg["runs"]).split(",") if s]
    labels = [s for s in str(cfg["labels"]).split(",") if s]
    if len(runs) != len(labels):
        raise UsageError(f"{len(runs)} runs but {len(labels)} labels")
    if os.path.exists(cfg["out"]) and not cfg["overwrite"]:
        raise UsageError(f"{cfg['out']} exists (pass --overwrite)")
    export_step_table(runs, labels, cfg["out"])
    print(f"wrote {cfg['out']}")
    return 0


_COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "rollout": cmd_rollout,
    "export": cmd_export,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    ns = parser.parse_args(argv)
    command = ns.command
    ns_dict = {k: v for k, v in vars(ns).items() if k != "command"}
    try:
        cfg = resolve_config(command, ns_dict)
        return _COMMANDS[command](cfg)
    except _USAGE_ERRORS as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    except _DATA_ERRORS as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 3
    except NumericalError as e:
        print(f"error: NumericalError: {e}", file=sys.stderr)
        return 4
    except OSError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
