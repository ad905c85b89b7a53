"""Command-line interface for the full pipeline.

Subcommands: pretrain, condense, evaluate, baseline, diagnose. Every run
writes a resolved-config echo; exit codes are 0 success, 2 config/usage,
3 I/O, 4 numeric failure.
"""

import argparse
import os
import sys
from typing import Dict, List, Optional

import numpy as np

from . import condense as cz
from . import config as cfgmod
from . import data as dio
from . import evaluate as ev
from .condense import AugmentSwitches, CondenseConfig
from .errors import ConfigError, FormatError, NumericError, ShapeError
from .experts import ExpertBank, load_bank, pretrain_expert, save_bank
from .networks import ConvNetSpec
from .rng import substream

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("config", help="path to a 'key = value' config file")
    p.add_argument("--seed", type=int, help="override the global seed")
    p.add_argument("--threads", type=int, help="cap BLAS threads (1 = bit-reproducible)")
    p.add_argument("--out-dir", help="output directory")
    p.add_argument("--out", help="primary output file")
    p.add_argument(
        "--set",
        dest="assignments",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override any config key (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="distcond", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="pre-train expert models and save the bank")
    _add_common(p)
    p.add_argument("--num-experts", type=int, help="number of experts to train")

    p = sub.add_parser("condense", help="learn a condensed set")
    _add_common(p)
    p.add_argument("--method", choices=["dance", "dm"], help="condensation method")
    p.add_argument("--bank", help="expert bank file (required for dance)")
    p.add_argument("--ipc", type=int, help="synthetic images per class")
    p.add_argument("--factor", type=int, help="per-canvas grid factor")
    p.add_argument("--iterations", type=int, help="condensation iterations")

    p = sub.add_parser("evaluate", help="retrain from scratch on a condensed set")
    _add_common(p)
    p.add_argument("--synthetic", help="synthetic set file")
    p.add_argument("--repeats", type=int, help="independent retraining runs")

    p = sub.add_parser("baseline", help="coreset selection baselines")
    _add_common(p)
    p.add_argument("--method", choices=["random", "herding", "kcenter"], help="selection rule")
    p.add_argument("--ipc", type=int, help="selected images per class")

    p = sub.add_parser("diagnose", help="diagnostic curves and scores")
    _add_common(p)
    p.add_argument("--mode", choices=["discrepancy", "lambda-sweep", "expert-acc"])
    p.add_argument("--bank", help="expert bank file")
    p.add_argument("--synthetic", help="synthetic set file")
    p.add_argument("--grid-step", type=float, help="lambda sweep grid step")
    p.add_argument("--checkpoints", type=int, help="discrepancy curve snapshots")
    return ap


_FLAG_TO_KEY = {
    "seed": "seed",
    "threads": "threads",
    "out_dir": "out_dir",
    "out": "out_path",
    "num_experts": "experts",
    "method": "method",
    "bank": "bank_path",
    "ipc": "ipc",
    "factor": "factor",
    "iterations": "iterations",
    "synthetic": "synthetic_path",
    "repeats": "eval_repeats",
    "mode": "diag_mode",
    "grid_step": "lambda_grid_step",
    "checkpoints": "diag_checkpoints",
}


def _overrides_from_args(args: argparse.Namespace) -> Dict[str, object]:
    overrides: Dict[str, object] = {}
    for assignment in args.assignments:
        if "=" not in assignment:
            raise ConfigError(f"--set expects KEY=VALUE, got {assignment!r}")
        key, raw = assignment.split("=", 1)
        overrides[key.strip()] = cfgmod.parse_value(key.strip(), raw)
    for flag, key in _FLAG_TO_KEY.items():
        val = getattr(args, flag, None)
        if val is not None:
            overrides[key] = val
    return overrides


def _load_datasets(cfg) -> tuple:
    """Return (train, test); test may be None for sources without one."""
    kind = cfg.dataset
    if kind == "patches":
        common = dict(
            num_classes=cfg.patch_classes,
            resolution=cfg.patch_resolution,
            seed=cfg.seed,
            channels=cfg.patch_channels,
            blobs=cfg.patch_blobs,
            noise=cfg.patch_noise,
            jitter=cfg.patch_jitter,
        )
        train = dio.make_gaussian_patches(per_class=cfg.patch_per_class, split="train", **common)
        test = dio.make_gaussian_patches(per_class=cfg.patch_test_per_class, split="test", **common)
        return train, test
    if kind == "idx":
        if not cfg.train_images or not cfg.train_labels:
            raise ConfigError("dataset = idx needs train_images and train_labels")
        train = dio.load_idx(cfg.train_images, cfg.train_labels)
        test = (
            dio.load_idx(cfg.test_images, cfg.test_labels)
            if cfg.test_images and cfg.test_labels
            else None
        )
        return train, test
    if kind == "container":
        if not cfg.train_container:
            raise ConfigError("dataset = container needs train_container")
        train = dio.load_container(cfg.train_container)
        test = dio.load_container(cfg.test_container) if cfg.test_container else None
        return train, test
    raise ConfigError(f"unknown dataset kind {cfg.dataset!r}")


def _net_spec(cfg, dataset) -> ConvNetSpec:
    h, w = dataset.resolution
    return ConvNetSpec(cfg.depth, cfg.width, dataset.channels, h, w, dataset.num_classes)


def _prepare(cfg, command: str) -> str:
    out_dir = cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)
    cfgmod.write_resolved(os.path.join(out_dir, f"resolved_config.{command}.txt"), cfg)
    return out_dir


def _match_switches(cfg) -> AugmentSwitches:
    return AugmentSwitches(color=cfg.match_color, crop=cfg.match_crop, crop_pad=cfg.crop_pad)


def _eval_augment(cfg) -> ev.EvalAugment:
    return ev.EvalAugment(
        color=cfg.eval_color, crop=cfg.eval_crop, cutmix=cfg.eval_cutmix, crop_pad=cfg.crop_pad
    )


def cmd_pretrain(cfg) -> int:
    if cfg.experts < 1:
        raise ConfigError(f"need at least one expert, got {cfg.experts}")
    out_dir = _prepare(cfg, "pretrain")
    train, test = _load_datasets(cfg)
    spec = _net_spec(cfg, train)
    entries = []
    for k in range(cfg.experts):
        expert_seed = int(substream(cfg.seed, f"expert:{k}").integers(2**63))
        entry = pretrain_expert(
            train,
            spec,
            expert_seed,
            epochs=cfg.expert_epochs,
            lr=cfg.expert_lr,
            momentum=cfg.expert_momentum,
            weight_decay=cfg.expert_wd,
            batch_size=cfg.expert_batch,
            test_dataset=test,
        )
        entries.append(entry)
        test_part = "" if np.isnan(entry.meta.test_acc) else f", test acc {entry.meta.test_acc:.4f}"
        print(f"expert {k + 1}/{cfg.experts}: train acc {entry.meta.train_acc:.4f}{test_part}")
    bank = ExpertBank(spec=spec, entries=entries)
    out_path = cfg.out_path or os.path.join(out_dir, "bank.dcxb")
    save_bank(out_path, bank)
    print(f"wrote bank with {len(entries)} expert(s) to {out_path}")
    return EXIT_OK


def cmd_condense(cfg) -> int:
    if cfg.method not in ("dance", "dm"):
        raise ConfigError("condense needs --method dance or dm")
    out_dir = _prepare(cfg, "condense")
    train, _ = _load_datasets(cfg)
    out_path = cfg.out_path or os.path.join(out_dir, "synthetic.dcds")
    ccfg = CondenseConfig(
        iterations=cfg.iterations,
        ipc=cfg.ipc,
        factor=cfg.factor,
        pixel_lr=cfg.pixel_lr,
        pixel_momentum=cfg.pixel_momentum,
        calib_interval=cfg.calib_interval,
        calib_steps=cfg.calib_steps,
        real_batch=cfg.real_batch,
        augment=_match_switches(cfg),
        seed=cfg.seed,
        checkpoint_every=cfg.checkpoint_every,
        checkpoint_path=out_path,
    )
    records: List[cz.ProgressRecord] = []
    if cfg.method == "dance":
        if not cfg.bank_path:
            raise ConfigError("--method dance needs --bank")
        bank = load_bank(cfg.bank_path)
        syn = cz.dance_condense(ccfg, train, bank, progress=records.append)
    else:
        spec = _net_spec(cfg, train)
        syn = cz.dm_condense(ccfg, train, spec, progress=records.append)
    cz.save_synthetic(out_path, syn)
    cz.write_progress_csv(os.path.join(out_dir, "progress.csv"), records)
    cz.write_ppm_grid(os.path.join(out_dir, "preview.ppm"), syn)
    mean_ms = float(np.mean([r.ms for r in records]))
    print(f"condensed {syn.total_examples} examples ({syn.num_classes} classes x "
          f"ipc {syn.ipc} x factor^2 {syn.factor ** 2}) to {out_path}")
    print(f"mean ms/iteration: {mean_ms:.3f}")
    return EXIT_OK


def cmd_evaluate(cfg) -> int:
    if not cfg.synthetic_path:
        raise ConfigError("evaluate needs --synthetic")
    out_dir = _prepare(cfg, "evaluate")
    _, test = _load_datasets(cfg)
    if test is None:
        raise ConfigError("evaluation needs a test split")
    syn = cz.load_synthetic(cfg.synthetic_path)
    spec = _net_spec(cfg, test)
    report = ev.evaluate_repeats(
        syn,
        spec,
        test,
        repeats=cfg.eval_repeats,
        base_seed=cfg.seed,
        epochs=cfg.eval_epochs,
        lr=cfg.eval_lr,
        augment=_eval_augment(cfg),
        momentum=cfg.eval_momentum,
        weight_decay=cfg.eval_wd,
        batch_size=cfg.eval_batch,
    )
    ev.write_eval_report_csv(os.path.join(out_dir, "eval_report.csv"), report)
    note = " (std degenerate: single run)" if report.degenerate_std else ""
    print(f"test accuracy: {report.mean * 100:.2f} +/- {report.std * 100:.2f} "
          f"over {len(report.accuracies)} run(s){note}")
    return EXIT_OK


def cmd_baseline(cfg) -> int:
    if cfg.method not in ("random", "herding", "kcenter"):
        raise ConfigError("baseline needs --method random, herding, or kcenter")
    out_dir = _prepare(cfg, "baseline")
    train, _ = _load_datasets(cfg)
    if cfg.method == "random":
        syn = ev.random_select(train, cfg.ipc, cfg.seed)
    elif cfg.method == "herding":
        syn = ev.herding_select(train, cfg.ipc)
    else:
        syn = ev.kcenter_select(train, cfg.ipc)
    out_path = cfg.out_path or os.path.join(out_dir, "synthetic.dcds")
    cz.save_synthetic(out_path, syn)
    cz.write_ppm_grid(os.path.join(out_dir, "preview.ppm"), syn)
    print(f"selected {syn.total_examples} examples to {out_path}")
    return EXIT_OK


def cmd_diagnose(cfg) -> int:
    mode = cfg.diag_mode
    out_dir = _prepare(cfg, "diagnose")
    if mode == "discrepancy":
        if not cfg.synthetic_path:
            raise ConfigError("discrepancy mode needs --synthetic")
        train, _ = _load_datasets(cfg)
        syn = cz.load_synthetic(cfg.synthetic_path)
        spec = _net_spec(cfg, train)
        curve = ev.discrepancy_curve(
            syn, train, spec, cfg.diag_checkpoints, cfg.seed,
            epochs=cfg.diag_epochs, lr=cfg.expert_lr, momentum=cfg.expert_momentum,
            weight_decay=cfg.expert_wd, batch_size=cfg.expert_batch,
        )
        out_path = cfg.out_path or os.path.join(out_dir, "discrepancy.csv")
        ev.write_discrepancy_csv(out_path, curve)
        print(f"wrote {len(curve)} stages to {out_path}")
        return EXIT_OK
    if mode == "lambda-sweep":
        if not cfg.bank_path:
            raise ConfigError("lambda-sweep mode needs --bank")
        _, test = _load_datasets(cfg)
        if test is None:
            raise ConfigError("lambda-sweep needs a test split")
        bank = load_bank(cfg.bank_path)
        if not 1 <= cfg.expert_index <= len(bank):
            raise ConfigError(f"expert_index {cfg.expert_index} outside 1..{len(bank)}")
        step = cfg.lambda_grid_step
        if not 0.0 < step <= 1.0:
            raise ConfigError(f"lambda_grid_step must be in (0, 1], got {step}")
        grid = np.linspace(0.0, 1.0, round(1.0 / step) + 1)
        rows = ev.lambda_sweep(bank.entries[cfg.expert_index - 1], test, grid)
        out_path = cfg.out_path or os.path.join(out_dir, "lambda_sweep.csv")
        ev.write_lambda_csv(out_path, rows)
        print(f"wrote {len(rows)} grid points to {out_path}")
        return EXIT_OK
    if mode == "expert-acc":
        if not cfg.bank_path or not cfg.synthetic_path:
            raise ConfigError("expert-acc mode needs --bank and --synthetic")
        bank = load_bank(cfg.bank_path)
        syn = cz.load_synthetic(cfg.synthetic_path)
        value = ev.expert_acc_on_syn(bank, syn)
        out_path = cfg.out_path or os.path.join(out_dir, "expert_acc.csv")
        with open(out_path, "w") as f:
            f.write("expert_acc\n")
            f.write(f"{value:.6g}\n")
        print(f"{value:.6g}")
        return EXIT_OK
    raise ConfigError("diagnose needs --mode discrepancy, lambda-sweep, or expert-acc")


_COMMANDS = {
    "pretrain": cmd_pretrain,
    "condense": cmd_condense,
    "evaluate": cmd_evaluate,
    "baseline": cmd_baseline,
    "diagnose": cmd_diagnose,
}


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    cfg = cfgmod.resolve(cfgmod.load_config_file(args.config), _overrides_from_args(args))
    handler = _COMMANDS[args.command]
    if cfg.threads > 0:
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=cfg.threads):
            return handler(cfg)
    return handler(cfg)


def main(argv: Optional[List[str]] = None) -> int:
    try:
        return run(argv)
    except (ConfigError, ShapeError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, OSError) as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return EXIT_IO
    except NumericError as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
