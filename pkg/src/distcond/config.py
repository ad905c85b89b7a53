"""Flat `key = value` run configuration.

Precedence: command-line flags > config file > defaults. Unknown keys are
a hard error, and every run echoes the fully resolved configuration to a
file that can itself be used as the config for an identical rerun.
"""

import os
from dataclasses import dataclass
from typing import Any, Dict

from .errors import ConfigError


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


# key -> (type, default, help)
SCHEMA: Dict[str, tuple] = {
    # data source
    "dataset": (str, "patches", "data source: patches | idx | container"),
    "train_images": (str, "", "IDX image file for the training split"),
    "train_labels": (str, "", "IDX label file for the training split"),
    "test_images": (str, "", "IDX image file for the test split"),
    "test_labels": (str, "", "IDX label file for the test split"),
    "train_container": (str, "", "native container for the training split"),
    "test_container": (str, "", "native container for the test split"),
    "patch_classes": (int, 10, "generated dataset: number of classes"),
    "patch_per_class": (int, 500, "generated dataset: training examples per class"),
    "patch_test_per_class": (int, 500, "generated dataset: test examples per class"),
    "patch_resolution": (int, 16, "generated dataset: image side length"),
    "patch_channels": (int, 1, "generated dataset: channels"),
    "patch_blobs": (int, 3, "generated dataset: blobs per class pattern"),
    "patch_noise": (float, 2.0, "generated dataset: pixel noise level"),
    "patch_jitter": (float, 0.25, "generated dataset: amplitude jitter"),
    # network
    "depth": (int, 3, "ConvNet blocks"),
    "width": (int, 128, "ConvNet channels per block"),
    # condensation
    "iterations": (int, 2000, "condensation iterations"),
    "ipc": (int, 10, "synthetic images per class (canvases)"),
    "factor": (int, 2, "per-canvas grid factor l"),
    "pixel_lr": (float, 0.01, "base pixel learning rate (scaled by ipc)"),
    "pixel_momentum": (float, 0.9, "pixel SGD momentum"),
    "calib_interval": (int, 1, "iterations between calibration updates"),
    "calib_steps": (int, 1, "calibration updates per trigger"),
    "real_batch": (int, 128, "real examples per class per iteration"),
    "match_color": (bool, False, "color jitter during matching"),
    "match_crop": (bool, False, "shift-crop during matching"),
    # experts
    "experts": (int, 5, "number of expert models"),
    "expert_epochs": (int, 60, "expert training epochs"),
    "expert_lr": (float, 0.01, "expert learning rate"),
    "expert_momentum": (float, 0.9, "expert SGD momentum"),
    "expert_wd": (float, 0.0005, "expert weight decay"),
    "expert_batch": (int, 64, "expert batch size"),
    # evaluation
    "eval_epochs": (int, 300, "epochs when retraining on the condensed set"),
    "eval_lr": (float, 0.01, "retraining learning rate"),
    "eval_momentum": (float, 0.9, "retraining momentum"),
    "eval_wd": (float, 0.0005, "retraining weight decay"),
    "eval_batch": (int, 64, "retraining batch size"),
    "eval_repeats": (int, 10, "independent retraining runs"),
    "eval_color": (bool, True, "retraining color jitter"),
    "eval_crop": (bool, True, "retraining shift-crop"),
    "eval_cutmix": (bool, True, "retraining CutMix"),
    "crop_pad": (int, 4, "zero-pad before random crop"),
    # diagnostics
    "diag_mode": (str, "", "diagnose subcommand mode"),
    "diag_checkpoints": (int, 10, "snapshots along the discrepancy curve"),
    "diag_epochs": (int, 20, "real-training epochs for the discrepancy curve"),
    "lambda_grid_step": (float, 0.1, "grid step of the interpolation sweep"),
    "expert_index": (int, 1, "1-based bank entry for the interpolation sweep"),
    # command plumbing
    "method": (str, "", "condense: dance|dm; baseline: random|herding|kcenter"),
    "bank_path": (str, "", "expert bank file"),
    "synthetic_path": (str, "", "synthetic set file"),
    "out_path": (str, "", "primary output file (command-specific default)"),
    # misc
    "seed": (int, 0, "global seed; all streams derive from it"),
    "out_dir": (str, "", "output directory (default $DISTCOND_OUT_DIR or ./runs)"),
    "threads": (int, 0, "BLAS thread cap; 0 leaves the library default"),
    "checkpoint_every": (int, 0, "iterations between on-disk checkpoints; 0 disables"),
}


@dataclass
class RunConfig:
    values: Dict[str, Any]

    def __getattr__(self, key: str):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None


def parse_value(key: str, raw: str):
    if key not in SCHEMA:
        raise ConfigError(f"unknown configuration key {key!r}")
    typ = SCHEMA[key][0]
    try:
        if typ is bool:
            return _bool(raw)
        return typ(raw.strip())
    except (ValueError, TypeError) as err:
        raise ConfigError(f"bad value for {key!r}: {raw!r} ({err})") from err


def load_config_file(path) -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            lines = f.readlines()
    except OSError as err:
        raise ConfigError(f"cannot read config file {path}: {err}") from err
    for lineno, line in enumerate(lines, start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line.rstrip()!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        values[key] = parse_value(key, raw)
    return values


def resolve(file_values: Dict[str, Any], overrides: Dict[str, Any]) -> RunConfig:
    values = {k: default for k, (_, default, _) in SCHEMA.items()}
    values.update(file_values)
    for k, v in overrides.items():
        if k not in SCHEMA:
            raise ConfigError(f"unknown configuration key {k!r}")
        values[k] = v
    if not values["out_dir"]:
        values["out_dir"] = os.environ.get("DISTCOND_OUT_DIR", "runs")
    return RunConfig(values)


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_resolved(path, cfg: RunConfig) -> None:
    """Echo every key actually in effect; the file is itself a valid config."""
    with open(path, "w", encoding="utf-8") as f:
        for key in sorted(cfg.values):
            f.write(f"{key} = {_format_value(cfg.values[key])}\n")
