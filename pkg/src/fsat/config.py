"""Flat key=value run configuration.

Every key has a typed, documented default; unknown keys are rejected by
name.  A resolved config renders back to the same format as a manifest,
so any run can be repeated from its manifest alone.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict

__all__ = ["ConfigError", "RunConfig", "DEFAULTS"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class _Key:
    default: object
    kind: type
    help: str


# The complete key set.  Values are (default, type, description).
DEFAULTS: Dict[str, _Key] = {
    "dataset.name": _Key("synthetic-shapes", str, "cifar10 | svhn-cropped | synthetic-shapes"),
    "dataset.root": _Key("", str, "directory holding dataset files (unused for synthetic-shapes)"),
    "dataset.train_size": _Key(5000, int, "training images (generator count, or subset of files)"),
    "dataset.test_size": _Key(1000, int, "test images (generator count, or subset of files)"),
    "encoder.cut_layer": _Key("relu2_1", str, "embedding layer: relu1_1 | relu2_1 | relu3_1 | relu4_1"),
    "encoder.widths": _Key("32,64", str, "comma-separated conv widths, one per block up to the cut"),
    "classifier.head_widths": _Key("128,256", str, "comma-separated conv widths of the head"),
    "classifier.fc_width": _Key(256, int, "fully-connected width of the head"),
    "classifier.path": _Key("", str, "classifier checkpoint to load"),
    "decoder.path": _Key("", str, "decoder checkpoint to load"),
    "train.epochs": _Key(15, int, "classifier training epochs"),
    "train.lr": _Key(1e-3, float, "classifier Adam learning rate"),
    "train.batch_size": _Key(64, int, "classifier batch size"),
    "train.augment": _Key(True, bool, "random horizontal flips during classifier training"),
    "decoder.epochs": _Key(20, int, "decoder training epochs"),
    "decoder.lr": _Key(1e-3, float, "decoder Adam learning rate"),
    "decoder.batch_size": _Key(64, int, "decoder batch size"),
    "decoder.patience": _Key(3, int, "early-stop patience on validation loss plateau"),
    "attack.mode": _Key("augmentation", str, "augmentation | interpolation | pgd"),
    "attack.epsilon": _Key("auto", str, "bound; auto = ln(1.5)/ln(2) feature, 8/255 pgd"),
    "attack.steps": _Key(500, int, "optimization steps per attack"),
    "attack.lr": _Key(0.01, float, "attack Adam learning rate"),
    "attack.lambda": _Key(1.0, float, "content-loss weight in the attack objective"),
    "attack.targeted": _Key(False, bool, "targeted attack"),
    "attack.target": _Key(-1, int, "target class id for targeted attacks"),
    "attack.k": _Key(8, int, "style prototype images for the interpolation attack"),
    "attack.count": _Key(200, int, "number of test images to attack"),
    "attack.chunk": _Key(100, int, "images optimized jointly per chunk"),
    "advtrain.steps": _Key(400, int, "attack steps per batch during adversarial training"),
    "advtrain.epochs": _Key(25, int, "adversarial training epochs"),
    "advtrain.lr": _Key(1e-3, float, "adversarial training Adam learning rate"),
    "advtrain.batch_size": _Key(64, int, "adversarial training batch size"),
    "advtrain.mix": _Key(1.0, float, "fraction of each batch replaced by adversarial samples"),
    "advtrain.mode": _Key("augmentation", str, "attack used to craft training-time samples"),
    "advtrain.warm_start": _Key(True, bool, "start from classifier.path instead of fresh weights"),
    "seed": _Key(0, int, "global RNG seed"),
    "output_dir": _Key("runs/out", str, "directory for manifests, checkpoints, and reports"),
}


def _parse_value(key: str, raw: str):
    spec = DEFAULTS[key]
    raw = raw.strip()
    try:
        if spec.kind is bool:
            lowered = raw.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        return spec.kind(raw)
    except ValueError as e:
        raise ConfigError(f"bad value for key '{key}': {raw!r} (expected {spec.kind.__name__})") from e


class RunConfig:
    """Resolved configuration: defaults overlaid with file and CLI pairs."""

    def __init__(self, values: Dict[str, object] | None = None):
        self._values = {k: spec.default for k, spec in DEFAULTS.items()}
        for k, v in (values or {}).items():
            if k not in DEFAULTS:
                raise ConfigError(f"unknown config key '{k}'")
            self._values[k] = v

    @classmethod
    def from_file(cls, path, overrides=()) -> "RunConfig":
        cfg = cls()
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        for line_no, line in enumerate(path.read_text().splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"{path}:{line_no}: expected 'key = value', got {line!r}")
            key, _, raw = stripped.partition("=")
            cfg.set_pair(key.strip(), raw)
        cfg.apply_overrides(overrides)
        return cfg

    def set_pair(self, key: str, raw: str) -> None:
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key '{key}'")
        self._values[key] = _parse_value(key, raw)

    def apply_overrides(self, overrides) -> None:
        for pair in overrides:
            if "=" not in pair:
                raise ConfigError(f"override must look like key=value, got {pair!r}")
            key, _, raw = pair.partition("=")
            self.set_pair(key.strip(), raw)

    def __getitem__(self, key: str):
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key '{key}'")
        return self._values[key]

    def widths(self, key: str) -> tuple:
        try:
            return tuple(int(tok) for tok in str(self[key]).split(",") if tok.strip())
        except ValueError as e:
            raise ConfigError(f"bad width list for '{key}': {self[key]!r}") from e

    def attack_epsilon(self) -> float | None:
        raw = str(self["attack.epsilon"])
        if raw == "auto":
            return None
        try:
            return float(raw)
        except ValueError as e:
            raise ConfigError(f"attack.epsilon must be 'auto' or a number, got {raw!r}") from e

    def render(self) -> str:
        lines = [f"{k} = {self._format(self._values[k])}" for k in sorted(self._values)]
        return "\n".join(lines) + "\n"

    @staticmethod
    def _format(v) -> str:
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return repr(v)
        return str(v)

    @staticmethod
    def describe_keys() -> str:
        width = max(len(k) for k in DEFAULTS)
        lines = []
        for k in sorted(DEFAULTS):
            spec = DEFAULTS[k]
            default = RunConfig._format(spec.default)
            lines.append(f"{k.ljust(width)}  default={default!s:<16} {spec.help}")
        return "\n".join(lines)
