"""Command-line surface driving the full pipeline.

Subcommands: train-classifier, train-decoder, attack, adv-train, eval,
reconstruct, report.  Every run writes a manifest (the fully resolved
configuration plus seed and build id) into its output directory, and any
run can be repeated by pointing --config at that manifest.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import AttackConfig, attack_augmentation, attack_interpolation, attack_pgd
from .autograd import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .data import DatasetSpec, class_count, load_dataset
from .imageio import difference_map, save_image
from .metrics import campaign_report, render_csv
from .nets import Classifier, ClassifierSpec, Decoder, DecoderSpec, EncoderSpec
from .training import (
    AdvTrainConfig,
    DecoderTrainConfig,
    adversarial_train,
    evaluate_accuracy,
    train_classifier,
    train_decoder,
    write_learning_curve,
)

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on usage errors; the config-error
    # contract wants 1, with the offending token named.
    def error(self, message):
        raise ConfigError(message)


def _build_id() -> str:
    try:
        described = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=10,
        )
        if described.returncode == 0:
            return described.stdout.strip()
    except (OSError, subprocess.TimeoutExpired):
        pass
    return f"v{__version__}"


def _write_manifest(cfg: RunConfig, out_dir: Path, command: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    text = f"# fsat manifest: {command} (build {_build_id()})\n{cfg.render()}"
    (out_dir / "manifest.txt").write_text(text)


def _encoder_spec(cfg: RunConfig) -> EncoderSpec:
    widths = cfg.widths("encoder.widths")
    cut = str(cfg["encoder.cut_layer"])
    n_style = min(len(widths), 2)
    from .nets import CUT_LAYERS

    style = CUT_LAYERS[: max(n_style, 1)]
    return EncoderSpec(cut_layer=cut, widths=widths, style_layers=style)


def _classifier_spec(cfg: RunConfig, n_classes: int) -> ClassifierSpec:
    return ClassifierSpec(
        encoder=_encoder_spec(cfg),
        head_conv_widths=cfg.widths("classifier.head_widths"),
        head_fc_width=int(cfg["classifier.fc_width"]),
        n_classes=n_classes,
    )


def _dataset(cfg: RunConfig, split: str) -> tuple:
    size_key = "dataset.train_size" if split == "train" else "dataset.test_size"
    spec = DatasetSpec(
        name=str(cfg["dataset.name"]),
        root=str(cfg["dataset.root"]),
        split=split,
        subset_size=int(cfg[size_key]) or None,
        seed=int(cfg["seed"]),
    )
    return load_dataset(spec)


def _load_classifier(cfg: RunConfig) -> Classifier:
    path = str(cfg["classifier.path"])
    if not path:
        raise ConfigError("classifier.path must point to a trained checkpoint")
    tensors, meta = load_checkpoint(path)
    spec = _classifier_spec(cfg, int(meta["n_classes"]))
    model = Classifier(spec, np.random.default_rng(0))
    model.load_state(tensors)
    model.set_trainable(False)
    return model


def _load_decoder(cfg: RunConfig) -> Decoder:
    path = str(cfg["decoder.path"])
    if not path:
        raise ConfigError("decoder.path must point to a trained checkpoint")
    tensors, _ = load_checkpoint(path)
    decoder = Decoder(DecoderSpec(encoder=_encoder_spec(cfg)), np.random.default_rng(0))
    decoder.load_state(tensors)
    decoder.set_trainable(False)
    return decoder


def _attack_config(cfg: RunConfig, steps: int | None = None, mode: str | None = None) -> AttackConfig:
    mode = mode or str(cfg["attack.mode"])
    target = int(cfg["attack.target"])
    return AttackConfig(
        mode=mode,
        targeted=bool(cfg["attack.targeted"]),
        target_label=target if target >= 0 else None,
        epsilon=cfg.attack_epsilon(),
        steps=steps if steps is not None else int(cfg["attack.steps"]),
        lr=float(cfg["attack.lr"]),
        content_weight=float(cfg["attack.lambda"]),
        k=int(cfg["attack.k"]),
        seed=int(cfg["seed"]),
        chunk_size=int(cfg["attack.chunk"]),
    )


# -- subcommands -------------------------------------------------------------


def cmd_train_classifier(cfg: RunConfig, out_dir: Path) -> int:
    xtr, ytr = _dataset(cfg, "train")
    xte, yte = _dataset(cfg, "test")
    spec = _classifier_spec(cfg, class_count(str(cfg["dataset.name"])))
    model, history = train_classifier(
        xtr,
        ytr,
        spec,
        epochs=int(cfg["train.epochs"]),
        lr=float(cfg["train.lr"]),
        batch_size=int(cfg["train.batch_size"]),
        seed=int(cfg["seed"]),
        augment=bool(cfg["train.augment"]),
        eval_images=xte,
        eval_labels=yte,
        verbose=True,
    )
    accuracy = history[-1].get("test_accuracy", 0.0)
    save_checkpoint(
        out_dir / "classifier.fsat",
        model.state(),
        {
            "kind": "classifier",
            "n_classes": spec.n_classes,
            "clean_accuracy": accuracy,
            "seed": int(cfg["seed"]),
        },
    )
    write_learning_curve(out_dir / "classifier_curve.csv", history)
    print(f"clean test accuracy: {accuracy:.4f}")
    return 0


def cmd_train_decoder(cfg: RunConfig, out_dir: Path) -> int:
    xtr, ytr = _dataset(cfg, "train")
    model = _load_classifier(cfg)
    decoder, history = train_decoder(
        xtr,
        ytr,
        model.encoder,
        DecoderSpec(encoder=_encoder_spec(cfg)),
        DecoderTrainConfig(
            epochs=int(cfg["decoder.epochs"]),
            batch_size=int(cfg["decoder.batch_size"]),
            lr=float(cfg["decoder.lr"]),
            patience=int(cfg["decoder.patience"]),
            seed=int(cfg["seed"]),
        ),
        verbose=True,
    )
    save_checkpoint(
        out_dir / "decoder.fsat",
        decoder.state(),
        {"kind": "decoder", "final_val_loss": history[-1]["val_loss"], "seed": int(cfg["seed"])},
    )
    write_learning_curve(out_dir / "decoder_curve.csv", history)
    return 0


def _select_attack_set(cfg: RunConfig, model: Classifier) -> tuple:
    """First N correctly-classified test images, deterministic order."""
    xte, yte = _dataset(cfg, "test")
    preds = np.concatenate(
        [model.predict(Tensor(xte[i : i + 256])) for i in range(0, len(xte), 256)]
    )
    keep = np.where(preds == yte)[0][: int(cfg["attack.count"])]
    return xte[keep], yte[keep]


def cmd_attack(cfg: RunConfig, out_dir: Path) -> int:
    model = _load_classifier(cfg)
    attack_cfg = _attack_config(cfg)
    x, y = _select_attack_set(cfg, model)
    if attack_cfg.mode == "pgd":
        outcomes = attack_pgd(x, y, model, attack_cfg)
    else:
        decoder = _load_decoder(cfg)
        if attack_cfg.mode == "augmentation":
            outcomes = attack_augmentation(x, y, model, model.encoder, decoder, attack_cfg)
        else:
            rng = np.random.default_rng(int(cfg["seed"]))
            xtr, _ = _dataset(cfg, "train")
            prototypes = xtr[rng.choice(len(xtr), size=attack_cfg.k, replace=False)]
            outcomes = attack_interpolation(
                x, y, prototypes, model, model.encoder, decoder, attack_cfg
            )
    table = campaign_report(outcomes)
    (out_dir / "report.csv").write_text(render_csv(table))
    _dump_samples(out_dir, x, outcomes)
    print(render_csv(table))
    return 0


def _dump_samples(out_dir: Path, x: np.ndarray, outcomes, limit: int = 8) -> None:
    samples = out_dir / "samples"
    samples.mkdir(exist_ok=True)
    for i, outcome in enumerate(outcomes[:limit]):
        save_image(samples / f"{i:03d}_original.png", x[i])
        save_image(samples / f"{i:03d}_adversarial.png", outcome.adversarial_image)
        save_image(
            samples / f"{i:03d}_difference_x3.png",
            difference_map(x[i], outcome.adversarial_image),
        )


def cmd_adv_train(cfg: RunConfig, out_dir: Path) -> int:
    xtr, ytr = _dataset(cfg, "train")
    xte, yte = _dataset(cfg, "test")
    n_classes = class_count(str(cfg["dataset.name"]))
    spec = _classifier_spec(cfg, n_classes)
    base = _load_classifier(cfg)
    decoder = _load_decoder(cfg) if str(cfg["advtrain.mode"]) != "pgd" else None
    init_state = base.state() if bool(cfg["advtrain.warm_start"]) else None
    model, history = adversarial_train(
        xtr,
        ytr,
        spec,
        base.encoder,
        decoder,
        AdvTrainConfig(
            steps=int(cfg["advtrain.steps"]),
            epochs=int(cfg["advtrain.epochs"]),
            lr=float(cfg["advtrain.lr"]),
            batch_size=int(cfg["advtrain.batch_size"]),
            mix=float(cfg["advtrain.mix"]),
            mode=str(cfg["advtrain.mode"]),
            attack_lr=float(cfg["attack.lr"]),
            seed=int(cfg["seed"]),
        ),
        init_state=init_state,
        eval_images=xte,
        eval_labels=yte,
        verbose=True,
    )
    clean = evaluate_accuracy(model, xte, yte)
    save_checkpoint(
        out_dir / "classifier_adv.fsat",
        model.state(),
        {
            "kind": "classifier",
            "n_classes": n_classes,
            "clean_accuracy": clean,
            "seed": int(cfg["seed"]),
        },
    )
    write_learning_curve(out_dir / "advtrain_curve.csv", history)
    print(f"clean test accuracy after adversarial training: {clean:.4f}")
    return 0


def cmd_eval(cfg: RunConfig, out_dir: Path) -> int:
    model = _load_classifier(cfg)
    xte, yte = _dataset(cfg, "test")
    accuracy = evaluate_accuracy(model, xte, yte)
    (out_dir / "eval.csv").write_text(f"clean_accuracy\n{accuracy:.6f}\n")
    print(f"clean test accuracy: {accuracy:.4f}")
    return 0


def cmd_reconstruct(cfg: RunConfig, out_dir: Path) -> int:
    """Decoder pass-through: decode(encode(x)) and the accuracy drop it costs."""
    model = _load_classifier(cfg)
    decoder = _load_decoder(cfg)
    xte, yte = _dataset(cfg, "test")
    recon = np.empty_like(xte)
    for i in range(0, len(xte), 256):
        emb = model.encoder(Tensor(xte[i : i + 256]))
        recon[i : i + 256] = decoder(emb).data
    clean = evaluate_accuracy(model, xte, yte)
    passthrough = evaluate_accuracy(model, recon, yte)
    mean_err = float(np.abs(recon - xte).mean())
    lines = [
        "clean_accuracy,passthrough_accuracy,accuracy_drop,mean_abs_pixel_error",
        f"{clean:.6f},{passthrough:.6f},{clean - passthrough:.6f},{mean_err:.6f}",
    ]
    (out_dir / "reconstruct.csv").write_text("\n".join(lines) + "\n")
    samples = out_dir / "samples"
    samples.mkdir(exist_ok=True)
    for i in range(min(8, len(xte))):
        save_image(samples / f"{i:03d}_original.png", xte[i])
        save_image(samples / f"{i:03d}_reconstruction.png", recon[i])
        save_image(samples / f"{i:03d}_difference_x3.png", difference_map(xte[i], recon[i]))
    print("\n".join(lines))
    return 0


def cmd_report(cfg: RunConfig, out_dir: Path, inputs: list[str]) -> int:
    """Merge one-row report CSVs produced by `attack` runs into one table."""
    if not inputs:
        raise ConfigError("report requires at least one report.csv path")
    rows = []
    header = None
    for path in inputs:
        text = Path(path).read_text().strip().splitlines()
        if len(text) < 2:
            raise ConfigError(f"not a report csv: {path}")
        if header is None:
            header = "source," + text[0]
        rows.append(f"{path}," + text[1])
    merged = "\n".join([header] + rows) + "\n"
    (out_dir / "merged_report.csv").write_text(merged)
    print(merged)
    return 0


COMMANDS = {
    "train-classifier": cmd_train_classifier,
    "train-decoder": cmd_train_decoder,
    "attack": cmd_attack,
    "adv-train": cmd_adv_train,
    "eval": cmd_eval,
    "reconstruct": cmd_reconstruct,
}


def main(argv=None) -> int:
    parser = _Parser(prog="fsat", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS) + ["report", "keys"])
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE"
    )
    parser.add_argument("inputs", nargs="*", help="extra inputs (report csvs)")

    try:
        args = parser.parse_intermixed_args(argv)
        if args.command == "keys":
            print(RunConfig.describe_keys())
            return 0
        cfg = RunConfig.from_file(args.config, args.overrides) if args.config else RunConfig()
        if not args.config:
            cfg.apply_overrides(args.overrides)
        out_dir = Path(str(cfg["output_dir"]))
        _write_manifest(cfg, out_dir, args.command)
        if args.command == "report":
            return cmd_report(cfg, out_dir, args.inputs)
        return COMMANDS[args.command](cfg, out_dir)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - CLI boundary
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
