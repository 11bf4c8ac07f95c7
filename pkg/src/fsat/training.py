"""Training loops: classifier, same-class-pair decoder, and feature-space
adversarial training."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import autograd as ag
from ._alloc import tune_allocator
from .attacks import AttackConfig, craft_adversarial_batch
from .autograd import GraphError, Tensor, backward
from .nets import Classifier, ClassifierSpec, Decoder, DecoderSpec, Encoder
from .optim import Adam
from .styleops import adain, channel_stats, content_loss, style_loss

__all__ = [
    "DecoderTrainConfig",
    "AdvTrainConfig",
    "evaluate_accuracy",
    "train_classifier",
    "train_decoder",
    "adversarial_train",
    "write_learning_curve",
    "param_checksum",
]


def evaluate_accuracy(model: Classifier, images: np.ndarray, labels: np.ndarray, batch_size: int = 256) -> float:
    correct = 0
    for start in range(0, len(images), batch_size):
        xb = Tensor(images[start : start + batch_size])
        correct += int((model.predict(xb) == labels[start : start + batch_size]).sum())
    return correct / len(images)


def param_checksum(module) -> bytes:
    """Order-stable fingerprint of all parameters, for frozen-weight checks."""
    import hashlib

    h = hashlib.sha256()
    for name, p in sorted(module.named_params().items()):
        h.update(name.encode())
        h.update(p.data.tobytes())
    return h.digest()


def train_classifier(
    images: np.ndarray,
    labels: np.ndarray,
    spec: ClassifierSpec,
    epochs: int = 15,
    lr: float = 1e-3,
    batch_size: int = 64,
    seed: int = 0,
    augment: bool = True,
    eval_images: Optional[np.ndarray] = None,
    eval_labels: Optional[np.ndarray] = None,
    verbose: bool = False,
) -> tuple[Classifier, list[dict]]:
    """Standard cross-entropy training; NaN losses abort via the engine."""
    tune_allocator()
    rng = np.random.default_rng(seed)
    model = Classifier(spec, rng, image_hw=images.shape[2:])
    opt = Adam(model.params(), lr=lr)
    history: list[dict] = []
    n = len(images)
    for epoch in range(epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            idx = perm[start : start + batch_size]
            xb = images[idx]
            if augment:
                flip = rng.random(len(idx)) < 0.5
                xb = xb.copy()
                xb[flip] = xb[flip, :, :, ::-1]
            loss = ag.tmean(ag.softmax_cross_entropy(model(Tensor(xb)), labels[idx]))
            backward(loss)
            opt.step()
            opt.zero_grad()
            epoch_loss += float(loss.data) * len(idx)
        record = {"epoch": epoch, "train_loss": epoch_loss / n}
        if eval_images is not None:
            record["test_accuracy"] = evaluate_accuracy(model, eval_images, eval_labels)
        history.append(record)
        if verbose:
            print(f"[classifier] {record}")
    return model, history


@dataclass
class DecoderTrainConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    patience: int = 3
    val_fraction: float = 0.1
    seed: int = 0


class _SameClassPairs:
    """Uniform random same-class pair sampler over an index pool."""

    def __init__(self, labels: np.ndarray, pool: np.ndarray):
        self.labels = labels
        self.pool = pool
        self.by_class = {
            int(c): pool[labels[pool] == c] for c in np.unique(labels[pool])
        }

    def sample(self, count: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        p = rng.choice(self.pool, size=count)
        q = np.array([rng.choice(self.by_class[int(self.labels[i])]) for i in p])
        if not np.array_equal(self.labels[p], self.labels[q]):
            raise GraphError("pair sampler produced a cross-class pair")
        return p, q


def _decoder_batch_loss(encoder: Encoder, decoder: Decoder, xp: np.ndarray, xq: np.ndarray):
    emb_p = encoder(Tensor(xp))
    emb_q, acts_q = encoder.forward(Tensor(xq))
    b_o = adain(emb_p, channel_stats(emb_q))
    x_r = decoder(b_o)
    emb_r, acts_r = encoder.forward(x_r)
    return ag.tmean(content_loss(emb_r, b_o)) + ag.tmean(style_loss(acts_q, acts_r))


def train_decoder(
    images: np.ndarray,
    labels: np.ndarray,
    encoder: Encoder,
    dec_spec: DecoderSpec,
    cfg: DecoderTrainConfig,
    verbose: bool = False,
) -> tuple[Decoder, list[dict]]:
    """Reconstruction training on same-class style-swapped pairs.

    The encoder stays frozen; the decoder minimizes the content loss of
    the re-encoded reconstruction against the swapped embedding plus the
    style loss against the style image, with early stop on a validation
    plateau.
    """
    if encoder.trainable:
        raise GraphError("decoder training requires a frozen encoder")
    tune_allocator()
    rng = np.random.default_rng(cfg.seed)
    decoder = Decoder(dec_spec, rng)
    opt = Adam(decoder.params(), lr=cfg.lr)

    n = len(images)
    perm = rng.permutation(n)
    n_val = max(int(n * cfg.val_fraction), cfg.batch_size)
    val_sampler = _SameClassPairs(labels, perm[:n_val])
    train_sampler = _SameClassPairs(labels, perm[n_val:])
    val_p, val_q = val_sampler.sample(min(n_val, 256), rng)

    history: list[dict] = []
    best_val = np.inf
    stale = 0
    batches = max(len(train_sampler.pool) // cfg.batch_size, 1)
    for epoch in range(cfg.epochs):
        epoch_loss = 0.0
        for _ in range(batches):
            p, q = train_sampler.sample(cfg.batch_size, rng)
            loss = _decoder_batch_loss(encoder, decoder, images[p], images[q])
            backward(loss)
            opt.step()
            opt.zero_grad()
            epoch_loss += float(loss.data)
        val_loss = 0.0
        for start in range(0, len(val_p), cfg.batch_size):
            sl = slice(start, start + cfg.batch_size)
            chunk = _decoder_batch_loss(encoder, decoder, images[val_p[sl]], images[val_q[sl]])
            val_loss += float(chunk.data) * len(val_p[sl])
        val_loss /= len(val_p)
        history.append({"epoch": epoch, "train_loss": epoch_loss / batches, "val_loss": val_loss})
        if verbose:
            print(f"[decoder] {history[-1]}")
        if val_loss < best_val - 1e-4:
            best_val = val_loss
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return decoder, history


@dataclass
class AdvTrainConfig:
    steps: int = 400
    epochs: int = 25
    lr: float = 1e-3
    batch_size: int = 64
    mix: float = 1.0
    mode: str = "augmentation"
    attack_lr: float = 0.01
    seed: int = 0
    probe_size: int = 100
    probe_steps: Optional[int] = None


def adversarial_train(
    images: np.ndarray,
    labels: np.ndarray,
    spec: ClassifierSpec,
    encoder: Encoder,
    decoder: Optional[Decoder],
    cfg: AdvTrainConfig,
    init_state: Optional[dict] = None,
    eval_images: Optional[np.ndarray] = None,
    eval_labels: Optional[np.ndarray] = None,
    verbose: bool = False,
) -> tuple[Classifier, list[dict]]:
    """Train on adversarial samples crafted against the evolving model.

    The attack always uses the original frozen encoder/decoder pair; the
    classifier itself (including its own encoder prefix) keeps training.
    With 0 attack steps this is ordinary training.
    """
    tune_allocator()
    rng = np.random.default_rng(cfg.seed)
    model = Classifier(spec, rng, image_hw=images.shape[2:])
    if init_state is not None:
        model.load_state(init_state)
    opt = Adam(model.params(), lr=cfg.lr)

    def make_attack_cfg(steps: int) -> AttackConfig:
        return AttackConfig(
            mode=cfg.mode,
            steps=steps,
            lr=cfg.attack_lr,
            chunk_size=cfg.batch_size,
        )

    history: list[dict] = []
    n = len(images)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            xb = images[idx].copy()
            yb = labels[idx]
            n_adv = int(round(cfg.mix * len(idx))) if cfg.steps > 0 else 0
            if n_adv > 0:
                prototypes = None
                if cfg.mode == "interpolation":
                    prototypes = images[rng.choice(n, size=8)]
                model.set_trainable(False)
                try:
                    xb[:n_adv] = craft_adversarial_batch(
                        xb[:n_adv], yb[:n_adv], model, encoder, decoder,
                        make_attack_cfg(cfg.steps), prototypes=prototypes,
                    )
                finally:
                    model.set_trainable(True)
            loss = ag.tmean(ag.softmax_cross_entropy(model(Tensor(xb)), yb))
            backward(loss)
            opt.step()
            opt.zero_grad()
            epoch_loss += float(loss.data) * len(idx)

        record: dict = {"epoch": epoch, "train_loss": epoch_loss / n}
        if eval_images is not None:
            record["clean_accuracy"] = evaluate_accuracy(model, eval_images, eval_labels)
            probe = slice(0, cfg.probe_size)
            probe_steps = cfg.probe_steps if cfg.probe_steps is not None else min(cfg.steps, 100)
            if probe_steps > 0 and decoder is not None:
                model.set_trainable(False)
                try:
                    adv = craft_adversarial_batch(
                        eval_images[probe], eval_labels[probe], model, encoder, decoder,
                        make_attack_cfg(probe_steps),
                    )
                finally:
                    model.set_trainable(True)
                preds = model.predict(Tensor(adv))
                record["adv_success_rate"] = float((preds != eval_labels[probe]).mean())
        history.append(record)
        if verbose:
            print(f"[advtrain] {record}")
    return model, history


def write_learning_curve(path, history: list[dict]) -> None:
    """RFC-4180 CSV of per-epoch records."""
    if not history:
        raise GraphError("empty history")
    keys: list[str] = []
    for record in history:
        for k in record:
            if k not in keys:
                keys.append(k)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
        writer.writerow(keys)
        for record in history:
            writer.writerow([record.get(k, "") for k in keys])
