"""Attack drivers: feature augmentation, feature interpolation, and PGD.

The two feature-space attacks optimize bounded style edits of a frozen
encoder's embedding with Adam on dimension-clipped gradients, decode
each candidate, and keep the successful sample with the lowest content
loss (or, if never successful, the candidate with the lowest adversarial
loss).  PGD is the pixel-space infinity-ball baseline.

Feasibility is enforced and re-checked after every optimizer step; a
violation raises instead of continuing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import autograd as ag
from ._alloc import tune_allocator
from .autograd import GraphError, Tensor, backward
from .metrics import DistanceReport, batched_distance_reports
from .optim import Adam, clip_gradient_inf
from .styleops import (
    ChannelStats,
    SimplexCoefficients,
    StylePerturbation,
    adain,
    augment_transform,
    channel_stats,
    interpolate_style,
    project_simplex,
)

__all__ = [
    "AttackConfig",
    "AttackOutcome",
    "adversarial_loss",
    "attack_augmentation",
    "attack_interpolation",
    "attack_pgd",
]

UNTARGETED_EPSILON = math.log(1.5)
TARGETED_EPSILON = math.log(2.0)
PGD_EPSILON = 8.0 / 255.0


@dataclass
class AttackConfig:
    """Knobs shared by the three attacks.

    ``epsilon`` defaults by mode: log-scale ln(1.5) untargeted / ln(2)
    targeted for the feature attacks, 8/255 in pixel units for PGD.
    ``steps`` defaults to the attack budget (500); evaluation campaigns
    raise it to 2000.  ``k`` is the number of provided style prototype
    images for the interpolation attack (the input's own style is always
    inserted in addition as vertex 0).
    """

    mode: str = "augmentation"
    targeted: bool = False
    target_label: Optional[int] = None
    epsilon: Optional[float] = None
    steps: int = 500
    lr: float = 0.01
    content_weight: float = 1.0
    k: int = 8
    seed: int = 0
    chunk_size: int = 100
    pgd_alpha: Optional[float] = None

    def __post_init__(self):
        if self.mode not in ("augmentation", "interpolation", "pgd"):
            raise GraphError(f"unknown attack mode '{self.mode}'")
        if self.targeted and self.target_label is None:
            raise GraphError("targeted attack requires a target_label")
        if self.steps < 1:
            raise GraphError(f"attack needs at least one step, got {self.steps}")
        if self.content_weight < 0:
            raise GraphError("content_weight must be non-negative")

    def resolved_epsilon(self) -> float:
        if self.epsilon is not None:
            return float(self.epsilon)
        if self.mode == "pgd":
            return PGD_EPSILON
        return TARGETED_EPSILON if self.targeted else UNTARGETED_EPSILON

    def resolved_alpha(self) -> float:
        if self.pgd_alpha is not None:
            return float(self.pgd_alpha)
        return self.resolved_epsilon() / 4.0


@dataclass
class AttackOutcome:
    """Result of attacking one image."""

    adversarial_image: np.ndarray
    success: bool
    predicted_label: int
    true_label: int
    steps_to_first_success: Optional[int]
    final_losses: tuple  # (adversarial, content) of the returned sample
    distances: DistanceReport
    adv_loss_trace: np.ndarray = field(repr=False, default=None)
    content_loss_trace: np.ndarray = field(repr=False, default=None)


def adversarial_loss(logits: Tensor, y: np.ndarray, targeted: bool, target: Optional[int]) -> Tensor:
    """Per-sample attack objective, to be minimized.

    Untargeted: the negated cross-entropy of the true label (driving the
    model away from it).  Targeted: the cross-entropy of the target label
    (driving the model towards it).
    """
    if targeted:
        if target is None:
            raise GraphError("targeted loss requires a target label")
        tgt = np.full(logits.data.shape[0], int(target))
        return ag.softmax_cross_entropy(logits, tgt)
    return ag.neg(ag.softmax_cross_entropy(logits, np.asarray(y)))


def _prep_batch(x, y) -> tuple:
    """Normalize inputs to (N,3,H,W) float64 plus labels, noting scalar calls."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    single = arr.ndim == 3
    if single:
        arr = arr[None]
    if arr.ndim != 4:
        raise GraphError(f"expected image batch (N,3,H,W) or single (3,H,W), got {arr.shape}")
    if arr.min() < -1e-9 or arr.max() > 1 + 1e-9:
        raise GraphError("images must lie in [0,1]")
    labels = np.atleast_1d(np.asarray(y, dtype=np.int64))
    if labels.shape != (arr.shape[0],):
        raise GraphError(f"labels shape {labels.shape} does not match batch {arr.shape[0]}")
    return arr.astype(np.float64), labels, single


def _check_target(cfg: AttackConfig, labels: np.ndarray) -> None:
    if cfg.targeted and np.any(labels == cfg.target_label):
        raise GraphError("target label must differ from the true label of every attacked image")


class _BestTracker:
    """Per-image bookkeeping of the best candidate seen so far."""

    def __init__(self, x0: np.ndarray, steps: int):
        n = x0.shape[0]
        self.succeeded = np.zeros(n, dtype=bool)
        self.first_success = np.full(n, -1, dtype=np.int64)
        self.best_content = np.full(n, np.inf)
        self.best_adv = np.full(n, np.inf)
        self.images = x0.copy()
        self.preds = np.full(n, -1, dtype=np.int64)
        self.losses = np.zeros((n, 2))
        self.adv_trace = np.zeros((n, steps))
        self.content_trace = np.zeros((n, steps))

    def update(self, step, candidate, preds, success, adv, content):
        self.adv_trace[:, step] = adv
        self.content_trace[:, step] = content

        newly = success & ~self.succeeded
        self.first_success[newly] = step
        # Among successful candidates keep the lowest content loss;
        # before any success keep the lowest adversarial loss.
        better_success = success & (content < np.where(self.succeeded, self.best_content, np.inf))
        better_fail = ~self.succeeded & ~success & (adv < self.best_adv)
        take = better_success | better_fail
        if np.any(take):
            self.images[take] = candidate[take]
            self.preds[take] = preds[take]
            self.losses[take, 0] = adv[take]
            self.losses[take, 1] = content[take]
        self.best_content[better_success] = content[better_success]
        self.best_adv[better_fail] = adv[better_fail]
        self.succeeded |= success

    def outcomes(self, x0, labels, encoder) -> list:
        reports = batched_distance_reports(x0, self.images, encoder)
        return [
            AttackOutcome(
                adversarial_image=self.images[i],
                success=bool(self.succeeded[i]),
                predicted_label=int(self.preds[i]),
                true_label=int(labels[i]),
                steps_to_first_success=int(self.first_success[i]) if self.succeeded[i] else None,
                final_losses=(float(self.losses[i, 0]), float(self.losses[i, 1])),
                distances=reports[i],
                adv_loss_trace=self.adv_trace[i].copy(),
                content_loss_trace=self.content_trace[i].copy(),
            )
            for i in range(x0.shape[0])
        ]


def _success_mask(preds: np.ndarray, labels: np.ndarray, cfg: AttackConfig) -> np.ndarray:
    if cfg.targeted:
        return preds == cfg.target_label
    return preds != labels


def _feature_attack_chunk(x0, labels, classifier, encoder, decoder, cfg, prototypes, on_step):
    b0 = encoder(Tensor(x0)).detach()
    n, c = b0.data.shape[0], b0.data.shape[1]
    eps = cfg.resolved_epsilon()
    shares_encoder = getattr(classifier, "encoder", None) is encoder

    if cfg.mode == "augmentation":
        pert = StylePerturbation.zeros(n, c, eps)
        params = [pert.tau_mu, pert.tau_sigma]
        clip_dim = 2 * c
    else:
        own = channel_stats(b0)
        protos = [ChannelStats(own.mu.detach(), own.sigma.detach())]
        for img in prototypes:
            stats = channel_stats(encoder(Tensor(np.asarray(img, dtype=np.float64)[None])))
            protos.append(
                ChannelStats(
                    Tensor(np.repeat(stats.mu.data, n, axis=0)),
                    Tensor(np.repeat(stats.sigma.data, n, axis=0)),
                )
            )
        k_total = len(protos)
        if k_total < 2:
            raise GraphError("interpolation attack needs at least one prototype image")
        gamma_mu = Tensor(np.full((n, k_total), 1.0 / k_total), requires_grad=True)
        gamma_sigma = Tensor(np.full((n, k_total), 1.0 / k_total), requires_grad=True)
        params = [gamma_mu, gamma_sigma]
        clip_dim = k_total

    opt = Adam(params, lr=cfg.lr)
    tracker = _BestTracker(x0, cfg.steps)

    for step in range(cfg.steps):
        if cfg.mode == "augmentation":
            b_styled = augment_transform(b0, pert)
        else:
            stats = interpolate_style(
                protos, SimplexCoefficients(gamma_mu), SimplexCoefficients(gamma_sigma)
            )
            b_styled = adain(b0, stats)
        x_adv = decoder(b_styled)
        emb_adv = encoder(x_adv)
        logits = classifier.head_logits(emb_adv) if shares_encoder else classifier(x_adv)
        adv_vec = adversarial_loss(logits, labels, cfg.targeted, cfg.target_label)
        content_vec = ag.l2norm(emb_adv - b_styled, axes=(1, 2, 3))
        total = ag.tsum(adv_vec + cfg.content_weight * content_vec)
        backward(total)

        preds = logits.data.argmax(axis=1)
        success = _success_mask(preds, labels, cfg)
        tracker.update(step, x_adv.data, preds, success, adv_vec.data.copy(), content_vec.data.copy())

        grads = [clip_gradient_inf(p.grad, clip_dim) for p in params]
        opt.step(grads)
        opt.zero_grad()

        if cfg.mode == "augmentation":
            pert.project()
            worst = max(np.abs(pert.tau_mu.data).max(), np.abs(pert.tau_sigma.data).max())
            if worst > eps:
                raise GraphError(f"style offsets escaped the epsilon ball: {worst} > {eps}")
        else:
            gamma_mu.data = project_simplex(gamma_mu.data)
            gamma_sigma.data = project_simplex(gamma_sigma.data)
            for g in (gamma_mu.data, gamma_sigma.data):
                if np.any(g < 0) or np.any(np.abs(g.sum(axis=1) - 1.0) > 1e-6):
                    raise GraphError("simplex coefficients escaped the simplex")

        if on_step is not None:
            state = {"step": step, "candidate": x_adv.data}
            if cfg.mode == "augmentation":
                state["tau_mu"] = pert.tau_mu.data.copy()
                state["tau_sigma"] = pert.tau_sigma.data.copy()
            else:
                state["gamma_mu"] = gamma_mu.data.copy()
                state["gamma_sigma"] = gamma_sigma.data.copy()
            on_step(state)

    return tracker


def _run_feature_attack(x, y, classifier, encoder, decoder, cfg, prototypes=None, on_step=None):
    tune_allocator()
    if decoder is None:
        raise GraphError("feature-space attacks require a trained decoder")
    if encoder is None:
        raise GraphError("feature-space attacks require the frozen encoder")
    x0, labels, single = _prep_batch(x, y)
    _check_target(cfg, labels)

    outcomes: list[AttackOutcome] = []
    for start in range(0, x0.shape[0], cfg.chunk_size):
        sl = slice(start, start + cfg.chunk_size)
        tracker = _feature_attack_chunk(
            x0[sl], labels[sl], classifier, encoder, decoder, cfg, prototypes, on_step
        )
        outcomes.extend(tracker.outcomes(x0[sl], labels[sl], encoder))
    return outcomes[0] if single else outcomes


def attack_augmentation(x, y, classifier, encoder, decoder, cfg: AttackConfig, on_step=None):
    """Bounded log-scale scaling of per-channel mean/std, decoded to pixels."""
    if cfg.mode != "augmentation":
        raise GraphError(f"config mode is '{cfg.mode}', expected 'augmentation'")
    return _run_feature_attack(x, y, classifier, encoder, decoder, cfg, on_step=on_step)


def attack_interpolation(
    x, y, prototypes: Sequence, classifier, encoder, decoder, cfg: AttackConfig, on_step=None
):
    """Style-simplex interpolation over prototype statistics.

    ``prototypes`` are style images; the attacked image's own statistics
    are inserted as vertex 0, so the identity edit is always feasible.
    Separate simplex coefficients are optimized for the mean and std.
    """
    if cfg.mode != "interpolation":
        raise GraphError(f"config mode is '{cfg.mode}', expected 'interpolation'")
    if prototypes is None or len(prototypes) < 1:
        raise GraphError("interpolation attack needs at least one prototype image")
    return _run_feature_attack(
        x, y, classifier, encoder, decoder, cfg, prototypes=prototypes, on_step=on_step
    )


def _pgd_chunk(chunk, lab, classifier, cfg, on_step):
    eps = cfg.resolved_epsilon()
    alpha = cfg.resolved_alpha()
    tracker = _BestTracker(chunk, cfg.steps)
    x_adv = chunk.copy()
    for step in range(cfg.steps):
        xt = Tensor(x_adv.copy(), requires_grad=True)
        logits = classifier(xt)
        adv_vec = adversarial_loss(logits, lab, cfg.targeted, cfg.target_label)
        backward(ag.tsum(adv_vec))

        preds = logits.data.argmax(axis=1)
        success = _success_mask(preds, lab, cfg)
        tracker.update(step, x_adv, preds, success, adv_vec.data.copy(), np.zeros(chunk.shape[0]))

        x_adv = x_adv - alpha * np.sign(xt.grad)
        x_adv = np.clip(x_adv, chunk - eps, chunk + eps)
        x_adv = np.clip(x_adv, 0.0, 1.0)
        worst = np.abs(x_adv - chunk).max()
        if worst > eps + 1e-9:
            raise GraphError(f"PGD iterate escaped the pixel ball: {worst} > {eps}")
        if on_step is not None:
            on_step({"step": step, "candidate": x_adv, "linf": worst})
    return tracker


def attack_pgd(x, y, classifier, cfg: AttackConfig, on_step=None):
    """Iterative FGSM in the pixel infinity-ball, with [0,1] clipping."""
    if cfg.mode != "pgd":
        raise GraphError(f"config mode is '{cfg.mode}', expected 'pgd'")
    tune_allocator()
    x0, labels, single = _prep_batch(x, y)
    _check_target(cfg, labels)

    outcomes: list[AttackOutcome] = []
    for start in range(0, x0.shape[0], cfg.chunk_size):
        sl = slice(start, start + cfg.chunk_size)
        tracker = _pgd_chunk(x0[sl], labels[sl], classifier, cfg, on_step)
        outcomes.extend(tracker.outcomes(x0[sl], labels[sl], classifier.encoder))
    return outcomes[0] if single else outcomes


def craft_adversarial_batch(x, y, classifier, encoder, decoder, cfg: AttackConfig, prototypes=None):
    """Adversarial images only (no distance reports); used by training loops."""
    tune_allocator()
    x0, labels, _ = _prep_batch(x, y)
    _check_target(cfg, labels)
    crafted = np.empty_like(x0)
    for start in range(0, x0.shape[0], cfg.chunk_size):
        sl = slice(start, start + cfg.chunk_size)
        if cfg.mode == "pgd":
            tracker = _pgd_chunk(x0[sl], labels[sl], classifier, cfg, None)
        else:
            tracker = _feature_attack_chunk(
                x0[sl], labels[sl], classifier, encoder, decoder, cfg, prototypes, None
            )
        crafted[sl] = tracker.images
    return crafted
