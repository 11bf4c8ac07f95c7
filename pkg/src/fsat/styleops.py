"""Channel-statistics style operations.

The per-channel spatial mean and standard deviation of an embedding act
as its style coordinates; the standardized activations are its content.
This module provides the statistic swap that re-expresses one embedding
in another's statistics, the two bounded families of style edits used by
the attacks (log-scale augmentation and prototype-simplex interpolation),
their feasibility projections, and the content/style losses.

Embeddings are batched ``(N, C, H, W)`` tensors throughout; statistics
are ``(N, C)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import GraphError, Tensor

__all__ = [
    "VARIANCE_FLOOR",
    "ChannelStats",
    "StylePerturbation",
    "SimplexCoefficients",
    "channel_stats",
    "adain",
    "augment_transform",
    "interpolate_style",
    "project_simplex",
    "content_loss",
    "style_loss",
]

# Added to the population variance before the square root so constant
# channels stay differentiable and divisions by sigma stay bounded.
VARIANCE_FLOOR = 1e-8


@dataclass
class ChannelStats:
    """Per-channel spatial mean and standard deviation, shape (N, C)."""

    mu: Tensor
    sigma: Tensor

    @property
    def channels(self) -> int:
        return self.mu.shape[-1]

    def detach(self) -> "ChannelStats":
        return ChannelStats(self.mu.detach(), self.sigma.detach())


def _require_embedding(b: Tensor, name: str) -> None:
    if b.data.ndim != 4:
        raise GraphError(f"{name} must be a batched (N,C,H,W) embedding, got shape {b.data.shape}")


def channel_stats(b: Tensor) -> ChannelStats:
    """Spatial mean and floored standard deviation of each channel.

    Uses the population variance (divisor H*W); sigma = sqrt(var + floor)
    so sigma is strictly positive even for constant channels.
    """
    _require_embedding(b, "embedding")
    mu = ag.tmean(b, axes=(2, 3))
    var = ag.variance(b, axes=(2, 3))
    sigma = ag.sqrt(var + VARIANCE_FLOOR)
    return ChannelStats(mu=mu, sigma=sigma)


def _per_channel(stat: Tensor) -> Tensor:
    """(N,C) -> (N,C,1,1) for broadcasting against an embedding."""
    n, c = stat.shape
    return ag.reshape(stat, (n, c, 1, 1))


def adain(content: Tensor, style: ChannelStats) -> Tensor:
    """Re-express ``content`` in the per-channel statistics of ``style``.

    Keeps the standardized shape of the content embedding while enforcing
    the style's mean and standard deviation on every channel.
    """
    _require_embedding(content, "content")
    if style.channels != content.data.shape[1]:
        raise GraphError(
            f"style has {style.channels} channels, content has {content.data.shape[1]}"
        )
    own = channel_stats(content)
    standardized = (content - _per_channel(own.mu)) / _per_channel(own.sigma)
    return standardized * _per_channel(style.sigma) + _per_channel(style.mu)


@dataclass
class StylePerturbation:
    """Bounded log-scale offsets for per-channel mean and std.

    ``tau_mu`` and ``tau_sigma`` are (N, C) tensors whose components stay
    within [-epsilon, +epsilon]; :meth:`project` restores the bound after
    an optimizer step.
    """

    tau_mu: Tensor
    tau_sigma: Tensor
    epsilon: float

    def __post_init__(self):
        if self.epsilon < 0:
            raise GraphError(f"epsilon must be non-negative, got {self.epsilon}")
        self._assert_feasible()

    @classmethod
    def zeros(cls, n: int, channels: int, epsilon: float) -> "StylePerturbation":
        return cls(
            tau_mu=Tensor(np.zeros((n, channels)), requires_grad=True),
            tau_sigma=Tensor(np.zeros((n, channels)), requires_grad=True),
            epsilon=epsilon,
        )

    def project(self) -> None:
        """Clamp both offset vectors into the epsilon infinity-ball in place."""
        np.clip(self.tau_mu.data, -self.epsilon, self.epsilon, out=self.tau_mu.data)
        np.clip(self.tau_sigma.data, -self.epsilon, self.epsilon, out=self.tau_sigma.data)

    def _assert_feasible(self) -> None:
        for name, t in (("tau_mu", self.tau_mu), ("tau_sigma", self.tau_sigma)):
            worst = float(np.abs(t.data).max()) if t.data.size else 0.0
            if worst > self.epsilon:
                raise GraphError(f"{name} exceeds the epsilon bound: {worst} > {self.epsilon}")


def augment_transform(b: Tensor, p: StylePerturbation) -> Tensor:
    """Scale each channel's std by e^tau_sigma and its mean by e^tau_mu.

    Evaluated as ``b * e^tau_sigma + mu_b * (e^tau_mu - e^tau_sigma)`` so
    the zero perturbation reproduces ``b`` bit-exactly.
    """
    _require_embedding(b, "embedding")
    p._assert_feasible()
    mu_b = ag.tmean(b, axes=(2, 3))
    scale_sigma = ag.exp(p.tau_sigma)
    scale_mu = ag.exp(p.tau_mu)
    shift = mu_b * (scale_mu - scale_sigma)
    return b * _per_channel(scale_sigma) + _per_channel(shift)


@dataclass
class SimplexCoefficients:
    """Convex weights over style prototypes: gamma >= 0, sum(gamma) = 1."""

    gamma: Tensor

    def __post_init__(self):
        g = self.gamma.data
        if np.any(g < 0):
            raise GraphError("simplex coefficients must be non-negative")
        sums = g.sum(axis=-1)
        if np.any(np.abs(sums - 1.0) > 1e-6):
            raise GraphError(f"simplex coefficients must sum to 1 within 1e-6, got {sums}")

    @classmethod
    def uniform(cls, n: int, k: int, requires_grad: bool = True) -> "SimplexCoefficients":
        return cls(Tensor(np.full((n, k), 1.0 / k), requires_grad=requires_grad))

    @property
    def k(self) -> int:
        return self.gamma.shape[-1]


def project_simplex(raw: np.ndarray) -> np.ndarray:
    """Project raw coefficients (last axis) onto the probability simplex.

    Components are clipped to be non-negative and renormalized to sum to
    one; a degenerate all-clipped vector (sum below 1e-5) resets to the
    uniform point.
    """
    raw = np.asarray(raw, dtype=np.float64)
    clipped = np.maximum(raw, 0.0)
    sums = clipped.sum(axis=-1, keepdims=True)
    k = raw.shape[-1]
    uniform = np.full_like(clipped, 1.0 / k)
    safe = np.where(sums < 1e-5, 1.0, sums)
    return np.where(sums < 1e-5, uniform, clipped / safe)


def interpolate_style(
    prototypes: Sequence[ChannelStats],
    g_mu: SimplexCoefficients,
    g_sigma: Optional[SimplexCoefficients] = None,
) -> ChannelStats:
    """Convex combination of style prototypes.

    ``prototypes`` are k stat pairs (k >= 2), each of shape (N, C); the
    result's mean lives on the prototype-mean simplex and its std on the
    prototype-std simplex.  Separate coefficients for the two simplexes
    may be given; by default the mean coefficients are shared.
    """
    k = len(prototypes)
    if k < 2:
        raise GraphError(f"interpolation needs at least 2 prototypes, got {k}")
    if g_sigma is None:
        g_sigma = g_mu
    if g_mu.k != k or g_sigma.k != k:
        raise GraphError(f"coefficient count {g_mu.k}/{g_sigma.k} does not match {k} prototypes")
    channels = prototypes[0].channels
    for i, p in enumerate(prototypes):
        if p.channels != channels:
            raise GraphError(f"prototype {i} has {p.channels} channels, expected {channels}")

    mu_stack = Tensor(np.stack([p.mu.data for p in prototypes]))  # (k, N, C)
    sigma_stack = Tensor(np.stack([p.sigma.data for p in prototypes]))

    def combine(stack: Tensor, g: SimplexCoefficients) -> Tensor:
        gamma = g.gamma
        if gamma.data.ndim == 1:
            weights = ag.reshape(gamma, (k, 1, 1))
        else:
            weights = ag.reshape(ag.transpose(gamma, (1, 0)), (k, gamma.shape[0], 1))
        return ag.tsum(stack * weights, axes=0)

    return ChannelStats(mu=combine(mu_stack, g_mu), sigma=combine(sigma_stack, g_sigma))


def content_loss(b_r: Tensor, b_o: Tensor) -> Tensor:
    """Per-sample Euclidean distance between two embeddings, shape (N,)."""
    _require_embedding(b_r, "b_r")
    if b_r.data.shape != b_o.data.shape:
        raise GraphError(f"embedding shapes differ: {b_r.data.shape} vs {b_o.data.shape}")
    return ag.l2norm(b_r - b_o, axes=(1, 2, 3))


def style_loss(acts_q: Sequence[Tensor], acts_r: Sequence[Tensor]) -> Tensor:
    """Per-sample style discrepancy summed over a set of layers.

    For each layer the Euclidean distances between the two activations'
    channel-mean vectors and channel-std vectors are added.
    """
    if len(acts_q) != len(acts_r) or not acts_q:
        raise GraphError(
            f"style layer sets differ or are empty: {len(acts_q)} vs {len(acts_r)} layers"
        )
    total = None
    for i, (aq, ar) in enumerate(zip(acts_q, acts_r)):
        if aq.data.shape[1] != ar.data.shape[1]:
            raise GraphError(f"style layer {i} channel mismatch: {aq.data.shape} vs {ar.data.shape}")
        sq, sr = channel_stats(aq), channel_stats(ar)
        term = ag.l2norm(sq.mu - sr.mu, axes=-1) + ag.l2norm(sq.sigma - sr.sigma, axes=-1)
        total = term if total is None else total + term
    return total
