"""VGG-style encoder, mirrored decoder, and the target classifier.

The encoder is the prefix of the classifier up to a configurable cut
layer, so the classifier factors exactly into head-on-top-of-encoder.
After classifier training the encoder prefix is frozen and reused as the
feature extractor; the decoder mirrors it block for block with
nearest-neighbor upsampling in place of each pooling step.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from . import autograd as ag
from .autograd import GraphError, Tensor

__all__ = [
    "CUT_LAYERS",
    "EncoderSpec",
    "DecoderSpec",
    "ClassifierSpec",
    "Encoder",
    "Decoder",
    "Classifier",
]

CUT_LAYERS = ("relu1_1", "relu2_1", "relu3_1", "relu4_1")


@dataclass(frozen=True)
class EncoderSpec:
    """Architecture of the feature extractor.

    One conv+relu block per entry of ``widths``; every block after the
    first is preceded by 2x2 max pooling.  ``cut_layer`` names the relu
    output that becomes the embedding, and ``style_layers`` the prefix of
    block outputs whose statistics define style.
    """

    cut_layer: str = "relu2_1"
    widths: Tuple[int, ...] = (32, 64)
    style_layers: Tuple[str, ...] = ("relu1_1", "relu2_1")
    in_channels: int = 3

    def __post_init__(self):
        if self.cut_layer not in CUT_LAYERS:
            raise GraphError(f"unknown cut layer '{self.cut_layer}', expected one of {CUT_LAYERS}")
        n_blocks = CUT_LAYERS.index(self.cut_layer) + 1
        if len(self.widths) != n_blocks:
            raise GraphError(
                f"cut at {self.cut_layer} needs {n_blocks} block widths, got {len(self.widths)}"
            )
        expected_prefix = CUT_LAYERS[: len(self.style_layers)]
        if tuple(self.style_layers) != expected_prefix or not self.style_layers:
            raise GraphError(
                f"style_layers must be a non-empty prefix of {CUT_LAYERS[:n_blocks]}"
            )
        if len(self.style_layers) > n_blocks:
            raise GraphError("style_layers extend beyond the cut layer")

    @property
    def n_blocks(self) -> int:
        return len(self.widths)

    @property
    def out_channels(self) -> int:
        return self.widths[-1]

    def embedding_shape(self, h: int, w: int) -> Tuple[int, int, int]:
        halvings = self.n_blocks - 1
        return (self.out_channels, h >> halvings, w >> halvings)


@dataclass(frozen=True)
class DecoderSpec:
    """Mirror of an :class:`EncoderSpec`.

    Each encoder block is reversed (conv with transposed channel counts,
    reflection padding) and every pooling step becomes nearest-neighbor
    x2 upsampling; the final conv maps back to image channels and the
    output is clamped to [0, 1].
    """

    encoder: EncoderSpec = field(default_factory=EncoderSpec)


@dataclass(frozen=True)
class ClassifierSpec:
    """Encoder prefix plus a conv/pool/linear head.

    Splitting at the encoder cut layer yields the feature extractor and
    the embedding classifier whose composition is exactly the full model.
    """

    encoder: EncoderSpec = field(default_factory=EncoderSpec)
    head_conv_widths: Tuple[int, ...] = (128, 256)
    head_fc_width: int = 256
    n_classes: int = 10


def _he_conv(rng: np.random.Generator, c_out: int, c_in: int, k: int) -> Tensor:
    fan_in = c_in * k * k
    w = rng.standard_normal((c_out, c_in, k, k)) * np.sqrt(2.0 / fan_in)
    return Tensor(w, requires_grad=True)


def _he_linear(rng: np.random.Generator, d_in: int, d_out: int) -> Tensor:
    w = rng.standard_normal((d_in, d_out)) * np.sqrt(2.0 / d_in)
    return Tensor(w, requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


class _Module:
    """Named-parameter container with freeze/clone support."""

    def __init__(self):
        self._params: Dict[str, Tensor] = {}

    def _register(self, name: str, t: Tensor) -> Tensor:
        self._params[name] = t
        return t

    def named_params(self) -> Dict[str, Tensor]:
        return dict(self._params)

    def params(self) -> List[Tensor]:
        return list(self._params.values())

    def set_trainable(self, flag: bool) -> None:
        for p in self._params.values():
            p.requires_grad = flag

    @property
    def trainable(self) -> bool:
        return any(p.requires_grad for p in self._params.values())

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise GraphError(f"parameter name mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, p in self._params.items():
            arr = state[name]
            if arr.shape != p.data.shape:
                raise GraphError(f"parameter '{name}' shape {arr.shape} != expected {p.data.shape}")
            p.data = arr.astype(p.data.dtype, copy=True)

    def state(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def clone_frozen(self):
        other = copy.deepcopy(self)
        other.set_trainable(False)
        return other


class Encoder(_Module):
    """Conv/pool feature extractor; forward returns the embedding plus
    the activations at every configured style layer."""

    def __init__(self, spec: EncoderSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        c_prev = spec.in_channels
        for i, width in enumerate(spec.widths, start=1):
            self._register(f"block{i}.weight", _he_conv(rng, width, c_prev, 3))
            self._register(f"block{i}.bias", _zeros((width,)))
            c_prev = width

    def forward(self, x: Tensor) -> Tuple[Tensor, List[Tensor]]:
        if x.data.ndim != 4 or x.data.shape[1] != self.spec.in_channels:
            raise GraphError(f"encoder expects (N,{self.spec.in_channels},H,W), got {x.data.shape}")
        acts: List[Tensor] = []
        h = x
        for i in range(1, self.spec.n_blocks + 1):
            if i > 1:
                h = ag.max_pool2d(h)
            h = ag.conv2d(h, self._params[f"block{i}.weight"], self._params[f"block{i}.bias"], padding=1)
            h = ag.relu(h)
            if f"relu{i}_1" in self.spec.style_layers:
                acts.append(h)
        return h, acts

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)[0]


class Decoder(_Module):
    """Mirror decoder mapping an embedding back to a [0,1] image."""

    def __init__(self, spec: DecoderSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        enc = spec.encoder
        chain = (enc.in_channels,) + tuple(enc.widths)
        # Reverse the encoder chain: widths[-1] -> ... -> in_channels.
        for i in range(enc.n_blocks, 0, -1):
            self._register(f"block{i}.weight", _he_conv(rng, chain[i - 1], chain[i], 3))
            self._register(f"block{i}.bias", _zeros((chain[i - 1],)))

    def __call__(self, b: Tensor) -> Tensor:
        enc = self.spec.encoder
        if b.data.ndim != 4 or b.data.shape[1] != enc.out_channels:
            raise GraphError(f"decoder expects (N,{enc.out_channels},H,W), got {b.data.shape}")
        h = b
        for i in range(enc.n_blocks, 0, -1):
            h = ag.reflect_pad2d(h, 1)
            h = ag.conv2d(h, self._params[f"block{i}.weight"], self._params[f"block{i}.bias"], padding=0)
            if i > 1:
                h = ag.relu(h)
                h = ag.upsample_nearest2(h)
        return ag.clamp(h, 0.0, 1.0)


class Classifier(_Module):
    """Full model: encoder prefix composed with a conv/linear head."""

    def __init__(self, spec: ClassifierSpec, rng: np.random.Generator, image_hw: Tuple[int, int] = (32, 32)):
        super().__init__()
        self.spec = spec
        self.encoder = Encoder(spec.encoder, rng)
        self.image_hw = image_hw

        c_prev, h, w = spec.encoder.embedding_shape(*image_hw)
        for j, width in enumerate(spec.head_conv_widths, start=1):
            self._register(f"head.conv{j}.weight", _he_conv(rng, width, c_prev, 3))
            self._register(f"head.conv{j}.bias", _zeros((width,)))
            c_prev = width
            h, w = h // 2, w // 2
        self._flat = c_prev * h * w
        self._register("head.fc1.weight", _he_linear(rng, self._flat, spec.head_fc_width))
        self._register("head.fc1.bias", _zeros((spec.head_fc_width,)))
        self._register("head.fc2.weight", _he_linear(rng, spec.head_fc_width, spec.n_classes))
        self._register("head.fc2.bias", _zeros((spec.n_classes,)))

    # Encoder parameters are part of the model state under a stable prefix.
    def named_params(self) -> Dict[str, Tensor]:
        out = {f"encoder.{k}": v for k, v in self.encoder.named_params().items()}
        out.update(self._params)
        return out

    def params(self) -> List[Tensor]:
        return list(self.named_params().values())

    def set_trainable(self, flag: bool) -> None:
        self.encoder.set_trainable(flag)
        for p in self._params.values():
            p.requires_grad = flag

    def load_state(self, state: Dict[str, np.ndarray]) -> None:
        enc_state = {}
        head_state = {}
        for name, arr in state.items():
            if name.startswith("encoder."):
                enc_state[name[len("encoder.") :]] = arr
            else:
                head_state[name] = arr
        self.encoder.load_state(enc_state)
        super_state = {k: v for k, v in head_state.items()}
        _Module.load_state(self, super_state)

    def state(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_params().items()}

    def head_logits(self, embedding: Tensor) -> Tensor:
        h = embedding
        for j in range(1, len(self.spec.head_conv_widths) + 1):
            h = ag.max_pool2d(h)
            h = ag.conv2d(h, self._params[f"head.conv{j}.weight"], self._params[f"head.conv{j}.bias"], padding=1)
            h = ag.relu(h)
        n = h.data.shape[0]
        h = ag.reshape(h, (n, self._flat))
        h = ag.relu(ag.linear(h, self._params["head.fc1.weight"], self._params["head.fc1.bias"]))
        return ag.linear(h, self._params["head.fc2.weight"], self._params["head.fc2.bias"])

    def __call__(self, x: Tensor) -> Tensor:
        return self.head_logits(self.encoder(x))

    def predict(self, x: Tensor) -> np.ndarray:
        return self(x).data.argmax(axis=1)
