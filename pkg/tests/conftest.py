"""Shared fixtures: a tiny trained classifier/decoder pair on a small
shapes dataset, reused across the attack/training/cli tests."""

import numpy as np
import pytest

from fsat.data import generate_shapes
from fsat.nets import ClassifierSpec, DecoderSpec, EncoderSpec
from fsat.training import DecoderTrainConfig, train_classifier, train_decoder

TINY_SPEC = ClassifierSpec(
    encoder=EncoderSpec(cut_layer="relu2_1", widths=(12, 24), style_layers=("relu1_1", "relu2_1")),
    head_conv_widths=(24, 32),
    head_fc_width=48,
    n_classes=8,
)


@pytest.fixture(scope="session")
def tiny_data():
    xtr, ytr = generate_shapes(700, seed=10)
    xte, yte = generate_shapes(160, seed=11)
    return xtr, ytr, xte, yte


@pytest.fixture(scope="session")
def tiny_model(tiny_data):
    xtr, ytr, xte, yte = tiny_data
    model, history = train_classifier(
        xtr, ytr, TINY_SPEC, epochs=6, batch_size=64, seed=3, eval_images=xte, eval_labels=yte
    )
    model.set_trainable(False)
    model.clean_accuracy = history[-1]["test_accuracy"]
    return model


@pytest.fixture(scope="session")
def tiny_decoder(tiny_data, tiny_model):
    xtr, ytr, _, _ = tiny_data
    decoder, _ = train_decoder(
        xtr,
        ytr,
        tiny_model.encoder,
        DecoderSpec(encoder=TINY_SPEC.encoder),
        DecoderTrainConfig(epochs=4, batch_size=64, seed=4),
    )
    decoder.set_trainable(False)
    return decoder
