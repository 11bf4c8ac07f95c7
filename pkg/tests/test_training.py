"""Training loop contract tests (small budgets)."""

import numpy as np
import pytest

from fsat.autograd import GraphError
from fsat.data import generate_shapes
from fsat.nets import Classifier, ClassifierSpec, DecoderSpec, EncoderSpec
from fsat.training import (
    AdvTrainConfig,
    DecoderTrainConfig,
    _SameClassPairs,
    adversarial_train,
    evaluate_accuracy,
    param_checksum,
    train_classifier,
    train_decoder,
    write_learning_curve,
)

SMALL_SPEC = ClassifierSpec(
    encoder=EncoderSpec(widths=(8, 16)),
    head_conv_widths=(16, 16),
    head_fc_width=32,
    n_classes=8,
)


class TestPairSampler:
    def test_same_class_always(self):
        rng = np.random.default_rng(0)
        labels = rng.integers(0, 5, size=300)
        sampler = _SameClassPairs(labels, np.arange(300))
        for _ in range(20):
            p, q = sampler.sample(32, rng)
            assert np.array_equal(labels[p], labels[q])

    def test_deterministic_given_seed(self):
        labels = np.random.default_rng(1).integers(0, 4, size=100)
        sampler = _SameClassPairs(labels, np.arange(100))
        a = sampler.sample(16, np.random.default_rng(7))
        b = sampler.sample(16, np.random.default_rng(7))
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


class TestTrainClassifier:
    def test_degenerate_single_class_reaches_perfect_accuracy(self):
        x, _ = generate_shapes(120, seed=5)
        y = np.zeros(120, dtype=np.int64)
        model, history = train_classifier(
            x, y, SMALL_SPEC, epochs=2, seed=0, eval_images=x, eval_labels=y
        )
        assert history[-1]["test_accuracy"] == 1.0

    def test_seeded_runs_bit_identical(self):
        x, y = generate_shapes(96, seed=6)

        def run():
            model, _ = train_classifier(x, y, SMALL_SPEC, epochs=1, seed=9)
            return param_checksum(model)

        assert run() == run()

    def test_learns_above_chance(self):
        xtr, ytr = generate_shapes(600, seed=7)
        xte, yte = generate_shapes(150, seed=8)
        model, history = train_classifier(
            xtr, ytr, SMALL_SPEC, epochs=5, seed=1, eval_images=xte, eval_labels=yte
        )
        assert history[-1]["test_accuracy"] > 0.3  # chance is 0.125


class TestTrainDecoder:
    def test_encoder_stays_frozen(self, tiny_data, tiny_model):
        xtr, ytr, _, _ = tiny_data
        before = param_checksum(tiny_model.encoder)
        train_decoder(
            xtr[:200],
            ytr[:200],
            tiny_model.encoder,
            DecoderSpec(encoder=tiny_model.spec.encoder),
            DecoderTrainConfig(epochs=1, seed=0),
        )
        assert param_checksum(tiny_model.encoder) == before

    def test_trainable_encoder_rejected(self):
        x, y = generate_shapes(80, seed=9)
        rng = np.random.default_rng(0)
        model = Classifier(SMALL_SPEC, rng)  # freshly built: trainable
        with pytest.raises(GraphError):
            train_decoder(
                x, y, model.encoder, DecoderSpec(encoder=SMALL_SPEC.encoder), DecoderTrainConfig(epochs=1)
            )

    def test_loss_curve_recorded_and_nonnegative(self, tiny_data, tiny_model):
        xtr, ytr, _, _ = tiny_data
        _, history = train_decoder(
            xtr[:200],
            ytr[:200],
            tiny_model.encoder,
            DecoderSpec(encoder=tiny_model.spec.encoder),
            DecoderTrainConfig(epochs=2, seed=0),
        )
        assert len(history) >= 1
        for rec in history:
            assert rec["train_loss"] >= 0.0 and rec["val_loss"] >= 0.0

    def test_reconstruction_improves_over_training(self, tiny_data, tiny_model):
        xtr, ytr, _, _ = tiny_data
        _, history = train_decoder(
            xtr[:300],
            ytr[:300],
            tiny_model.encoder,
            DecoderSpec(encoder=tiny_model.spec.encoder),
            DecoderTrainConfig(epochs=3, seed=0),
        )
        assert history[-1]["val_loss"] < history[0]["val_loss"]


class TestAdversarialTrain:
    def test_zero_steps_is_standard_training(self):
        xtr, ytr = generate_shapes(128, seed=12)
        cfg = AdvTrainConfig(steps=0, epochs=1, batch_size=64, seed=2, probe_steps=0)
        model_adv, _ = adversarial_train(
            xtr, ytr, SMALL_SPEC, encoder=None, decoder=None, cfg=cfg
        )
        model_std, _ = train_classifier(
            xtr, ytr, SMALL_SPEC, epochs=1, batch_size=64, seed=2, augment=False
        )
        assert param_checksum(model_adv) == param_checksum(model_std)

    def test_feature_mode_runs_and_records(self, tiny_data, tiny_model, tiny_decoder):
        xtr, ytr, xte, yte = tiny_data
        cfg = AdvTrainConfig(
            steps=3, epochs=1, batch_size=64, seed=2, probe_size=16, probe_steps=3,
            mode="augmentation",
        )
        model, history = adversarial_train(
            xtr[:128],
            ytr[:128],
            tiny_model.spec,
            tiny_model.encoder,
            tiny_decoder,
            cfg,
            init_state=tiny_model.state(),
            eval_images=xte[:64],
            eval_labels=yte[:64],
        )
        assert "clean_accuracy" in history[-1]
        assert "adv_success_rate" in history[-1]
        assert model.trainable

    def test_reproducible(self, tiny_data, tiny_model, tiny_decoder):
        xtr, ytr, _, _ = tiny_data
        cfg = AdvTrainConfig(steps=2, epochs=1, batch_size=32, seed=5, probe_steps=0)

        def run():
            model, _ = adversarial_train(
                xtr[:64], ytr[:64], tiny_model.spec, tiny_model.encoder, tiny_decoder, cfg,
                init_state=tiny_model.state(),
            )
            return param_checksum(model)

        assert run() == run()


class TestLearningCurve:
    def test_csv_rendering(self, tmp_path):
        path = tmp_path / "curve.csv"
        write_learning_curve(
            path,
            [
                {"epoch": 0, "train_loss": 1.5, "clean_accuracy": 0.5},
                {"epoch": 1, "train_loss": 1.0, "clean_accuracy": 0.6, "adv_success_rate": 0.9},
            ],
        )
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,train_loss,clean_accuracy,adv_success_rate"
        assert lines[1] == "0,1.5,0.5,"
        assert lines[2] == "1,1.0,0.6,0.9"

    def test_empty_history_rejected(self, tmp_path):
        with pytest.raises(GraphError):
            write_learning_curve(tmp_path / "x.csv", [])
