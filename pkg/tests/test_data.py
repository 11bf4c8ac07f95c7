"""Dataset loader tests, including format fixtures built in-test."""

import numpy as np
import pytest

from fsat.data import (
    RECORD_BYTES,
    DatasetError,
    DatasetSpec,
    class_count,
    generate_shapes,
    load_dataset,
)


def make_cifar_fixture(path, n=7, seed=0):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 10, size=n, dtype=np.uint8)
    pixels = rng.integers(0, 256, size=(n, 3072), dtype=np.uint8)
    records = np.concatenate([labels[:, None], pixels], axis=1)
    path.write_bytes(records.tobytes())
    return labels, pixels


class TestCifarLoader:
    def test_first_record_parses(self, tmp_path):
        labels, pixels = make_cifar_fixture(tmp_path / "test_batch.bin")
        images, got = load_dataset(DatasetSpec(name="cifar10", root=str(tmp_path), split="test"))
        assert got[0] == labels[0]
        assert 0 <= got[0] < 10
        # channel-planar layout: first 1024 bytes are the red plane
        assert images[0, 0].ravel()[0] == pytest.approx(pixels[0, 0] / 255.0)
        assert images[0, 2].ravel()[-1] == pytest.approx(pixels[0, -1] / 255.0)
        assert images.shape == (7, 3, 32, 32)

    def test_train_concatenates_batches(self, tmp_path):
        for i in range(1, 6):
            make_cifar_fixture(tmp_path / f"data_batch_{i}.bin", n=3, seed=i)
        images, labels = load_dataset(DatasetSpec(name="cifar10", root=str(tmp_path), split="train"))
        assert images.shape == (15, 3, 32, 32)

    def test_subset_stable(self, tmp_path):
        make_cifar_fixture(tmp_path / "test_batch.bin", n=9)
        spec = DatasetSpec(name="cifar10", root=str(tmp_path), split="test", subset_size=4)
        a_imgs, a_labels = load_dataset(spec)
        b_imgs, b_labels = load_dataset(spec)
        assert len(a_imgs) == 4
        assert np.array_equal(a_imgs, b_imgs) and np.array_equal(a_labels, b_labels)

    def test_truncated_file_reports_offset(self, tmp_path):
        path = tmp_path / "test_batch.bin"
        make_cifar_fixture(path, n=2)
        raw = path.read_bytes()
        path.write_bytes(raw[: RECORD_BYTES + 100])  # cut inside record 2
        with pytest.raises(DatasetError, match=str(RECORD_BYTES)):
            load_dataset(DatasetSpec(name="cifar10", root=str(tmp_path), split="test"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetError, match="missing"):
            load_dataset(DatasetSpec(name="cifar10", root=str(tmp_path), split="test"))

    def test_corrupt_label_rejected(self, tmp_path):
        path = tmp_path / "test_batch.bin"
        record = bytes([250]) + bytes(3072)
        path.write_bytes(record)
        with pytest.raises(DatasetError, match="label"):
            load_dataset(DatasetSpec(name="cifar10", root=str(tmp_path), split="test"))


class TestSvhnLoader:
    def test_mat_fixture_roundtrip(self, tmp_path):
        from scipy.io import savemat

        rng = np.random.default_rng(3)
        x = rng.integers(0, 256, size=(32, 32, 3, 5), dtype=np.uint8)
        y = np.array([[1], [2], [10], [5], [10]], dtype=np.uint8)
        savemat(tmp_path / "test_32x32.mat", {"X": x, "y": y})
        images, labels = load_dataset(
            DatasetSpec(name="svhn-cropped", root=str(tmp_path), split="test")
        )
        assert images.shape == (5, 3, 32, 32)
        assert labels.tolist() == [1, 2, 0, 5, 0]  # the 10 class is digit zero
        assert images[0, 0, 0, 0] == pytest.approx(x[0, 0, 0, 0] / 255.0)


class TestSyntheticShapes:
    def test_seeded_bit_reproducible(self):
        a_imgs, a_labels = generate_shapes(50, seed=42)
        b_imgs, b_labels = generate_shapes(50, seed=42)
        assert a_imgs.tobytes() == b_imgs.tobytes()
        assert np.array_equal(a_labels, b_labels)

    def test_different_seeds_differ(self):
        a, _ = generate_shapes(10, seed=1)
        b, _ = generate_shapes(10, seed=2)
        assert not np.array_equal(a, b)

    def test_ranges_and_shapes(self):
        images, labels = generate_shapes(64, seed=0)
        assert images.shape == (64, 3, 32, 32)
        assert images.min() >= 0.0 and images.max() <= 1.0
        assert labels.min() >= 0 and labels.max() < 8

    def test_all_classes_render(self):
        _, labels = generate_shapes(400, seed=0)
        assert set(labels.tolist()) == set(range(8))

    def test_split_seeds_disjoint(self):
        train, _ = load_dataset(DatasetSpec(name="synthetic-shapes", split="train", subset_size=20))
        test, _ = load_dataset(DatasetSpec(name="synthetic-shapes", split="test", subset_size=20))
        assert not np.array_equal(train, test)


class TestSpecValidation:
    def test_unknown_dataset(self):
        with pytest.raises(DatasetError):
            DatasetSpec(name="mnist")

    def test_unknown_split(self):
        with pytest.raises(DatasetError):
            DatasetSpec(split="validation")

    def test_class_counts(self):
        assert class_count("cifar10") == 10
        assert class_count("svhn-cropped") == 10
        assert class_count("synthetic-shapes") == 8
