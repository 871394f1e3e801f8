import os

import numpy as np
import pytest

from semisup.contrast.data import (
    Dataset,
    SemiSplit,
    batch_iter,
    class_balance,
    compute_stats,
    split_semi,
    standardize,
    steps_per_epoch,
)
from semisup.contrast.data.blobs import simplex_centers, synth_blobs
from semisup.contrast.data.cifar import (
    RECORD_BYTES,
    TEST_FILE,
    TRAIN_FILES,
    load_cifar10,
    parse_records,
    read_batch_file,
)
from semisup.contrast.exc import ConfigurationError, DatasetFormatError, ShapeError
from semisup.contrast.numerics import Rng, checksum


def record(label: int, fill=None) -> bytes:
    pixels = bytes(fill) if fill is not None else bytes((i * 7) % 256 for i in range(3072))
    return bytes([label]) + pixels


@pytest.fixture
def blobs():
    return synth_blobs(Rng(0), classes=3, per_class=20, dim=4, spread=0.5)


class TestBlobs:
    def test_bookkeeping(self):
        ds = synth_blobs(Rng(1), classes=3, per_class=500, dim=8, spread=1.0)
        assert ds.x.shape == (1500, 8)
        assert tuple(ds.class_counts()) == (500, 500, 500)

    def test_centers_are_equidistant(self):
        centers = simplex_centers(4, 5, separation=3.0)
        for i in range(4):
            for j in range(i + 1, 4):
                assert np.linalg.norm(centers[i] - centers[j]) == pytest.approx(3.0, abs=1e-12)

    def test_tiny_spread_collapses_to_centers(self):
        ds = synth_blobs(Rng(2), classes=2, per_class=5, dim=3, spread=1e-12, separation=1.0)
        centers = simplex_centers(2, 3, 1.0)
        assert np.allclose(ds.x, centers[ds.y], atol=1e-9)

    def test_deterministic(self):
        a = synth_blobs(Rng(3), classes=2, per_class=10, dim=2, spread=0.3)
        b = synth_blobs(Rng(3), classes=2, per_class=10, dim=2, spread=0.3)
        assert checksum(a.x) == checksum(b.x)

    def test_too_many_classes(self):
        with pytest.raises(ConfigurationError):
            synth_blobs(Rng(0), classes=5, per_class=2, dim=3, spread=0.1)

    def test_separation_too_small(self):
        with pytest.raises(ConfigurationError):
            synth_blobs(Rng(0), classes=2, per_class=2, dim=3, spread=1.0, separation=3.0)


class TestDataset:
    def test_read_only(self, blobs):
        with pytest.raises(ValueError):
            blobs.x[0, 0] = 1.0

    def test_bad_labels(self):
        with pytest.raises(ConfigurationError):
            Dataset(x=np.zeros((2, 2)), y=[0, 3], classes=2)

    def test_bad_shape(self):
        with pytest.raises(ShapeError):
            Dataset(x=np.zeros((2, 2, 2)), y=[0, 1], classes=2)

    def test_standardize(self, blobs):
        ds = standardize(blobs)
        assert np.allclose(ds.x.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(ds.x.std(axis=0), 1.0, atol=1e-12)
        assert ds.stats is not None

    def test_test_split_uses_train_stats(self, blobs):
        stats = compute_stats(blobs.x)
        shifted = Dataset(x=blobs.x + 1.0, y=blobs.y, classes=3)
        out = standardize(shifted, stats)
        assert np.allclose(out.x.mean(axis=0), 1.0 / stats.std, atol=1e-12)

    def test_constant_channel(self):
        ds = Dataset(x=np.full((4, 2), 3.0), y=[0, 1, 0, 1], classes=2)
        assert np.array_equal(standardize(ds).x, np.zeros((4, 2)))


class TestSplit:
    def test_stratified(self, blobs):
        split = split_semi(blobs, 4, Rng(0))
        assert class_balance(blobs, split.labeled_idx) == (4, 4, 4)
        assert len(split) == len(blobs)
        assert np.all(np.diff(split.labeled_idx) > 0)

    def test_everything_labeled(self, blobs):
        split = split_semi(blobs, 20, Rng(0))
        assert len(split.labeled_idx) == 60
        assert len(split.unlabeled_idx) == 0

    def test_seeds_differ(self, blobs):
        a = split_semi(blobs, 5, Rng(0))
        b = split_semi(blobs, 5, Rng(1))
        assert not np.array_equal(a.labeled_idx, b.labeled_idx)
        assert class_balance(blobs, a.labeled_idx) == class_balance(blobs, b.labeled_idx)

    def test_insufficient_samples(self, blobs):
        with pytest.raises(ConfigurationError):
            split_semi(blobs, 21, Rng(0))

    def test_overlap(self):
        with pytest.raises(ConfigurationError):
            SemiSplit([1, 2], [2, 3])


class TestBatchIter:
    def test_partition(self, blobs):
        split = split_semi(blobs, 5, Rng(0))
        batches = list(batch_iter(blobs, split, 16, Rng(1)))
        seen = np.sort(np.concatenate([b.indices for b in batches]))
        assert np.array_equal(seen, np.arange(len(blobs)))
        sizes = [len(b) for b in batches]
        assert max(sizes) <= 16
        assert max(sizes) - min(sizes) <= 1
        assert all(b.labeled_count >= 1 for b in batches)

    def test_labels_follow_labeled_rows(self, blobs):
        split = split_semi(blobs, 5, Rng(0))
        for b in batch_iter(blobs, split, 16, Rng(1)):
            assert np.array_equal(b.labels, blobs.y[b.labeled_idx])
            assert np.array_equal(b.x, blobs.x[b.indices])

    def test_fully_labeled(self, blobs):
        split = split_semi(blobs, 20, Rng(0))
        batches = list(batch_iter(blobs, split, 8, Rng(0)))
        assert all(b.labeled_count == len(b) for b in batches)
        seen = np.concatenate([b.indices for b in batches])
        assert np.array_equal(np.sort(seen), np.arange(60))

    def test_deterministic(self, blobs):
        split = split_semi(blobs, 3, Rng(0))
        first = [checksum(b.indices) for b in batch_iter(blobs, split, 8, Rng(5))]
        second = [checksum(b.indices) for b in batch_iter(blobs, split, 8, Rng(5))]
        assert first == second

    def test_borrows_labeled_samples(self, blobs):
        split = SemiSplit([0], np.arange(1, 12))
        batches = list(batch_iter(blobs, split, 4, Rng(0)))
        assert len(batches) == steps_per_epoch(split, 4) == 4
        assert all(b.labeled_count == 1 for b in batches)
        assert all(len(b) <= 4 for b in batches)
        unlabeled = np.sort(np.concatenate([b.unlabeled_idx for b in batches]))
        assert np.array_equal(unlabeled, np.arange(1, 12))

    @pytest.mark.parametrize("batch", [1, 61])
    def test_bad_batch(self, blobs, batch):
        split = split_semi(blobs, 2, Rng(0))
        with pytest.raises(ConfigurationError):
            list(batch_iter(blobs, split, batch, Rng(0)))


class TestCifar:
    def test_exact_pixels(self):
        images, labels = parse_records(record(3))
        assert labels.tolist() == [3]
        assert images.shape == (1, 32, 32, 3)
        # Red plane comes first: byte k of the record body is pixel k of channel 0.
        assert images[0, 0, 1, 0] == ((1 * 7) % 256) / 255.0
        assert images[0, 0, 0, 1] == ((1024 * 7) % 256) / 255.0
        assert images[0, 1, 0, 2] == ((2048 + 32) * 7 % 256) / 255.0

    def test_three_records(self, tmp_path):
        data = record(0, [0] * 3072) + record(9, [255] * 3072) + record(5)
        path = tmp_path / "batch.bin"
        path.write_bytes(data)
        assert len(data) == 3 * RECORD_BYTES
        images, labels = read_batch_file(str(path))
        assert labels.tolist() == [0, 9, 5]
        assert not images[0].any()
        assert np.all(images[1] == 1.0)

    def test_truncated(self):
        data = record(1) + record(2)[:100]
        with pytest.raises(DatasetFormatError, match="offset 3073"):
            parse_records(data)

    def test_bad_label(self):
        data = record(1) + record(10)
        with pytest.raises(DatasetFormatError, match="offset 3073"):
            parse_records(data)

    def test_empty(self):
        with pytest.raises(DatasetFormatError):
            parse_records(b"")

    def test_load_directory(self, tmp_path):
        for i, name in enumerate(TRAIN_FILES):
            (tmp_path / name).write_bytes(record(i) + record(i + 1))
        (tmp_path / TEST_FILE).write_bytes(record(7))
        train, test = load_cifar10(str(tmp_path), subset=5)
        assert len(train) == 5
        assert train.y.tolist() == [0, 1, 1, 2, 2]
        assert test.y.tolist() == [7]

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_cifar10(str(tmp_path))


@pytest.mark.skipif(
    not os.path.isdir(os.environ.get("CIFAR10_DIR", "")),
    reason="CIFAR10_DIR does not point at the CIFAR-10 binary distribution",
)
@pytest.mark.slow
def test_full_cifar10():
    train, test = load_cifar10(os.environ["CIFAR10_DIR"])
    assert len(train) == 50000
    assert len(test) == 10000
    assert train.x.shape[1:] == (32, 32, 3)
    assert checksum(train.x) == checksum(load_cifar10(os.environ["CIFAR10_DIR"])[0].x)
