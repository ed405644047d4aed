import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sdcluster import (
    Dataset,
    epoch_batches,
    load_synthetic,
    make_synthetic_blobs,
    parse_cifar10_file,
    save_synthetic,
    serialize_cifar10,
)
from sdcluster.data import (
    CIFAR_RECORD_BYTES,
    blob_centers,
    dataset_from_cifar_arrays,
    epoch_permutation,
    normalization_stats,
    subset,
)
from sdcluster.errors import (
    ConfigurationError,
    CorruptRecordError,
    EmptyInputError,
    MalformedFileError,
)


def fake_cifar_bytes(n, seed=0):
    rng = np.random.default_rng(seed)
    records = rng.integers(0, 256, size=(n, CIFAR_RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = rng.integers(0, 10, size=n)
    return records.tobytes()


class TestParseCifar:
    def test_10000_records(self):
        data = fake_cifar_bytes(10_000)
        assert len(data) == 30_730_000
        images, labels = parse_cifar10_file(data)
        assert images.shape == (10_000, 3, 32, 32)
        assert labels.shape == (10_000,)

    def test_single_record_label(self):
        record = bytes([7]) + bytes(range(256)) * 12
        assert len(record) == CIFAR_RECORD_BYTES
        images, labels = parse_cifar10_file(record)
        assert labels.tolist() == [7]
        # channel-planar layout: byte 1 is red plane position (0, 0)
        assert images[0, 0, 0, 0] == 0
        assert images[0, 0, 0, 1] == 1

    def test_truncated_file(self):
        with pytest.raises(MalformedFileError, match="3072"):
            parse_cifar10_file(bytes(3072))

    def test_bad_label_byte_names_record(self):
        data = bytearray(fake_cifar_bytes(3))
        data[2 * CIFAR_RECORD_BYTES] = 11
        with pytest.raises(CorruptRecordError, match="record 2"):
            parse_cifar10_file(bytes(data))

    @settings(max_examples=25, deadline=None)
    @given(n=st.integers(1, 4), seed=st.integers(0, 10_000))
    def test_round_trip(self, n, seed):
        data = fake_cifar_bytes(n, seed)
        images, labels = parse_cifar10_file(data)
        assert serialize_cifar10(images, labels) == data

    def test_normalization_statistics(self):
        images, labels = parse_cifar10_file(fake_cifar_bytes(500, seed=3))
        ds = dataset_from_cifar_arrays(images, labels)
        for c in range(3):
            channel = ds.inputs[:, c]
            assert abs(channel.mean()) < 0.05
            assert abs(channel.std() - 1.0) < 0.05

    def test_stats_of_scaled_pixels(self):
        images, _ = parse_cifar10_file(fake_cifar_bytes(200, seed=4))
        mean, std = normalization_stats(images)
        assert mean.shape == (3,)
        assert (std > 0).all()
        assert (mean >= 0).all() and (mean <= 1).all()


class TestBlobs:
    def test_deterministic(self):
        a = make_synthetic_blobs(100, 3, 16, 10.0, 0)
        b = make_synthetic_blobs(100, 3, 16, 10.0, 0)
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.labels, b.labels)

    def test_center_separation_exact(self):
        centers = blob_centers(2, 2, 10.0, seed=5)
        assert np.linalg.norm(centers[0] - centers[1]) >= 10.0
        ds = make_synthetic_blobs(1, 2, 2, 10.0, 5)
        assert len(ds) == 2

    def test_nearest_center_oracle(self):
        # brute-force nearest-center rule on raw inputs recovers the labels
        ds = make_synthetic_blobs(200, 3, 16, 10.0, 1)
        centers = blob_centers(3, 16, 10.0, seed=1)
        hits = 0
        for x, y in zip(ds.inputs.astype(np.float64), ds.labels):
            dists = [np.linalg.norm(x - c) for c in centers]
            hits += int(np.argmin(dists)) == y
        assert hits / len(ds) >= 0.99

    def test_shared_centers_fresh_noise(self):
        a = make_synthetic_blobs(50, 3, 8, 10.0, seed=2)
        b = make_synthetic_blobs(50, 3, 8, 10.0, seed=2, noise_seed=77)
        means_a = np.stack([a.inputs[a.labels == c].mean(0) for c in range(3)])
        means_b = np.stack([b.inputs[b.labels == c].mean(0) for c in range(3)])
        assert not np.array_equal(a.inputs, b.inputs)
        assert np.allclose(means_a, means_b, atol=1.0)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ConfigurationError):
            make_synthetic_blobs(0, 3, 4, 10.0, 0)
        with pytest.raises(ConfigurationError):
            make_synthetic_blobs(1, 3, 4, -1.0, 0)


class TestSyntheticFile:
    def test_round_trip(self, tmp_path):
        ds = make_synthetic_blobs(40, 3, 8, 10.0, 9)
        path = tmp_path / "blobs.txt"
        save_synthetic(ds, path)
        back = load_synthetic(path)
        assert np.array_equal(back.inputs, ds.inputs)
        assert np.array_equal(back.labels, ds.labels)

    def test_header_mismatch(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("3 2 1\n0 1.0 2.0\n")
        with pytest.raises(MalformedFileError, match="3 records"):
            load_synthetic(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.txt"
        path.write_text("")
        with pytest.raises(MalformedFileError):
            load_synthetic(path)


class TestEpochBatches:
    def test_batch_sizes(self):
        ds = make_synthetic_blobs(5, 2, 4, 10.0, 0)  # N=10
        batches = epoch_batches(ds, 4, epoch=0, seed=0)
        assert [len(b) for b in batches] == [4, 4, 2]

    def test_deterministic(self):
        ds = make_synthetic_blobs(50, 2, 4, 10.0, 0)
        a = epoch_batches(ds, 16, epoch=3, seed=11)
        b = epoch_batches(ds, 16, epoch=3, seed=11)
        assert all(np.array_equal(x.indices, y.indices) for x, y in zip(a, b))

    def test_epochs_differ(self):
        # reference check: the permutation really depends on the epoch
        p0 = epoch_permutation(1000, epoch=0, seed=4)
        p1 = epoch_permutation(1000, epoch=1, seed=4)
        assert not np.array_equal(p0, p1)
        assert np.array_equal(np.sort(p0), np.arange(1000))
        assert np.array_equal(np.sort(p1), np.arange(1000))

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(1, 60), batch=st.integers(1, 70), epoch=st.integers(0, 5))
    def test_epoch_coverage(self, n, batch, epoch):
        rng = np.random.default_rng(0)
        ds = Dataset(
            kind="synthetic",
            inputs=rng.standard_normal((n, 3)).astype(np.float32),
            labels=None,
            channel_mean=np.zeros(3),
            channel_std=np.ones(3),
        )
        batches = epoch_batches(ds, batch, epoch, seed=1)
        indices = np.concatenate([b.indices for b in batches])
        assert np.array_equal(np.sort(indices), np.arange(n))

    def test_empty_dataset(self):
        ds = Dataset(
            kind="synthetic",
            inputs=np.empty((0, 3), dtype=np.float32),
            labels=None,
            channel_mean=np.zeros(3),
            channel_std=np.ones(3),
        )
        with pytest.raises(EmptyInputError):
            epoch_batches(ds, 4, 0, 0)


def test_subset_reindexes():
    ds = make_synthetic_blobs(10, 2, 4, 10.0, 0)
    sub = subset(ds, np.array([3, 5, 7]))
    assert len(sub) == 3
    assert np.array_equal(sub.inputs[1], ds.inputs[5])
