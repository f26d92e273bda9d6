import numpy as np
import pytest

from recmix.data import (CIFAR10_MEAN, CIFAR10_STD, AugPolicy, DataError, augment, augment_batch,
                         denormalize, load_cifar10_bin, make_synthetic, normalize, read_ppm,
                         write_ppm)
from recmix.layers import ClassifierNet, GlobalAvgPool, Identity, Linear, Sequential
from recmix.losses import one_hot, softmax_cross_entropy
from recmix.optim import SGD
from recmix.tensor import Tensor


# -- cifar-10 binary layout ----------------------------------------------------

@pytest.fixture(scope="module")
def cifar_dir(tmp_path_factory):
    """Handcrafted files in the published layout: 10000 records of 3073 bytes."""
    root = tmp_path_factory.mktemp("cifar")
    rng = np.random.default_rng(0)
    for name in [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin"]:
        records = np.zeros((10000, 3073), dtype=np.uint8)
        records[:, 0] = rng.integers(0, 10, size=10000)
        records[:, 1:] = rng.integers(0, 256, size=(10000, 3072))
        (root / name).write_bytes(records.tobytes())
    # pin specific values in record 0 of the first file
    first = np.frombuffer((root / "data_batch_1.bin").read_bytes(), dtype=np.uint8).copy()
    first[0] = 7                 # label byte
    first[1:3074] = 0            # an all-zero image
    (root / "data_batch_1.bin").write_bytes(first.tobytes())
    return root


def test_loader_counts(cifar_dir):
    train, test = load_cifar10_bin(cifar_dir)
    assert len(train) == 50000
    assert len(test) == 10000
    assert train.class_count == 10
    assert train.images.shape == (50000, 3, 32, 32)
    assert set(np.unique(train.labels)) <= set(range(10))


def test_loader_label_byte_and_zero_record_normalization(cifar_dir):
    train, _ = load_cifar10_bin(cifar_dir)
    assert train.labels[0] == 7
    expected = (0.0 - np.array(CIFAR10_MEAN)) / np.array(CIFAR10_STD)
    assert np.allclose(train.images[0, :, 0, 0], expected, atol=1e-6)
    assert np.allclose(train.images[0], expected[:, None, None], atol=1e-6)


def test_loader_channel_order(cifar_dir):
    # bytes 1..1024 are the red plane, row-major
    raw = np.frombuffer((cifar_dir / "data_batch_2.bin").read_bytes(), dtype=np.uint8)
    record = raw[:3073]
    train, _ = load_cifar10_bin(cifar_dir)
    red_plane = record[1:1025].reshape(32, 32).astype(np.float32) / 255.0
    recovered = denormalize(train.images[10000], train.mean, train.std)[0]
    assert np.allclose(recovered, red_plane, atol=1e-6)


def test_loader_missing_file_names_it(tmp_path):
    with pytest.raises(DataError, match="data_batch_1.bin"):
        load_cifar10_bin(tmp_path)


def test_loader_wrong_length_rejected(tmp_path):
    for name in [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin"]:
        (tmp_path / name).write_bytes(b"\x00" * 100)
    with pytest.raises(DataError, match="expected 30730000 bytes"):
        load_cifar10_bin(tmp_path)


# -- synthetic dataset -----------------------------------------------------------

def test_synthetic_deterministic():
    a = make_synthetic(3, 4, 25)
    b = make_synthetic(3, 4, 25)
    assert np.array_equal(a.images, b.images)
    assert np.array_equal(a.labels, b.labels)
    assert not np.array_equal(a.images, make_synthetic(4, 4, 25).images)


def test_synthetic_counts_uniform():
    ds = make_synthetic(0, 4, 100)
    assert len(ds) == 400
    assert np.array_equal(np.bincount(ds.labels), [100, 100, 100, 100])


def test_synthetic_linear_separability():
    # a linear probe on raw pixels clears 60% train accuracy within 5 epochs
    ds = make_synthetic(1, 4, 100)
    flat = ds.images.reshape(len(ds), -1)
    head = Linear(flat.shape[1], 4, rng=np.random.default_rng(0))
    head.weight.data *= 0.01
    opt = SGD(head.parameters(), momentum=0.9, weight_decay=0.0)
    labels = one_hot(ds.labels, 4)
    order = np.random.default_rng(1).permutation(len(ds))
    for _ in range(5):
        for start in range(0, len(ds), 64):
            idx = order[start:start + 64]
            logits = head(Tensor(flat[idx]))
            loss = softmax_cross_entropy(logits, labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step(0.01)
    preds = head(Tensor(flat)).data.argmax(axis=1)
    assert (preds == ds.labels).mean() > 0.60


def test_round_trip_normalization():
    rng = np.random.default_rng(2)
    raw = rng.uniform(0, 1, size=(5, 3, 8, 8)).astype(np.float32)
    back = denormalize(normalize(raw, CIFAR10_MEAN, CIFAR10_STD), CIFAR10_MEAN, CIFAR10_STD)
    assert np.allclose(back, raw, atol=1e-6)


# -- augmentation -----------------------------------------------------------------

def test_augment_disabled_identity():
    rng = np.random.default_rng(3)
    img = rng.standard_normal((3, 32, 32)).astype(np.float32)
    out = augment(img, AugPolicy(enabled=False), rng)
    assert out is img


def test_hflip_twice_identity():
    rng = np.random.default_rng(4)
    img = rng.standard_normal((3, 32, 32)).astype(np.float32)
    policy = AugPolicy(pad=0, crop=32, hflip_prob=1.0)
    once = augment(img, policy, np.random.default_rng(0))
    twice = augment(once, policy, np.random.default_rng(0))
    assert np.array_equal(twice, img)


def test_augment_golden_offsets():
    # first draws of generator 7: offsets (8, 5), no flip
    rng = np.random.default_rng(7)
    img = np.arange(3 * 32 * 32, dtype=np.float32).reshape(3, 32, 32)
    out = augment(img, AugPolicy(), rng)
    padded = np.pad(img, ((0, 0), (4, 4), (4, 4)), mode="reflect")
    assert np.array_equal(out, padded[:, 8:40, 5:37])


def test_augment_preserves_shape_and_finiteness():
    rng = np.random.default_rng(5)
    images = rng.standard_normal((10, 3, 32, 32)).astype(np.float32)
    out = augment_batch(images, AugPolicy(), rng)
    assert out.shape == images.shape
    assert np.isfinite(out).all()


def test_augment_crop_too_large_rejected():
    rng = np.random.default_rng(6)
    img = np.zeros((3, 8, 8), dtype=np.float32)
    with pytest.raises(ValueError, match="crop"):
        augment(img, AugPolicy(pad=1, crop=32), rng)


# -- ppm ---------------------------------------------------------------------------

def test_ppm_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    img = rng.uniform(0, 1, size=(3, 5, 9)).astype(np.float32)
    path = tmp_path / "img.ppm"
    write_ppm(path, img)
    back = read_ppm(path)
    assert back.shape == (3, 5, 9)
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-6


def test_ppm_header(tmp_path):
    path = tmp_path / "img.ppm"
    write_ppm(path, np.zeros((3, 2, 4)))
    raw = path.read_bytes()
    assert raw.startswith(b"P6\n4 2\n255\n")
    assert len(raw) == len(b"P6\n4 2\n255\n") + 2 * 4 * 3
