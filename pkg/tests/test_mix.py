import numpy as np
import pytest

from recmix.losses import one_hot
from recmix.mix import (Box, MixConfig, MixState, cutmix_step, effective_class_count,
                        mixup_step, recursive_mix_step, resize_fill, sample_box, sample_lambda)
from recmix.tensor import ShapeError

from oracles import symbolic_label_chain


def _batch(rng, n=4, c=3, size=16, classes=6):
    images = rng.standard_normal((n, c, size, size)).astype(np.float32)
    labels = one_hot(rng.integers(0, classes, size=n), classes)
    return images, labels


# -- lambda sampling ----------------------------------------------------------

def test_lambda_alpha_zero_is_zero():
    rng = np.random.default_rng(0)
    assert all(sample_lambda(rng, 0.0) == 0.0 for _ in range(100))


def test_lambda_uniform_statistics():
    rng = np.random.default_rng(1)
    draws = np.array([sample_lambda(rng, 0.5) for _ in range(100_000)])
    assert abs(draws.mean() - 0.25) < 0.005
    assert draws.max() <= 0.5
    assert draws.min() >= 0.0


def test_lambda_golden_seed_42():
    lam = sample_lambda(np.random.default_rng(42), 0.5)
    assert lam == pytest.approx(0.38697802427798167, abs=1e-15)


def test_lambda_alpha_out_of_range():
    with pytest.raises(ValueError):
        sample_lambda(np.random.default_rng(0), 1.5)


# -- box sampling -------------------------------------------------------------

def test_box_nominal_size_quarter_area():
    box = sample_box(np.random.default_rng(0), 0.25, 32, 32)
    assert box.nominal_w == pytest.approx(16.0)
    assert box.nominal_h == pytest.approx(16.0)


def test_box_lambda_zero_empty():
    box = sample_box(np.random.default_rng(0), 0.0, 32, 32)
    assert box.area == 0
    assert box.effective_lambda == 0.0


def test_box_corner_center_clipping():
    box = sample_box(np.random.default_rng(0), 0.25, 32, 32, force_center=(0.0, 0.0))
    assert (box.x1, box.y1, box.x2, box.y2) == (0, 0, 8, 8)
    assert box.effective_lambda == pytest.approx(64 / 1024)


def test_box_invariants_sweep():
    rng = np.random.default_rng(2)
    for _ in range(2000):
        lam = float(rng.uniform(0, 1))
        w = int(rng.integers(4, 64))
        h = int(rng.integers(4, 64))
        box = sample_box(rng, lam, w, h)
        assert 0 <= box.x1 <= box.x2 <= w
        assert 0 <= box.y1 <= box.y2 <= h
        assert box.nominal_w == pytest.approx(w * np.sqrt(lam))
        assert box.effective_lambda == box.area / (w * h)
        # clipping plus rounding can only grow the nominal edge by < 1 pixel each
        assert box.width <= box.nominal_w + 1
        assert box.height <= box.nominal_h + 1


# -- resize fill --------------------------------------------------------------

def test_resize_full_box_is_identity_nearest():
    rng = np.random.default_rng(3)
    img = rng.standard_normal((3, 16, 16)).astype(np.float32)
    box = sample_box(rng, 1.0, 16, 16, force_center=(8, 8))
    assert box.area == 16 * 16
    assert np.array_equal(resize_fill(img, box, "nearest"), img)


def test_resize_constant_image_stays_constant():
    img = np.full((3, 8, 8), 2.5, dtype=np.float32)
    box = Box(0, 0, 3, 5, 0, 0, 3, 5, (3 * 5) / 64)
    for mode in ("nearest", "bilinear"):
        assert np.allclose(resize_fill(img, box, mode), 2.5)


def test_resize_2x2_to_1x1_half_pixel_rule():
    # source index floor((0 + 0.5) * 2 / 1) = 1 on both axes -> value 4
    img = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    box = Box(0, 0, 1, 1, 0, 0, 1, 1, 1 / 4)
    assert resize_fill(img, box, "nearest")[0, 0, 0] == 4.0


def test_resize_zero_area_rejected():
    img = np.zeros((3, 8, 8))
    box = Box(0, 0, 0, 0, 0, 0, 0, 0, 0.0)
    with pytest.raises(ValueError, match="positive clipped area"):
        resize_fill(img, box)


def test_resize_bilinear_full_size_identity():
    rng = np.random.default_rng(4)
    img = rng.standard_normal((2, 8, 8)).astype(np.float32)
    box = Box(4, 4, 8, 8, 0, 0, 8, 8, 1.0)
    assert np.allclose(resize_fill(img, box, "bilinear"), img, atol=1e-6)


# -- recursive mixing ---------------------------------------------------------

def test_first_step_is_identity_and_populates():
    rng = np.random.default_rng(5)
    images, labels = _batch(rng)
    state = MixState()
    res = recursive_mix_step(state, images, labels, rng, MixConfig())
    assert res.lambda_eff == 0.0
    assert np.array_equal(res.images, images)
    assert np.array_equal(res.labels, labels)
    assert state.populated
    assert np.array_equal(state.hist_images, images)


def test_lambda_zero_step_is_identity():
    rng = np.random.default_rng(6)
    images, labels = _batch(rng)
    state = MixState()
    recursive_mix_step(state, images, labels, rng, MixConfig())
    nxt_images, nxt_labels = _batch(rng)
    res = recursive_mix_step(state, nxt_images, nxt_labels, rng, MixConfig(), force_lambda=0.0)
    assert res.lambda_eff == 0.0
    assert np.array_equal(res.images, nxt_images)
    assert np.array_equal(res.labels, nxt_labels)


def test_two_chained_steps_hand_formula():
    rng = np.random.default_rng(7)
    cfg = MixConfig(alpha=0.5)
    state = MixState()
    n, classes = 3, 5
    img_a, lab_a = _batch(rng, n=n, classes=classes)
    img_b, lab_b = _batch(rng, n=n, classes=classes)
    img_c, lab_c = _batch(rng, n=n, classes=classes)
    recursive_mix_step(state, img_a, lab_a, rng, cfg)
    r1 = recursive_mix_step(state, img_b, lab_b, rng, cfg, force_center=(8, 8), force_lambda=0.2)
    r2 = recursive_mix_step(state, img_c, lab_c, rng, cfg, force_center=(8, 8), force_lambda=0.3)
    l1, l2 = r1.lambda_eff, r2.lambda_eff
    expected = l2 * (l1 * lab_a + (1 - l1) * lab_b) + (1 - l2) * lab_c
    assert np.allclose(r2.labels, expected, atol=1e-7)


def test_label_chains_match_symbolic_oracle():
    rng = np.random.default_rng(8)
    cfg = MixConfig(alpha=0.7)
    classes, size = 8, 16
    for _ in range(200):
        state = MixState()
        images, labels = _batch(rng, n=2, size=size, classes=classes)
        recursive_mix_step(state, images, labels, rng, cfg)
        steps = []
        final = labels
        for _ in range(int(rng.integers(2, 7))):
            nxt_images, nxt_labels = _batch(rng, n=2, size=size, classes=classes)
            res = recursive_mix_step(state, nxt_images, nxt_labels, rng, cfg)
            # recompute lambda from the clipped integer corners, not from the engine
            lam = 0.0 if res.box is None else res.box.area / (size * size)
            steps.append((lam, nxt_labels))
            final = res.labels
        oracle = symbolic_label_chain(labels, steps)
        assert np.allclose(final, oracle, atol=1e-6)


def test_history_fidelity_bit_exact():
    rng = np.random.default_rng(9)
    cfg = MixConfig()
    state = MixState()
    images, labels = _batch(rng)
    recursive_mix_step(state, images, labels, rng, cfg)
    for _ in range(5):
        nxt = _batch(rng)
        res = recursive_mix_step(state, nxt[0], nxt[1], rng, cfg)
        assert np.array_equal(state.hist_images, res.images)
        assert np.array_equal(state.hist_labels, res.labels)


def test_pixel_provenance_nearest():
    rng = np.random.default_rng(10)
    cfg = MixConfig(interpolation="nearest")
    state = MixState()
    images, labels = _batch(rng)
    recursive_mix_step(state, images, labels, rng, cfg)
    prev = state.hist_images
    nxt_images, nxt_labels = _batch(rng)
    res = recursive_mix_step(state, nxt_images, nxt_labels, rng, cfg, force_lambda=0.4)
    sources = np.concatenate([prev.reshape(-1), nxt_images.reshape(-1)])
    assert np.isin(res.images.reshape(-1), sources).all()


def test_simplex_closure_many_steps():
    rng = np.random.default_rng(11)
    cfg = MixConfig(alpha=0.9)
    state = MixState()
    images, labels = _batch(rng, classes=6)
    recursive_mix_step(state, images, labels, rng, cfg)
    for _ in range(50):
        nxt_images, nxt_labels = _batch(rng, classes=6)
        res = recursive_mix_step(state, nxt_images, nxt_labels, rng, cfg)
        sums = res.labels.sum(axis=1)
        assert np.all(np.abs(sums - 1.0) < 1e-6)
        assert np.all(res.labels >= 0.0)


def test_support_bound():
    rng = np.random.default_rng(12)
    cfg = MixConfig(alpha=0.5)
    state = MixState()
    classes = 20
    images, labels = _batch(rng, n=2, classes=classes)
    recursive_mix_step(state, images, labels, rng, cfg)
    for t in range(1, 12):
        nxt_images, nxt_labels = _batch(rng, n=2, classes=classes)
        before = state.hist_labels.copy()
        res = recursive_mix_step(state, nxt_images, nxt_labels, rng, cfg)
        support = res.labels > 0
        union = (before > 0) | (nxt_labels > 0)
        assert np.all(support <= union)
        assert support.sum(axis=1).max() <= t + 1


def test_batch_size_mismatch_skips_and_refreshes():
    rng = np.random.default_rng(13)
    cfg = MixConfig()
    state = MixState()
    images, labels = _batch(rng, n=4)
    recursive_mix_step(state, images, labels, rng, cfg)
    short_images, short_labels = _batch(rng, n=2)
    res = recursive_mix_step(state, short_images, short_labels, rng, cfg)
    assert res.lambda_eff == 0.0
    assert np.array_equal(res.images, short_images)
    assert state.hist_images.shape[0] == 2


def test_label_dim_mismatch_rejected():
    rng = np.random.default_rng(14)
    cfg = MixConfig()
    state = MixState()
    images, labels = _batch(rng, classes=6)
    recursive_mix_step(state, images, labels, rng, cfg)
    other = one_hot(np.zeros(4, dtype=int), 9)
    with pytest.raises(ShapeError, match="dimension"):
        recursive_mix_step(state, images, other, rng, cfg)


# -- cutmix -------------------------------------------------------------------

def test_cutmix_lambda_zero_identity():
    rng = np.random.default_rng(15)
    images, labels = _batch(rng)
    res = cutmix_step(images, labels, rng, MixConfig(mode="cutmix"), force_lambda=0.0)
    assert np.array_equal(res.images, images)
    assert np.array_equal(res.labels, labels)


def test_cutmix_identity_permutation_self_mix():
    rng = np.random.default_rng(16)
    images, labels = _batch(rng)
    res = cutmix_step(images, labels, rng, MixConfig(mode="cutmix", resize_strategy="cut"),
                      force_permutation=np.arange(len(images)), force_lambda=0.3)
    assert np.array_equal(res.images, images)
    assert np.allclose(res.labels, labels)


def test_cutmix_full_box_gives_partner():
    rng = np.random.default_rng(17)
    images, labels = _batch(rng, size=16)
    perm = np.roll(np.arange(len(images)), 1)
    res = cutmix_step(images, labels, rng, MixConfig(mode="cutmix", resize_strategy="cut"),
                      force_permutation=perm, force_lambda=1.0, force_center=(8, 8))
    assert res.lambda_eff == 1.0
    assert np.array_equal(res.images, images[perm])
    assert np.allclose(res.labels, labels[perm])


def test_cutmix_batch_of_one_identity():
    rng = np.random.default_rng(18)
    images, labels = _batch(rng, n=1)
    res = cutmix_step(images, labels, rng, MixConfig(mode="cutmix"))
    assert res.lambda_eff == 0.0
    assert np.array_equal(res.images, images)


def test_recursive_cut_reduces_to_cutmix_pasting():
    # same box, history buffer holding the permuted batch: identical arithmetic
    rng = np.random.default_rng(19)
    images, labels = _batch(rng, n=5, size=16)
    perm = np.random.default_rng(20).permutation(5)
    cfg = MixConfig(resize_strategy="cut")
    state = MixState()
    state.refresh(images[perm], labels[perm])
    rm = recursive_mix_step(state, images, labels, np.random.default_rng(21), cfg,
                            force_lambda=0.35, force_center=(6.0, 9.0))
    cm = cutmix_step(images, labels, np.random.default_rng(22),
                     MixConfig(mode="cutmix", resize_strategy="cut"),
                     force_lambda=0.35, force_center=(6.0, 9.0), force_permutation=perm)
    assert np.array_equal(rm.images, cm.images)
    assert np.allclose(rm.labels, cm.labels)


# -- mixup --------------------------------------------------------------------

def test_mixup_lambda_one_identity():
    rng = np.random.default_rng(23)
    images, labels = _batch(rng)
    res = mixup_step(images, labels, rng, 0.5, force_lambda=1.0)
    assert np.allclose(res.images, images)
    assert np.allclose(res.labels, labels)


def test_mixup_constant_blend():
    labels = one_hot(np.array([0, 1]), 2)
    images = np.stack([np.zeros((3, 4, 4)), np.ones((3, 4, 4))]).astype(np.float32)
    res = mixup_step(images, labels, np.random.default_rng(24), 0.5, force_lambda=0.5)
    assert np.allclose(res.images, 0.5)


def test_mixup_golden_seed():
    rng = np.random.default_rng(25)
    images, labels = _batch(rng, n=2, size=4, classes=3)
    res = mixup_step(images, labels, rng, 0.5)
    assert res.lambda_eff == pytest.approx(0.2856385570279281, abs=1e-15)
    assert res.images[0, 0, 0, 0] == pytest.approx(0.3540396988391876, abs=1e-7)


def test_mixup_bad_beta_rejected():
    rng = np.random.default_rng(26)
    images, labels = _batch(rng)
    with pytest.raises(ValueError):
        mixup_step(images, labels, rng, 0.0)


# -- effective classes --------------------------------------------------------

def test_effective_count_one_hot():
    assert effective_class_count(one_hot(np.array([1, 2, 3]), 5)) == 1.0


def test_effective_count_half_half():
    labels = np.array([[0.5, 0.5, 0.0, 0.0]])
    assert effective_class_count(labels) == 2.0


def test_effective_count_trajectory_matches_oracle():
    rng = np.random.default_rng(27)
    cfg = MixConfig(alpha=0.5)
    classes, size = 12, 32
    state = MixState()
    labels = one_hot(np.array([0]), classes)
    images = rng.standard_normal((1, 3, size, size)).astype(np.float32)
    recursive_mix_step(state, images, labels, rng, cfg)
    oracle = labels.astype(np.float64)
    counts = []
    oracle_counts = []
    for t in range(1, 11):
        nxt_labels = one_hot(np.array([t]), classes)
        nxt_images = rng.standard_normal((1, 3, size, size)).astype(np.float32)
        res = recursive_mix_step(state, nxt_images, nxt_labels, rng, cfg,
                                 force_lambda=0.3, force_center=(16, 16))
        lam = res.box.area / (size * size)
        oracle = lam * oracle + (1 - lam) * nxt_labels
        counts.append(effective_class_count(res.labels, 1e-4))
        oracle_counts.append(float((oracle > 1e-4).sum()))
    assert counts == pytest.approx(oracle_counts, abs=0)
    grown = [b - a for a, b in zip(counts, counts[1:])]
    assert all(g >= 0 for g in grown[:4])      # monotone while coefficients stay above threshold
    assert counts[-1] > 2.0
