import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stripformer.data import (
    Augmentation,
    ImagePair,
    augment,
    blur_image,
    center_crop,
    draw_augmentation,
    load_paired_folder,
    motion_kernel,
    procedural_image,
    synth_blur,
    synthetic_pairs,
)
from stripformer.errors import ConfigurationError, DimensionError
from stripformer.imageio import write_png


def test_image_pair_validation():
    a = np.zeros((3, 4, 4))
    with pytest.raises(DimensionError):
        ImagePair(a, np.zeros((3, 4, 5)))
    with pytest.raises(DimensionError):
        ImagePair(np.zeros((1, 4, 4)), np.zeros((1, 4, 4)))
    with pytest.raises(ConfigurationError):
        ImagePair(a + 1.5, a)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 15), st.floats(0, 2 * math.pi))
def test_kernel_normalized_and_point_symmetric(length, angle):
    k = motion_kernel(length, angle)
    assert abs(k.sum() - 1.0) < 1e-6
    assert k.shape[0] % 2 == 1 and k.shape[0] == k.shape[1]
    np.testing.assert_allclose(k, k[::-1, ::-1], atol=1e-12)
    assert k.min() >= 0


def test_kernel_examples():
    np.testing.assert_array_equal(motion_kernel(1, 0.7), [[1.0]])
    box = motion_kernel(5, 0.0)
    assert box.shape == (5, 5)
    np.testing.assert_allclose(box[2], np.full(5, 0.2), atol=1e-12)
    assert box.sum() - box[2].sum() < 1e-12
    vert = motion_kernel(3, math.pi / 2)
    np.testing.assert_allclose(vert[:, 1], np.full(3, 1 / 3), atol=1e-12)


def test_identity_blur(rng):
    sharp = rng.uniform(0, 1, (3, 8, 8))
    pair = synth_blur(sharp, 1, 0.3)
    np.testing.assert_array_equal(pair.blurred, sharp)


def test_horizontal_kernel_on_vertical_edge_gives_ramp():
    sharp = np.zeros((3, 12, 20))
    sharp[..., 10:] = 1.0
    blurred = synth_blur(sharp, 5, 0.0).blurred
    ref = np.convolve(np.r_[np.zeros(10), np.ones(10)], np.full(5, 0.2), mode="same")
    np.testing.assert_allclose(blurred[0, 6, 3:17], ref[3:17], atol=1e-12)
    ramp = blurred[0, 6]
    assert np.all(np.diff(ramp) >= -1e-12)
    assert np.count_nonzero((ramp > 1e-9) & (ramp < 1 - 1e-9)) == 4


def test_blur_preserves_mean_with_reflect_borders(rng):
    sharp = rng.uniform(0, 1, (3, 16, 16))
    for length, angle in [(3, 0.0), (5, 1.0), (7, 2.2)]:
        pair = synth_blur(sharp, length, angle)
        assert abs(pair.blurred.mean() - sharp.mean()) < 0.02


def test_synth_blur_errors(rng):
    sharp = rng.uniform(0, 1, (3, 8, 8))
    with pytest.raises(ConfigurationError):
        synth_blur(sharp, 5, 0.0)
    with pytest.raises(ConfigurationError):
        synth_blur(sharp, 0, 0.0)
    with pytest.raises(ConfigurationError):
        synth_blur(sharp, 3, 0.0, noise_sigma=0.02)


def test_noise_stays_in_range(rng):
    pair = synth_blur(rng.uniform(0, 1, (3, 16, 16)), 3, 0.4, rng, noise_sigma=0.01)
    assert 0 <= pair.blurred.min() and pair.blurred.max() <= 1
    assert pair.provenance["noise_sigma"] == 0.01


def test_procedural_images_are_deterministic():
    a = procedural_image(32, np.random.default_rng(5))
    b = procedural_image(32, np.random.default_rng(5))
    assert a.shape == (3, 32, 32) and np.array_equal(a, b)
    assert 0 <= a.min() and a.max() <= 1 and a.std() > 0.05
    pairs = synthetic_pairs(3, 32, np.random.default_rng(0))
    assert len(pairs) == 3 and all(3 <= p.provenance["length"] <= 9 for p in pairs)


def test_identity_augmentation_and_flip_involution(rng):
    pair = synthetic_pairs(1, 16, rng)[0]
    ident = Augmentation(0, 0, 16, False, 0)
    assert np.array_equal(ident.apply(pair.sharp), pair.sharp)
    flip = Augmentation(0, 0, 16, True, 0)
    assert np.array_equal(flip.apply(flip.apply(pair.sharp)), pair.sharp)
    rot = Augmentation(0, 0, 16, False, 1)
    four = pair.sharp
    for _ in range(4):
        four = rot.apply(four)
    assert np.array_equal(four, pair.sharp)


def test_augment_errors(rng):
    pair = synthetic_pairs(1, 16, rng)[0]
    with pytest.raises(ConfigurationError):
        augment(pair, rng, crop=20)
    with pytest.raises(ConfigurationError):
        augment(pair, rng, crop=10)


def test_augment_keeps_pair_aligned(rng):
    sharp = procedural_image(48, rng)
    length = 5
    pair = synth_blur(sharp, length, 0.8)
    k = motion_kernel(length, 0.8)
    for _ in range(8):
        out = augment(pair, rng, crop=32)
        assert out.shape == (3, 32, 32) and "augmentation" in out.provenance
        a = out.provenance["augmentation"]
        m = k.shape[0] // 2
        # flips and quarter turns carry the kernel along with the image
        k_aug = Augmentation(0, 0, k.shape[0], a["flip"], a["rot90"]).apply(k[None])[0]
        reblurred = blur_image(out.sharp, k_aug)
        # away from the kernel-radius border the blur of the crop is the crop of the blur
        np.testing.assert_allclose(reblurred[:, m:-m, m:-m], out.blurred[:, m:-m, m:-m], atol=1e-12)


def test_draw_is_seeded():
    a = draw_augmentation((3, 40, 40), np.random.default_rng(3), crop=16)
    b = draw_augmentation((3, 40, 40), np.random.default_rng(3), crop=16)
    assert a == b


def test_center_crop():
    img = np.arange(3 * 6 * 6, dtype=float).reshape(3, 6, 6)
    np.testing.assert_array_equal(center_crop(img, 2), img[:, 2:4, 2:4])


def test_paired_folder(tmp_path, rng):
    pairs = synthetic_pairs(2, 8, rng, length_range=(3, 3))
    for i, p in enumerate(pairs):
        write_png(tmp_path / "blur" / f"{i}.png", p.blurred)
        write_png(tmp_path / "sharp" / f"{i}.png", p.sharp)
    loaded = load_paired_folder(tmp_path)
    assert len(loaded) == 2 and loaded[0].shape == (3, 8, 8)
    assert np.abs(loaded[0].sharp - pairs[0].sharp).max() <= 0.5 / 255 + 1e-12
    (tmp_path / "sharp" / "1.png").unlink()
    with pytest.raises(ConfigurationError):
        load_paired_folder(tmp_path)
    with pytest.raises(ConfigurationError):
        load_paired_folder(tmp_path / "nothing")
