import numpy as np
import pytest
from PIL import Image

from stripformer.errors import ConfigurationError, DimensionError
from stripformer.imageio import quantize, read_png, to_uint8, write_png
from stripformer.metrics import gaussian_window, psnr, ssim


def windowed_ssim_reference(a, b, size=11, sigma=1.5):
    """Direct sliding-window SSIM over every full window position, channel by channel."""
    ax = np.arange(size) - size // 2
    g = np.exp(-(ax ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for ca, cb in zip(a, b):
        h, wd = ca.shape
        for i in range(h - size + 1):
            for j in range(wd - size + 1):
                pa, pb = ca[i:i + size, j:j + size], cb[i:i + size, j:j + size]
                ma, mb = (w * pa).sum(), (w * pb).sum()
                va = (w * pa * pa).sum() - ma * ma
                vb = (w * pb * pb).sum() - mb * mb
                cov = (w * pa * pb).sum() - ma * mb
                vals.append(((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_psnr_examples():
    a = np.full((3, 8, 8), 0.3)
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)
    assert psnr(a, a) == float("inf")
    with pytest.raises(DimensionError):
        psnr(a, a[:, :4])


def test_ssim_identity_and_constants(rng):
    img = rng.uniform(0, 1, (3, 20, 20))
    assert ssim(img, img) == 1.0
    a = np.full((3, 16, 16), 0.4)
    b = a + 0.1
    assert ssim(a, b) == pytest.approx(windowed_ssim_reference(a, b), abs=1e-12)


@pytest.mark.parametrize("shape", [(3, 16, 16), (3, 13, 21)])
def test_ssim_matches_sliding_window_reference(rng, shape):
    a = rng.uniform(0, 1, shape)
    b = np.clip(a + rng.normal(0, 0.1, shape), 0, 1)
    assert ssim(a, b) == pytest.approx(windowed_ssim_reference(a, b), abs=1e-10)


def test_ssim_small_image_uses_smaller_window(rng):
    a = rng.uniform(0, 1, (3, 7, 9))
    b = np.clip(a + 0.05, 0, 1)
    assert ssim(a, b) == pytest.approx(windowed_ssim_reference(a, b, size=7), abs=1e-10)


def test_gaussian_window():
    g = gaussian_window()
    assert g.shape == (11,) and abs(g.sum() - 1) < 1e-15
    assert g[5] == g.max()


def test_png_round_trip(tmp_path, rng):
    img = rng.uniform(0, 1, (3, 5, 7))
    write_png(tmp_path / "sub" / "x.png", img)
    back = read_png(tmp_path / "sub" / "x.png")
    assert back.shape == (3, 5, 7)
    np.testing.assert_array_equal(back, quantize(img))
    assert to_uint8(np.array([0.0, 1.0, 0.5])).tolist() == [0, 255, 128]


def test_png_with_alpha_and_bad_files(tmp_path):
    rgba = np.zeros((4, 4, 4), dtype=np.uint8)
    rgba[..., 0] = 200
    rgba[..., 3] = 10
    Image.fromarray(rgba).save(tmp_path / "a.png")
    assert read_png(tmp_path / "a.png")[0, 0, 0] == 200 / 255
    Image.fromarray(rgba[..., :3]).save(tmp_path / "a.jpg")
    with pytest.raises(ConfigurationError):
        read_png(tmp_path / "a.jpg")
    (tmp_path / "junk.png").write_bytes(b"not a png")
    with pytest.raises(ConfigurationError):
        read_png(tmp_path / "junk.png")
