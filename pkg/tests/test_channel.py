import numpy as np
import pytest

from midas.channel import (
    Degradation,
    apply_degradation,
    apply_gaussian,
    apply_jpeg,
    parse_degradation,
)
from midas.codec import ImageBuffer
from midas.corpus import synth_image
from midas.metrics import psnr


class TestGaussian:
    def test_zero_sigma_identity(self):
        img = synth_image(0)
        assert apply_gaussian(img, 0.0, seed=3) is img

    def test_deterministic_per_seed(self):
        img = synth_image(1)
        a = apply_gaussian(img, 5.0, seed=42)
        b = apply_gaussian(img, 5.0, seed=42)
        c = apply_gaussian(img, 5.0, seed=43)
        assert np.array_equal(a.data, b.data)
        assert not np.array_equal(a.data, c.data)

    def test_mid_gray_sigma5_psnr(self):
        img = ImageBuffer(np.full((64, 64, 3), 128, dtype=np.uint8))
        got = psnr(img, apply_gaussian(img, 5.0, seed=0))
        assert abs(got - 34.15) < 0.3  # 20*log10(255/5) = 34.15

    def test_rejects_negative_sigma(self):
        with pytest.raises(ValueError):
            apply_gaussian(synth_image(0), -1.0, seed=0)


class TestJpeg:
    def test_quality70_golden(self, golden):
        img = synth_image(0)
        got = psnr(img, apply_jpeg(img, 70))
        assert abs(got - golden("jpeg")["q70_psnr_image0"]) < 1e-6

    def test_quality100_near_lossless(self, golden):
        for seed, want in enumerate(golden("jpeg")["q100_psnr"]):
            img = synth_image(seed)
            got = psnr(img, apply_jpeg(img, 100))
            assert abs(got - want) < 1e-6
            assert got >= 40.0

    def test_constant_image_dc_only(self):
        img = ImageBuffer(np.full((16, 16, 3), 77, dtype=np.uint8))
        out = apply_jpeg(img, 70)
        assert np.abs(out.data.astype(int) - 77).max() <= 1

    def test_non_multiple_of_eight(self):
        img = synth_image(2, size=64)
        crop = ImageBuffer(img.data[:50, :43])
        out = apply_jpeg(crop, 70)
        assert out.data.shape == (50, 43, 3)

    def test_rejects_bad_quality(self):
        for q in (0, 101):
            with pytest.raises(ValueError):
                apply_jpeg(synth_image(0), q)


def test_monotone_under_degradation_strength(corpus8):
    sig_means = []
    for sigma in (1.0, 2.0, 5.0, 10.0):
        sig_means.append(
            np.mean([psnr(img, apply_gaussian(img, sigma, seed=9)) for img in corpus8])
        )
    assert all(a >= b for a, b in zip(sig_means, sig_means[1:]))
    q_means = []
    for quality in (30, 50, 70, 90, 100):
        q_means.append(np.mean([psnr(img, apply_jpeg(img, quality)) for img in corpus8]))
    assert all(a <= b for a, b in zip(q_means, q_means[1:]))


class TestDegradationSpec:
    def test_validation(self):
        with pytest.raises(ValueError):
            Degradation(kind="blur")
        with pytest.raises(ValueError):
            Degradation(kind="gaussian", sigma=-2.0)
        with pytest.raises(ValueError):
            Degradation(kind="jpeg", quality=0)

    def test_parse_and_apply(self):
        img = synth_image(4)
        d = parse_degradation("gaussian:5", seed=11)
        assert (d.kind, d.sigma, d.seed) == ("gaussian", 5.0, 11)
        assert np.array_equal(
            apply_degradation(img, d).data, apply_gaussian(img, 5.0, seed=11).data
        )
        j = parse_degradation("jpeg:70")
        assert (j.kind, j.quality) == ("jpeg", 70)
        assert np.array_equal(apply_degradation(img, j).data, apply_jpeg(img, 70).data)
        assert apply_degradation(img, parse_degradation("none")) is img
        with pytest.raises(ValueError):
            parse_degradation("fog:3")
