import numpy as np
import pytest
import torch

from conftest import psnr, make_test_photo
from midas_sd_server.model import (
    alpha_bar_base,
    build_reference_model,
    load_model,
    save_checkpoint,
)


class TestVae:
    def test_round_trip_psnr_on_test_photo(self):
        model = build_reference_model()
        img = make_test_photo()
        pixels = np.moveaxis(img.astype(float), -1, 0)
        z = model.encode(pixels)
        assert z.shape == (4, 64, 64)
        back = np.rint(np.clip(np.moveaxis(model.decode(z), 0, -1), 0, 255))
        assert psnr(back, img) >= 25.0

    def test_luma_channel(self):
        model = build_reference_model()
        img = make_test_photo(seed=1, size=64)
        z = model.encode(np.moveaxis(img.astype(float), -1, 0))
        luma = 0.299 * z[0] + 0.587 * z[1] + 0.114 * z[2]
        assert np.abs(z[3] - luma).max() < 1e-4

    def test_constant_image_near_exact(self):
        model = build_reference_model()
        pixels = np.full((3, 64, 64), 128.0)
        back = model.decode(model.encode(pixels))
        assert np.abs(back - 128.0).max() < 0.5


class TestPredictor:
    def test_reference_is_linear_in_latent(self):
        model = build_reference_model()
        ab = alpha_bar_base()
        z = np.random.default_rng(0).standard_normal((4, 16, 16))
        for t in (1, 400, 1000):
            eps = model.predict_noise(z, t, "", None, 0.0, 1.0)
            want = float(torch.sqrt(1.0 - ab[t])) * z
            assert np.abs(eps - want).max() < 1e-5

    def test_deterministic(self):
        model = build_reference_model()
        z = np.random.default_rng(1).standard_normal((4, 8, 8))
        a = model.predict_noise(z, 500, "a cat", None, 0.0, 3.0)
        b = model.predict_noise(z, 500, "a cat", None, 0.0, 3.0)
        assert np.array_equal(a, b)

    def test_shape_preserved_with_conditioning(self):
        model = build_reference_model()
        z = np.random.default_rng(2).standard_normal((4, 10, 6))
        ref = np.random.default_rng(3).standard_normal((4, 10, 6))
        eps = model.predict_noise(z, 250, "prompt", ref, 0.4, 2.0)
        assert eps.shape == z.shape
        assert np.all(np.isfinite(eps))


class TestCheckpoint:
    def test_save_load_round_trip(self, tmp_path):
        model = build_reference_model()
        path = tmp_path / "ref.pt"
        save_checkpoint(model, path)
        loaded = load_model(path)
        z = np.random.default_rng(4).standard_normal((4, 8, 8))
        assert np.array_equal(
            loaded.predict_noise(z, 300, "x", None, 0.0, 1.0),
            model.predict_noise(z, 300, "x", None, 0.0, 1.0),
        )
        img = np.moveaxis(make_test_photo(seed=9, size=64).astype(float), -1, 0)
        assert np.array_equal(loaded.encode(img), model.encode(img))

    def test_rejects_mismatched_geometry(self, tmp_path):
        model = build_reference_model()
        path = tmp_path / "bad.pt"
        save_checkpoint(model, path)
        blob = torch.load(path, weights_only=True)
        blob["meta"]["spatial_factor"] = 4
        torch.save(blob, path)
        with pytest.raises(ValueError):
            load_model(path)
