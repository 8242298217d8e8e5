import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from midas.diffusion import (
    Condition,
    ToyPredictor,
    ddim_denoise,
    ddim_invert,
    ddim_invert_step,
    ddim_step,
    edict_denoise,
    edict_invert,
    make_schedule,
)

NULL = Condition("")


class ZeroPredictor:
    concurrency_safe = True

    def predict(self, latent, t, cond):
        return np.zeros_like(latent)


class TestSchedule:
    def test_single_step(self):
        sched = make_schedule(1, 1.0)
        assert sched.alpha_bar[0] == 1.0
        assert 0.0 < sched.alpha_bar[1] < 1.0

    def test_active_window(self):
        assert make_schedule(50, 0.4).active_steps == 20
        assert make_schedule(50, 0.7).active_steps == 35

    def test_golden_alpha_bar(self, golden):
        expected = np.array(golden("alpha_bar_t50")["alpha_bar"])
        got = make_schedule(50).alpha_bar
        assert np.abs(got - expected).max() < 1e-12

    def test_rejects_bad_arguments(self):
        for steps, xi in ((0, 1.0), (1001, 1.0), (50, 0.0), (50, 1.5)):
            with pytest.raises(ValueError):
                make_schedule(steps, xi)

    @settings(max_examples=30, deadline=None)
    @given(steps=st.integers(min_value=1, max_value=400), xi=st.floats(min_value=0.01, max_value=1.0))
    def test_monotone_and_bounded(self, steps, xi):
        sched = make_schedule(steps, xi)
        ab = sched.alpha_bar
        assert ab[0] == 1.0
        assert np.all(np.diff(ab) < 0)
        assert np.all(ab > 0) and np.all(ab <= 1)
        assert 0 <= sched.active_steps <= steps


class TestDdim:
    def test_zero_noise_step_is_pure_scaling(self):
        sched = make_schedule(50)
        z = np.random.default_rng(0).standard_normal((4, 8, 8))
        for t in (1, 20, 50):
            out = ddim_step(z, t, ZeroPredictor(), NULL, sched)
            scale = math.sqrt(sched.alpha_bar[t - 1] / sched.alpha_bar[t])
            assert np.allclose(out, scale * z, atol=1e-12)

    def test_zero_noise_invert_is_inverse_scaling(self):
        sched = make_schedule(50)
        z = np.random.default_rng(0).standard_normal((4, 8, 8))
        out = ddim_invert_step(z, 20, ZeroPredictor(), NULL, sched)
        scale = math.sqrt(sched.alpha_bar[20] / sched.alpha_bar[19])
        assert np.allclose(out, scale * z, atol=1e-12)

    def test_full_denoise_deterministic(self):
        sched = make_schedule(50)
        pred = ToyPredictor(sched)
        cond = Condition("some prompt")
        z = np.random.default_rng(3).standard_normal((4, 16, 16))
        a = ddim_denoise(z, 50, 0, pred, cond, sched)
        b = ddim_denoise(z, 50, 0, ToyPredictor(sched), cond, sched)
        assert np.array_equal(a, b)

    def test_round_trip_matches_oracle_and_shrinks_with_steps(self, golden):
        g = golden("ddim_roundtrip")
        z = np.random.default_rng(g["latent_seed"]).standard_normal((4, 16, 16)) * g["scale"]
        rels = {}
        for steps in (10, 20, 50):
            sched = make_schedule(steps, g["xi"])
            pred = ToyPredictor(sched)
            k = sched.active_steps
            zi = ddim_invert(z, 0, k, pred, NULL, sched)
            zr = ddim_denoise(zi, k, 0, pred, NULL, sched)
            rels[steps] = np.linalg.norm(zr - z) / np.linalg.norm(z)
            assert abs(rels[steps] - g["rel_l2"][str(steps)]) < 1e-9
        assert rels[50] < rels[20] < rels[10]

    def test_invert_step_rejects_out_of_range(self):
        sched = make_schedule(10)
        with pytest.raises(ValueError):
            ddim_invert_step(np.zeros((1, 2, 2)), 0, ZeroPredictor(), NULL, sched)
        with pytest.raises(ValueError):
            ddim_step(np.zeros((1, 2, 2)), 11, ZeroPredictor(), NULL, sched)


class TestEdict:
    def test_unit_mix_zero_noise_tracks_independent(self):
        sched = make_schedule(20)
        rng = np.random.default_rng(1)
        x0, y0 = rng.standard_normal((2, 4, 4)), rng.standard_normal((2, 4, 4))
        x, y = edict_denoise((x0, y0), 10, 0, ZeroPredictor(), NULL, sched, mix=1.0)
        scale = math.sqrt(sched.alpha_bar[0] / sched.alpha_bar[10])
        assert np.allclose(x, scale * x0, atol=1e-12)
        assert np.allclose(y, scale * y0, atol=1e-12)

    def test_invert_then_denoise_exact(self):
        sched = make_schedule(50)
        pred = ToyPredictor(sched)
        cond = Condition("prompt", None, 0.0)
        z = np.random.default_rng(2).standard_normal((4, 16, 16)) * 0.5
        pair = edict_invert((z, z), 0, 20, pred, cond, sched, mix=0.93)
        x, y = edict_denoise(pair, 20, 0, pred, cond, sched, mix=0.93)
        assert np.abs(x - z).max() < 1e-4
        assert np.abs(y - z).max() < 1e-4

    def test_denoise_then_invert_exact(self):
        sched = make_schedule(50)
        pred = ToyPredictor(sched)
        rng = np.random.default_rng(5)
        pair0 = (rng.standard_normal((4, 8, 8)), rng.standard_normal((4, 8, 8)))
        pair1 = edict_denoise(pair0, 35, 15, pred, NULL, sched, mix=0.93)
        x, y = edict_invert(pair1, 15, 35, pred, NULL, sched, mix=0.93)
        assert np.abs(x - pair0[0]).max() < 1e-4
        assert np.abs(y - pair0[1]).max() < 1e-4

    def test_equal_pair_divergence_bounded(self):
        # sequential cross-updates are what make every sub-step invertible,
        # so an equal pair does not stay exactly equal; it must stay close
        sched = make_schedule(50)
        pred = ToyPredictor(sched)
        cond = Condition("p")
        z = np.random.default_rng(7).standard_normal((4, 16, 16)) * 0.5
        x, y = edict_denoise((z, z), 35, 0, pred, cond, sched, mix=0.93)
        assert np.linalg.norm(x - y) / np.linalg.norm(x) < 0.05

    def test_rejects_uninvertible_mix(self):
        sched = make_schedule(10)
        z = np.zeros((1, 2, 2))
        with pytest.raises(ValueError):
            edict_denoise((z, z), 5, 0, ZeroPredictor(), NULL, sched, mix=0.5)
        with pytest.raises(ValueError):
            edict_invert((z, np.zeros((1, 2, 3))), 0, 5, ZeroPredictor(), NULL, sched, mix=0.9)

    def test_deterministic(self):
        sched = make_schedule(30)
        pred = ToyPredictor(sched)
        z = np.random.default_rng(8).standard_normal((4, 8, 8))
        a = edict_invert((z, z), 0, 12, pred, NULL, sched, mix=0.93)
        b = edict_invert((z, z), 0, 12, pred, NULL, sched, mix=0.93)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


class TestToyPredictor:
    def test_zero_noise_on_prior_mean(self):
        sched = make_schedule(50)
        pred = ToyPredictor(sched)
        cond = Condition("landscape")
        mu = pred._mean(cond, (4, 8, 8))
        for t in (1, 25, 50):
            eps = pred.predict(math.sqrt(sched.alpha_bar[t]) * mu, t, cond)
            assert np.abs(eps).max() < 1e-12

    def test_degenerate_prior_limit(self):
        sched = make_schedule(50)
        pred = ToyPredictor(sched, sigma0=1e-9)
        cond = Condition("landscape")
        mu = pred._mean(cond, (4, 8, 8))
        z = np.random.default_rng(0).standard_normal((4, 8, 8))
        t = 25
        a = sched.alpha_bar[t]
        expected = (z - math.sqrt(a) * mu) / math.sqrt(1.0 - a)
        assert np.allclose(pred.predict(z, t, cond), expected, atol=1e-6)

    def test_affine_in_latent(self):
        sched = make_schedule(50)
        pred = ToyPredictor(sched)
        cond = Condition("fixed prompt")
        rng = np.random.default_rng(1)
        z1, z2 = rng.standard_normal((2, 4, 8, 8))
        a = 0.3
        lhs = pred.predict(a * z1 + (1 - a) * z2, 20, cond)
        rhs = a * pred.predict(z1, 20, cond) + (1 - a) * pred.predict(z2, 20, cond)
        assert np.abs(lhs - rhs).max() < 1e-6

    def test_rejects_step_zero(self):
        sched = make_schedule(50)
        with pytest.raises(ValueError):
            ToyPredictor(sched).predict(np.zeros((4, 4, 4)), 0, NULL)

    def test_null_prompt_is_zero_mean(self):
        sched = make_schedule(50)
        pred = ToyPredictor(sched)
        assert np.array_equal(pred._mean(NULL, (4, 8, 8)), np.zeros((4, 8, 8)))

    def test_ref_blend(self):
        sched = make_schedule(50)
        pred = ToyPredictor(sched)
        ref = np.ones((4, 8, 8))
        base = pred._mean(Condition("p"), (4, 8, 8))
        blended = pred._mean(Condition("p", ref, 0.25), (4, 8, 8))
        assert np.allclose(blended, 0.75 * base + 0.25 * ref, atol=1e-12)

    def test_shape_preserved_and_deterministic(self):
        sched = make_schedule(50)
        pred = ToyPredictor(sched)
        z = np.random.default_rng(2).standard_normal((4, 6, 10))
        cond = Condition("abc")
        out1 = pred.predict(z, 7, cond)
        out2 = ToyPredictor(sched).predict(z, 7, cond)
        assert out1.shape == z.shape
        assert np.array_equal(out1, out2)


def test_condition_validation():
    with pytest.raises(ValueError):
        Condition("p", None, 0.5)
    with pytest.raises(ValueError):
        Condition("p", np.zeros((1, 2, 2)), 1.5)
