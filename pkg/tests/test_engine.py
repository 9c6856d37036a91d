import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layerbrush import engine as eng
from layerbrush.backend import ToyBackend
from layerbrush.cache import capture
from layerbrush.core import Mask, image_hash, sample_gaussian
from layerbrush.errors import BadParamsError, ShapeError

from oracles import full_path_oracle

N = 12


@pytest.fixture
def toy():
    return ToyBackend(N=N)


@pytest.fixture
def base(toy):
    prompt = toy.embed("a quiet harbor")
    traj = toy.generate(seed=11, prompt=prompt, N=N)
    return prompt, traj


def _params(toy, **overrides):
    defaults = dict(
        prompt_text="a red boat",
        mask=Mask.box(16, 16, center_x=8, center_y=8, size=4),
        seed=77,
        alpha_star=50.0,
        n=6,
    )
    defaults.update(overrides)
    return eng.EditParams(**defaults)


class TestEditParams:
    def test_alpha_star_range_enforced(self, toy):
        with pytest.raises(BadParamsError):
            _params(toy, alpha_star=101.0)
        with pytest.raises(BadParamsError):
            _params(toy, alpha_star=-0.5)

    def test_minimum_steps(self, toy):
        with pytest.raises(BadParamsError):
            _params(toy, n=2)

    def test_default_blend_step(self, toy):
        assert _params(toy).blend_step(N) == N - 2
        assert _params(toy, b=7).blend_step(N) == 7


class TestMapStrength:
    def test_zero_alpha_star_maps_to_zero(self, base, toy):
        _, traj = base
        z_r = traj.latents[6]
        z0p = eng.scaled_noise_sample(z_r, seed=3)
        mask = Mask.full(16, 16)
        assert eng.map_strength(0.0, z_r, z0p, mask, 0.25, 16) == 0.0

    def test_zero_coverage_maps_to_zero(self, base):
        _, traj = base
        z_r = traj.latents[6]
        z0p = eng.scaled_noise_sample(z_r, seed=3)
        assert eng.map_strength(80.0, z_r, z0p, Mask.zeros(16, 16), 0.25, 16) == 0.0

    def test_sqrt_alpha_star_ratio(self, base):
        # alpha(100) / alpha(25) = 2 in closed form.
        _, traj = base
        z_r = traj.latents[6]
        z0p = eng.scaled_noise_sample(z_r, seed=3)
        mask = Mask.box(16, 16, 8, 8, 3)
        a100 = eng.map_strength(100.0, z_r, z0p, mask, 0.25, 16)
        a25 = eng.map_strength(25.0, z_r, z0p, mask, 0.25, 16)
        assert a100 / a25 == pytest.approx(2.0, rel=1e-12)

    def test_full_coverage_closed_form(self):
        # Cov = 0, sigma = 0.25, alpha* = 100 on a full W-wide mask of H rows:
        # alpha = sqrt(0.25) / sqrt(H). Use a constant-free construction where
        # the sample is orthogonal to z_r so Cov is exactly 0.
        height, width = 8, 512
        z_r = np.tile(np.array([1.0, -1.0], np.float32), 512).reshape(1, 2, 512)
        z0p = np.abs(z_r)  # constant 1 everywhere -> Cov(z_r, z0p) = 0
        mask = Mask.full(height, width)
        alpha = eng.map_strength(100.0, z_r, z0p, mask, 0.25, width)
        assert alpha == pytest.approx(math.sqrt(0.25) / math.sqrt(height), rel=1e-12)

    def test_degenerate_latent_rejected(self):
        z_r = np.ones((4, 16, 16), np.float32)
        with pytest.raises(BadParamsError):
            eng.map_strength(50.0, z_r, z_r, Mask.full(16, 16), 0.25, 16)

    @given(st.floats(min_value=0.0, max_value=100.0), st.floats(min_value=0.0, max_value=100.0))
    @settings(max_examples=40, deadline=None)
    def test_monotone_in_alpha_star(self, a1, a2):
        z_r = sample_gaussian(1, (4, 16, 16))
        z0p = eng.scaled_noise_sample(z_r, seed=2)
        mask = Mask.box(16, 16, 8, 8, 5)
        lo, hi = sorted((a1, a2))
        assert (eng.map_strength(lo, z_r, z0p, mask, 0.25, 16)
                <= eng.map_strength(hi, z_r, z0p, mask, 0.25, 16))


class TestInjectNoise:
    def test_zero_alpha_bitwise_unchanged(self, base):
        _, traj = base
        z_r = traj.latents[6]
        out = eng.inject_noise(z_r, seed=5, alpha=0.0, mask=Mask.full(16, 16))
        assert np.array_equal(out, z_r)

    def test_empty_mask_bitwise_unchanged(self, base):
        _, traj = base
        z_r = traj.latents[6]
        out = eng.inject_noise(z_r, seed=5, alpha=1.0, mask=Mask.zeros(16, 16))
        assert np.array_equal(out, z_r)

    def test_unit_variance_pass_through(self):
        # Var(z_r) = 1 exactly -> with alpha = 1 and a full mask the delta is
        # the raw seeded sample.
        z_r = np.tile(np.array([1.0, -1.0], np.float32), 512).reshape(4, 16, 16)
        out = eng.inject_noise(z_r, seed=9, alpha=1.0, mask=Mask.full(16, 16))
        raw = sample_gaussian(9, (4, 16, 16))
        np.testing.assert_allclose(out - z_r, raw, rtol=1e-5, atol=1e-6)

    def test_negative_alpha_rejected(self, base):
        _, traj = base
        with pytest.raises(BadParamsError):
            eng.inject_noise(traj.latents[6], seed=1, alpha=-0.1, mask=Mask.full(16, 16))


class TestSingleLayerEdit:
    def test_identity_alpha_zero_same_prompt(self, toy, base):
        prompt, traj = base
        params = _params(toy, prompt_text="a quiet harbor", alpha_star=0.0)
        cached = capture(traj, n=params.n)
        result = eng.single_layer_edit(toy, params, cached)
        assert np.abs(result.final_latent - traj.final).max() <= 1e-5
        assert image_hash(result.image) == image_hash(toy.decode(traj.final))

    def test_identity_empty_mask_same_prompt(self, toy, base):
        prompt, traj = base
        params = _params(toy, prompt_text="a quiet harbor",
                         mask=Mask.zeros(16, 16), alpha_star=90.0)
        cached = capture(traj, n=params.n)
        result = eng.single_layer_edit(toy, params, cached)
        assert np.abs(result.final_latent - traj.final).max() <= 1e-5
        assert image_hash(result.image) == image_hash(toy.decode(traj.final))
        # short-circuit runs only the post-blend tail
        assert result.denoiser_calls == N - cached.b

    def test_empty_mask_matches_full_oracle_path(self, toy):
        params = _params(toy, mask=Mask.zeros(16, 16), alpha_star=70.0,
                         prompt_text="something else")
        traj = toy.generate(seed=11, prompt=toy.embed("a quiet harbor"), N=N)
        cached = capture(traj, n=params.n)
        got = eng.single_layer_edit(toy, params, cached)
        want, _ = full_path_oracle(toy, N, 11, "a quiet harbor", params)
        assert np.array_equal(got.final_latent, want)

    def test_cached_path_equals_full_oracle(self, toy, base):
        _, traj = base
        params = _params(toy)
        cached = capture(traj, n=params.n)
        got = eng.single_layer_edit(toy, params, cached)
        want, _ = full_path_oracle(toy, N, 11, "a quiet harbor", params)
        assert np.abs(got.final_latent - want).max() <= 1e-5

    def test_blend_resets_unmasked_cells_bitwise(self, toy, base):
        _, traj = base
        params = _params(toy)
        cached = capture(traj, n=params.n)
        result = eng.single_layer_edit(toy, params, cached)
        m_lat = params.mask.latent(1)
        outside = m_lat == 0
        assert result.post_blend_latent is not None
        assert np.array_equal(result.post_blend_latent[:, outside], cached.z_b[:, outside])

    def test_call_accounting(self, toy, base):
        _, traj = base
        params = _params(toy)
        cached = capture(traj, n=params.n)
        before = toy.denoiser_calls
        result = eng.single_layer_edit(toy, params, cached)
        assert result.denoiser_calls == params.n
        assert toy.denoiser_calls - before == params.n

    def test_mismatched_r_rejected(self, toy, base):
        _, traj = base
        params = _params(toy, n=6)
        cached = capture(traj, n=5)
        with pytest.raises(BadParamsError):
            eng.single_layer_edit(toy, params, cached)

    def test_mismatched_b_rejected(self, toy, base):
        _, traj = base
        params = _params(toy, b=N - 3)
        cached = capture(traj, n=params.n)  # captured at default b = N-2
        with pytest.raises(BadParamsError):
            eng.single_layer_edit(toy, params, cached)

    def test_wrong_mask_shape_rejected(self, toy, base):
        _, traj = base
        params = _params(toy, mask=Mask.full(8, 8))
        cached = capture(traj, n=params.n)
        with pytest.raises(ShapeError):
            eng.single_layer_edit(toy, params, cached)

    def test_post_blend_drift_bound_outside_mask(self, toy, base):
        # With the blend at b = N-2, only the last two small steps can pull
        # unmasked cells toward the new prompt target.
        prompt, traj = base
        params = _params(toy, alpha_star=100.0)
        cached = capture(traj, n=params.n)
        result = eng.single_layer_edit(toy, params, cached)
        m_lat = params.mask.latent(1)
        outside = m_lat == 0
        t_base = toy.target_latent(prompt)
        t_edit = toy.target_latent(toy.embed(params.prompt_text))
        lam_sum = toy.schedule[N - 2] + toy.schedule[N - 1]
        drift = np.abs(result.final_latent[:, outside] - traj.final[:, outside]).max()
        bound = lam_sum * np.abs(t_edit - t_base).max()
        assert drift <= bound + 1e-6

    def test_deterministic(self, toy, base):
        _, traj = base
        params = _params(toy)
        cached = capture(traj, n=params.n)
        a = eng.single_layer_edit(toy, params, cached)
        b = eng.single_layer_edit(toy, params, cached)
        assert np.array_equal(a.final_latent, b.final_latent)
        assert image_hash(a.image) == image_hash(b.image)


class TestPreviewStream:
    def test_three_seeds_rerequest_reproduces(self, toy, base):
        _, traj = base
        params = _params(toy, n=4)
        cached = capture(traj, n=4)
        items = list(eng.preview_stream(toy, params, cached, [1, 2, 3]))
        assert [it.seed for it in items] == [1, 2, 3]
        again = list(eng.preview_stream(toy, params, cached, [2]))[0]
        assert np.array_equal(again.result.final_latent, items[1].result.final_latent)

    def test_per_item_call_accounting(self, toy, base):
        _, traj = base
        params = _params(toy, n=4)
        cached = capture(traj, n=4)
        before = toy.denoiser_calls
        items = list(eng.preview_stream(toy, params, cached, [1, 2, 3]))
        assert all(it.result.denoiser_calls == 4 for it in items)
        assert toy.denoiser_calls - before == 12

    def test_errors_do_not_abort_stream(self, toy, base):
        _, traj = base
        params = _params(toy, n=4)
        bad_cached = capture(traj, n=5)  # r mismatch for every seed
        items = list(eng.preview_stream(toy, params, bad_cached, [1, 2]))
        assert all(it.error is not None for it in items)
        assert len(items) == 2
