"""Acceptance suite: one test per release criterion, each printing a verdict.

Run with `pytest tests/test_acceptance.py -s` to see the per-criterion lines.
Every tolerance is pinned here; nothing is calibrated at runtime.
"""

import base64
import json
import math
import time
from contextlib import contextmanager
from dataclasses import replace

import numpy as np
import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from layerbrush.backend import ToyBackend
from layerbrush.cache import CachedLatents, CacheKey, LatentCache, capture
from layerbrush.cli import main as cli_main
from layerbrush.core import Mask, fingerprint, image_hash, psnr, sample_gaussian
from layerbrush.engine import EditParams, map_strength, scaled_noise_sample, single_layer_edit
from layerbrush.layers import LayerStack
from layerbrush.service import create_app

from oracles import full_path_oracle


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"\n[ACCEPTANCE] {name}: FAIL")
        raise
    print(f"\n[ACCEPTANCE] {name}: PASS")


def _random_mask(rng, height, width, allow_empty=False, binary=True):
    kind = rng.integers(0, 3)
    if kind == 0:
        cx = int(rng.integers(1, width - 1))
        cy = int(rng.integers(1, height - 1))
        size = int(rng.integers(1, max(2, min(height, width) // 2)))
        return Mask.box(height, width, cx, cy, size)
    if kind == 1:
        field = (rng.random((height, width)) < rng.uniform(0.1, 0.6)).astype(np.float32)
        if not allow_empty and field.sum() == 0:
            field[height // 2, width // 2] = 1.0
        return Mask(field)
    if binary:
        field = (rng.random((height, width)) < 0.3).astype(np.float32)
        if not allow_empty and field.sum() == 0:
            field[0, 0] = 1.0
        return Mask(field)
    return Mask(rng.random((height, width)).astype(np.float32))


PROMPTS = ["a calm meadow", "a stone tower", "red flowers", "night sky", "old harbor"]


class TestCacheEquivalence:
    def test_cached_path_matches_full_trajectory_oracle(self):
        # 200 randomized cases, elementwise <= 1e-5, under 60 s.
        with criterion("cache-equivalence oracle (200 cases, <=1e-5, <60s)"):
            rng = np.random.default_rng(2024)
            N = 12
            backend = ToyBackend(N=N)
            t0 = time.monotonic()
            for case in range(200):
                base_seed = int(rng.integers(0, 2**32))
                base_prompt = PROMPTS[int(rng.integers(0, len(PROMPTS)))]
                edit_prompt = PROMPTS[int(rng.integers(0, len(PROMPTS)))]
                params = EditParams(
                    prompt_text=edit_prompt,
                    mask=_random_mask(rng, 16, 16, binary=bool(rng.integers(0, 2))),
                    seed=int(rng.integers(0, 2**32)),
                    alpha_star=float(rng.uniform(0.0, 100.0)),
                    n=int(rng.integers(3, N + 1)),
                )
                traj = backend.generate(seed=base_seed, prompt=backend.embed(base_prompt), N=N)
                cached = capture(traj, n=params.n)
                got = single_layer_edit(backend, params, cached)
                want, _ = full_path_oracle(backend, N, base_seed, base_prompt, params)
                err = np.abs(got.final_latent - want).max()
                assert err <= 1e-5, f"case {case}: max deviation {err}"
            elapsed = time.monotonic() - t0
            assert elapsed < 60.0, f"suite took {elapsed:.1f}s"


class TestIdentitySuite:
    def test_identity_edits_reproduce_base(self):
        # alpha*=0 with the base prompt, and separately empty-mask edits,
        # reproduce the base latent <= 1e-5 and the base image hash exactly.
        with criterion("identity suite (50 cases, exact image hash, <10s)"):
            rng = np.random.default_rng(77)
            N = 12
            backend = ToyBackend(N=N)
            t0 = time.monotonic()
            for case in range(50):
                base_seed = int(rng.integers(0, 2**32))
                base_prompt = PROMPTS[int(rng.integers(0, len(PROMPTS)))]
                traj = backend.generate(seed=base_seed, prompt=backend.embed(base_prompt), N=N)
                base_img_hash = image_hash(backend.decode(traj.final))
                n = int(rng.integers(3, N + 1))
                if case % 2 == 0:
                    params = EditParams(
                        prompt_text=base_prompt,
                        mask=_random_mask(rng, 16, 16, binary=True),
                        seed=int(rng.integers(0, 2**32)),
                        alpha_star=0.0,
                        n=n,
                    )
                else:
                    params = EditParams(
                        prompt_text=base_prompt,
                        mask=Mask.zeros(16, 16),
                        seed=int(rng.integers(0, 2**32)),
                        alpha_star=float(rng.uniform(0.0, 100.0)),
                        n=n,
                    )
                cached = capture(traj, n=n)
                result = single_layer_edit(backend, params, cached)
                assert np.abs(result.final_latent - traj.final).max() <= 1e-5
                assert image_hash(result.image) == base_img_hash, f"case {case}"
            elapsed = time.monotonic() - t0
            assert elapsed < 10.0, f"suite took {elapsed:.1f}s"


class TestBlendExactness:
    def test_blend_pins_unmasked_cells_and_pixels(self):
        # At step b, cells with zero latent mask equal the cached Z_b bitwise;
        # with the original prompt the final unmasked pixels equal the base
        # image exactly (region PSNR returns the +inf sentinel).
        with criterion("blend exactness (50 cases, bitwise at b, PSNR sentinel)"):
            rng = np.random.default_rng(1234)
            N = 12
            backend = ToyBackend(N=N)
            for case in range(50):
                base_seed = int(rng.integers(0, 2**32))
                base_prompt = PROMPTS[int(rng.integers(0, len(PROMPTS)))]
                traj = backend.generate(seed=base_seed, prompt=backend.embed(base_prompt), N=N)
                base_image = backend.decode(traj.final)
                mask = _random_mask(rng, 16, 16, binary=True)
                same_prompt = case % 2 == 0
                params = EditParams(
                    prompt_text=base_prompt if same_prompt else "a stone tower",
                    mask=mask,
                    seed=int(rng.integers(0, 2**32)),
                    alpha_star=float(rng.uniform(10.0, 100.0)),
                    n=int(rng.integers(3, N + 1)),
                )
                cached = capture(traj, n=params.n)
                result = single_layer_edit(backend, params, cached)
                outside = mask.latent(1) == 0
                assert result.post_blend_latent is not None
                assert np.array_equal(result.post_blend_latent[:, outside],
                                      cached.z_b[:, outside])
                if same_prompt and outside.any():
                    assert psnr(result.image, base_image, region=mask) == math.inf


class TestCallAccounting:
    def test_edit_calls_equal_n_and_bench_ratios(self, tmp_path):
        with criterion("call accounting (calls=n, generation=N, ratios 3.125/6.25)"):
            N = 25
            backend = ToyBackend(N=N)
            prompt = backend.embed("a calm meadow")
            before = backend.denoiser_calls
            traj = backend.generate(seed=3, prompt=prompt, N=N)
            assert backend.denoiser_calls - before == N
            for n in (8, 4, 15):
                params = EditParams(
                    prompt_text="red flowers",
                    mask=Mask.box(16, 16, 8, 8, 4),
                    seed=9, alpha_star=40.0, n=n)
                cached = capture(traj, n=n)
                before = backend.denoiser_calls
                result = single_layer_edit(backend, params, cached)
                assert result.denoiser_calls == n
                assert backend.denoiser_calls - before == n

            script = {
                "backend": {"id": "toy"},
                "num_steps": 25,
                "base": {"seed": 3, "prompt": "a calm meadow"},
                "layers": [
                    {"prompt": "red flowers", "seed": 9, "alpha_star": 40.0, "n": 8,
                     "mask": {"box": {"center_x": 8, "center_y": 8, "size": 4}}},
                    {"prompt": "red flowers", "seed": 9, "alpha_star": 40.0, "n": 4,
                     "mask": {"box": {"center_x": 8, "center_y": 8, "size": 4}}},
                ],
                "output_dir": "bench_out",
            }
            path = tmp_path / "bench.json"
            path.write_text(json.dumps(script))
            result = CliRunner().invoke(cli_main, ["bench", str(path), "--repeat", "3"])
            assert result.exit_code == 0, result.output
            assert "call_ratio=3.125" in result.output
            assert "call_ratio=6.25" in result.output


class TestMemoryAccounting:
    def test_ten_sd_scale_layers(self):
        # 10 layers of 4x64x64 float32 pairs: 1,310,720 raw bytes, within 5%.
        with criterion("memory accounting (10 layers @ 4x64x64 ~= 1.25 MiB)"):
            store = LatentCache()
            z = sample_gaussian(1, (4, 64, 64))
            for k in range(10):
                store.put(CacheKey("sd", k),
                          CachedLatents(z_r=z, z_b=z, r=17, b=23, n_total=25))
            size = store.size_bytes("sd")
            assert abs(size - 1_310_720) / 1_310_720 <= 0.05, size


class TestLayerDeterminism:
    def test_randomized_stack_operations(self):
        # 100 randomized sequences: toggle and delete/re-add round-trips are
        # hash-exact; a mutation at k never changes fingerprints below k.
        with criterion("layer determinism (100 random sequences, <120s)"):
            rng = np.random.default_rng(4321)
            t0 = time.monotonic()
            N = 10
            for seq in range(100):
                backend = ToyBackend(N=N)
                prompt = backend.embed("a calm meadow")
                traj = backend.generate(seed=int(rng.integers(0, 2**32)), prompt=prompt, N=N)
                stack = LayerStack(backend, traj, prompt, session_id=f"seq{seq}")

                def rand_params():
                    return EditParams(
                        prompt_text=PROMPTS[int(rng.integers(0, len(PROMPTS)))],
                        mask=Mask.box(16, 16, int(rng.integers(2, 14)),
                                      int(rng.integers(2, 14)), int(rng.integers(1, 5))),
                        seed=int(rng.integers(0, 2**32)),
                        alpha_star=float(rng.uniform(5.0, 95.0)),
                        n=int(rng.integers(3, N + 1)),
                    )

                for _ in range(int(rng.integers(1, 4))):
                    stack.add_layer(rand_params())

                # mutation at k leaves fingerprints below k untouched
                k = int(rng.integers(0, len(stack)))
                below = stack.cache_fingerprints()[:k]
                stack.update_layer(k, rand_params())
                assert stack.cache_fingerprints()[:k] == below

                # toggle round-trip restores the exact composition
                before = image_hash(stack.compose())
                stack.set_visibility(k, False)
                stack.set_visibility(k, True)
                assert image_hash(stack.compose()) == before

                # delete / re-add round-trip at the top
                top = len(stack) - 1
                top_params = stack.layers[top].params
                stack.delete_layer(top)
                stack.add_layer(top_params)
                assert image_hash(stack.compose()) == before
            elapsed = time.monotonic() - t0
            assert elapsed < 120.0, f"suite took {elapsed:.1f}s"


class TestOverlapPropagation:
    def test_two_layer_overlap_scenario(self):
        with criterion("overlap propagation (hidden upstream changes Z_r)"):
            N = 12
            backend = ToyBackend(N=N)
            prompt = backend.embed("a calm meadow")
            traj = backend.generate(seed=21, prompt=prompt, N=N)
            stack = LayerStack(backend, traj, prompt, session_id="overlap")
            a = EditParams(prompt_text="red flowers", mask=Mask.box(16, 16, 6, 8, 4),
                           seed=31, alpha_star=60.0, n=6)
            b = EditParams(prompt_text="stone fountain", mask=Mask.box(16, 16, 9, 8, 4),
                           seed=32, alpha_star=60.0, n=6)
            stack.add_layer(a)
            kb, _ = stack.add_layer(b)
            both = stack.compose()
            zr_with_a = fingerprint(stack.layers[kb].cached.z_r)

            stack.set_visibility(0, False)
            zr_without_a = fingerprint(stack.layers[kb].cached.z_r)
            assert zr_without_a != zr_with_a
            base_only = capture(traj, n=b.n)
            assert zr_without_a == fingerprint(base_only.z_r)

            stack.set_visibility(0, True)
            assert image_hash(stack.compose()) == image_hash(both)

            base_img = stack.base_image.astype(np.int32)
            final = both.astype(np.int32)
            a_only = (a.mask.pixel > 0) & (b.mask.pixel == 0)
            b_only = (b.mask.pixel > 0) & (a.mask.pixel == 0)
            assert np.abs(final - base_img)[a_only].max() > 0
            assert np.abs(final - base_img)[b_only].max() > 0


class TestAblationTrends:
    SCRIPT = {
        "backend": {"id": "toy"},
        "num_steps": 25,
        "base": {"seed": 11, "prompt": "a calm meadow"},
        "layers": [{"prompt": "a stone tower", "seed": 77, "alpha_star": 50.0, "n": 8,
                    "mask": {"box": {"center_x": 8, "center_y": 8, "size": 4}}}],
        "output_dir": "out",
    }

    def _sweep(self, tmp_path, param, prompt=None):
        script = json.loads(json.dumps(self.SCRIPT))
        if prompt is not None:
            script["layers"][0]["prompt"] = prompt
        path = tmp_path / f"sweep_{param}.json"
        path.write_text(json.dumps(script))
        result = CliRunner().invoke(cli_main, ["ablate", str(path), "--param", param,
                                               "--output-dir", str(tmp_path / param)])
        assert result.exit_code == 0, result.output
        import csv
        with (tmp_path / param / f"ablate_{param}.csv").open() as fh:
            return list(csv.DictReader(fh))

    def test_b_sweep_background_psnr(self, tmp_path):
        with criterion("ablation: b-sweep PSNR nondecreasing, max at b=N-2"):
            rows = self._sweep(tmp_path, "b")
            psnrs = [math.inf if r["psnr_background"] == "inf" else float(r["psnr_background"])
                     for r in rows]
            assert all(y >= x for x, y in zip(psnrs, psnrs[1:]))
            assert psnrs[-1] == max(psnrs)
            assert int(rows[-1]["b"]) == 23

    def test_r_sweep_masked_deviation(self, tmp_path):
        with criterion("ablation: r-sweep masked deviation nonincreasing"):
            rows = self._sweep(tmp_path, "r")
            mses = [float(r["mse_masked"]) for r in rows]
            assert all(y <= x + 1e-9 for x, y in zip(mses, mses[1:]))

    def test_alpha_sweep_masked_deviation(self, tmp_path):
        with criterion("ablation: alpha-sweep masked deviation nondecreasing"):
            rows = self._sweep(tmp_path, "alpha", prompt="a calm meadow")
            mses = [float(r["mse_masked"]) for r in rows]
            assert all(y >= x - 1e-9 for x, y in zip(mses, mses[1:]))
            assert rows[0]["psnr_background"] == "inf"
            assert mses[0] == 0.0

    def test_alpha_zero_and_sqrt_proportionality(self):
        with criterion("ablation: alpha(0)=0 and alpha ∝ sqrt(alpha*) @1e-9"):
            backend = ToyBackend(N=25)
            prompt = backend.embed("a calm meadow")
            traj = backend.generate(seed=11, prompt=prompt, N=25)
            z_r = traj.latents[17]
            z0p = scaled_noise_sample(z_r, seed=77)
            mask = Mask.box(16, 16, 8, 8, 4)
            width = backend.descriptor.pixel_width
            assert map_strength(0.0, z_r, z0p, mask, 0.25, width) == 0.0
            ref = map_strength(100.0, z_r, z0p, mask, 0.25, width)
            for a_star in (1.0, 4.0, 12.5, 25.0, 50.0, 75.0, 99.0):
                alpha = map_strength(a_star, z_r, z0p, mask, 0.25, width)
                expected = ref * math.sqrt(a_star / 100.0)
                assert abs(alpha - expected) <= 1e-9 * expected


class TestInversionRoundTrip:
    def test_generate_invert_regenerate_and_upload(self):
        with criterion("inversion round-trip (<=1e-5) and upload quantization"):
            N = 25
            backend = ToyBackend(N=N)
            prompt = backend.embed("a calm meadow")
            traj = backend.generate(seed=5, prompt=prompt, N=N)
            inverted = backend.invert(traj.final, prompt, N)
            again = backend.regenerate(inverted.latents[0], prompt, N)
            assert np.abs(again.final - traj.final).max() <= 1e-5

            from layerbrush.core import image_to_png_bytes, png_bytes_to_image
            from layerbrush.session import create_session
            img = np.random.default_rng(8).integers(0, 256, (16, 16, 3), dtype=np.uint8)
            session = create_session("toy", 10, upload_png=image_to_png_bytes(img))
            out = session.stack.base_image
            assert np.abs(out.astype(int) - img.astype(int)).max() <= 1


class TestServiceDurability:
    def test_restart_preserves_composition_hash(self, tmp_path):
        with criterion("service durability (restart reload, identical hash)"):
            store = tmp_path / "store"
            client1 = TestClient(create_app(store_path=store, default_n=12))
            created = client1.post("/sessions", json={"prompt": "a calm meadow", "seed": 21})
            assert created.status_code == 200
            sid = created.json()["session"]["id"]
            for seed, cx in ((101, 8), (102, 11)):
                resp = client1.post(f"/sessions/{sid}/layers", json={
                    "prompt": "red flowers", "seed": seed, "alpha_star": 60.0, "n": 6,
                    "box": {"center_x": cx, "center_y": 8, "size": 4},
                })
                assert resp.status_code == 200
            client1.patch(f"/sessions/{sid}/layers/0", json={"visible": False})
            client1.patch(f"/sessions/{sid}/layers/0", json={"visible": True})
            before = client1.get(f"/sessions/{sid}/image").content

            client2 = TestClient(create_app(store_path=store, default_n=12))
            after = client2.get(f"/sessions/{sid}/image").content
            assert image_hash_bytes(after) == image_hash_bytes(before)


def image_hash_bytes(png: bytes) -> str:
    from layerbrush.core import image_hash as ih, png_bytes_to_image
    return ih(png_bytes_to_image(png))
