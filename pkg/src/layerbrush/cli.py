"""Batch driver: scripted runs, benchmarks, ablation sweeps, and metrics.

Scripts are JSON documents validated against SCRIPT_SCHEMA (a copy ships in
docs/script-schema.json); relative paths inside a script resolve against the
script's own directory. The CLI drives the library in-process so that call
counts and timings are measured at the backend boundary, not estimated;
``run --remote`` targets a running service instead for end-to-end checks.

Exit codes: 0 success, 2 validation failure, 3 runtime failure. Infinite
PSNR values are serialized as the string "inf" in CSV and JSON outputs.
"""

from __future__ import annotations

import base64
import csv
import json
import math
import statistics
import time
from dataclasses import replace
from pathlib import Path

import click
import jsonschema
import numpy as np

from .backend import ToyBackendConfig, make_backend
from .cache import capture
from .core import (
    Mask,
    image_hash,
    image_to_png_bytes,
    mse_region,
    png_bytes_to_image,
    psnr,
)
from .engine import EditParams, single_layer_edit
from .errors import BadParamsError, EditingError, ShapeError
from .layers import LayerStack

EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

_BOX_SCHEMA = {
    "type": "object",
    "required": ["center_x", "center_y", "size"],
    "properties": {
        "center_x": {"type": "integer"},
        "center_y": {"type": "integer"},
        "size": {"type": "integer", "minimum": 1},
    },
    "additionalProperties": False,
}

SCRIPT_SCHEMA = {
    "type": "object",
    "required": ["num_steps", "base", "layers"],
    "properties": {
        "backend": {
            "type": "object",
            "properties": {
                "id": {"type": "string"},
                "latent_shape": {
                    "type": "array", "items": {"type": "integer", "minimum": 1},
                    "minItems": 3, "maxItems": 3,
                },
                "lambda_schedule": {
                    "type": ["array", "null"],
                    "items": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                },
                "target_scale": {"type": "number"},
            },
            "additionalProperties": False,
        },
        "num_steps": {"type": "integer", "minimum": 3},
        "base": {
            "type": "object",
            "oneOf": [
                {"required": ["seed", "prompt"],
                 "properties": {"seed": {"type": "integer", "minimum": 0},
                                "prompt": {"type": "string"}},
                 "additionalProperties": False},
                {"required": ["image"],
                 "properties": {"image": {"type": "string"}},
                 "additionalProperties": False},
            ],
        },
        "layers": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["prompt", "seed", "alpha_star", "n", "mask"],
                "properties": {
                    "prompt": {"type": "string"},
                    "seed": {"type": "integer", "minimum": 0},
                    "alpha_star": {"type": "number", "minimum": 0, "maximum": 100},
                    "n": {"type": "integer", "minimum": 3},
                    "sigma": {"type": "number", "exclusiveMinimum": 0},
                    "b": {"type": ["integer", "null"], "minimum": 1},
                    "mask": {
                        "oneOf": [
                            {"type": "string"},
                            {"type": "object", "required": ["box"],
                             "properties": {"box": _BOX_SCHEMA},
                             "additionalProperties": False},
                        ],
                    },
                },
                "additionalProperties": False,
            },
        },
        "output_dir": {"type": "string"},
    },
    "additionalProperties": False,
}


def _fmt(value: float) -> str | float:
    return "inf" if value == math.inf else value


def load_script(path: Path) -> dict:
    try:
        script = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as err:
        click.echo(f"cannot read script: {err}", err=True)
        raise click.exceptions.Exit(EXIT_VALIDATION)
    validator = jsonschema.Draft202012Validator(SCRIPT_SCHEMA)
    errors = sorted(validator.iter_errors(script), key=lambda e: list(e.absolute_path))
    if errors:
        for err in errors:
            where = "/".join(str(p) for p in err.absolute_path) or "<root>"
            click.echo(f"script validation error at {where}: {err.message}", err=True)
        raise click.exceptions.Exit(EXIT_VALIDATION)
    return script


def _resolve(script_dir: Path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else script_dir / p


def _script_backend(script: dict, N: int):
    spec = script.get("backend", {})
    backend_id = spec.get("id", "toy")
    toy_config = None
    if backend_id == "toy":
        toy_config = ToyBackendConfig(
            latent_shape=tuple(spec.get("latent_shape", (4, 16, 16))),
            lambda_schedule=tuple(spec["lambda_schedule"]) if spec.get("lambda_schedule") else None,
            target_scale=spec.get("target_scale", 1.0),
        )
    return make_backend(backend_id, N=N, toy_config=toy_config)


def _script_mask(entry, script_dir: Path, height: int, width: int) -> Mask:
    if isinstance(entry, str):
        mask = Mask.from_png_bytes(_resolve(script_dir, entry).read_bytes())
        if mask.shape != (height, width):
            raise ShapeError(
                f"mask dimensions {mask.shape} do not match the {height}x{width} canvas"
            )
        return mask
    box = entry["box"]
    return Mask.box(height, width, box["center_x"], box["center_y"], box["size"])


def _script_params(layer_spec: dict, script_dir: Path, height: int, width: int) -> EditParams:
    return EditParams(
        prompt_text=layer_spec["prompt"],
        mask=_script_mask(layer_spec["mask"], script_dir, height, width),
        seed=layer_spec["seed"],
        alpha_star=layer_spec["alpha_star"],
        n=layer_spec["n"],
        sigma=layer_spec.get("sigma", 0.25),
        b=layer_spec.get("b"),
    )


def build_stack(script: dict, script_dir: Path) -> tuple[LayerStack, list[EditParams]]:
    """Backend + base trajectory + parsed layer params, nothing executed yet."""
    N = script["num_steps"]
    backend = _script_backend(script, N)
    base_spec = script["base"]
    if "seed" in base_spec:
        prompt = backend.embed(base_spec["prompt"])
        base = backend.generate(seed=base_spec["seed"], prompt=prompt, N=N)
    else:
        prompt = backend.embed("")
        img = png_bytes_to_image(_resolve(script_dir, base_spec["image"]).read_bytes())
        inverted = backend.invert(backend.encode(img), prompt, N)
        base = backend.regenerate(inverted.latents[0], prompt, N)
    stack = LayerStack(backend, base, prompt, session_id="cli")
    desc = backend.descriptor
    params = [
        _script_params(spec, script_dir, desc.pixel_height, desc.pixel_width)
        for spec in script["layers"]
    ]
    return stack, params


@click.group()
def main():
    """Layered diffusion editing: scripted runs, benchmarks, sweeps, metrics."""


@main.command()
@click.argument("script_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--output-dir", type=click.Path(file_okay=False, path_type=Path),
              default=None, help="Override the script's output_dir.")
@click.option("--remote", default=None, help="Execute against a running service URL.")
def run(script_path: Path, output_dir: Path | None, remote: str | None):
    """Execute an edit script: base + per-layer compositions + report.json."""
    script = load_script(script_path)
    out_dir = output_dir or _resolve(script_path.parent, script.get("output_dir", "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        if remote:
            report = _run_remote(script, script_path.parent, out_dir, remote)
        else:
            report = _run_local(script, script_path.parent, out_dir)
    except EditingError as err:
        click.echo(f"error[{err.code}]: {err}", err=True)
        raise click.exceptions.Exit(
            EXIT_VALIDATION if err.code in ("bad_params", "bad_shape") else EXIT_RUNTIME)
    (out_dir / "report.json").write_text(json.dumps(report, indent=2))
    click.echo(f"wrote {out_dir / 'report.json'}")


def _run_local(script: dict, script_dir: Path, out_dir: Path) -> dict:
    stack, layer_params = build_stack(script, script_dir)
    (out_dir / "base.png").write_bytes(image_to_png_bytes(stack.base_image))
    edits = []
    for idx, params in enumerate(layer_params):
        t0 = time.perf_counter()
        k, _ = stack.add_layer(params)
        wall_ms = (time.perf_counter() - t0) * 1000.0
        composed = stack.compose()
        (out_dir / f"layer{idx:02d}.png").write_bytes(image_to_png_bytes(composed))
        result = stack.layers[k].result
        edits.append({
            "layer": idx,
            "denoiser_calls": result.denoiser_calls,
            "alpha_effective": result.alpha_effective,
            "wall_ms": wall_ms,
            "image_hash": image_hash(composed),
        })
        click.echo(f"layer {idx}: calls={result.denoiser_calls} "
                   f"alpha={result.alpha_effective:.4f} hash={image_hash(composed)[:12]}")
    final = stack.compose()
    (out_dir / "composed.png").write_bytes(image_to_png_bytes(final))
    return {
        "base": {"image_hash": image_hash(stack.base_image)},
        "edits": edits,
        "totals": {
            "denoiser_calls": stack.backend.denoiser_calls,
            "cache_bytes": stack.size_bytes(),
        },
        "composed_hash": image_hash(final),
    }


def _run_remote(script: dict, script_dir: Path, out_dir: Path, base_url: str) -> dict:
    import httpx

    client = httpx.Client(base_url=base_url, timeout=60.0)
    body: dict = {"num_steps": script["num_steps"]}
    backend_spec = script.get("backend", {})
    if backend_spec:
        body["backend_id"] = backend_spec.get("id", "toy")
        for key in ("latent_shape", "lambda_schedule", "target_scale"):
            if backend_spec.get(key) is not None:
                body[key] = backend_spec[key]
    if "seed" in script["base"]:
        body.update(seed=script["base"]["seed"], prompt=script["base"]["prompt"])
    else:
        png = _resolve(script_dir, script["base"]["image"]).read_bytes()
        body["image_png_base64"] = base64.b64encode(png).decode()
    created = client.post("/sessions", json=body)
    created.raise_for_status()
    session = created.json()["session"]
    sid = session["id"]
    (out_dir / "base.png").write_bytes(base64.b64decode(created.json()["image_png_base64"]))
    edits = []
    for idx, spec in enumerate(script["layers"]):
        layer_body = {
            "prompt": spec["prompt"], "seed": spec["seed"],
            "alpha_star": spec["alpha_star"], "n": spec["n"],
        }
        if spec.get("sigma") is not None:
            layer_body["sigma"] = spec["sigma"]
        if spec.get("b") is not None:
            layer_body["b"] = spec["b"]
        if isinstance(spec["mask"], str):
            png = _resolve(script_dir, spec["mask"]).read_bytes()
            layer_body["mask_png_base64"] = base64.b64encode(png).decode()
        else:
            layer_body["box"] = spec["mask"]["box"]
        resp = client.post(f"/sessions/{sid}/layers", json=layer_body)
        resp.raise_for_status()
        payload = resp.json()
        img = client.get(f"/sessions/{sid}/image")
        (out_dir / f"layer{idx:02d}.png").write_bytes(img.content)
        edits.append({
            "layer": idx,
            "denoiser_calls": payload["denoiser_calls"],
            "alpha_effective": payload["alpha_effective"],
            "image_hash": payload["report"]["image_hash"],
        })
    final = client.get(f"/sessions/{sid}/image")
    (out_dir / "composed.png").write_bytes(final.content)
    stats = client.get(f"/sessions/{sid}/stats").json()
    return {
        "session_id": sid,
        "edits": edits,
        "totals": {"denoiser_calls": stats["denoiser_calls"],
                   "cache_bytes": stats["cache_bytes"]},
        "composed_hash": image_hash(png_bytes_to_image(final.content)),
    }


@main.command()
@click.argument("script_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--repeat", "-r", default=10, show_default=True, help="Repeats per edit.")
@click.option("--output-dir", type=click.Path(file_okay=False, path_type=Path), default=None)
def bench(script_path: Path, repeat: int, output_dir: Path | None):
    """Per-edit wall time over warm caches, call counts, and the N/n ratio."""
    script = load_script(script_path)
    out_dir = output_dir or _resolve(script_path.parent, script.get("output_dir", "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        stack, layer_params = build_stack(script, script_path.parent)
        N = stack.base.N
        rows = []
        for params in layer_params:
            stack.add_layer(params)
        click.echo(f"full generation: calls={N}")
        for idx, layer in enumerate(stack.layers):
            times_ms = []
            calls = None
            for _ in range(max(1, repeat)):
                t0 = time.perf_counter()
                result = single_layer_edit(stack.backend, layer.params, layer.cached)
                times_ms.append((time.perf_counter() - t0) * 1000.0)
                calls = result.denoiser_calls
            mean_ms = statistics.fmean(times_ms)
            std_ms = statistics.pstdev(times_ms)
            ratio = N / layer.params.n
            rows.append({
                "layer": idx, "n": layer.params.n, "num_steps": N,
                "denoiser_calls": calls, "call_ratio": ratio,
                "mean_ms": mean_ms, "std_ms": std_ms,
            })
            click.echo(
                f"layer {idx}: calls={calls} N={N} call_ratio={ratio:g} "
                f"mean_ms={mean_ms:.3f} std_ms={std_ms:.3f}"
            )
    except EditingError as err:
        click.echo(f"error[{err.code}]: {err}", err=True)
        raise click.exceptions.Exit(EXIT_RUNTIME)
    csv_path = out_dir / "bench.csv"
    with csv_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    click.echo(f"wrote {csv_path}")


def _parse_range(spec: str, as_int: bool) -> list:
    parts = spec.split(":")
    if len(parts) not in (2, 3):
        raise BadParamsError(f"range must be start:stop[:step], got {spec!r}")
    try:
        start, stop = float(parts[0]), float(parts[1])
        step = float(parts[2]) if len(parts) == 3 else 1.0
    except ValueError:
        raise BadParamsError(f"non-numeric range component in {spec!r}")
    if step <= 0 or stop < start:
        raise BadParamsError(f"range {spec!r} must increase with a positive step")
    values = []
    v = start
    while v <= stop + 1e-9:
        values.append(int(round(v)) if as_int else v)
        v += step
    return values


@main.command()
@click.argument("script_path", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--param", type=click.Choice(["r", "b", "alpha"]), required=True)
@click.option("--range", "range_spec", default=None,
              help="start:stop[:step]; defaults depend on the parameter.")
@click.option("--output-dir", type=click.Path(file_okay=False, path_type=Path), default=None)
def ablate(script_path: Path, param: str, range_spec: str | None, output_dir: Path | None):
    """Sweep r, b, or alpha* on a single-layer script; emit metric curves."""
    script = load_script(script_path)
    if len(script["layers"]) != 1:
        click.echo("ablate requires a single-layer script", err=True)
        raise click.exceptions.Exit(EXIT_VALIDATION)
    out_dir = output_dir or _resolve(script_path.parent, script.get("output_dir", "out"))
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        rows = _ablate_rows(script, script_path.parent, param, range_spec)
    except EditingError as err:
        click.echo(f"error[{err.code}]: {err}", err=True)
        raise click.exceptions.Exit(
            EXIT_VALIDATION if err.code in ("bad_params", "bad_shape") else EXIT_RUNTIME)
    csv_path = out_dir / f"ablate_{param}.csv"
    fields = list(rows[0].keys())
    with csv_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(v) for k, v in row.items()})
    _plot_rows(rows, param, out_dir / f"ablate_{param}.png")
    for row in rows:
        click.echo("  ".join(f"{k}={_fmt(v)}" for k, v in row.items()))
    click.echo(f"wrote {csv_path}")


def _ablate_rows(script: dict, script_dir: Path, param: str, range_spec: str | None) -> list[dict]:
    stack, layer_params = build_stack(script, script_dir)
    base_traj = stack.base
    backend = stack.backend
    N = base_traj.N
    params = layer_params[0]
    base_image = stack.base_image
    mask = params.mask

    if param == "r":
        values = _parse_range(range_spec, as_int=True) if range_spec else list(range(2, N - 2))
        if any(not (0 <= v <= N - 3) for v in values):
            raise BadParamsError(f"r values must lie in [0, {N - 3}]")
    elif param == "b":
        r = N - params.n
        default_hi = N - 2
        values = _parse_range(range_spec, as_int=True) if range_spec else list(range(r + 1, default_hi + 1))
        if any(not (r < v <= N - 1) for v in values):
            raise BadParamsError(f"b values must lie in ({r}, {N - 1}]")
    else:
        values = _parse_range(range_spec, as_int=False) if range_spec else [
            0.0, 12.5, 25.0, 37.5, 50.0, 62.5, 75.0, 87.5, 100.0]
        if any(not (0.0 <= v <= 100.0) for v in values):
            raise BadParamsError("alpha values must lie in [0, 100]")

    rows = []
    for value in values:
        if param == "r":
            case = replace(params, n=N - int(value), b=None)
        elif param == "b":
            case = replace(params, b=int(value))
        else:
            case = replace(params, alpha_star=float(value))
        cached = capture(base_traj, n=case.n, b_override=case.b)
        result = single_layer_edit(backend, case, cached)
        m_lat = mask.latent(backend.descriptor.spatial_factor)
        outside = m_lat == 0
        drift = float(np.abs(result.final_latent[:, outside] - base_traj.final[:, outside]).max()) \
            if outside.any() else 0.0
        rows.append({
            param: value,
            "alpha_effective": result.alpha_effective,
            "psnr_background": psnr(result.image, base_image, region=mask),
            "mse_masked": mse_region(result.image, base_image, mask, masked=True),
            "mse_unmasked": mse_region(result.image, base_image, mask, masked=False),
            "drift_inf_outside": drift,
        })
    return rows


def _plot_rows(rows: list[dict], param: str, path: Path) -> None:
    # Decorative: the CSV is the contract.
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    xs = [row[param] for row in rows]
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.2))
    series = [("psnr_background", "background PSNR (dB)"),
              ("mse_masked", "masked MSE"),
              ("drift_inf_outside", "outside drift (inf-norm)")]
    for ax, (key, label) in zip(axes, series):
        ys = [row[key] if row[key] != math.inf else math.nan for row in rows]
        ax.plot(xs, ys, marker="o")
        ax.set_xlabel(param)
        ax.set_title(label)
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


@main.command()
@click.option("--before", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--after", type=click.Path(exists=True, dir_okay=False, path_type=Path), required=True)
@click.option("--mask", "mask_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              default=None)
def metrics(before: Path, after: Path, mask_path: Path | None):
    """Region metrics between two images: PSNR (unmasked), MSE (both regions)."""
    try:
        img_a = png_bytes_to_image(before.read_bytes())
        img_b = png_bytes_to_image(after.read_bytes())
        if mask_path is not None:
            mask = Mask.from_png_bytes(mask_path.read_bytes())
            payload = {
                "psnr_unmasked": _fmt(psnr(img_a, img_b, region=mask)),
                "mse_masked": mse_region(img_a, img_b, mask, masked=True),
                "mse_unmasked": mse_region(img_a, img_b, mask, masked=False),
            }
        else:
            payload = {
                "psnr_unmasked": _fmt(psnr(img_a, img_b)),
                "mse_masked": None,
                "mse_unmasked": float(np.mean(
                    (img_a.astype(np.float64) - img_b.astype(np.float64)) ** 2)),
            }
    except EditingError as err:
        click.echo(f"error[{err.code}]: {err}", err=True)
        raise click.exceptions.Exit(
            EXIT_VALIDATION if err.code in ("bad_params", "bad_shape") else EXIT_RUNTIME)
    click.echo(json.dumps(payload, indent=2))


if __name__ == "__main__":
    main()
