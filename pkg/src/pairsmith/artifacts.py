"""Run-directory persistence and bit-exact replay.

Layout written by ``write_run_dir``:

    config.json              exact experiment config (reloadable, strict keys)
    curves.csv               canonical learning-curve table
    checkpoints/             ranker0, per-batch control states, final ranker
    pairs/                   one PNG per synthetic image + one sidecar per pair
    log.jsonl                event stream (timings and traces live here, so
                             curves.csv and checkpoints stay bitwise stable)

Synthetic pairs archive the codes that generated them; ``replay_pair``
re-renders from the sidecar and byte-compares against the archived PNGs.
"""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .loop import ActiveExperiment, ExperimentConfig, config_from_dict, emit_curves
from .world import WorldConfig

__all__ = [
    "quantize",
    "png_bytes",
    "write_run_dir",
    "load_run_config",
    "list_pair_ids",
    "load_sidecar",
    "replay_pair",
    "write_world_dir",
    "write_trace_strips",
]


def quantize(pixels) -> np.ndarray:
    """[0,1] floats to the 8-bit grayscale actually archived and served."""
    p = np.asarray(pixels, dtype=np.float64)
    return np.clip(np.rint(p * 255.0), 0, 255).astype(np.uint8)


def png_bytes(pixels) -> bytes:
    """Encode one image as PNG. Same pixels in, same bytes out."""
    q = quantize(pixels)
    if q.ndim != 2:
        raise ValueError(f"expected a 2-d image, got shape {q.shape}")
    buf = io.BytesIO()
    Image.fromarray(q, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def pair_slug(first_id: str, second_id: str) -> str:
    return f"{first_id}__{second_id}"


def _codes_for(exp: ActiveExperiment, image_id: str):
    """(y, z, pixels) for any image the experiment knows, codes None if the
    image was made by pixel-space transforms rather than the generator."""
    rec = exp.synth_images.get(image_id)
    if rec is not None:
        y = None if rec.y is None else rec.y.tolist()
        z = None if rec.z is None else rec.z.tolist()
        return y, z, rec.pixels
    for im in exp.pool:
        if im.id == image_id:
            return im.true_y.tolist(), im.true_z.tolist(), im.pixels
    raise KeyError(f"unknown image id {image_id!r}")


def write_run_dir(exp: ActiveExperiment, out_dir) -> Path:
    """Persist a finished (or partial) experiment; returns the directory."""
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    (out / "pairs").mkdir(exist_ok=True)

    (out / "config.json").write_text(
        json.dumps(exp.record.config, indent=2, sort_keys=True) + "\n")
    (out / "curves.csv").write_text(emit_curves([exp.record]))

    ck = out / "checkpoints"
    (ck / "ranker0.json").write_text(
        json.dumps(exp.record.ranker0_checkpoint, sort_keys=True))
    for i, blob in enumerate(exp.record.control_checkpoints, start=1):
        (ck / f"control_batch{i:02d}.json").write_text(json.dumps(blob, sort_keys=True))
    if getattr(exp, "last_ranker", None) is not None:
        (ck / "ranker_final.json").write_text(
            json.dumps(exp.last_ranker.to_checkpoint(), sort_keys=True))

    side = exp.config.world.image_side
    written_pngs: set[str] = set()
    for pair in exp.synth_pairs:
        sides = {}
        for key, image_id in (("first", pair.first_id), ("second", pair.second_id)):
            y, z, pixels = _codes_for(exp, image_id)
            png_name = f"{image_id}.png"
            if png_name not in written_pngs:
                (out / "pairs" / png_name).write_bytes(
                    png_bytes(np.asarray(pixels).reshape(side, side)))
                written_pngs.add(png_name)
            sides[key] = {"id": image_id, "y": y, "z": z, "png": png_name}
        sidecar = {
            "pair_id": pair_slug(pair.first_id, pair.second_id),
            "attribute": pair.attribute,
            "label": pair.label,
            "provenance": pair.provenance,
            "first": sides["first"],
            "second": sides["second"],
        }
        (out / "pairs" / f"{sidecar['pair_id']}.json").write_text(
            json.dumps(sidecar, sort_keys=True))

    with (out / "log.jsonl").open("w") as fh:
        for event in exp.record.events:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
    return out


def load_run_config(run_dir) -> ExperimentConfig:
    blob = json.loads((Path(run_dir) / "config.json").read_text())
    return config_from_dict(ExperimentConfig, blob)


def list_pair_ids(run_dir) -> list[str]:
    pairs = Path(run_dir) / "pairs"
    return sorted(p.stem for p in pairs.glob("*.json"))


def load_sidecar(run_dir, pair_id: str) -> dict:
    path = Path(run_dir) / "pairs" / f"{pair_id}.json"
    if not path.exists():
        raise FileNotFoundError(f"no archived pair {pair_id!r} under {run_dir}")
    return json.loads(path.read_text())


def replay_pair(run_dir, pair_id: str, generator=None) -> dict:
    """Re-render an archived pair from its stored codes and byte-compare.

    Returns per-side match flags; a False means the archive was tampered with
    or the render path drifted, either of which is worth an alarm.
    """
    run_dir = Path(run_dir)
    sidecar = load_sidecar(run_dir, pair_id)
    if generator is None:
        generator = load_run_config(run_dir).world.make_generator()
    result = {"pair_id": pair_id, "sides": {}, "match": True}
    for key in ("first", "second"):
        side = sidecar[key]
        if side["y"] is None or side["z"] is None:
            raise ValueError(
                f"pair {pair_id!r} side {key} carries no codes (provenance "
                f"{sidecar['provenance']!r}); only generator-made images replay")
        fresh = png_bytes(generator.render(np.array(side["y"]), np.array(side["z"])))
        archived = (run_dir / "pairs" / side["png"]).read_bytes()
        ok = fresh == archived
        result["sides"][key] = {"id": side["id"], "match": ok, "png": side["png"]}
        result["match"] = result["match"] and ok
    return result


def write_world_dir(config: WorldConfig, seed: int, out_dir) -> Path:
    """Render a pool to disk: PNGs plus a codes manifest, for inspection."""
    from .world import sample_pool

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    pool = sample_pool(config, seed)
    manifest = []
    for im in pool:
        (out / "images" / f"{im.id}.png").write_bytes(png_bytes(im.pixels))
        manifest.append({"id": im.id, "y": im.true_y.tolist(), "z": im.true_z.tolist()})
    from .loop import config_to_dict

    (out / "world.json").write_text(json.dumps(
        {"seed": seed, "config": config_to_dict(config), "images": manifest},
        indent=2, sort_keys=True) + "\n")
    return out


def write_trace_strips(run_dir, out_dir=None, batch: int | None = None) -> list[Path]:
    """Render each batch's probe-code trajectory as one horizontal strip per
    branch: epoch by epoch, what the controller learned to ask for."""
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run_dir / "traces"
    out.mkdir(parents=True, exist_ok=True)
    cfg = load_run_config(run_dir)
    gen = cfg.world.make_generator()

    phases = []
    with (run_dir / "log.jsonl").open() as fh:
        for line in fh:
            event = json.loads(line)
            if event.get("event") == "adversarial_phase" and "probe_trajectory" in event:
                phases.append(event)
    if not phases:
        raise FileNotFoundError(f"no adversarial-phase traces in {run_dir}/log.jsonl")

    written = []
    for event in phases:
        b = event["batch"]
        if batch is not None and b != batch:
            continue
        traj = event["probe_trajectory"]
        for branch in ("a", "b"):
            cols = [quantize(gen.render(np.array(step[f"y_{branch}"]),
                                        np.array(step[f"z_{branch}"])))
                    for step in traj]
            strip = np.concatenate(cols, axis=1)
            path = out / f"trace_batch{b:02d}_{branch}.png"
            buf = io.BytesIO()
            Image.fromarray(strip, mode="L").save(buf, format="PNG")
            path.write_bytes(buf.getvalue())
            written.append(path)
    if batch is not None and not written:
        raise FileNotFoundError(f"no trace recorded for batch {batch}")
    return written
