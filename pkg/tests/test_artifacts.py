"""Run-directory round trips: what gets archived must replay bit-exactly."""

import json

import numpy as np
import pytest

from pairsmith.artifacts import (
    list_pair_ids,
    load_run_config,
    load_sidecar,
    png_bytes,
    quantize,
    replay_pair,
    write_run_dir,
    write_trace_strips,
    write_world_dir,
)
from pairsmith.loop import ActiveExperiment, ExperimentConfig, emit_curves
from pairsmith.world import WorldConfig


def tiny_config(**overrides):
    kwargs = dict(
        world=WorldConfig(image_side=16, pool_size=120),
        strategy="adversarial", mode="auto",
        batches=2, batch_budget=10, n_real_pairs=50, n_test_pairs=60, seed=7,
    )
    kwargs.update(overrides)
    cfg = ExperimentConfig(**kwargs)
    cfg.ranker.pretrain_epochs = 30
    cfg.ranker.retrain_epochs = 15
    cfg.control.epochs = 5
    return cfg


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    exp = ActiveExperiment(tiny_config())
    exp.run()
    out = tmp_path_factory.mktemp("run")
    write_run_dir(exp, out)
    return out, exp


def test_quantize_endpoints():
    assert quantize([[0.0, 1.0]]).tolist() == [[0, 255]]
    assert quantize([[0.5]]).tolist() == [[128]]  # rint half-to-even on 127.5
    assert quantize([[-0.2, 1.7]]).tolist() == [[0, 255]]


def test_png_bytes_deterministic_and_decodable():
    rng = np.random.default_rng(0)
    img = rng.random((16, 16))
    a = png_bytes(img)
    b = png_bytes(img.copy())
    assert a == b
    from PIL import Image
    import io
    back = np.asarray(Image.open(io.BytesIO(a)))
    assert np.array_equal(back, quantize(img))
    with pytest.raises(ValueError):
        png_bytes(img.reshape(-1))


def test_layout_complete(run_dir):
    out, exp = run_dir
    assert (out / "config.json").exists()
    assert (out / "curves.csv").exists()
    assert (out / "log.jsonl").exists()
    assert (out / "checkpoints" / "ranker0.json").exists()
    assert (out / "checkpoints" / "control_batch01.json").exists()
    assert (out / "checkpoints" / "control_batch02.json").exists()
    assert (out / "checkpoints" / "ranker_final.json").exists()
    # one sidecar per synthetic pair, one png per image
    assert len(list_pair_ids(out)) == len(exp.synth_pairs)
    pngs = list((out / "pairs").glob("*.png"))
    assert len(pngs) == len(exp.synth_images)


def test_curves_file_matches_emitter(run_dir):
    out, exp = run_dir
    assert (out / "curves.csv").read_text() == emit_curves([exp.record])


def test_config_reloads_exactly(run_dir):
    out, exp = run_dir
    cfg = load_run_config(out)
    assert cfg.seed == exp.config.seed
    assert cfg.world.image_side == exp.config.world.image_side
    assert np.array_equal(cfg.world.attr_cov, exp.config.world.attr_cov)


def test_config_file_rejects_tampered_keys(run_dir, tmp_path):
    out, _ = run_dir
    blob = json.loads((out / "config.json").read_text())
    blob["surprise"] = True
    bad = tmp_path / "bad_run"
    bad.mkdir()
    (bad / "config.json").write_text(json.dumps(blob))
    with pytest.raises(ValueError, match="surprise"):
        load_run_config(bad)


def test_every_archived_pair_replays_byte_identically(run_dir):
    out, exp = run_dir
    gen = exp.generator
    for pair_id in list_pair_ids(out):
        result = replay_pair(out, pair_id, generator=gen)
        assert result["match"], f"replay drifted for {pair_id}"


def test_tampered_png_detected(run_dir, tmp_path):
    out, _ = run_dir
    pair_id = list_pair_ids(out)[0]
    sidecar = load_sidecar(out, pair_id)
    png_path = out / "pairs" / sidecar["first"]["png"]
    original = png_path.read_bytes()
    try:
        png_path.write_bytes(original + b"\x00")
        result = replay_pair(out, pair_id)
        assert not result["match"]
        assert not result["sides"]["first"]["match"]
        assert result["sides"]["second"]["match"]
    finally:
        png_path.write_bytes(original)


def test_unknown_pair_id_raises(run_dir):
    out, _ = run_dir
    with pytest.raises(FileNotFoundError, match="nope"):
        replay_pair(out, "nope")


def test_sidecar_carries_full_codes(run_dir):
    out, exp = run_dir
    sidecar = load_sidecar(out, list_pair_ids(out)[0])
    for key in ("first", "second"):
        assert len(sidecar[key]["y"]) == exp.config.world.num_attributes
        assert len(sidecar[key]["z"]) == exp.config.world.latent_dim
    assert sidecar["provenance"] == "synthetic_auto"
    assert sidecar["label"] in (-1, 1)


def test_log_is_parseable_jsonl(run_dir):
    out, exp = run_dir
    lines = (out / "log.jsonl").read_text().strip().split("\n")
    events = [json.loads(line) for line in lines]
    assert len(events) == len(exp.record.events)
    kinds = {e["event"] for e in events}
    assert {"pretrained", "adversarial_phase", "batch_complete"} <= kinds


def test_trace_strips_render(run_dir, tmp_path):
    out, exp = run_dir
    paths = write_trace_strips(out, tmp_path / "strips")
    assert len(paths) == 2 * exp.config.batches  # both branches per batch
    from PIL import Image
    img = Image.open(paths[0])
    side = exp.config.world.image_side
    assert img.height == side
    assert img.width % side == 0 and img.width >= side
    with pytest.raises(FileNotFoundError):
        write_trace_strips(out, tmp_path / "s2", batch=99)


def test_world_dir_export(tmp_path):
    cfg = WorldConfig(image_side=16, pool_size=12)
    out = write_world_dir(cfg, seed=5, out_dir=tmp_path / "w")
    blob = json.loads((out / "world.json").read_text())
    assert len(blob["images"]) == 12
    pngs = list((out / "images").glob("*.png"))
    assert len(pngs) == 12
    # codes in the manifest re-render to the archived bytes
    gen = cfg.make_generator()
    first = blob["images"][0]
    assert png_bytes(gen.render(np.array(first["y"]), np.array(first["z"]))) == \
        (out / "images" / f"{first['id']}.png").read_bytes()


def test_rerun_writes_identical_artifacts(tmp_path):
    for d in ("a", "b"):
        exp = ActiveExperiment(tiny_config(batches=1, seed=31))
        exp.run()
        write_run_dir(exp, tmp_path / d)
    a, b = tmp_path / "a", tmp_path / "b"
    assert (a / "curves.csv").read_bytes() == (b / "curves.csv").read_bytes()
    for name in ("ranker0.json", "control_batch01.json", "ranker_final.json"):
        assert (a / "checkpoints" / name).read_bytes() == \
            (b / "checkpoints" / name).read_bytes()
    assert sorted(p.name for p in (a / "pairs").iterdir()) == \
        sorted(p.name for p in (b / "pairs").iterdir())
