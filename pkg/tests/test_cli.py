"""CLI behavior: exit codes, overrides, determinism, replay plumbing."""

import json

import pytest
from click.testing import CliRunner

from pairsmith.cli import apply_overrides, main, parse_override, summarize
from pairsmith.loop import ExperimentConfig, config_to_dict
from pairsmith.world import WorldConfig


def small_blob():
    cfg = ExperimentConfig(world=WorldConfig(image_side=16, pool_size=120),
                           batches=1, batch_budget=10,
                           n_real_pairs=50, n_test_pairs=60, seed=7)
    blob = config_to_dict(cfg)
    blob["ranker"]["pretrain_epochs"] = 30
    blob["ranker"]["retrain_epochs"] = 15
    blob["control"]["epochs"] = 5
    return blob


@pytest.fixture()
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(small_blob()))
    return path


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args])


# ---------------------------------------------------------------------------
# override parsing


def test_parse_override_types():
    assert parse_override("seed=3") == (["seed"], 3)
    assert parse_override("strategy=real") == (["strategy"], "real")
    assert parse_override("ranker.lr=0.25") == (["ranker", "lr"], 0.25)
    assert parse_override("control.use_hinge=false") == (["control", "use_hinge"], False)
    with pytest.raises(ValueError, match="dotted.key=value"):
        parse_override("no_equals_sign")


def test_apply_overrides_navigates_sections():
    blob = small_blob()
    apply_overrides(blob, ["world.image_side=8", "batches=2"])
    assert blob["world"]["image_side"] == 8
    assert blob["batches"] == 2
    with pytest.raises(ValueError, match="not a config section"):
        apply_overrides(blob, ["seed.nested=1"])


# ---------------------------------------------------------------------------
# run verb


def test_run_requires_config(tmp_path):
    result = invoke("run", "--out", tmp_path / "r")
    assert result.exit_code == 2
    assert "Usage" in result.output or "usage" in result.output


def test_run_missing_config_file_is_io_error(tmp_path):
    result = invoke("run", "--config", tmp_path / "ghost.json", "--out", tmp_path / "r")
    assert result.exit_code == 4


def test_run_unknown_override_is_validation_error(config_file, tmp_path):
    result = invoke("run", "--config", config_file, "--set", "bogus=1",
                    "--out", tmp_path / "r")
    assert result.exit_code == 2
    assert "bogus" in result.output


def test_run_writes_run_dir_and_is_deterministic(config_file, tmp_path):
    r1 = invoke("run", "--config", config_file, "--set", "strategy=real",
                "--out", tmp_path / "a")
    assert r1.exit_code == 0, r1.output
    r2 = invoke("run", "--config", config_file, "--set", "strategy=real",
                "--out", tmp_path / "b")
    assert r2.exit_code == 0
    a = (tmp_path / "a" / "curves.csv").read_bytes()
    b = (tmp_path / "b" / "curves.csv").read_bytes()
    assert a == b
    rows = a.decode().strip().split("\n")
    assert len(rows) == 1 + 2  # header + batch 0 + batch 1
    assert rows[1].startswith("real,")


def test_run_seed_flag_overrides_config(config_file, tmp_path):
    r = invoke("run", "--config", config_file, "--seed", "99",
               "--set", "strategy=real", "--out", tmp_path / "r")
    assert r.exit_code == 0
    csv = (tmp_path / "r" / "curves.csv").read_text()
    assert csv.strip().split("\n")[1].endswith(",99")


# ---------------------------------------------------------------------------
# sweep and curves verbs


def test_sweep_combines_cells(config_file, tmp_path):
    r = invoke("sweep", "--config", config_file, "--strategies", "real",
               "--seeds", "3,4", "--out", tmp_path / "sw")
    assert r.exit_code == 0, r.output
    combined = (tmp_path / "sw" / "curves.csv").read_text().strip().split("\n")
    assert len(combined) == 1 + 2 * 2
    summary = (tmp_path / "sw" / "summary.csv").read_text().strip().split("\n")
    assert summary[0] == "strategy,batch,mean_gain,n_runs"
    assert all(line.startswith("real,") for line in summary[1:])
    assert not (tmp_path / "sw" / "failures.jsonl").exists()


def test_sweep_records_partial_failures(config_file, tmp_path):
    r = invoke("sweep", "--config", config_file, "--strategies", "real",
               "--seeds", "3", "--set", "n_real_pairs=100000",
               "--out", tmp_path / "sw")
    # the lone cell fails (pool too small), so the sweep itself errors
    assert r.exit_code == 3
    failures = (tmp_path / "sw" / "failures.jsonl").read_text().strip().split("\n")
    assert len(failures) == 1
    assert "real_s0003" in failures[0]


def test_summarize_is_exact_mean():
    class R:
        def __init__(self, rows):
            self.rows = rows

    recs = [R([{"strategy": "x", "batch": 1, "gain_vs_real": 0.1}]),
            R([{"strategy": "x", "batch": 1, "gain_vs_real": 0.3}])]
    text = summarize(recs)
    mean = float(text.strip().split("\n")[1].split(",")[2])
    assert mean == (0.1 + 0.3) / 2


def test_curves_verb_combines(config_file, tmp_path):
    for name, seed in (("a", 1), ("b", 2)):
        r = invoke("run", "--config", config_file, "--set", "strategy=real",
                   "--seed", seed, "--out", tmp_path / name)
        assert r.exit_code == 0
    r = invoke("curves", tmp_path / "a", tmp_path / "b")
    assert r.exit_code == 0
    lines = r.output.strip().split("\n")
    assert lines[0].startswith("strategy,")
    assert len(lines) == 1 + 2 + 2


# ---------------------------------------------------------------------------
# world and replay verbs


def test_world_verb(tmp_path):
    r = invoke("world", "--seed", "5", "--out", tmp_path / "w",
               "--set", "world.image_side=16", "--set", "world.pool_size=6")
    assert r.exit_code == 0, r.output
    assert len(list((tmp_path / "w" / "images").glob("*.png"))) == 6


def test_replay_verb_roundtrip(config_file, tmp_path):
    r = invoke("run", "--config", config_file, "--out", tmp_path / "r")
    assert r.exit_code == 0, r.output
    pair_files = sorted((tmp_path / "r" / "pairs").glob("*.json"))
    assert pair_files
    pair_id = pair_files[0].stem
    rep = invoke("replay", tmp_path / "r", pair_id)
    assert rep.exit_code == 0, rep.output
    assert "byte-identical replay" in rep.output


def test_replay_unknown_pair(config_file, tmp_path):
    r = invoke("run", "--config", config_file, "--set", "strategy=real",
               "--out", tmp_path / "r")
    assert r.exit_code == 0
    rep = invoke("replay", tmp_path / "r", "missing-pair")
    assert rep.exit_code == 4


def test_replay_tampered_png_is_runtime_error(config_file, tmp_path):
    r = invoke("run", "--config", config_file, "--out", tmp_path / "r")
    assert r.exit_code == 0, r.output
    sidecar_path = sorted((tmp_path / "r" / "pairs").glob("*.json"))[0]
    sidecar = json.loads(sidecar_path.read_text())
    png = tmp_path / "r" / "pairs" / sidecar["first"]["png"]
    png.write_bytes(png.read_bytes() + b"\x00")
    rep = invoke("replay", tmp_path / "r", sidecar_path.stem)
    assert rep.exit_code == 3
    assert "MISMATCH" in rep.output


def test_replay_trace_strips(config_file, tmp_path):
    r = invoke("run", "--config", config_file, "--out", tmp_path / "r")
    assert r.exit_code == 0, r.output
    rep = invoke("replay", tmp_path / "r", "--trace", "--out", tmp_path / "strips")
    assert rep.exit_code == 0, rep.output
    assert len(list((tmp_path / "strips").glob("*.png"))) == 2  # one batch, two branches
