"""Command-line entry point.

Thin orchestration only: every verb parses arguments, calls into the library,
and maps failures onto stable exit codes (0 ok, 2 validation, 3 runtime,
4 I/O) so sweeps and scripts can branch on what went wrong.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import artifacts
from .autograd import DomainError, ShapeError
from .loop import (
    ActiveExperiment,
    ExperimentConfig,
    config_from_dict,
    config_to_dict,
    emit_curves,
    CURVE_COLUMNS,
)

EXIT_VALIDATION = 2
EXIT_RUNTIME = 3
EXIT_IO = 4


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guard(fn, *args, **kwargs):
    """Run a verb body, translating exception class into exit code."""
    try:
        return fn(*args, **kwargs)
    except (ValueError, ShapeError, DomainError, TypeError) as e:
        _fail(EXIT_VALIDATION, str(e))
    except (FileNotFoundError, IsADirectoryError, PermissionError,
            json.JSONDecodeError, OSError) as e:
        _fail(EXIT_IO, str(e))
    except RuntimeError as e:
        _fail(EXIT_RUNTIME, str(e))


def parse_override(text: str) -> tuple[list, object]:
    if "=" not in text:
        raise ValueError(f"override {text!r} must look like dotted.key=value")
    key, raw = text.split("=", 1)
    path = [p for p in key.strip().split(".") if p]
    if not path:
        raise ValueError(f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw  # bare strings allowed: strategy=real
    return path, value


def apply_overrides(blob: dict, overrides) -> dict:
    for text in overrides:
        path, value = parse_override(text)
        node = blob
        for part in path[:-1]:
            if not isinstance(node.get(part), dict):
                raise ValueError(f"override {text!r}: {part!r} is not a config section")
            node = node[part]
        node[path[-1]] = value
    return blob


def load_config(config_path, overrides=(), seed=None) -> ExperimentConfig:
    """File -> overrides -> strict schema. Any unknown key dies here."""
    if config_path is None:
        blob = config_to_dict(ExperimentConfig())
    else:
        blob = json.loads(Path(config_path).read_text())
    apply_overrides(blob, overrides)
    if seed is not None:
        blob["seed"] = seed
    return config_from_dict(ExperimentConfig, blob)


@click.group()
@click.version_option(package_name="pairsmith")
def main():
    """Adversarial pair-synthesis lab: worlds, experiments, serving, replay."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="Experiment config JSON; world section is used.")
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
def world(config_path, overrides, seed, out_dir):
    """Render a sample pool to PNGs plus a codes manifest."""

    def body():
        cfg = load_config(config_path, overrides)
        out = artifacts.write_world_dir(cfg.world, seed, out_dir)
        click.echo(f"world written to {out} ({cfg.world.pool_size} images)")

    _guard(body)


@main.command()
@click.option("--config", "config_path", type=click.Path(), required=True)
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE")
@click.option("--seed", type=int, default=None, help="Override the config seed.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
def run(config_path, overrides, seed, out_dir):
    """Run one experiment and write its run directory."""

    def body():
        if not Path(config_path).exists():
            raise FileNotFoundError(f"config file {config_path!r} not found")
        cfg = load_config(config_path, overrides, seed)
        exp = ActiveExperiment(cfg)
        exp.run()
        out = artifacts.write_run_dir(exp, out_dir)
        final = exp.record.rows[-1]
        click.echo(f"run written to {out}")
        click.echo(f"strategy={final['strategy']} attribute={final['attribute']} "
                   f"accuracy={final['accuracy']:.4f} gain={final['gain_vs_real']:+.4f}")

    _guard(body)


@main.command()
@click.option("--config", "config_path", type=click.Path(), required=True)
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE")
@click.option("--strategies", default="real,adversarial", show_default=True,
              help="Comma-separated strategy list.")
@click.option("--seeds", default="0", show_default=True,
              help="Comma-separated seed list.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
def sweep(config_path, overrides, strategies, seeds, out_dir):
    """Cross product of strategies and seeds; combined CSV plus gain summary.

    A failing cell is recorded in failures.jsonl and the sweep moves on.
    """

    def body():
        if not Path(config_path).exists():
            raise FileNotFoundError(f"config file {config_path!r} not found")
        strategy_list = [s.strip() for s in strategies.split(",") if s.strip()]
        seed_list = [int(s) for s in seeds.split(",") if s.strip()]
        if not strategy_list or not seed_list:
            raise ValueError("sweep needs at least one strategy and one seed")
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        base = json.loads(Path(config_path).read_text())
        apply_overrides(base, overrides)
        records = []
        failures = []
        for strat in strategy_list:
            for sd in seed_list:
                cell = f"{strat}_s{sd:04d}"
                try:
                    blob = json.loads(json.dumps(base))
                    blob["strategy"] = strat
                    blob["seed"] = sd
                    cfg = config_from_dict(ExperimentConfig, blob)
                    exp = ActiveExperiment(cfg)
                    exp.run()
                    artifacts.write_run_dir(exp, out / cell)
                    records.append(exp.record)
                    click.echo(f"[{cell}] gain={exp.record.rows[-1]['gain_vs_real']:+.4f}")
                except Exception as e:  # noqa: BLE001 - cell isolation is the point
                    failures.append({"cell": cell, "error": f"{type(e).__name__}: {e}"})
                    click.echo(f"[{cell}] FAILED: {e}", err=True)
        if failures:
            with (out / "failures.jsonl").open("w") as fh:
                for f in failures:
                    fh.write(json.dumps(f) + "\n")
        if not records:
            raise RuntimeError("every sweep cell failed")
        (out / "curves.csv").write_text(emit_curves(records))
        (out / "summary.csv").write_text(summarize(records))
        click.echo(f"sweep written to {out} "
                   f"({len(records)} cells ok, {len(failures)} failed)")

    _guard(body)


def summarize(records) -> str:
    """Mean gain over seeds, per strategy and batch."""
    cells: dict[tuple, list] = {}
    for rec in records:
        for row in rec.rows:
            cells.setdefault((row["strategy"], row["batch"]), []).append(
                row["gain_vs_real"])
    lines = ["strategy,batch,mean_gain,n_runs"]
    for (strat, batch), gains in sorted(cells.items()):
        lines.append(f"{strat},{batch},{sum(gains) / len(gains)!r},{len(gains)}")
    return "\n".join(lines) + "\n"


@main.command()
@click.argument("run_dirs", nargs=-1, required=True,
                type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Write combined CSV here instead of stdout.")
def curves(run_dirs, out_path):
    """Combine curves.csv from one or more run directories."""

    def body():
        lines = [",".join(CURVE_COLUMNS)]
        for d in run_dirs:
            text = (Path(d) / "curves.csv").read_text().strip().split("\n")
            if text[0] != lines[0]:
                raise ValueError(f"{d}/curves.csv has an unexpected header")
            lines.extend(text[1:])
        combined = "\n".join(lines) + "\n"
        if out_path is None:
            click.echo(combined, nl=False)
        else:
            Path(out_path).write_text(combined)
            click.echo(f"curves written to {out_path}")

    _guard(body)


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("pair_id", required=False)
@click.option("--trace", is_flag=True,
              help="Render per-epoch progression strips instead of one pair.")
@click.option("--out", "out_dir", type=click.Path(), default=None)
def replay(run_dir, pair_id, trace, out_dir):
    """Re-render archived pairs from stored codes and verify byte equality."""

    def body():
        if trace:
            paths = artifacts.write_trace_strips(run_dir, out_dir)
            for p in paths:
                click.echo(str(p))
            return
        if pair_id is None:
            raise ValueError("give a PAIR_ID, or --trace for progression strips")
        result = artifacts.replay_pair(run_dir, pair_id)
        for key in ("first", "second"):
            side = result["sides"][key]
            status = "ok" if side["match"] else "MISMATCH"
            click.echo(f"{key}: {side['id']} -> {side['png']} [{status}]")
        if not result["match"]:
            raise RuntimeError(f"replay mismatch for {pair_id}")
        click.echo("byte-identical replay")

    _guard(body)


@main.command()
@click.option("--port", type=int, default=8777, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--data-dir", type=click.Path(), required=True,
              help="Event log and served artifacts live here.")
@click.option("--mode", type=click.Choice(["live", "oracle"]), default="oracle",
              show_default=True)
def serve(port, host, data_dir, mode):
    """Serve the annotation API (and the UI's data) over HTTP."""

    def body():
        import uvicorn

        from .service import build_app

        app = build_app(data_dir=data_dir, mode=mode)
        uvicorn.run(app, host=host, port=port, log_level="info")

    _guard(body)


if __name__ == "__main__":
    main()
