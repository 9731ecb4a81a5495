"""Command line entry point: ``emodist <command>``."""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from .config import ConfigError, load_config
from .data import SynthConfig, generate_synthetic


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose):
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


@main.command("gen-data")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--n", default=2000, show_default=True)
@click.option("--q", default=4, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--noise-low", default=0.1, show_default=True)
@click.option("--noise-high", default=1.0, show_default=True)
@click.option("--dim", default=8, show_default=True, help="feature dimension of every modality")
@click.option("--seq-len", nargs=2, type=int, default=(5, 5), show_default=True,
              help="min and max frames per modality")
@click.option("--intensity", nargs=2, type=float, default=(0.5, 0.5), show_default=True,
              help="range of the per-label intensity of an active label")
def gen_data(out_dir, n, q, seed, noise_low, noise_high, dim, seq_len, intensity):
    """Write a synthetic dataset with planted label directions and noise levels."""
    try:
        cfg = SynthConfig(n=n, q=q, seed=seed, noise_low=noise_low, noise_high=noise_high,
                          dims={m: dim for m in "vat"},
                          seq_lens={m: tuple(seq_len) for m in "vat"},
                          intensity_range=tuple(intensity))
        store = generate_synthetic(cfg, out_dir)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    sizes = {k: len(v) for k, v in store.manifest.splits.items()}
    click.echo(f"wrote {len(store)} samples to {out_dir} {sizes}")


@main.command("train")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--config", "config_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE",
              help="override a config key, e.g. --set loss.beta=0")
def train_cmd(data_dir, config_file, out_dir, overrides):
    """Train a model and write checkpoint.npz plus per-epoch history."""
    from .estimator import NonFiniteLossError
    from .training import train

    try:
        config = load_config(config_file, _parse_overrides(overrides))
    except ConfigError as exc:
        raise click.UsageError(str(exc)) from exc
    try:
        ckpt, reports = train(config, data_dir, out_dir)
    except NonFiniteLossError as exc:
        click.echo(f"aborted: {exc}", err=True)
        sys.exit(2)
    click.echo(f"checkpoint: {ckpt}")
    best = [r for r in reports if "micro_f1" in r]
    if best:
        top = max(best, key=lambda r: r["micro_f1"])
        click.echo(f"best val miF1 {top['micro_f1']:.4f} at epoch {top['epoch']}")


def _parse_overrides(pairs):
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise click.UsageError(f"override {pair!r} is not KEY=VALUE")
        out[key.strip()] = value.strip()
    return out


@main.command("eval")
@click.option("--ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--split", default="test", show_default=True)
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False),
              help="dataset root; defaults to the one recorded in the checkpoint")
@click.option("--json-out", type=click.Path(dir_okay=False))
def eval_cmd(ckpt, split, data_dir, json_out):
    """Score a checkpoint on one split."""
    from .training import evaluate

    report = evaluate(ckpt, split, data_dir)
    click.echo(report.table())
    if json_out:
        Path(json_out).write_text(json.dumps(report.to_dict(), indent=2, default=_json_default))


@main.command("export-embeddings")
@click.option("--ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--split", default="test", show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False))
def export_cmd(ckpt, split, out_path, data_dir):
    """Dump positive distribution vectors as JSON lines for external plotting."""
    from .training import export_embeddings

    n = export_embeddings(ckpt, split, out_path, data_dir)
    click.echo(f"wrote {n} records to {out_path}")


@main.command("calib-report")
@click.option("--ckpt", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--split", default="test", show_default=True)
@click.option("--data", "data_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--json-out", type=click.Path(dir_okay=False))
def calib_cmd(ckpt, split, data_dir, json_out):
    """Per-sample |sigma|, d and r with their rank correlations."""
    from .training import calib_report

    rep = calib_report(ckpt, split, data_dir)
    click.echo(f"{'id':<10} {'|sigma|':>9} {'d':>7} {'r':>7} {'noise':>7}")
    for row in rep["rows"][:20]:
        r = "-" if row["r"] is None else f"{row['r']:.3f}"
        noise = f"{row['noise']:.3f}" if "noise" in row else "-"
        click.echo(f"{row['id']:<10} {row['sigma_norm']:>9.4f} {row['d']:>7.4f} {r:>7} {noise:>7}")
    if len(rep["rows"]) > 20:
        click.echo(f"... {len(rep['rows']) - 20} more rows")
    for k, v in rep["correlations"].items():
        click.echo(f"{k}: {v:.4f}")
    if json_out:
        Path(json_out).write_text(json.dumps(rep, indent=2, default=_json_default))


if __name__ == "__main__":
    main()
