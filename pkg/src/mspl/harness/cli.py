"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import numpy as np

from ..amr_data import load_paired_dataset
from ..cluster_metrics import classical_mds, evaluate_partition, non_singleton_mask
from ..clustering import agglomerate_complete, cut_by_count, cut_by_threshold, euclidean_matrix
from ..dataset import (
    align,
    load_dataset_dir,
    read_clusters_csv,
    read_dissim_csv,
    read_embeddings_csv,
    write_clusters_csv,
    write_dataset,
)
from ..errors import DataError, MSPLError
from ..models.network import STRUCT_KINDS, VARIANTS
from ..synth_ts import TRIANGLE_FORMS, SynthConfig, build_dataset
from .config import GT_SOURCES, SCHEMES, ExperimentConfig
from .experiment import ground_truth, plan_jobs, run_experiment, run_fold, tune_threshold, write_mds_csv
from .report import emit_report

log = logging.getLogger("mspl")


def _echo_json(payload) -> None:
    click.echo(json.dumps(payload, indent=2, sort_keys=True))


def experiment_options(f):
    """Flags shared by ``train`` and ``crossval``; each overrides its config field."""
    opts = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="JSON config file."),
        click.option("--data", type=click.Path(exists=True, file_okay=False), help="Dataset directory."),
        click.option("--epochs", type=int),
        click.option("--batch-size", type=int),
        click.option("--lr", type=float),
        click.option("--k-folds", type=int),
        click.option("--n-trials", type=int),
        click.option("--seed", type=int),
        click.option("--scheme", "schemes", type=click.Choice(SCHEMES), multiple=True),
        click.option("--threshold-upper-bound", type=float),
        click.option("--gt-source", type=click.Choice(GT_SOURCES)),
        click.option("--gt-threshold", type=float),
        click.option("--lambda-pretext", type=float),
        click.option("--lambda-struct", type=float),
        click.option("--struct-loss", type=click.Choice(STRUCT_KINDS)),
        click.option("--snp-threshold", type=float),
        click.option("--jobs", type=int),
        click.option("--no-mds", is_flag=True, default=None),
        click.option("--no-checkpoints", is_flag=True, default=None),
    ]
    for opt in reversed(opts):
        f = opt(f)
    return f


def build_config(config_path, variants, out, **flags) -> ExperimentConfig:
    model_keys = ("lambda_pretext", "lambda_struct", "struct_loss", "snp_threshold")
    model_overrides = {k: flags.pop(k) for k in model_keys if flags.get(k) is not None}
    for k in model_keys:
        flags.pop(k, None)
    no_mds, no_ckpt = flags.pop("no_mds"), flags.pop("no_checkpoints")
    overrides = {k: v for k, v in flags.items() if v is not None and v != ()}
    if "schemes" in overrides:
        overrides["schemes"] = list(overrides["schemes"])
    if variants:
        overrides["variants"] = list(variants)
    if out:
        overrides["out"] = out
    if no_mds:
        overrides["mds"] = False
    if no_ckpt:
        overrides["save_checkpoints"] = False
    base = json.loads(Path(config_path).read_text()) if config_path else {}
    base.update(overrides)
    if model_overrides:
        base["model"] = {**base.get("model", {}), **model_overrides}
    try:
        cfg = ExperimentConfig.from_dict(base)
    except (TypeError, ValueError) as err:
        raise click.UsageError(f"invalid configuration: {err}") from None
    if not cfg.data:
        raise click.UsageError("no dataset given (use --data or the config's 'data' field)")
    return cfg


@click.group()
@click.option("-v", "--verbose", count=True, help="Repeat for more detail.")
def cli(verbose: int) -> None:
    """Structure-preserving representation learning experiments."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


@cli.command()
@click.option("--m", type=int, default=5, show_default=True, help="Grid side (m*m Gaussian cells).")
@click.option("--n", type=int, default=80, show_default=True, help="Series per wave type per cell.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--mu0", type=float, default=0.2, show_default=True)
@click.option("--sigma-f", type=float, default=0.4, show_default=True)
@click.option("--sigma-k", type=float, default=0.5, show_default=True)
@click.option("--sigma-n", type=float, default=0.02, show_default=True)
@click.option("--triangle", type=click.Choice(TRIANGLE_FORMS), default="printed", show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
def synth(m, n, seed, mu0, sigma_f, sigma_k, sigma_n, triangle, out):
    """Generate a Synth-TS dataset directory."""
    try:
        config = SynthConfig(m=m, n=n, seed=seed, mu0=mu0, sigma_f=sigma_f, sigma_k=sigma_k,
                             sigma_n=sigma_n, triangle=triangle)
    except ValueError as err:
        raise click.UsageError(str(err)) from None
    ds = build_dataset(config)
    write_dataset(ds, out)
    click.echo(f"wrote {len(ds)} series to {out}")


@cli.command()
@click.option("--features", required=True, type=click.Path(dir_okay=False), help="id,species,f0,... CSV.")
@click.option("--structure", required=True, type=click.Path(dir_okay=False),
              help="Dissimilarity matrix CSV or AMR profile CSV.")
@click.option("--kind", type=click.Choice(["auto", "dissim", "amr"]), default="auto", show_default=True)
@click.option("--clusters", type=click.Path(dir_okay=False), help="Optional id,cluster_id ground truth.")
@click.option("--gt-threshold", type=float, help="Derive ground truth by complete linkage at this height.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
def ingest(features, structure, kind, clusters, gt_threshold, out):
    """Validate paired data and write a dataset directory."""
    ds = load_paired_dataset(
        features, structure, clusters, structure=None if kind == "auto" else kind, gt_threshold=gt_threshold
    )
    write_dataset(ds, out)
    n_gt = "none" if ds.gt is None else str(len(np.unique(ds.gt)))
    click.echo(f"ingested {len(ds)} samples ({ds.kind}, {ds.x.shape[1]} features, gt clusters: {n_gt}) into {out}")


@cli.command()
@experiment_options
@click.option("--variant", type=click.Choice(VARIANTS), default="mspl", show_default=True)
@click.option("--trial", type=int, default=0, show_default=True)
@click.option("--fold", type=int, default=0, show_default=True, help="Validation fold index.")
@click.option("--out", type=click.Path(file_okay=False))
def train(config_path, variant, trial, fold, out, **flags):
    """Train one variant on one split and evaluate it on the held-out fold."""
    cfg = build_config(config_path, [variant], out, **flags)
    ds = load_dataset_dir(cfg.data)
    cfg = cfg.resolved(ds.kind)
    if not 0 <= trial < cfg.n_trials or not 0 <= fold < cfg.k_folds:
        raise click.UsageError(f"trial must be < {cfg.n_trials} and fold < {cfg.k_folds}")
    job = next(j for j in plan_jobs(cfg, len(ds)) if j.trial == trial and j.fold == fold)
    result = run_fold(cfg, ds, ground_truth(cfg, ds), job, Path(cfg.out))
    _echo_json({"pretext_accuracy": result.pretext_accuracy, "metrics": result.metrics,
                "threshold": result.threshold})


@cli.command()
@experiment_options
@click.option("--variant", "variants", type=click.Choice(VARIANTS), multiple=True,
              help="Repeat to select several; default all.")
@click.option("--out", type=click.Path(file_okay=False))
def crossval(config_path, variants, out, **flags):
    """Run the full repeated k-fold protocol and emit the reports."""
    cfg = build_config(config_path, variants, out, **flags)
    ds = load_dataset_dir(cfg.data)
    result = run_experiment(cfg, ds, cfg.out)
    for err in result.errors:
        click.echo(f"trial {err['trial']} fold {err['fold']} {err['variant']} failed: {err['message']}", err=True)
    click.echo((Path(cfg.out) / "table1.csv").read_text(), nl=False)
    if result.errors and not result.folds:
        sys.exit(max(e["exit_code"] for e in result.errors))


def _gt_for(data: str, ids: list[str], gt_path: str | None) -> np.ndarray:
    if gt_path:
        g_ids, labels = read_clusters_csv(gt_path)
        return labels[align(ids, g_ids, Path(gt_path).name, subset=True)]
    ds = load_dataset_dir(data)
    if ds.gt is None:
        raise click.UsageError("the dataset has no ground-truth clusters; pass --gt")
    return ds.gt[align(ids, ds.ids, "dataset", subset=True)]


@cli.command("tune-threshold")
@click.option("--embeddings", required=True, type=click.Path(exists=True, dir_okay=False),
              help="Training-fold embeddings (id,h0,...).")
@click.option("--data", type=click.Path(exists=True, file_okay=False), help="Dataset holding the ground truth.")
@click.option("--gt", "gt_path", type=click.Path(exists=True, dir_okay=False), help="id,cluster_id CSV.")
@click.option("--upper-bound", type=float, required=True)
def tune_threshold_cmd(embeddings, data, gt_path, upper_bound):
    """Pick the cut height maximizing cluster F1 on training embeddings."""
    if not data and not gt_path:
        raise click.UsageError("pass --data or --gt")
    if upper_bound <= 0:
        raise click.UsageError("--upper-bound must be positive")
    ids, h = read_embeddings_csv(embeddings)
    res = tune_threshold(h, _gt_for(data, ids, gt_path), upper_bound)
    _echo_json({"threshold": res.threshold, "f1": res.f1, "n_candidates": res.n_candidates,
                "input_sha256": res.input_hash})


@cli.command()
@click.option("--clusters", type=click.Path(exists=True, dir_okay=False), help="Predicted id,cluster_id CSV.")
@click.option("--embeddings", type=click.Path(exists=True, dir_okay=False), help="Embeddings to cluster.")
@click.option("--threshold", type=float, help="Cut height for --embeddings.")
@click.option("--n-clusters", type=int, help="Cluster count for --embeddings (default: gt count).")
@click.option("--data", type=click.Path(exists=True, file_okay=False))
@click.option("--gt", "gt_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), help="Write predicted clusters here.")
def evaluate(clusters, embeddings, threshold, n_clusters, data, gt_path, out):
    """Score a flat clustering against the ground truth."""
    if bool(clusters) == bool(embeddings):
        raise click.UsageError("pass exactly one of --clusters or --embeddings")
    if not data and not gt_path:
        raise click.UsageError("pass --data or --gt")
    if clusters:
        ids, pred = read_clusters_csv(clusters)
        gt = _gt_for(data, ids, gt_path)
    else:
        if threshold is not None and n_clusters is not None:
            raise click.UsageError("--threshold and --n-clusters are exclusive")
        ids, h = read_embeddings_csv(embeddings)
        gt = _gt_for(data, ids, gt_path)
        # cluster only the samples that enter the metrics
        keep = non_singleton_mask(gt)
        ids, h, gt = [i for i, k in zip(ids, keep) if k], h[keep], gt[keep]
        if not ids:
            raise DataError("no sample belongs to a ground-truth cluster with two or more members")
        dendro = agglomerate_complete(euclidean_matrix(h))
        if threshold is not None:
            if threshold <= 0:
                raise click.UsageError("--threshold must be positive")
            pred = cut_by_threshold(dendro, threshold)
        else:
            q = n_clusters if n_clusters is not None else len(np.unique(gt))
            if not 1 <= q <= len(ids):
                raise click.UsageError(f"--n-clusters must lie in [1, {len(ids)}]")
            pred = cut_by_count(dendro, q)
    if out:
        write_clusters_csv(out, ids, pred)
    _echo_json(evaluate_partition(pred, gt).as_dict())


@cli.command()
@click.option("--dissim", type=click.Path(exists=True, dir_okay=False), help="Dissimilarity matrix CSV.")
@click.option("--embeddings", type=click.Path(exists=True, dir_okay=False), help="Embeddings (Euclidean).")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def mds(dissim, embeddings, out):
    """Project a dissimilarity matrix or embeddings to 2-D."""
    if bool(dissim) == bool(embeddings):
        raise click.UsageError("pass exactly one of --dissim or --embeddings")
    if dissim:
        ids, mat = read_dissim_csv(dissim)
    else:
        ids, h = read_embeddings_csv(embeddings)
        mat = euclidean_matrix(h)
    write_mds_csv(out, ids, classical_mds(mat))
    click.echo(f"wrote {len(ids)} points to {out}")


@cli.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
def report(run_dir):
    """Regenerate table1.csv, lift.csv, mds.csv and aggregate.json for a run."""
    emit_report(run_dir)
    click.echo((Path(run_dir) / "table1.csv").read_text(), nl=False)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="mspl", standalone_mode=False)
    except click.exceptions.Exit as ex:
        return ex.exit_code
    except click.ClickException as err:
        err.show()
        return 1
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except MSPLError as err:
        click.echo(f"error: {err}", err=True)
        return err.exit_code
    except ValueError as err:
        click.echo(f"usage error: {err}", err=True)
        return 1
    except SystemExit as ex:
        return ex.code if isinstance(ex.code, int) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
