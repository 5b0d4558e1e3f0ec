"""Cross-validated training and evaluation of MSPL and its baselines."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from ..amr_data import derive_gt_clusters
from ..cluster_metrics import (
    MetricReport,
    classical_mds,
    cluster_prf,
    evaluate_partition,
    non_singleton_mask,
    shannon_entropy,
)
from ..clustering import agglomerate_complete, cut_by_count, cut_by_threshold, euclidean_matrix
from ..dataset import Dataset, fmt, write_clusters_csv, write_embeddings_csv
from ..errors import DataError, MSPLError
from ..models import ModelConfig, MSPLNet, fit, save_checkpoint
from .config import ExperimentConfig

log = logging.getLogger(__name__)


# ---------------------------------------------------------------- folds and seeds

def split_folds(n_samples: int, k: int, seed: int) -> list[np.ndarray]:
    """Seeded shuffle into ``k`` disjoint folds whose sizes differ by at most one."""
    if k < 1 or k > n_samples:
        raise ValueError(f"cannot split {n_samples} samples into {k} folds")
    perm = np.random.default_rng(seed).permutation(n_samples)
    return [np.sort(f) for f in np.array_split(perm, k)]


def trial_seed(base_seed: int, trial: int) -> int:
    return base_seed + trial


def derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


# ---------------------------------------------------------------- threshold tuning

@dataclass
class TuningResult:
    threshold: float
    f1: float | None
    n_candidates: int
    input_hash: str


def tuning_hash(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def tune_threshold(h_train, gt_train, upper_bound: float) -> TuningResult:
    """Threshold in ``(0, upper_bound]`` maximizing training cluster F1.

    Flat partitions only change at merge heights, so the candidates are the
    positive merge heights up to the bound plus the bound itself. Ties go to
    the smallest threshold.
    """
    if upper_bound <= 0:
        raise ValueError("upper_bound must be positive")
    h_train = np.asarray(h_train, dtype=np.float64)
    gt_train = np.asarray(gt_train)
    digest = tuning_hash(h_train, gt_train)
    keep = non_singleton_mask(gt_train)
    if keep.sum() < 2:
        log.warning("no non-singleton ground-truth clusters in training data; using the upper bound")
        return TuningResult(float(upper_bound), None, 0, digest)
    h, gt = h_train[keep], gt_train[keep]
    dendro = agglomerate_complete(euclidean_matrix(h))
    heights = dendro.heights
    candidates = sorted(set(float(v) for v in heights if 0 < v <= upper_bound) | {float(upper_bound)})
    if len(candidates) == 1:
        log.warning("no merge heights below the upper bound %s", upper_bound)
    best_tau, best_f1 = candidates[0], -1.0
    for tau in candidates:
        labels = cut_by_threshold(dendro, tau)
        f1 = cluster_prf(labels, gt, filter_singletons=False)[2]
        if f1 > best_f1:
            best_tau, best_f1 = tau, f1
    return TuningResult(best_tau, best_f1, len(candidates), digest)


# ---------------------------------------------------------------- aggregation

def aggregate_ci(values, confidence: float = 0.95) -> tuple[float | None, float | None]:
    """Mean and t-distribution confidence half-width (sample std, n-1 dof)."""
    vals = np.array([v for v in values if v is not None], dtype=np.float64)
    if vals.size == 0:
        return None, None
    mean = float(vals.mean())
    if vals.size < 2:
        return mean, None
    sd = float(vals.std(ddof=1))
    q = float(stats.t.ppf(0.5 + confidence / 2.0, vals.size - 1))
    return mean, q * sd / math.sqrt(vals.size)


# ---------------------------------------------------------------- one fold

@dataclass
class FoldJob:
    trial: int
    fold: int
    variant: str
    train_idx: np.ndarray
    val_idx: np.ndarray
    model_seed: int
    shuffle_seed: int


@dataclass
class FoldResult:
    trial: int
    fold: int
    variant: str
    metrics: dict[str, dict]
    pretext_accuracy: float
    species: list[dict]
    threshold: dict | None
    val_ids: list[str]
    predictions: dict[str, list[int]]
    eval_mask: list[bool]
    history: list[dict]
    mds: list[list[float]] | None = None
    error: dict | None = None


def _model_config(cfg: ExperimentConfig, ds: Dataset, gt: np.ndarray, variant: str) -> ModelConfig:
    params = dict(cfg.model)
    params.update(
        input_length=ds.x.shape[1],
        num_pretext_classes=ds.n_classes,
        num_cluster_classes=int(gt.max()) + 1 if variant == "cluscls" else 0,
        variant=variant,
    )
    return ModelConfig.from_dict(params)


def scheme_names(cfg: ExperimentConfig, variant: str) -> list[str]:
    return ["argmax"] if variant == "cluscls" else list(cfg.schemes)


def run_fold(cfg: ExperimentConfig, ds: Dataset, gt: np.ndarray, job: FoldJob, out_dir: Path | None) -> FoldResult:
    tr, va = job.train_idx, job.val_idx
    model = MSPLNet.build(_model_config(cfg, ds, gt, job.variant), seed=job.model_seed)
    history = fit(
        model,
        ds.x[tr],
        ds.y[tr],
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        seed=job.shuffle_seed,
        d=ds.dissim[np.ix_(tr, tr)] if job.variant == "mspl" else None,
        c_t=gt[tr] if job.variant == "cluscls" else None,
    )
    h_va, z_va, zc_va = model.embed(ds.x[va])
    y_va = ds.y[va]
    gt_va = gt[va]
    correct = z_va.argmax(axis=1) == y_va
    pretext_acc = float(correct.mean()) if len(va) else float("nan")

    # evaluation universe: validation samples whose gt cluster has >= 2 members in the fold
    keep = non_singleton_mask(gt_va)
    predictions: dict[str, np.ndarray] = {}
    threshold = None
    metrics: dict[str, dict] = {}
    if job.variant == "cluscls":
        predictions["argmax"] = zc_va.argmax(axis=1)[keep]
    elif keep.any():
        dendro = agglomerate_complete(euclidean_matrix(h_va[keep]))
        if "thr" in cfg.schemes:
            h_tr, _, _ = model.embed(ds.x[tr])
            tuned = tune_threshold(h_tr, gt[tr], cfg.threshold_upper_bound)
            log.info("trial %d fold %d %s: tau*=%.6g (train inputs sha256 %s)",
                     job.trial, job.fold, job.variant, tuned.threshold, tuned.input_hash[:16])
            threshold = asdict(tuned)
            predictions["thr"] = cut_by_threshold(dendro, tuned.threshold)
        if "num" in cfg.schemes:
            q = len(np.unique(gt_va[keep]))
            predictions["num"] = cut_by_count(dendro, q)
    for scheme in scheme_names(cfg, job.variant):
        pred = predictions.get(scheme, np.zeros(0, dtype=np.int64))
        report = evaluate_partition(pred, gt_va[keep], pretext_acc) if keep.any() else \
            MetricReport(None, None, None, None, None, pretext_acc, 0, 0, 0)
        metrics[scheme] = report.as_dict()

    species_rows = []
    kept_idx = np.flatnonzero(keep)
    for s in np.unique(y_va):
        members = y_va == s
        row = {
            "species": ds.label_names[s],
            "n_val": int(members.sum()),
            "entropy": shannon_entropy(gt_va[members]),
            "pretext_accuracy": float(correct[members].mean()),
        }
        in_eval = members[kept_idx]
        for scheme, pred in predictions.items():
            row[f"f1_{scheme}"] = (
                cluster_prf(pred[in_eval], gt_va[kept_idx][in_eval], filter_singletons=False)[2]
                if in_eval.any() else None
            )
        species_rows.append(row)

    mds = classical_mds(euclidean_matrix(h_va)).tolist() if cfg.mds else None

    result = FoldResult(
        trial=job.trial,
        fold=job.fold,
        variant=job.variant,
        metrics=metrics,
        pretext_accuracy=pretext_acc,
        species=species_rows,
        threshold=threshold,
        val_ids=[ds.ids[i] for i in va],
        predictions={k: v.tolist() for k, v in predictions.items()},
        eval_mask=keep.tolist(),
        history=[h.as_dict() for h in history],
        mds=mds,
    )
    if out_dir is not None:
        _persist_fold(result, model, out_dir, cfg.save_checkpoints, h_va)
    return result


def _persist_fold(result: FoldResult, model: MSPLNet, out_dir: Path, save_ckpt: bool, h_va: np.ndarray) -> None:
    d = fold_dir(out_dir, result.trial, result.fold, result.variant)
    d.mkdir(parents=True, exist_ok=True)
    if save_ckpt:
        save_checkpoint(model, d / "model.ckpt", epoch=len(result.history))
    eval_ids = [i for i, k in zip(result.val_ids, result.eval_mask) if k]
    for scheme, labels in result.predictions.items():
        write_clusters_csv(d / f"clusters_{scheme}.csv", eval_ids, labels)
    write_embeddings_csv(d / "embeddings.csv", result.val_ids, h_va)
    if result.mds is not None:
        write_mds_csv(d / "mds.csv", result.val_ids, result.mds)
    write_species_csv(d / "species.csv", result.species)
    write_json(d / "metrics.json", fold_payload(result))


def fold_payload(result: FoldResult) -> dict:
    return {
        "trial": result.trial,
        "fold": result.fold,
        "variant": result.variant,
        "pretext_accuracy": result.pretext_accuracy,
        "metrics": result.metrics,
        "threshold": result.threshold,
        "species": result.species,
        "history": result.history,
    }


def write_species_csv(path, rows: list[dict]) -> None:
    cols = list(rows[0]) if rows else ["species"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] if isinstance(r[c], (str, int)) else ("" if r[c] is None else fmt(r[c])) for c in cols])


def write_mds_csv(path, ids, coords) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "x", "y"])
        for sid, (x, y) in zip(ids, coords):
            w.writerow([sid, fmt(x), fmt(y)])


def write_json(path, payload) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_finite_or_none(payload), fh, indent=2, sort_keys=True, allow_nan=False, default=_jsonable)
        fh.write("\n")


def _finite_or_none(v):
    if isinstance(v, dict):
        return {k: _finite_or_none(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_finite_or_none(x) for x in v]
    if isinstance(v, (float, np.floating)) and not math.isfinite(v):
        return None
    return v


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not JSON serializable: {type(v)}")


def fold_dir(out_dir: Path, trial: int, fold: int, variant: str) -> Path:
    return Path(out_dir) / f"trial{trial}" / f"fold{fold}" / variant


# ---------------------------------------------------------------- full protocol

@dataclass
class ExperimentResult:
    config: ExperimentConfig
    folds: list[FoldResult]
    errors: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)

    def per_trial(self, variant: str, scheme: str, metric: str) -> list[float | None]:
        from .report import per_trial

        trials = sorted({f.trial for f in self.folds})
        return per_trial([fold_payload(f) for f in self.folds], variant, scheme, metric, trials)


def ground_truth(cfg: ExperimentConfig, ds: Dataset) -> np.ndarray:
    if cfg.gt_source == "generator" or cfg.gt_source == "file":
        if ds.gt is None:
            raise DataError(f"gt_source={cfg.gt_source!r} but the dataset carries no ground-truth clusters")
        return ds.gt
    if ds.dissim is None:
        raise DataError("deriving ground truth needs a dissimilarity matrix")
    return derive_gt_clusters(ds.dissim, cfg.gt_threshold)


def _run_job(args):
    cfg, ds, gt, job, out_dir = args
    try:
        return run_fold(cfg, ds, gt, job, out_dir)
    except MSPLError as err:
        return FoldResult(
            job.trial, job.fold, job.variant, {}, float("nan"), [], None, [], {}, [], [],
            error={"trial": job.trial, "fold": job.fold, "variant": job.variant,
                   "type": type(err).__name__, "message": str(err), "exit_code": err.exit_code},
        )


def plan_jobs(cfg: ExperimentConfig, n_samples: int) -> list[FoldJob]:
    jobs = []
    for t in range(cfg.n_trials):
        ts = trial_seed(cfg.seed, t)
        folds = split_folds(n_samples, cfg.k_folds, ts)
        for f, va in enumerate(folds):
            tr = np.sort(np.concatenate([folds[j] for j in range(cfg.k_folds) if j != f]))
            for v in cfg.variants:
                # model and shuffle seeds do not depend on the variant
                jobs.append(FoldJob(t, f, v, tr, va, derived_seed(ts, f, 0), derived_seed(ts, f, 1)))
    return jobs


def run_experiment(cfg: ExperimentConfig, ds: Dataset, out_dir=None) -> ExperimentResult:
    cfg = cfg.resolved(ds.kind)
    if ds.dissim is None:
        raise DataError("the dataset has no external dissimilarity matrix")
    gt = ground_truth(cfg, ds)
    out = Path(out_dir) if out_dir is not None else None
    jobs = plan_jobs(cfg, len(ds))
    args = [(cfg, ds, gt, j, out) for j in jobs]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_run_job, args))
    else:
        results = [_run_job(a) for a in args]

    # a failed fold voids its whole trial
    errors = [r.error for r in results if r.error]
    failed_trials = {e["trial"] for e in errors}
    folds = [r for r in results if r.error is None and r.trial not in failed_trials]
    result = ExperimentResult(cfg, folds, errors)
    result.aggregates = aggregate_results(folds)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        for t in sorted(failed_trials):
            write_json(out / f"trial{t}" / "error.json", [e for e in errors if e["trial"] == t])
        write_json(out / "run_manifest.json", run_manifest(cfg, ds, jobs))
        from .report import emit_report

        emit_report(out)
    return result


def run_manifest(cfg: ExperimentConfig, ds: Dataset, jobs: list[FoldJob]) -> dict:
    return {
        "config": cfg.to_dict(),
        "dataset": {"kind": ds.kind, "n_samples": len(ds), "input_length": int(ds.x.shape[1]),
                    "label_names": ds.label_names, "manifest": ds.manifest},
        "seeds": [
            {"trial": j.trial, "fold": j.fold, "variant": j.variant, "split_seed": trial_seed(cfg.seed, j.trial),
             "model_seed": j.model_seed, "shuffle_seed": j.shuffle_seed}
            for j in jobs
        ],
    }


def aggregate_results(folds: list[FoldResult]) -> dict:
    from .report import aggregate

    return aggregate([fold_payload(f) for f in folds])
