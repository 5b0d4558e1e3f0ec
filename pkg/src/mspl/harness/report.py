"""Aggregate per-fold artifacts into table and lift reports.

Everything here reads the files written by a cross-validation run, so the
report can be regenerated from disk and is byte-identical on every rerun.
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from ..cluster_metrics import harmonic_mean, lift
from ..dataset import fmt
from .experiment import aggregate_ci, write_json

DISPLAY = {"mspl": "MSPL", "onlycls": "onlyCLS", "cluscls": "clusCLS"}
TABLE_METRICS = ("ari", "nmi", "precision", "recall", "f1", "pretext_accuracy")
VARIANT_ORDER = ("mspl", "onlycls", "cluscls")


def row_name(variant: str, scheme: str) -> str:
    return DISPLAY[variant] if variant == "cluscls" else f"{DISPLAY[variant]}_{scheme}"


def load_fold_payloads(run_dir) -> list[dict]:
    """All ``metrics.json`` payloads of trials that completed without error."""
    run_dir = Path(run_dir)
    out = []
    for path in sorted(run_dir.glob("trial*/fold*/*/metrics.json")):
        if (path.parents[2] / "error.json").exists():
            continue
        payload = json.loads(path.read_text())
        payload["_dir"] = str(path.parent)
        out.append(payload)
    out.sort(key=lambda p: (p["trial"], p["fold"], VARIANT_ORDER.index(p["variant"])))
    return out


def per_trial(payloads, variant: str, scheme: str, metric: str, trials) -> list[float | None]:
    """Each trial's mean of ``metric`` over its validation folds."""
    values = []
    for t in trials:
        fold_vals = []
        for p in payloads:
            if p["trial"] != t or p["variant"] != variant or scheme not in p["metrics"]:
                continue
            v = p["pretext_accuracy"] if metric == "pretext_accuracy" else p["metrics"][scheme][metric]
            if v is not None:
                fold_vals.append(v)
        values.append(float(np.mean(fold_vals)) if fold_vals else None)
    return values


def schemes_of(payloads, variant: str) -> list[str]:
    seen: list[str] = []
    for p in payloads:
        if p["variant"] == variant:
            seen.extend(s for s in p["metrics"] if s not in seen)
    order = ("thr", "num", "argmax")
    return sorted(seen, key=order.index)


def aggregate(payloads) -> dict:
    trials = sorted({p["trial"] for p in payloads})
    out = {}
    for variant in VARIANT_ORDER:
        for scheme in schemes_of(payloads, variant):
            entry = {}
            for metric in TABLE_METRICS:
                vals = per_trial(payloads, variant, scheme, metric, trials)
                mean, half = aggregate_ci(vals)
                entry[metric] = {"mean": mean, "half_width": half, "per_trial": vals}
            out[f"{variant}/{scheme}"] = entry
    return {"trials": trials, "results": out}


def _cell(v) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else fmt(v)


def table_rows(agg: dict) -> list[dict]:
    """One row per variant and scheme.

    The F1 column is the harmonic mean of the row's mean precision and mean
    recall so the row satisfies the F1 identity exactly; the per-trial F1
    average stays in ``aggregate.json``.
    """
    rows = []
    for key, entry in agg["results"].items():
        variant, scheme = key.split("/")
        row = {"model": row_name(variant, scheme), "variant": variant, "scheme": scheme}
        for metric in TABLE_METRICS:
            row[metric] = entry[metric]["mean"]
            row[f"{metric}_ci"] = entry[metric]["half_width"]
        p, r = row["precision"], row["recall"]
        row["f1"] = None if p is None or r is None else harmonic_mean(p, r)
        rows.append(row)
    return rows


def write_table1(path, rows) -> None:
    cols = ["model", "variant", "scheme"]
    for m in TABLE_METRICS:
        cols += [m, f"{m}_ci"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([row[c] if c in ("model", "variant", "scheme") else _cell(row[c]) for c in cols])


def lift_scheme(payloads) -> str | None:
    """Clustering scheme used for MSPL and onlyCLS in the per-species lift."""
    schemes = schemes_of(payloads, "mspl")
    if not schemes:
        return None
    return "num" if "num" in schemes else schemes[0]


def _species_mean(payloads, variant: str, species: str, key: str, trials) -> float | None:
    per = []
    for t in trials:
        vals = [
            row[key]
            for p in payloads
            if p["trial"] == t and p["variant"] == variant
            for row in p["species"]
            if row["species"] == species and row.get(key) is not None
        ]
        if vals:
            per.append(float(np.mean(vals)))
    return float(np.mean(per)) if per else None


def lift_rows(payloads) -> list[dict]:
    trials = sorted({p["trial"] for p in payloads})
    scheme = lift_scheme(payloads)
    if scheme is None:
        return []
    names = []
    for p in payloads:
        if p["variant"] == "mspl":
            names.extend(r["species"] for r in p["species"] if r["species"] not in names)
    rows = []
    for s in sorted(names):
        f1_mspl = _species_mean(payloads, "mspl", s, f"f1_{scheme}", trials)
        f1_only = _species_mean(payloads, "onlycls", s, f"f1_{scheme}", trials)
        f1_clus = _species_mean(payloads, "cluscls", s, "f1_argmax", trials)
        # each sample is validated exactly once per trial
        n = sum(r["n_val"] for p in payloads if p["variant"] == "mspl" and p["trial"] == trials[0]
                for r in p["species"] if r["species"] == s)
        rows.append({
            "species": s,
            "entropy": _species_mean(payloads, "mspl", s, "entropy", trials),
            "pretext_accuracy": _species_mean(payloads, "mspl", s, "pretext_accuracy", trials),
            "n_samples": n,
            "f1_mspl": f1_mspl,
            "f1_onlycls": f1_only,
            "f1_cluscls": f1_clus,
            "lift_vs_onlycls": lift(f1_mspl, f1_only),
            "lift_vs_cluscls": lift(f1_mspl, f1_clus),
        })
    return rows


LIFT_COLUMNS = ("species", "entropy", "pretext_accuracy", "n_samples", "lift_vs_onlycls", "lift_vs_cluscls",
                "f1_mspl", "f1_onlycls", "f1_cluscls")


def write_lift(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LIFT_COLUMNS)
        for r in rows:
            w.writerow([r[c] if c in ("species", "n_samples") else _cell(r[c]) for c in LIFT_COLUMNS])


def write_mds(path, payloads) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["trial", "fold", "variant", "id", "x", "y"])
        for p in payloads:
            src = Path(p["_dir"]) / "mds.csv"
            if not src.exists():
                continue
            with open(src, newline="") as inner:
                for row in list(csv.reader(inner))[1:]:
                    w.writerow([p["trial"], p["fold"], p["variant"], *row])


def emit_report(run_dir) -> dict:
    """Write ``table1.csv``, ``lift.csv``, ``mds.csv`` and ``aggregate.json``."""
    run_dir = Path(run_dir)
    payloads = load_fold_payloads(run_dir)
    agg = aggregate(payloads)
    agg["lift_scheme"] = lift_scheme(payloads)
    write_table1(run_dir / "table1.csv", table_rows(agg))
    write_lift(run_dir / "lift.csv", lift_rows(payloads))
    write_mds(run_dir / "mds.csv", payloads)
    write_json(run_dir / "aggregate.json", agg)
    return agg
