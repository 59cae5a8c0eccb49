"""Table- and figure-shaped CSV reports derived from saved score artifacts.

Everything here recomputes from the persisted artifacts alone: per-protocol
metric tables with CI columns, the fold-averaged LOMO summary (mean and
population std over fold AUCs, plus the pooled out-of-fold AUC, which is a
related but distinct number), the combined cross-dataset summary with its
mean-XD column, a protocol x condition AUC heatmap, per-artifact ROC point
files, and the protocol-winner table (argmax condition per protocol, ties
broken lexicographically and flagged).
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np

from .errors import MissingArtifactsError
from .featstore import atomic_write_text
from .metrics import (
    bootstrap_mean_of_folds,
    compute_report,
    roc_auc,
    roc_curve,
)
from .protocols import ScoreArtifact, load_artifact
from .sweep import derive_seed

LOMO_MEAN = "lomo_mean"
LOMO_POOLED = "lomo_pooled"


def artifact_tag(art: ScoreArtifact) -> str:
    """Protocol tag derived from the artifact's own protocol payload."""
    kind = art.protocol["kind"]
    if kind == "id":
        return "id"
    if kind == "lomo":
        held = art.protocol.get("held_out")
        return f"lomo-{held}" if held else "lomo-pooled"
    return f"xd-{art.protocol['external_source']}"


def discover_artifacts(output_dir: str | Path) -> list[tuple[str, ScoreArtifact]]:
    """(tag, artifact) pairs from output_dir/artifacts, sorted by filename."""
    art_dir = Path(output_dir) / "artifacts"
    pairs = []
    for path in sorted(art_dir.glob("artifact_*.json")):
        art = load_artifact(path)
        pairs.append((artifact_tag(art), art))
    if not pairs:
        raise MissingArtifactsError(f"no score artifacts under {art_dir}")
    return pairs


def _group(pairs):
    id_arts: dict[str, ScoreArtifact] = {}
    folds: dict[str, dict[str, ScoreArtifact]] = {}
    pooled: dict[str, ScoreArtifact] = {}
    xd: dict[str, dict[str, ScoreArtifact]] = {}
    for tag, art in pairs:
        condition = art.condition
        if tag == "id":
            id_arts[condition] = art
        elif tag == "lomo-pooled":
            pooled[condition] = art
        elif tag.startswith("lomo-"):
            folds.setdefault(condition, {})[tag[len("lomo-"):]] = art
        elif tag.startswith("xd-"):
            xd.setdefault(tag[len("xd-"):], {})[condition] = art
    return id_arts, folds, pooled, xd


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    atomic_write_text(path, buf.getvalue())


def winner_rows(auc_by_protocol: dict[str, dict[str, float]]) -> list[list]:
    """Argmax condition per protocol; lexicographic tie-break, flagged."""
    rows = []
    for protocol in sorted(auc_by_protocol):
        by_condition = auc_by_protocol[protocol]
        if not by_condition:
            continue
        best_auc = max(by_condition.values())
        winners = sorted(c for c, a in by_condition.items() if a == best_auc)
        rows.append([protocol, winners[0], best_auc, len(winners) > 1])
    return rows


def _metric_row(condition: str, art: ScoreArtifact, n_boot, seed, level) -> list:
    labels, scores = art.video_set()
    rep = compute_report(labels, scores, unit="video", n_boot=n_boot, seed=seed, level=level)
    auc_lo, auc_hi = rep.ci.get("auc", (float("nan"), float("nan")))
    ap_lo, ap_hi = rep.ci.get("ap", (float("nan"), float("nan")))
    return [
        condition, rep.n, rep.auc, auc_lo, auc_hi, rep.ap, ap_lo, ap_hi,
        rep.eer, rep.fpr_at_95,
    ]


_METRIC_HEADER = [
    "condition", "n_videos", "auc", "auc_ci_lo", "auc_ci_hi",
    "ap", "ap_ci_lo", "ap_ci_hi", "eer", "fpr_at_95",
]


def write_reports(
    output_dir: str | Path,
    n_boot: int = 1000,
    level: float = 0.95,
    seed: int = 0,
) -> list[Path]:
    """Emit every report CSV into output_dir/reports; returns written paths."""
    out = Path(output_dir)
    pairs = discover_artifacts(out)
    id_arts, folds, pooled, xd = _group(pairs)
    reports_dir = out / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    def boot_seed(tag: str, condition: str) -> int:
        return derive_seed(seed, f"metrics:{tag}:{condition}")

    heatmap: dict[str, dict[str, float]] = {}

    # (a) per-protocol metric tables with CI columns
    if id_arts:
        rows = [
            _metric_row(c, id_arts[c], n_boot, boot_seed("id", c), level)
            for c in sorted(id_arts)
        ]
        path = reports_dir / "table_id.csv"
        _write_csv(path, _METRIC_HEADER, rows)
        written.append(path)
        heatmap["id"] = {c: roc_auc(*id_arts[c].video_set()) for c in id_arts}

    if folds:
        rows = []
        for condition in sorted(folds):
            for held in sorted(folds[condition]):
                art = folds[condition][held]
                tag = f"lomo-{held}"
                base = _metric_row(condition, art, n_boot, boot_seed(tag, condition), level)
                rows.append([condition, held, art.val_auc] + base[1:])
        path = reports_dir / "table_lomo_folds.csv"
        _write_csv(path, ["condition", "held_out", "val_auc"] + _METRIC_HEADER[1:], rows)
        written.append(path)

        # (b) fold-averaged LOMO summary: mean/std over folds + pooled AUC
        rows = []
        for condition in sorted(folds):
            fold_arts = [folds[condition][h] for h in sorted(folds[condition])]
            fold_aucs = np.array([roc_auc(*a.video_set()) for a in fold_arts])
            mean_auc = float(fold_aucs.mean())
            std_auc = float(fold_aucs.std())  # population std over the folds
            lo, hi = bootstrap_mean_of_folds(
                [a.video_set() for a in fold_arts],
                "auc",
                n_boot=n_boot,
                seed=boot_seed("lomo-mean", condition),
                level=level,
            )
            pooled_auc = (
                roc_auc(*pooled[condition].video_set()) if condition in pooled else float("nan")
            )
            rows.append([condition, mean_auc, std_auc, lo, hi, pooled_auc, len(fold_arts)])
            heatmap.setdefault(LOMO_MEAN, {})[condition] = mean_auc
            if condition in pooled:
                heatmap.setdefault(LOMO_POOLED, {})[condition] = pooled_auc
        path = reports_dir / "table_lomo_summary.csv"
        _write_csv(
            path,
            ["condition", "mean_auc", "std_auc", "mean_ci_lo", "mean_ci_hi", "pooled_auc", "n_folds"],
            rows,
        )
        written.append(path)

    for source in sorted(xd):
        rows = [
            _metric_row(c, xd[source][c], n_boot, boot_seed(f"xd-{source}", c), level)
            for c in sorted(xd[source])
        ]
        path = reports_dir / f"table_xd_{source}.csv"
        _write_csv(path, _METRIC_HEADER, rows)
        written.append(path)
        heatmap[f"xd_{source}"] = {
            c: roc_auc(*xd[source][c].video_set()) for c in xd[source]
        }

    # (c) combined cross-dataset summary with the mean-XD column
    if xd:
        sources = sorted(xd)
        conditions = sorted({c for by_source in xd.values() for c in by_source})
        rows = []
        for condition in conditions:
            aucs = [
                roc_auc(*xd[s][condition].video_set()) if condition in xd[s] else float("nan")
                for s in sources
            ]
            rows.append([condition] + aucs + [float(np.mean(aucs))])
        path = reports_dir / "table_xd_summary.csv"
        _write_csv(path, ["condition"] + [f"{s}_auc" for s in sources] + ["mean_xd_auc"], rows)
        written.append(path)

    # (d) protocol x condition AUC heatmap (figure data)
    if heatmap:
        protocols = sorted(heatmap)
        conditions = sorted({c for by_cond in heatmap.values() for c in by_cond})
        rows = [
            [c] + [heatmap[p].get(c, float("nan")) for p in protocols]
            for c in conditions
        ]
        path = reports_dir / "heatmap_auc.csv"
        _write_csv(path, ["condition"] + protocols, rows)
        written.append(path)

    # (e) ROC points per artifact (figure data)
    for tag, art in pairs:
        labels, scores = art.video_set()
        fpr, tpr, thresholds = roc_curve(labels, scores)
        rows = [[t, f, r] for t, f, r in zip(thresholds, fpr, tpr)]
        path = reports_dir / f"roc_{tag}_{art.condition}.csv"
        _write_csv(path, ["threshold", "fpr", "tpr"], rows)
        written.append(path)

    # (f) protocol winners
    if heatmap:
        winners = {p: heatmap[p] for p in heatmap if p != LOMO_POOLED}
        if LOMO_MEAN in winners:
            winners["lomo"] = winners.pop(LOMO_MEAN)
        path = reports_dir / "winner_table.csv"
        _write_csv(path, ["protocol", "winner", "auc", "tie"], winner_rows(winners))
        written.append(path)

    manifest_doc = {"schema": "featprobe.report_manifest.v1", "files": [p.name for p in written]}
    index = reports_dir / "report_manifest.json"
    atomic_write_text(index, json.dumps(manifest_doc, indent=2) + "\n")
    written.append(index)
    return written
