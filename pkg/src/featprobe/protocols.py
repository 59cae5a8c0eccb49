"""Evaluation protocols: in-distribution, leave-one-manipulation-out, and
cross-dataset transfer.

A fold plan is a pure function of (manifest, protocol spec): disjoint train,
validation and test row sets. LOMO folds exclude the held-out manipulation
from train *and* validation, so checkpoint selection never sees it, and keep
every real test row so AUC stays computable. Cross-dataset plans are
test-only; the conditioner and probe of the matching in-distribution run are
reused without retraining, and their state is never modified.

Frame scores aggregate to video scores by arithmetic mean; the persisted
score artifact is the sole input to metrics and bootstrap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .conditioning import ConditionerConfig, conditioner_digest, fit_conditioner
from .errors import (
    EmptyHeldOutError,
    MissingSplitError,
    SingleClassSplitError,
    UnknownManipulationError,
)
from .featstore import (
    FAKE_FAMILIES,
    REAL,
    SPLIT_TEST,
    SPLIT_TRAIN,
    SPLIT_VAL,
    SampleManifest,
    SampleRecord,
    atomic_write_text,
    check_paired,
    select_rows,
)
from .metrics import mean_by_group
from .probe import LinearProbeClassifier, ProbeConfig, probe_digest, score_frames, train_probe
from .validation import both_classes_present

PROTOCOL_ID = "id"
PROTOCOL_LOMO = "lomo"
PROTOCOL_CROSS_DATASET = "cross_dataset"


@dataclass(frozen=True)
class ProtocolSpec:
    kind: str
    held_out: str | None = None
    external_source: str | None = None

    def __post_init__(self):
        if self.kind not in (PROTOCOL_ID, PROTOCOL_LOMO, PROTOCOL_CROSS_DATASET):
            raise ValueError(f"unknown protocol kind {self.kind!r}")
        if (self.held_out is not None) != (self.kind == PROTOCOL_LOMO):
            raise ValueError("held_out is required exactly for LOMO")
        if (self.external_source is not None) != (self.kind == PROTOCOL_CROSS_DATASET):
            raise ValueError("external_source is required exactly for cross-dataset")

    def tag(self) -> str:
        if self.kind == PROTOCOL_LOMO:
            return f"lomo-{self.held_out}"
        if self.kind == PROTOCOL_CROSS_DATASET:
            return f"xd-{self.external_source}"
        return "id"

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "kind": self.kind,
            "held_out": self.held_out,
            "external_source": self.external_source,
        }


@dataclass(frozen=True)
class FoldPlan:
    """Disjoint row-index sets over one paired (features, manifest)."""

    train_rows: np.ndarray
    val_rows: np.ndarray
    test_rows: np.ndarray
    description: str


def _split_rows(manifest: SampleManifest, split: str) -> np.ndarray:
    return manifest.rows_where(lambda rec: rec.split == split)


def _labels_of_rows(manifest: SampleManifest, rows: np.ndarray) -> np.ndarray:
    by_row = {rec.row_index: rec.label for rec in manifest.records}
    return np.array([by_row[int(r)] for r in rows], dtype=np.int64)


def build_id(manifest: SampleManifest) -> FoldPlan:
    """Follow the manifest's split column verbatim."""
    rows = {}
    for split in (SPLIT_TRAIN, SPLIT_VAL, SPLIT_TEST):
        rows[split] = _split_rows(manifest, split)
        if rows[split].size == 0:
            raise MissingSplitError(f"manifest has no {split!r} rows")
        if not both_classes_present(_labels_of_rows(manifest, rows[split])):
            raise SingleClassSplitError(f"{split!r} split contains a single class")
    return FoldPlan(
        train_rows=rows[SPLIT_TRAIN],
        val_rows=rows[SPLIT_VAL],
        test_rows=rows[SPLIT_TEST],
        description="id",
    )


def build_lomo(manifest: SampleManifest, held_out: str) -> FoldPlan:
    """Exclude one manipulation from train/val; test on it plus all reals."""
    fakes_present = {rec.manipulation for rec in manifest.records if rec.label == 1}
    if held_out == REAL or held_out not in fakes_present:
        raise UnknownManipulationError(
            f"held-out manipulation {held_out!r} not among fakes {sorted(fakes_present)}"
        )
    if not (fakes_present - {held_out}):
        raise UnknownManipulationError(
            f"no other fake manipulation to train on besides {held_out!r}"
        )
    train = manifest.rows_where(
        lambda r: r.split == SPLIT_TRAIN and r.manipulation != held_out
    )
    val = manifest.rows_where(
        lambda r: r.split == SPLIT_VAL and r.manipulation != held_out
    )
    test = manifest.rows_where(
        lambda r: r.split == SPLIT_TEST and (r.manipulation == held_out or r.label == 0)
    )
    held_out_test = manifest.rows_where(
        lambda r: r.split == SPLIT_TEST and r.manipulation == held_out
    )
    if held_out_test.size == 0:
        raise EmptyHeldOutError(f"no {held_out!r} rows in the test split")
    for name, rows in (("train", train), ("val", val)):
        if rows.size == 0 or not both_classes_present(_labels_of_rows(manifest, rows)):
            raise SingleClassSplitError(
                f"LOMO {held_out}: {name} split lost a class after exclusion"
            )
    return FoldPlan(
        train_rows=train, val_rows=val, test_rows=test, description=f"lomo:{held_out}"
    )


def build_cross_dataset(external_manifest: SampleManifest) -> FoldPlan:
    """Every external row is test; nothing is trained or fitted here."""
    rows = np.array([rec.row_index for rec in external_manifest.records], dtype=np.int64)
    return FoldPlan(
        train_rows=np.array([], dtype=np.int64),
        val_rows=np.array([], dtype=np.int64),
        test_rows=rows,
        description="cross_dataset",
    )


def build_fold(manifest: SampleManifest, spec: ProtocolSpec) -> FoldPlan:
    if spec.kind == PROTOCOL_ID:
        return build_id(manifest)
    if spec.kind == PROTOCOL_LOMO:
        return build_lomo(manifest, spec.held_out)
    return build_cross_dataset(manifest)


def lomo_families(manifest: SampleManifest) -> list[str]:
    """Fake manipulations in canonical order: known families first."""
    fakes = {rec.manipulation for rec in manifest.records if rec.label == 1}
    ordered = [f for f in FAKE_FAMILIES if f in fakes]
    ordered += sorted(fakes - set(FAKE_FAMILIES))
    return ordered


# --------------------------------------------------------------------------
# aggregation and artifacts
# --------------------------------------------------------------------------

def aggregate_video(
    frame_scores, records: Sequence[SampleRecord]
) -> tuple[dict[str, float], dict[str, int]]:
    """Mean frame score per video; labels inherited from the manifest."""
    scores = np.asarray(frame_scores, dtype=np.float64)
    if scores.shape[0] != len(records):
        raise ValueError("one score per record required")
    keys, means = mean_by_group(scores, [rec.video_id for rec in records])
    video_scores = {vid: float(s) for vid, s in zip(keys, means)}
    video_labels: dict[str, int] = {}
    for rec in records:
        video_labels[rec.video_id] = rec.label
    return video_scores, video_labels


@dataclass
class ScoreArtifact:
    """Persisted per-frame and per-video scores with provenance."""

    protocol: dict[str, Any]
    condition: str
    fold: str
    provenance: dict[str, Any]
    frame_rows: list[int]
    frame_scores: list[float]
    video_ids: list[str]
    video_labels: list[int]
    video_scores: list[float]
    val_auc: float | None = None

    def video_set(self) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.array(self.video_labels, dtype=np.int64),
            np.array(self.video_scores, dtype=np.float64),
        )

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "schema": "featprobe.score_artifact.v1",
            "protocol": self.protocol,
            "condition": self.condition,
            "fold": self.fold,
            "provenance": self.provenance,
            "val_auc": self.val_auc,
            "frames": [
                {"row": int(r), "score": float(s)}
                for r, s in zip(self.frame_rows, self.frame_scores)
            ],
            "videos": [
                {"video_id": v, "label": int(l), "score": float(s)}
                for v, l, s in zip(self.video_ids, self.video_labels, self.video_scores)
            ],
        }

    @classmethod
    def from_json_dict(cls, doc: dict[str, Any]) -> "ScoreArtifact":
        return cls(
            protocol=doc["protocol"],
            condition=doc["condition"],
            fold=doc["fold"],
            provenance=doc["provenance"],
            frame_rows=[f["row"] for f in doc["frames"]],
            frame_scores=[f["score"] for f in doc["frames"]],
            video_ids=[v["video_id"] for v in doc["videos"]],
            video_labels=[v["label"] for v in doc["videos"]],
            video_scores=[v["score"] for v in doc["videos"]],
            val_auc=doc.get("val_auc"),
        )


def save_artifact(artifact: ScoreArtifact, path: str | Path) -> None:
    atomic_write_text(path, json.dumps(artifact.to_json_dict(), indent=2) + "\n")


def load_artifact(path: str | Path) -> ScoreArtifact:
    return ScoreArtifact.from_json_dict(json.loads(Path(path).read_text("utf-8")))


# --------------------------------------------------------------------------
# protocol runs
# --------------------------------------------------------------------------

@dataclass
class FoldRun:
    artifact: ScoreArtifact
    conditioner: Any
    probe: LinearProbeClassifier
    plan: FoldPlan


def _records_of_rows(manifest: SampleManifest, rows: np.ndarray) -> list[SampleRecord]:
    by_row = {rec.row_index: rec for rec in manifest.records}
    return [by_row[int(r)] for r in rows]


def run_fold(
    features: np.ndarray,
    manifest: SampleManifest,
    spec: ProtocolSpec,
    conditioner_config: ConditionerConfig,
    probe_config: ProbeConfig,
    conditioner=None,
    probe: LinearProbeClassifier | None = None,
    extra_provenance: dict[str, Any] | None = None,
) -> FoldRun:
    """Fit (or reuse), train (or reuse), score the fold's test rows, aggregate.

    For ID/LOMO the conditioner is fitted on the fold's train rows only and
    the probe is trained with per-epoch validation checkpointing. For
    cross-dataset both must be supplied from the matching ID run and are used
    read-only.
    """
    check_paired(features, manifest)
    plan = build_fold(manifest, spec)

    if spec.kind == PROTOCOL_CROSS_DATASET:
        if conditioner is None or probe is None:
            raise ValueError(
                "cross-dataset evaluation requires the ID-trained conditioner and probe"
            )
        val_auc = None
    else:
        train_set = set(int(r) for r in plan.train_rows)
        val_set = set(int(r) for r in plan.val_rows)
        X_train, train_manifest = select_rows(
            features, manifest, lambda r: r.row_index in train_set
        )
        X_val, val_manifest = select_rows(
            features, manifest, lambda r: r.row_index in val_set
        )
        if conditioner is None:
            conditioner = fit_conditioner(
                conditioner_config, X_train, manifest_hash=train_manifest.content_hash
            )
        if probe is None:
            probe = train_probe(
                conditioner.transform(X_train),
                train_manifest.labels(),
                conditioner.transform(X_val),
                val_manifest.labels(),
                val_manifest.video_ids(),
                probe_config,
            )
        val_auc = probe.val_auc_history_[probe.best_epoch_]

    test_records = _records_of_rows(manifest, plan.test_rows)
    scores = score_frames(probe, conditioner.transform(features[plan.test_rows]))
    video_scores, video_labels = aggregate_video(scores, test_records)

    provenance = {
        "manifest_sha256": manifest.content_hash,
        "probe_sha256": probe_digest(probe),
        "conditioner_sha256": conditioner_digest(conditioner),
        "fold": plan.description,
    }
    if extra_provenance:
        provenance.update(extra_provenance)
    artifact = ScoreArtifact(
        protocol=spec.to_json_dict(),
        condition=conditioner_config.kind,
        fold=plan.description,
        provenance=provenance,
        frame_rows=[int(r) for r in plan.test_rows],
        frame_scores=[float(s) for s in scores],
        video_ids=list(video_scores.keys()),
        video_labels=[video_labels[v] for v in video_scores],
        video_scores=[video_scores[v] for v in video_scores],
        val_auc=val_auc,
    )
    return FoldRun(artifact=artifact, conditioner=conditioner, probe=probe, plan=plan)


def build_pooled_artifact(fold_runs: Sequence[FoldRun] | Sequence[ScoreArtifact]) -> ScoreArtifact:
    """Concatenate out-of-fold video scores across LOMO folds, unscaled.

    Real videos recur in every fold's test set, so pooled entries are keyed
    by ``<held_out>:<video_id>``. Logit scales differ across folds, which is
    exactly why the pooled AUC and the mean of per-fold AUCs diverge.
    """
    artifacts = [fr.artifact if isinstance(fr, FoldRun) else fr for fr in fold_runs]
    if not artifacts:
        raise ValueError("no fold artifacts to pool")
    condition = artifacts[0].condition
    video_ids: list[str] = []
    video_labels: list[int] = []
    video_scores: list[float] = []
    folds = []
    for art in artifacts:
        held = art.protocol.get("held_out")
        folds.append(held)
        for v, l, s in zip(art.video_ids, art.video_labels, art.video_scores):
            video_ids.append(f"{held}:{v}")
            video_labels.append(l)
            video_scores.append(s)
    provenance = {
        "manifest_sha256": artifacts[0].provenance.get("manifest_sha256"),
        "probe_sha256": [a.provenance.get("probe_sha256") for a in artifacts],
        "conditioner_sha256": [a.provenance.get("conditioner_sha256") for a in artifacts],
        "fold": "lomo:pooled",
        "pooled_over": folds,
    }
    return ScoreArtifact(
        protocol={"kind": PROTOCOL_LOMO, "held_out": None, "external_source": None},
        condition=condition,
        fold="lomo:pooled",
        provenance=provenance,
        frame_rows=[],
        frame_scores=[],
        video_ids=video_ids,
        video_labels=video_labels,
        video_scores=video_scores,
        val_auc=None,
    )


def run_lomo(
    features: np.ndarray,
    manifest: SampleManifest,
    conditioner_config: ConditionerConfig,
    probe_config: ProbeConfig,
    families: Sequence[str] | None = None,
) -> tuple[list[FoldRun], ScoreArtifact]:
    """All LOMO folds plus the pooled out-of-fold artifact."""
    if families is None:
        families = lomo_families(manifest)
    runs = []
    for held_out in families:
        spec = ProtocolSpec(kind=PROTOCOL_LOMO, held_out=held_out)
        runs.append(run_fold(features, manifest, spec, conditioner_config, probe_config))
    return runs, build_pooled_artifact(runs)


def run_protocol(
    features: np.ndarray,
    manifest: SampleManifest,
    spec: ProtocolSpec,
    conditioner_config: ConditionerConfig,
    probe_config: ProbeConfig,
    conditioner=None,
    probe: LinearProbeClassifier | None = None,
) -> FoldRun:
    """Single-fold entry point; use run_lomo for the full four-fold sweep."""
    return run_fold(
        features,
        manifest,
        spec,
        conditioner_config,
        probe_config,
        conditioner=conditioner,
        probe=probe,
    )
