"""Sweep orchestration: conditioning kinds x protocols, with content-keyed
idempotence.

Each job's key digests everything that determines its output (input file
digests, manifest hashes, conditioner and probe configs, seed), so a re-run
skips jobs whose persisted artifact already carries a matching key. Fitted
conditioners are cached by fit key and probes are checkpointed, so skipped
or partially re-run sweeps reuse instead of refitting. One job's failure is
reported and does not abort the others.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .conditioning import cache_get, cache_put, compute_fit_key, fit_conditioner
from .config import ExperimentConfig
from .errors import FeatProbeError
from .featstore import load_manifest, read_features, features_digest, select_rows, atomic_write_text
from .metrics import compute_report
from .probe import LinearProbeClassifier, ProbeConfig, load_probe, save_probe
from .protocols import (
    PROTOCOL_CROSS_DATASET,
    PROTOCOL_ID,
    PROTOCOL_LOMO,
    ProtocolSpec,
    ScoreArtifact,
    build_fold,
    build_pooled_artifact,
    load_artifact,
    lomo_families,
    run_fold,
    save_artifact,
)


def derive_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1  # keep it a non-negative i64


@dataclass(frozen=True)
class Job:
    tag: str          # id | lomo-<FAM> | lomo-pooled | xd-<source>
    condition: str
    kind: str         # protocol kind, or "lomo_pooled"
    held_out: str | None = None
    external: str | None = None

    def name(self) -> str:
        return f"{self.tag}/{self.condition}"


@dataclass
class JobResult:
    job: Job
    status: str  # done | skipped | failed
    error: str | None = None
    artifact_path: Path | None = None


class SweepRunner:
    """Executes the job plan for one experiment config."""

    def __init__(self, config: ExperimentConfig, force: bool = False):
        self.config = config
        self.force = force
        out = Path(config.output_dir)
        self.artifacts_dir = out / "artifacts"
        self.metrics_dir = out / "metrics"
        self.probes_dir = out / "probes"
        self.cache_dir = out / "cache"
        for d in (self.artifacts_dir, self.metrics_dir, self.probes_dir, self.cache_dir):
            d.mkdir(parents=True, exist_ok=True)
        self.features = read_features(config.features_path)
        self.manifest = load_manifest(config.manifest_path)
        self.features_sha = features_digest(config.features_path)
        self._external_data: dict[str, tuple] = {}
        self._external_keys: dict[str, dict] = {}
        self._id_state: dict[str, tuple] = {}  # condition -> (conditioner, probe)

    # -- planning -----------------------------------------------------------

    def plan_jobs(self) -> list[Job]:
        jobs: list[Job] = []
        protocols = self.config.protocols
        for condition in self.config.conditions:
            if PROTOCOL_ID in protocols:
                jobs.append(Job("id", condition, PROTOCOL_ID))
            if PROTOCOL_LOMO in protocols:
                for family in lomo_families(self.manifest):
                    jobs.append(Job(f"lomo-{family}", condition, PROTOCOL_LOMO, held_out=family))
                jobs.append(Job("lomo-pooled", condition, "lomo_pooled"))
            if PROTOCOL_CROSS_DATASET in protocols:
                for ext in self.config.externals:
                    jobs.append(
                        Job(f"xd-{ext.name}", condition, PROTOCOL_CROSS_DATASET, external=ext.name)
                    )
        return jobs

    # -- keys and paths ------------------------------------------------------

    def probe_config_for(self, job: Job) -> ProbeConfig:
        base = self.config.probe
        return ProbeConfig(
            epochs=base.epochs,
            batch_size=base.batch_size,
            learning_rate=base.learning_rate,
            momentum=base.momentum,
            l2_reg=base.l2_reg,
            seed=derive_seed(self.config.seed, f"probe:{job.tag}:{job.condition}"),
        )

    def _train_job_for(self, job: Job) -> Job:
        """The job whose probe a cross-dataset job reuses."""
        return Job("id", job.condition, PROTOCOL_ID)

    def job_key(self, job: Job) -> str:
        cond_cfg = self.config.conditioner_config(job.condition)
        payload: dict = {
            "tag": job.tag,
            "condition": cond_cfg.canonical(),
            "manifest_sha256": self.manifest.content_hash,
            "features_sha256": self.features_sha,
            "seed": self.config.seed,
        }
        if job.kind == "lomo_pooled":
            payload["folds"] = [
                self.job_key(Job(f"lomo-{fam}", job.condition, PROTOCOL_LOMO, held_out=fam))
                for fam in lomo_families(self.manifest)
            ]
        elif job.kind == PROTOCOL_CROSS_DATASET:
            payload["external"] = self._external_key(job.external)
            payload["reuses"] = self.job_key(self._train_job_for(job))
        else:
            payload["probe"] = self.probe_config_for(job).canonical()
        return hashlib.sha256(
            json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
        ).hexdigest()

    def _external_key(self, name: str) -> dict:
        if name not in self._external_keys:
            ext = self.config.external(name)
            self._external_keys[name] = {
                "name": ext.name,
                "features_sha256": features_digest(ext.features_path),
                "manifest_sha256": load_manifest(ext.manifest_path).content_hash,
            }
        return self._external_keys[name]

    def artifact_path(self, job: Job) -> Path:
        return self.artifacts_dir / f"artifact_{job.tag}_{job.condition}.json"

    def metrics_path(self, job: Job) -> Path:
        return self.metrics_dir / f"metrics_{job.tag}_{job.condition}.json"

    def probe_path(self, job: Job) -> Path:
        # keyed by the training job's inputs so a config change never reuses
        # a stale checkpoint
        key = self.job_key(job)[:12]
        return self.probes_dir / f"probe_{job.tag}_{job.condition}_{key}.fpkp"

    # -- shared state --------------------------------------------------------

    def _external(self, name: str):
        if name not in self._external_data:
            ext = self.config.external(name)
            self._external_data[name] = (
                read_features(ext.features_path),
                load_manifest(ext.manifest_path),
            )
        return self._external_data[name]

    def _ensure_conditioner(self, spec: ProtocolSpec, condition: str):
        """Fit (or fetch from cache) the conditioner for this fold's train rows."""
        cond_cfg = self.config.conditioner_config(condition)
        plan = build_fold(self.manifest, spec)
        train_set = set(int(r) for r in plan.train_rows)
        X_train, train_manifest = select_rows(
            self.features, self.manifest, lambda r: r.row_index in train_set
        )
        fit_key = compute_fit_key(cond_cfg, train_manifest.content_hash)
        cached = cache_get(fit_key, self.cache_dir)
        if cached is not None:
            return cached
        cond = fit_conditioner(cond_cfg, X_train, manifest_hash=train_manifest.content_hash)
        cache_put(cond, self.cache_dir)
        return cond

    def _ensure_id_state(self, condition: str) -> tuple:
        """ID conditioner and probe for this condition, shared by XD jobs."""
        if condition in self._id_state:
            return self._id_state[condition]
        job = Job("id", condition, PROTOCOL_ID)
        spec = ProtocolSpec(kind=PROTOCOL_ID)
        conditioner = self._ensure_conditioner(spec, condition)
        probe_file = self.probe_path(job)
        if probe_file.exists():
            probe = load_probe(probe_file)
        else:
            run = run_fold(
                self.features,
                self.manifest,
                spec,
                self.config.conditioner_config(condition),
                self.probe_config_for(job),
                conditioner=conditioner,
            )
            probe = run.probe
            save_probe(probe, probe_file)
        self._id_state[condition] = (conditioner, probe)
        return self._id_state[condition]

    # -- execution -----------------------------------------------------------

    def _write_outputs(self, job: Job, artifact: ScoreArtifact) -> Path:
        path = self.artifact_path(job)
        save_artifact(artifact, path)
        labels, scores = artifact.video_set()
        report = compute_report(
            labels,
            scores,
            unit="video",
            n_boot=self.config.n_boot,
            seed=derive_seed(self.config.seed, f"metrics:{job.tag}:{job.condition}"),
            level=self.config.ci_level,
        )
        doc = {"artifact": path.name, "tag": job.tag, "condition": job.condition}
        doc.update(report.to_json_dict())
        atomic_write_text(self.metrics_path(job), json.dumps(doc, indent=2) + "\n")
        return path

    def _execute(self, job: Job, key: str) -> Path:
        cond_cfg = self.config.conditioner_config(job.condition)
        extra = {"job_key": key}
        if job.kind == PROTOCOL_ID:
            conditioner, probe = self._ensure_id_state(job.condition)
            run = run_fold(
                self.features,
                self.manifest,
                ProtocolSpec(kind=PROTOCOL_ID),
                cond_cfg,
                self.probe_config_for(job),
                conditioner=conditioner,
                probe=probe,
                extra_provenance=extra,
            )
            artifact = run.artifact
        elif job.kind == PROTOCOL_LOMO:
            spec = ProtocolSpec(kind=PROTOCOL_LOMO, held_out=job.held_out)
            conditioner = self._ensure_conditioner(spec, job.condition)
            probe_file = self.probe_path(job)
            probe = load_probe(probe_file) if probe_file.exists() else None
            run = run_fold(
                self.features,
                self.manifest,
                spec,
                cond_cfg,
                self.probe_config_for(job),
                conditioner=conditioner,
                probe=probe,
                extra_provenance=extra,
            )
            if probe is None:
                save_probe(run.probe, probe_file)
            artifact = run.artifact
        elif job.kind == "lomo_pooled":
            fold_artifacts = []
            for fam in lomo_families(self.manifest):
                fold_job = Job(f"lomo-{fam}", job.condition, PROTOCOL_LOMO, held_out=fam)
                fold_artifacts.append(load_artifact(self.artifact_path(fold_job)))
            artifact = build_pooled_artifact(fold_artifacts)
            artifact.provenance["job_key"] = key
        elif job.kind == PROTOCOL_CROSS_DATASET:
            conditioner, probe = self._ensure_id_state(job.condition)
            ext_features, ext_manifest = self._external(job.external)
            run = run_fold(
                ext_features,
                ext_manifest,
                ProtocolSpec(kind=PROTOCOL_CROSS_DATASET, external_source=job.external),
                cond_cfg,
                self.probe_config_for(job),
                conditioner=conditioner,
                probe=probe,
                extra_provenance=extra,
            )
            artifact = run.artifact
        else:
            raise ValueError(f"unknown job kind {job.kind!r}")
        return self._write_outputs(job, artifact)

    def _can_skip(self, job: Job, key: str) -> bool:
        if self.force:
            return False
        path = self.artifact_path(job)
        if not path.exists() or not self.metrics_path(job).exists():
            return False
        try:
            existing = load_artifact(path)
        except (FeatProbeError, ValueError, KeyError, json.JSONDecodeError):
            return False
        return existing.provenance.get("job_key") == key

    def run(self, jobs: list[Job] | None = None) -> list[JobResult]:
        results: list[JobResult] = []
        for job in jobs if jobs is not None else self.plan_jobs():
            try:
                key = self.job_key(job)
                if self._can_skip(job, key):
                    results.append(JobResult(job, "skipped", artifact_path=self.artifact_path(job)))
                    continue
                path = self._execute(job, key)
                results.append(JobResult(job, "done", artifact_path=path))
            except Exception as exc:  # isolate: one failure must not abort the sweep
                results.append(JobResult(job, "failed", error=f"{type(exc).__name__}: {exc}"))
        return results


def run_sweep(config: ExperimentConfig, force: bool = False) -> list[JobResult]:
    return SweepRunner(config, force=force).run()
