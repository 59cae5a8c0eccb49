"""Experiment configuration: a flat INI document, one section level deep.

Paths are resolved relative to the config file's directory so a fixture
directory is relocatable. External test sets get one ``[external.<name>]``
section each.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from .conditioning import CONDITION_KINDS, ConditionerConfig
from .errors import ConfigError
from .probe import ProbeConfig

DEFAULT_PROTOCOLS = ("id", "lomo", "cross_dataset")


@dataclass(frozen=True)
class ExternalSet:
    name: str
    features_path: Path
    manifest_path: Path


@dataclass(frozen=True)
class ExperimentConfig:
    features_path: Path
    manifest_path: Path
    output_dir: Path
    seed: int
    conditions: tuple[str, ...]
    protocols: tuple[str, ...]
    externals: tuple[ExternalSet, ...] = ()
    probe: ProbeConfig = field(default_factory=ProbeConfig)
    ln_eps: float = 1e-6
    pca_eps: float = 1e-5
    pca_components: int | None = None
    affine_source: Path | None = None
    n_boot: int = 1000
    ci_level: float = 0.95

    def conditioner_config(self, kind: str) -> ConditionerConfig:
        return ConditionerConfig(
            kind=kind,
            ln_eps=self.ln_eps,
            pca_eps=self.pca_eps,
            pca_components=self.pca_components,
            affine_source=str(self.affine_source) if self.affine_source else None,
        )

    def external(self, name: str) -> ExternalSet:
        for ext in self.externals:
            if ext.name == name:
                return ext
        raise ConfigError(f"no [external.{name}] section configured")

    def check_paths(self) -> list[str]:
        """Names of configured input files that do not exist."""
        missing = []
        for label, path in self.iter_input_paths():
            if not Path(path).exists():
                missing.append(f"{label}: {path}")
        return missing

    def iter_input_paths(self):
        yield "features", self.features_path
        yield "manifest", self.manifest_path
        if self.affine_source is not None:
            yield "affine_source", self.affine_source
        for ext in self.externals:
            yield f"external.{ext.name}.features", ext.features_path
            yield f"external.{ext.name}.manifest", ext.manifest_path


def _parse_list(raw: str) -> list[str]:
    return [token.strip() for token in raw.split(",") if token.strip()]


def load_config(
    path: str | Path,
    output_dir: str | Path | None = None,
    seed: int | None = None,
) -> ExperimentConfig:
    """Parse an experiment INI file; CLI overrides win over file values."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if "experiment" not in parser:
        raise ConfigError(f"{path}: missing [experiment] section")
    exp = parser["experiment"]
    base = path.parent

    def resolve(raw: str) -> Path:
        p = Path(raw)
        return p if p.is_absolute() else (base / p)

    try:
        features = resolve(exp["features"])
        manifest = resolve(exp["manifest"])
    except KeyError as exc:
        raise ConfigError(f"{path}: [experiment] needs {exc}") from exc

    conditions = tuple(_parse_list(exp.get("conditions", ",".join(CONDITION_KINDS))))
    if not conditions:
        raise ConfigError(f"{path}: conditions list is empty")
    for kind in conditions:
        if kind not in CONDITION_KINDS:
            raise ConfigError(f"{path}: unknown condition {kind!r}")
    protocols = tuple(_parse_list(exp.get("protocols", ",".join(DEFAULT_PROTOCOLS))))
    for proto in protocols:
        if proto not in DEFAULT_PROTOCOLS:
            raise ConfigError(f"{path}: unknown protocol {proto!r}")

    out_dir = Path(output_dir) if output_dir else resolve(exp.get("output_dir", "runs"))
    cfg_seed = seed if seed is not None else exp.getint("seed", fallback=0)

    externals = []
    for section in parser.sections():
        if not section.startswith("external."):
            continue
        name = section[len("external."):]
        if not name:
            raise ConfigError(f"{path}: [external.] needs a name")
        sec = parser[section]
        try:
            externals.append(
                ExternalSet(
                    name=name,
                    features_path=resolve(sec["features"]),
                    manifest_path=resolve(sec["manifest"]),
                )
            )
        except KeyError as exc:
            raise ConfigError(f"{path}: [{section}] needs {exc}") from exc
    if "cross_dataset" in protocols and not externals:
        raise ConfigError(f"{path}: cross_dataset protocol needs [external.*] sections")

    probe_sec = parser["probe"] if "probe" in parser else {}

    def probe_get(key, cast, default):
        if not probe_sec:
            return default
        raw = probe_sec.get(key)
        return cast(raw) if raw is not None else default

    try:
        probe = ProbeConfig(
            epochs=probe_get("epochs", int, 20),
            batch_size=probe_get("batch_size", int, 256),
            learning_rate=probe_get("learning_rate", float, 0.1),
            momentum=probe_get("momentum", float, 0.9),
            l2_reg=probe_get("l2_reg", float, 0.0),
            seed=cfg_seed,
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: [probe] {exc}") from exc

    cond_sec = parser["conditioning"] if "conditioning" in parser else {}

    def cond_get(key, default):
        if not cond_sec:
            return default
        return cond_sec.get(key, default)

    raw_components = cond_get("pca_components", "full")
    if isinstance(raw_components, str) and raw_components.strip().lower() in ("full", ""):
        pca_components = None
    else:
        try:
            pca_components = int(raw_components)
        except ValueError as exc:
            raise ConfigError(f"{path}: pca_components must be 'full' or an int") from exc
    affine_raw = cond_get("affine_source", None)

    report_sec = parser["report"] if "report" in parser else {}

    def report_get(key, cast, default):
        if not report_sec:
            return default
        raw = report_sec.get(key)
        return cast(raw) if raw is not None else default

    try:
        return ExperimentConfig(
            features_path=features,
            manifest_path=manifest,
            output_dir=out_dir,
            seed=cfg_seed,
            conditions=conditions,
            protocols=protocols,
            externals=tuple(externals),
            probe=probe,
            ln_eps=float(cond_get("ln_eps", 1e-6)),
            pca_eps=float(cond_get("pca_eps", 1e-5)),
            pca_components=pca_components,
            affine_source=resolve(affine_raw) if affine_raw else None,
            n_boot=report_get("n_boot", int, 1000),
            ci_level=report_get("level", float, 0.95),
        )
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
