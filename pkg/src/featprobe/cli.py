"""Command-line front end.

Subcommands: validate, fit-conditioner, train, evaluate, sweep, report, plus
make-fixture for generating the bundled synthetic dataset. Exit codes:
0 success, 1 one or more jobs failed, 2 configuration or validation error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .conditioning import cache_get, cache_put, compute_fit_key, fit_conditioner
from .config import ExperimentConfig, load_config
from .errors import ConfigError, FeatProbeError, MissingArtifactsError
from .featstore import (
    check_paired,
    features_digest,
    load_manifest,
    read_features,
    select_rows,
)
from .protocols import PROTOCOL_ID, PROTOCOL_LOMO, ProtocolSpec, build_fold, lomo_families
from .report import write_reports
from .sweep import Job, SweepRunner

EXIT_OK = 0
EXIT_JOB_FAILURES = 1
EXIT_CONFIG = 2


def _add_common_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, help="experiment INI file")
    sub.add_argument("--output-dir", type=Path, help="override the config's output_dir")
    sub.add_argument("--seed", type=int, help="override the config's seed")
    sub.add_argument("--force", action="store_true", help="re-run even when outputs match")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="featprobe",
        description="frozen-feature conditioning and linear-probe evaluation harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="verify feature digests, manifest hashes, split rules")
    p.add_argument("paths", nargs="*", type=Path, help="extra feature/manifest files to check")
    _add_common_flags(p)

    p = sub.add_parser("fit-conditioner", help="fit and cache conditioners on the train split")
    p.add_argument("--condition", help="single conditioning kind (default: all configured)")
    _add_common_flags(p)

    p = sub.add_parser("train", help="train the in-distribution probe per condition")
    p.add_argument("--condition", help="single conditioning kind (default: all configured)")
    _add_common_flags(p)

    p = sub.add_parser("evaluate", help="run configured protocols and write artifacts")
    p.add_argument("--condition", help="single conditioning kind (default: all configured)")
    p.add_argument("--protocol", help="single protocol (id, lomo, cross_dataset)")
    _add_common_flags(p)

    p = sub.add_parser("sweep", help="run every conditioning x protocol job, idempotently")
    _add_common_flags(p)

    p = sub.add_parser("report", help="emit table and figure CSVs from saved artifacts")
    _add_common_flags(p)

    p = sub.add_parser("make-fixture", help="generate the bundled synthetic dataset")
    _add_common_flags(p)
    return parser


def _load_config(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required for this command")
    return load_config(args.config, output_dir=args.output_dir, seed=args.seed)


def _select_conditions(config: ExperimentConfig, chosen: str | None) -> list[str]:
    if chosen is None:
        return list(config.conditions)
    if chosen not in config.conditions:
        raise ConfigError(f"condition {chosen!r} is not in the configured list")
    return [chosen]


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_validate(args) -> int:
    failures = []
    checks = []

    def check(label, fn):
        try:
            fn()
            checks.append(f"OK   {label}")
        except Exception as exc:
            checks.append(f"FAIL {label}: {exc}")
            failures.append(label)

    pairs: list[tuple[str, Path, Path | None]] = []
    config = None
    if args.config:
        try:
            config = _load_config(args)
        except ConfigError as exc:
            print(f"FAIL config: {exc}")
            return EXIT_CONFIG
        def require_exists(p: Path):
            if not p.exists():
                raise FileNotFoundError(p)

        for label, path in config.iter_input_paths():
            if label.endswith("features"):
                check(f"{label} {path}", lambda p=path: features_digest(p))
            elif label.endswith("manifest"):
                check(f"{label} {path}", lambda p=path: load_manifest(p))
            else:
                check(f"{label} {path}", lambda p=path: require_exists(p))
        try:
            features = read_features(config.features_path)
            manifest = load_manifest(config.manifest_path)
            check("features/manifest pairing", lambda: check_paired(features, manifest))
            if "lomo" in config.protocols:
                for family in lomo_families(manifest):
                    check(
                        f"lomo fold {family} feasible",
                        lambda f=family: build_fold(
                            manifest, ProtocolSpec(kind=PROTOCOL_LOMO, held_out=f)
                        ),
                    )
            for ext in config.externals:
                ext_features = read_features(ext.features_path)
                ext_manifest = load_manifest(ext.manifest_path)
                check(
                    f"external {ext.name} pairing",
                    lambda f=ext_features, m=ext_manifest: check_paired(f, m),
                )
        except FeatProbeError as exc:
            checks.append(f"FAIL inputs: {exc}")
            failures.append("inputs")
    for path in args.paths:
        if path.suffix == ".csv":
            check(f"manifest {path}", lambda p=path: load_manifest(p))
        else:
            check(f"features {path}", lambda p=path: features_digest(p))
    if not args.config and not args.paths:
        print("nothing to validate: pass --config and/or file paths")
        return EXIT_CONFIG
    for line in checks:
        print(line)
    return EXIT_OK if not failures else EXIT_CONFIG


def cmd_fit_conditioner(args) -> int:
    config = _load_config(args)
    features = read_features(config.features_path)
    manifest = load_manifest(config.manifest_path)
    cache_dir = Path(config.output_dir) / "cache"
    cache_dir.mkdir(parents=True, exist_ok=True)
    X_train, train_manifest = select_rows(features, manifest, lambda r: r.split == "train")
    for condition in _select_conditions(config, args.condition):
        cond_cfg = config.conditioner_config(condition)
        fit_key = compute_fit_key(cond_cfg, train_manifest.content_hash)
        if not args.force and cache_get(fit_key, cache_dir) is not None:
            print(f"cached  {condition} {fit_key}")
            continue
        cond = fit_conditioner(cond_cfg, X_train, manifest_hash=train_manifest.content_hash)
        cache_put(cond, cache_dir)
        print(f"fitted  {condition} {fit_key}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _load_config(args)
    runner = SweepRunner(config, force=args.force)
    failures = 0
    for condition in _select_conditions(config, args.condition):
        job = Job("id", condition, PROTOCOL_ID)
        probe_file = runner.probe_path(job)
        if probe_file.exists() and not args.force:
            print(f"exists  {probe_file.name}")
            continue
        if args.force:
            probe_file.unlink(missing_ok=True)
            runner._id_state.pop(condition, None)
        try:
            runner._ensure_id_state(condition)
            print(f"trained {probe_file.name}")
        except FeatProbeError as exc:
            print(f"failed  {condition}: {exc}")
            failures += 1
    return EXIT_JOB_FAILURES if failures else EXIT_OK


def cmd_evaluate(args) -> int:
    config = _load_config(args)
    if args.protocol and args.protocol not in config.protocols:
        raise ConfigError(f"protocol {args.protocol!r} is not in the configured list")
    runner = SweepRunner(config, force=True)  # evaluate always recomputes artifacts
    jobs = runner.plan_jobs()
    conditions = set(_select_conditions(config, args.condition))
    jobs = [j for j in jobs if j.condition in conditions]
    if args.protocol:
        keep = {"lomo": (PROTOCOL_LOMO, "lomo_pooled")}.get(args.protocol, (args.protocol,))
        jobs = [j for j in jobs if j.kind in keep]
    results = runner.run(jobs)
    failed = [r for r in results if r.status == "failed"]
    for r in results:
        line = f"{r.status:7s} {r.job.name()}"
        if r.error:
            line += f"  ({r.error})"
        print(line)
    return EXIT_JOB_FAILURES if failed else EXIT_OK


def cmd_sweep(args) -> int:
    config = _load_config(args)
    missing = config.check_paths()
    if missing:
        for item in missing:
            print(f"missing input {item}")
        return EXIT_CONFIG
    runner = SweepRunner(config, force=args.force)
    results = runner.run()
    done = sum(1 for r in results if r.status == "done")
    skipped = sum(1 for r in results if r.status == "skipped")
    failed = [r for r in results if r.status == "failed"]
    for r in results:
        line = f"{r.status:7s} {r.job.name()}"
        if r.error:
            line += f"  ({r.error})"
        print(line)
    print(f"sweep: {done} executed, {skipped} skipped, {len(failed)} failed")
    return EXIT_JOB_FAILURES if failed else EXIT_OK


def cmd_report(args) -> int:
    if args.config:
        config = _load_config(args)
        out_dir = config.output_dir
        n_boot, level, seed = config.n_boot, config.ci_level, config.seed
    elif args.output_dir:
        out_dir = args.output_dir
        n_boot, level, seed = 1000, 0.95, args.seed if args.seed is not None else 0
    else:
        raise ConfigError("report needs --config or --output-dir")
    written = write_reports(out_dir, n_boot=n_boot, level=level, seed=seed)
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def cmd_make_fixture(args) -> int:
    from .synthetic import make_fixture

    out_dir = args.output_dir or Path("fixture")
    seed = args.seed if args.seed is not None else 7
    paths = make_fixture(out_dir, seed=seed)
    print(f"fixture written under {paths.root}")
    print(f"config: {paths.config}")
    return EXIT_OK


_COMMANDS = {
    "validate": cmd_validate,
    "fit-conditioner": cmd_fit_conditioner,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "report": cmd_report,
    "make-fixture": cmd_make_fixture,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, MissingArtifactsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FeatProbeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_JOB_FAILURES


if __name__ == "__main__":
    sys.exit(main())
