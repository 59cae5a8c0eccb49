"""Bundled synthetic fixture: separable in-distribution data plus two
external test sets, one with its noise covariance rotated relative to train.

The generative model places the class signal redundantly on two carriers: a
robust one with ordinary train variance and a fragile one with tiny train
variance. A third axis carries a large per-video nuisance component that is
uncorrelated with both carriers in the train domain. The rotated external
set applies a fixed rotation in the (nuisance, fragile-carrier) plane to the
noise only, so the class means stay put while nuisance variance floods the
direction that variance-equalizing transforms amplify hardest. Per-sample
normalizations are nearly unaffected, which reproduces the qualitative
whitening-under-shift failure the harness is meant to expose.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .featstore import SampleManifest, SampleRecord, write_features, write_manifest

DIM = 16
FRAMES_PER_VIDEO = 8

_NUI = 0      # nuisance axis
_SIG_A = 1    # robust carrier
_SIG_B = 2    # fragile carrier (tiny train variance)
_FAM_BASE = 3  # one offset axis per fake family

DELTA_A = 1.2
DELTA_B = 0.55
SIGMA_NUI_VIDEO = 2.5
SIGMA_NUI_FRAME = 1.0
SIGMA_A_VIDEO = 0.5
SIGMA_A_FRAME = 0.8
SIGMA_B_VIDEO = 0.12
SIGMA_B_FRAME = 0.08
SIGMA_ISO_VIDEO = 0.2
SIGMA_ISO_FRAME = 0.4
FAMILY_OFFSET = 0.9
ROTATION_DEGREES = 27.0
MILD_NOISE_SCALE = 1.15

FAMILIES = ("DF", "F2F", "FS", "NT")

ID_TRAIN_VIDEOS = (48, 12)   # (reals, fakes per family)
ID_VAL_VIDEOS = (16, 4)
ID_TEST_VIDEOS = (24, 6)
EXTERNAL_VIDEOS = 60         # per class


@dataclass(frozen=True)
class FixturePaths:
    root: Path
    config: Path
    features: Path
    manifest: Path
    external_features: dict[str, Path]
    external_manifests: dict[str, Path]


def _rotation(theta_deg: float) -> np.ndarray:
    theta = np.deg2rad(theta_deg)
    rot = np.eye(DIM)
    c, s = np.cos(theta), np.sin(theta)
    rot[_NUI, _NUI] = c
    rot[_NUI, _SIG_B] = -s
    rot[_SIG_B, _NUI] = s
    rot[_SIG_B, _SIG_B] = c
    return rot


def _class_signal(label: int, family: str | None) -> np.ndarray:
    signal = np.zeros(DIM)
    sign = 1.0 if label == 1 else -1.0
    signal[_SIG_A] = sign * DELTA_A
    signal[_SIG_B] = sign * DELTA_B
    if family is not None:
        signal[_FAM_BASE + FAMILIES.index(family)] = FAMILY_OFFSET
    return signal


def _video_noise(rng: np.random.Generator) -> np.ndarray:
    """Train-domain noise for one video: per-video components dominate."""
    nui_v = rng.normal()
    a_v = rng.normal()
    b_v = rng.normal()
    iso_slice = slice(_FAM_BASE, DIM)  # family dims carry baseline noise too
    iso_v = rng.normal(size=DIM - iso_slice.start) * SIGMA_ISO_VIDEO

    noise = np.zeros((FRAMES_PER_VIDEO, DIM))
    for f in range(FRAMES_PER_VIDEO):
        noise[f, _NUI] = SIGMA_NUI_VIDEO * nui_v + SIGMA_NUI_FRAME * rng.normal()
        noise[f, _SIG_A] = SIGMA_A_VIDEO * a_v + SIGMA_A_FRAME * rng.normal()
        noise[f, _SIG_B] = SIGMA_B_VIDEO * b_v + SIGMA_B_FRAME * rng.normal()
        noise[f, iso_slice] = iso_v + SIGMA_ISO_FRAME * rng.normal(size=iso_v.shape)
    return noise


def _generate_block(
    rng: np.random.Generator,
    n_reals: int,
    n_fakes_per_family: int,
    source: str,
    split: str,
    video_prefix: str,
    families: tuple[str, ...] = FAMILIES,
    fake_manipulation: str | None = None,
    rotate: np.ndarray | None = None,
    noise_scale: float = 1.0,
    start_row: int = 0,
):
    rows: list[np.ndarray] = []
    records: list[SampleRecord] = []
    row = start_row

    def emit(video_id: str, label: int, manipulation: str, family: str | None):
        nonlocal row
        noise = _video_noise(rng)
        if rotate is not None:
            noise = noise @ rotate.T  # class means stay put, covariance turns
        frames = _class_signal(label, family) + noise * noise_scale
        for f in range(FRAMES_PER_VIDEO):
            rows.append(frames[f])
            records.append(
                SampleRecord(row, video_id, label, manipulation, source, split)
            )
            row += 1

    for v in range(n_reals):
        emit(f"{video_prefix}_real_{v:03d}", 0, "REAL", None)
    for family in families:
        manipulation = fake_manipulation or family
        # external fakes come from a foreign method: no family-dim offset
        offset_family = None if fake_manipulation else family
        for v in range(n_fakes_per_family):
            emit(f"{video_prefix}_{family.lower()}_{v:03d}", 1, manipulation, offset_family)
    return rows, records, row


def make_fixture(out_dir: str | Path, seed: int = 7) -> FixturePaths:
    """Write feature files, manifests and an experiment config to out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    rows: list[np.ndarray] = []
    records: list[SampleRecord] = []
    row = 0
    for split, (n_real, n_fake) in (
        ("train", ID_TRAIN_VIDEOS),
        ("val", ID_VAL_VIDEOS),
        ("test", ID_TEST_VIDEOS),
    ):
        r, recs, row = _generate_block(
            rng, n_real, n_fake, "synth_id", split, f"id_{split}", start_row=row
        )
        rows.extend(r)
        records.extend(recs)
    features = np.asarray(rows, dtype=np.float32)
    manifest = SampleManifest.from_records(records, seed)

    features_path = out / "id_features.fpk1"
    manifest_path = out / "id_manifest.csv"
    write_features(features, features_path)
    write_manifest(manifest, manifest_path)

    externals = {
        "rotated": dict(rotate=_rotation(ROTATION_DEGREES), noise_scale=1.0),
        "mild": dict(rotate=None, noise_scale=MILD_NOISE_SCALE),
    }
    ext_features: dict[str, Path] = {}
    ext_manifests: dict[str, Path] = {}
    for name, kwargs in externals.items():
        name_entropy = int.from_bytes(
            hashlib.sha256(name.encode("utf-8")).digest()[:8], "little"
        )
        ext_rng = np.random.default_rng((seed, name_entropy))
        r, recs, _ = _generate_block(
            ext_rng,
            EXTERNAL_VIDEOS,
            EXTERNAL_VIDEOS // len(FAMILIES),
            f"ext_{name}",
            "test",
            f"ext_{name}",
            fake_manipulation="XFAKE",
            start_row=0,
            **kwargs,
        )
        fpath = out / f"ext_{name}_features.fpk1"
        mpath = out / f"ext_{name}_manifest.csv"
        write_features(np.asarray(r, dtype=np.float32), fpath)
        write_manifest(SampleManifest.from_records(recs, seed), mpath)
        ext_features[name] = fpath
        ext_manifests[name] = mpath

    config_path = out / "experiment.ini"
    config_path.write_text(
        "\n".join(
            [
                "[experiment]",
                "features = id_features.fpk1",
                "manifest = id_manifest.csv",
                "output_dir = runs",
                f"seed = {seed}",
                "conditions = LN, LN_AFFINE, PCA_WHITEN, FEATURE_STD, L2",
                "protocols = id, lomo, cross_dataset",
                "",
                "[conditioning]",
                "ln_eps = 1e-6",
                "pca_eps = 1e-5",
                "pca_components = full",
                "",
                "[probe]",
                "epochs = 8",
                "batch_size = 128",
                "learning_rate = 0.05",
                "momentum = 0.9",
                "l2_reg = 0.0",
                "",
                "[report]",
                "n_boot = 400",
                "level = 0.95",
                "",
                "[external.rotated]",
                "features = ext_rotated_features.fpk1",
                "manifest = ext_rotated_manifest.csv",
                "",
                "[external.mild]",
                "features = ext_mild_features.fpk1",
                "manifest = ext_mild_manifest.csv",
                "",
            ]
        )
    )
    return FixturePaths(
        root=out,
        config=config_path,
        features=features_path,
        manifest=manifest_path,
        external_features=ext_features,
        external_manifests=ext_manifests,
    )
