"""Small factories shared across test modules."""

from __future__ import annotations

import numpy as np

from featprobe.featstore import SampleManifest, SampleRecord


def record(
    row: int,
    video: str,
    label: int = 0,
    manipulation: str | None = None,
    source: str = "synth",
    split: str = "train",
) -> SampleRecord:
    if manipulation is None:
        manipulation = "REAL" if label == 0 else "DF"
    return SampleRecord(
        row_index=row,
        video_id=video,
        label=label,
        manipulation=manipulation,
        source=source,
        split=split,
    )


def manifest_from(rows, seed: int = 0) -> SampleManifest:
    return SampleManifest.from_records(rows, seed)


def four_family_manifest(
    frames_per_video: int = 2,
    videos_per_family: dict[str, int] | None = None,
    seed: int = 0,
) -> tuple[np.ndarray, SampleManifest]:
    """A paired (features, manifest) covering REAL plus DF/F2F/FS/NT in all
    three splits. Features are deterministic but arbitrary."""
    families = ["REAL", "DF", "F2F", "FS", "NT"]
    per_family = videos_per_family or {f: 3 for f in families}
    rng = np.random.default_rng(seed)
    records = []
    row = 0
    for fam in families:
        label = 0 if fam == "REAL" else 1
        n_videos = per_family[fam]
        for v in range(n_videos):
            if n_videos >= 3:
                split = ["train", "val", "test"][v % 3]
            else:
                split = "train"
            video = f"{fam.lower()}_v{v}"
            for _ in range(frames_per_video):
                records.append(
                    SampleRecord(
                        row_index=row,
                        video_id=video,
                        label=label,
                        manipulation=fam,
                        source="synth",
                        split=split,
                    )
                )
                row += 1
    features = rng.normal(size=(row, 6)).astype(np.float32)
    return features, SampleManifest.from_records(records, seed)
