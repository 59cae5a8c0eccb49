"""Release acceptance gates: one test per gate, each at a pinned tolerance.

Run with ``pytest tests/test_acceptance.py -v`` for one pass/fail line per
gate; each test also prints its own verdict line.
"""

import filecmp
import time
from pathlib import Path

import numpy as np
import pytest

import oracles
from featprobe.conditioning import (
    ConditionerConfig,
    PCAWhitenConditioner,
    conditioner_digest,
    fit_conditioner,
)
from featprobe.config import load_config
from featprobe.featstore import load_manifest, read_features, select_rows
from featprobe.metrics import average_precision, eer, fpr_at_95, roc_auc
from featprobe.probe import ProbeConfig, logistic_loss_and_grad, train_probe
from featprobe.protocols import build_lomo, lomo_families
from featprobe.report import discover_artifacts, winner_rows, write_reports
from featprobe.sweep import run_sweep


def _announce(name: str) -> None:
    print(f"ACCEPTANCE PASS: {name}")


def test_c01_metric_oracle_suite():
    """AUC/AP/EER/FPR@95 equal brute-force oracles within 1e-9 on 200 sets."""
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    for i in range(200):
        n = int(rng.integers(2, 13))
        y = rng.integers(0, 2, n)
        while y.min() == y.max():
            y = rng.integers(0, 2, n)
        scores = (
            rng.integers(0, 4, n).astype(float) if i % 2 else rng.normal(size=n)
        )
        assert abs(roc_auc(y, scores) - oracles.auc_pair_count(y, scores)) <= 1e-9
        assert abs(average_precision(y, scores) - oracles.ap_exhaustive(y, scores)) <= 1e-9
        assert abs(eer(y, scores) - oracles.eer_exhaustive(y, scores)) <= 1e-9
        assert (
            abs(fpr_at_95(y, scores) - oracles.fpr_at_tpr_exhaustive(y, scores, 0.95))
            <= 1e-9
        )
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0, f"runtime {elapsed:.2f}s exceeds 5s"
    _announce("metric oracle suite (200 sets, 1e-9)")


def test_c02_analytic_gaussian_auc():
    """N(0,1) vs N(1,1), 20k per class: AUC within 0.02 of Phi(1/sqrt(2))."""
    start = time.perf_counter()
    rng = np.random.default_rng(777)
    neg = rng.normal(0.0, 1.0, 20_000)
    pos = rng.normal(1.0, 1.0, 20_000)
    y = np.concatenate((np.zeros(20_000, dtype=int), np.ones(20_000, dtype=int)))
    s = np.concatenate((neg, pos))
    value = roc_auc(y, s)
    target = oracles.normal_cdf(1.0 / np.sqrt(2.0))
    assert target == pytest.approx(0.7602, abs=5e-4)
    assert abs(value - target) <= 0.02
    # large-sample pair-count oracle on a subsample agrees with the fast path
    idx = rng.choice(40_000, size=600, replace=False)
    assert abs(roc_auc(y[idx], s[idx]) - oracles.auc_pair_count(y[idx], s[idx])) <= 1e-9
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0, f"runtime {elapsed:.2f}s exceeds 5s"
    _announce(f"analytic Gaussian AUC ({value:.4f} vs {target:.4f})")


def test_c03_whitening_identity():
    """PCA-Whiten on 4096 x 64 SPD-covariance data whitens its train split."""
    start = time.perf_counter()
    rng = np.random.default_rng(99)
    dim = 64
    q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    eigs = np.geomspace(1.0, 100.0, dim)  # condition number 100
    cov_sqrt = q @ np.diag(np.sqrt(eigs)) @ q.T
    X = rng.normal(size=(4096, dim)) @ cov_sqrt
    eps = 1e-5
    cond = PCAWhitenConditioner(pca_eps=eps).fit(X)
    Z = cond.transform(X)
    emp = oracles.covariance_population(Z)
    off = emp - np.diag(np.diag(emp))
    assert np.max(np.abs(off)) <= 1e-4
    expected = cond.eigenvalues_ / (cond.eigenvalues_ + eps)
    assert np.max(np.abs(np.diag(emp) - expected)) <= 1e-3
    elapsed = time.perf_counter() - start
    assert elapsed < 10.0, f"runtime {elapsed:.2f}s exceeds 10s"
    _announce("whitening identity (64-dim, cond 100)")


def test_c04_gradient_check():
    """Analytic gradient vs central differences: rel error < 1e-5, 50 runs."""
    rng = np.random.default_rng(4242)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(3, 9))
        dim = int(rng.integers(2, 10))
        X = rng.normal(size=(n, dim))
        y = rng.integers(0, 2, n)
        w = rng.normal(size=dim)
        b = float(rng.normal())
        lam = float(rng.uniform(0.0, 1.0))
        _, grad_w, grad_b = logistic_loss_and_grad(w, b, X, y, lam)
        loss_fn = lambda w_, b_: logistic_loss_and_grad(w_, b_, X, y, lam)[0]
        num_w, num_b = oracles.central_difference_grad(loss_fn, w, b, step=1e-4)
        scale = max(np.max(np.abs(grad_w)), abs(grad_b), 1e-8)
        worst = max(
            worst,
            max(np.max(np.abs(grad_w - num_w)), abs(grad_b - num_b)) / scale,
        )
    assert worst < 1e-5, f"max relative error {worst:.2e}"
    _announce(f"gradient check (max rel err {worst:.2e})")


def test_c05_checkpoint_selection(monkeypatch):
    """Val AUC peaking at epoch 3 of 10 returns the epoch-3 snapshot."""
    import featprobe.probe as probe_mod

    rng = np.random.default_rng(11)
    X = np.vstack((rng.normal(2, 1, (60, 4)), rng.normal(-2, 1, (60, 4))))
    y = np.concatenate((np.ones(60, dtype=int), np.zeros(60, dtype=int)))
    vids = [f"v{i // 3}_{lbl}" for i, lbl in enumerate(y)]

    scripted = [0.55, 0.70, 0.90, 0.85, 0.80, 0.70, 0.65, 0.60, 0.58, 0.55]
    it = iter(scripted)
    monkeypatch.setattr(probe_mod, "roc_auc", lambda a, b: next(it))
    probe = train_probe(X, y, X, y, vids, ProbeConfig(epochs=10, batch_size=32, seed=3))
    assert probe.best_epoch_ == 2
    assert probe.val_auc_history_ == scripted

    prefix_it = iter([0.55, 0.70, 0.90])
    monkeypatch.setattr(probe_mod, "roc_auc", lambda a, b: next(prefix_it))
    prefix = train_probe(X, y, X, y, vids, ProbeConfig(epochs=3, batch_size=32, seed=3))
    assert np.array_equal(probe.coef_, prefix.coef_)
    assert probe.intercept_ == prefix.intercept_
    _announce("checkpoint selection (peak at epoch 3 of 10)")


def test_c06_no_leakage(fixture_dir):
    """Conditioner state ignores val/test rows; LOMO folds exclude held-out."""
    features = read_features(fixture_dir.features)
    manifest = load_manifest(fixture_dir.manifest)

    X_train, train_manifest = select_rows(features, manifest, lambda r: r.split == "train")
    for kind in ("FEATURE_STD", "PCA_WHITEN", "LN", "LN_AFFINE", "L2"):
        cfg = ConditionerConfig(kind=kind)
        baseline = fit_conditioner(cfg, X_train, manifest_hash=train_manifest.content_hash)
        # arbitrary replacement of every val/test feature row
        tampered = np.array(features, copy=True)
        rng = np.random.default_rng(0)
        for rec in manifest.records:
            if rec.split != "train":
                tampered[rec.row_index] = rng.normal(size=features.shape[1])
        X_train2, train_manifest2 = select_rows(
            tampered, manifest, lambda r: r.split == "train"
        )
        assert train_manifest2.content_hash == train_manifest.content_hash
        refit = fit_conditioner(cfg, X_train2, manifest_hash=train_manifest2.content_hash)
        assert conditioner_digest(refit) == conditioner_digest(baseline)
        assert refit.fit_key_ == baseline.fit_key_

    by_row = {rec.row_index: rec for rec in manifest.records}
    for family in lomo_families(manifest):
        plan = build_lomo(manifest, family)
        train_val = np.concatenate((plan.train_rows, plan.val_rows))
        held_rows = [i for i in train_val if by_row[int(i)].manipulation == family]
        assert held_rows == []
    _announce("no-leakage (digest invariance + LOMO exclusion, 4 folds)")


def test_c07_end_to_end_determinism(fixture_dir, tmp_path):
    """Two full sweeps on the bundled fixture produce byte-identical trees."""
    start = time.perf_counter()
    trees = []
    for name in ("runA", "runB"):
        out = tmp_path / name
        config = load_config(fixture_dir.config, output_dir=out)
        results = run_sweep(config)
        assert all(r.status == "done" for r in results), [r.error for r in results]
        assert len(results) == 40  # 5 conditions x (id + 4 folds + pooled + 2 externals)
        write_reports(out, n_boot=config.n_boot, level=config.ci_level, seed=config.seed)
        trees.append(out)
    all_files = sorted(
        p.relative_to(trees[0]) for p in trees[0].rglob("*") if p.is_file()
    )
    other_files = sorted(
        p.relative_to(trees[1]) for p in trees[1].rglob("*") if p.is_file()
    )
    assert all_files == other_files
    mismatched = [
        str(rel)
        for rel in all_files
        if not filecmp.cmp(trees[0] / rel, trees[1] / rel, shallow=False)
    ]
    assert mismatched == []
    elapsed = time.perf_counter() - start
    assert elapsed < 120.0, f"runtime {elapsed:.1f}s exceeds 2 min"
    _announce(f"end-to-end determinism ({len(all_files)} files, {elapsed:.1f}s)")


def _id_and_xd_aucs(config):
    pairs = discover_artifacts(config.output_dir)
    id_auc = {}
    xd_auc = {}
    for tag, art in pairs:
        if tag == "id":
            id_auc[art.condition] = roc_auc(*art.video_set())
        elif tag.startswith("xd-"):
            xd_auc.setdefault(tag[len("xd-"):], {})[art.condition] = roc_auc(
                *art.video_set()
            )
    return id_auc, xd_auc, pairs


def test_c08_separable_end_to_end(swept_dir):
    """Separable fixture: ID video AUC >= 0.99, EER <= 0.01, FPR@95 <= 0.01."""
    pairs = discover_artifacts(swept_dir.output_dir)
    seen = 0
    for tag, art in pairs:
        if tag != "id":
            continue
        labels, scores = art.video_set()
        assert roc_auc(labels, scores) >= 0.99, art.condition
        assert eer(labels, scores) <= 0.01, art.condition
        assert fpr_at_95(labels, scores) <= 0.01, art.condition
        seen += 1
    assert seen == 5
    _announce("separable end-to-end (all 5 conditions)")


def test_c09_shift_sensitivity_ordering(swept_dir):
    """Rotated externals: PCA-Whiten drops >= 0.05; LN's drop is smaller."""
    id_auc, xd_auc, _ = _id_and_xd_aucs(swept_dir)
    rotated = xd_auc["rotated"]
    pca_drop = id_auc["PCA_WHITEN"] - rotated["PCA_WHITEN"]
    ln_drop = id_auc["LN"] - rotated["LN"]
    assert pca_drop >= 0.05, f"PCA-Whiten drop {pca_drop:.4f}"
    assert ln_drop < pca_drop, f"LN drop {ln_drop:.4f} vs PCA {pca_drop:.4f}"
    _announce(
        f"shift sensitivity (PCA drop {pca_drop:.3f} >= 0.05 > LN drop {ln_drop:.3f})"
    )


def test_c10_report_shapes(swept_dir, tmp_path):
    """LOMO mean/std, Mean-XD, and winners recompute exactly from artifacts."""
    import csv

    written = {
        p.name: p
        for p in write_reports(
            swept_dir.output_dir,
            n_boot=swept_dir.n_boot,
            level=swept_dir.ci_level,
            seed=swept_dir.seed,
        )
    }
    pairs = discover_artifacts(swept_dir.output_dir)

    def rows_of(name):
        with open(written[name], newline="") as fh:
            rows = list(csv.reader(fh))
        return rows[0], rows[1:]

    # Table-4 shape: mean/std recompute exactly from the four fold artifacts
    fold_aucs = {}
    for tag, art in pairs:
        if tag.startswith("lomo-") and tag != "lomo-pooled":
            fold_aucs.setdefault(art.condition, []).append(roc_auc(*art.video_set()))
    _, summary_rows = rows_of("table_lomo_summary.csv")
    for row in summary_rows:
        aucs = np.array(fold_aucs[row[0]])
        assert len(aucs) == 4
        assert abs(float(row[1]) - aucs.mean()) <= 1e-12
        assert abs(float(row[2]) - aucs.std()) <= 1e-12

    # Table-8 shape: Mean XD AUC equals the mean of the two external AUCs
    id_auc, xd_auc, _ = _id_and_xd_aucs(swept_dir)
    _, xd_rows = rows_of("table_xd_summary.csv")
    for row in xd_rows:
        condition = row[0]
        expected = np.mean([xd_auc["mild"][condition], xd_auc["rotated"][condition]])
        assert abs(float(row[3]) - expected) <= 1e-12

    # Table-10 shape: winner table equals an independent argmax recompute
    lomo_mean = {c: float(np.mean(v)) for c, v in fold_aucs.items()}
    independent = {
        "id": id_auc,
        "lomo": lomo_mean,
        "xd_mild": xd_auc["mild"],
        "xd_rotated": xd_auc["rotated"],
    }
    expected_rows = {row[0]: row for row in winner_rows(independent)}
    _, got_rows = rows_of("winner_table.csv")
    for row in got_rows:
        protocol, winner, auc_value, tie = row
        exp = expected_rows[protocol]
        assert winner == exp[1]
        assert abs(float(auc_value) - exp[2]) <= 1e-12
        assert (tie == "True") == exp[3]
    _announce("report shapes (LOMO summary, mean-XD, winner table)")
