"""Linear probe training: loss/gradients, checkpoint selection, determinism."""

import numpy as np
import pytest

import oracles
from featprobe.errors import (
    DimMismatchError,
    NonFiniteLossError,
    SingleClassSplitError,
)
from featprobe.metrics import roc_auc
from featprobe.probe import (
    LinearProbeClassifier,
    ProbeConfig,
    load_probe,
    logistic_loss_and_grad,
    probe_digest,
    save_probe,
    score_frames,
    serialize_probe,
    train_probe,
)


def two_gaussians(n_per_class=60, dim=4, separation=6.0, seed=0, frames_per_video=3):
    """Linearly separable synthetic: two Gaussians split 6 sigma apart."""
    rng = np.random.default_rng(seed)
    half = separation / 2.0
    X_pos = rng.normal(half, 1.0, size=(n_per_class, dim))
    X_neg = rng.normal(-half, 1.0, size=(n_per_class, dim))
    X = np.vstack((X_pos, X_neg))
    y = np.concatenate((np.ones(n_per_class, dtype=int), np.zeros(n_per_class, dtype=int)))
    video_ids = [f"v{i // frames_per_video}_{int(lbl)}" for i, lbl in enumerate(y)]
    return X, y, video_ids


# --------------------------------------------------------------------------
# loss and gradient
# --------------------------------------------------------------------------

def test_loss_at_zero_weights_is_log2():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(10, 3))
    y = np.array([0, 1] * 5)
    loss, _, _ = logistic_loss_and_grad(np.zeros(3), 0.0, X, y)
    assert loss == pytest.approx(np.log(2.0), abs=1e-12)


def test_grad_is_pure_l2_when_data_vanishes():
    w = np.array([1.0, -2.0, 3.0])
    X = np.zeros((4, 3))
    y = np.array([0, 1, 0, 1])
    lam = 0.7
    _, grad_w, grad_b = logistic_loss_and_grad(w, 0.0, X, y, l2_reg=lam)
    assert np.allclose(grad_w, lam * w, atol=1e-15)
    assert grad_b == pytest.approx(0.0, abs=1e-15)


def test_gradient_matches_central_differences():
    rng = np.random.default_rng(42)
    worst = 0.0
    for _ in range(50):
        n, dim = 5, 8
        X = rng.normal(size=(n, dim))
        y = rng.integers(0, 2, n)
        w = rng.normal(size=dim)
        b = float(rng.normal())
        lam = float(rng.uniform(0, 0.5))
        loss_fn = lambda w_, b_: logistic_loss_and_grad(w_, b_, X, y, lam)[0]
        _, grad_w, grad_b = logistic_loss_and_grad(w, b, X, y, lam)
        num_w, num_b = oracles.central_difference_grad(loss_fn, w, b, step=1e-4)
        denom = max(np.max(np.abs(grad_w)), abs(grad_b), 1e-8)
        rel = max(np.max(np.abs(grad_w - num_w)), abs(grad_b - num_b)) / denom
        worst = max(worst, rel)
    assert worst < 1e-5


def test_loss_overflow_safe():
    X = np.array([[1e4], [-1e4]])
    y = np.array([1, 0])
    loss, grad_w, grad_b = logistic_loss_and_grad(np.array([10.0]), 0.0, X, y)
    assert np.isfinite(loss) and np.isfinite(grad_w).all() and np.isfinite(grad_b)


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

def test_separable_data_reaches_perfect_val_auc():
    X, y, vids = two_gaussians(seed=1)
    config = ProbeConfig(epochs=10, batch_size=32, learning_rate=0.2, seed=3)
    probe = train_probe(X, y, X, y, vids, config)
    assert probe.val_auc_history_[probe.best_epoch_] == 1.0


def test_training_is_deterministic():
    X, y, vids = two_gaussians(seed=2)
    config = ProbeConfig(epochs=6, batch_size=16, seed=11)
    a = train_probe(X, y, X, y, vids, config)
    b = train_probe(X, y, X, y, vids, config)
    assert np.array_equal(a.coef_, b.coef_)
    assert a.intercept_ == b.intercept_
    assert a.val_auc_history_ == b.val_auc_history_
    assert serialize_probe(a) == serialize_probe(b)


def test_single_class_val_rejected():
    X, y, vids = two_gaussians(seed=3)
    config = ProbeConfig(epochs=2)
    with pytest.raises(SingleClassSplitError):
        train_probe(X, y, X[y == 1], y[y == 1], None, config)


def test_single_class_train_rejected():
    X, y, vids = two_gaussians(seed=4)
    config = ProbeConfig(epochs=2)
    with pytest.raises(SingleClassSplitError):
        train_probe(X[y == 0], y[y == 0], X, y, vids, config)


def test_full_batch_loss_monotone_without_momentum():
    X, y, vids = two_gaussians(n_per_class=40, seed=5)
    config = ProbeConfig(
        epochs=25, batch_size=10_000, learning_rate=0.05, momentum=0.0, seed=0
    )
    probe = train_probe(X, y, X, y, vids, config)
    losses = np.array(probe.loss_history_)
    assert np.all(np.diff(losses) <= 1e-9)


def test_strong_l2_shrinks_weights_and_randomizes_auc():
    rng = np.random.default_rng(6)
    n = 240
    X = rng.normal(size=(n, 6))
    y = np.concatenate((np.ones(n // 2, dtype=int), np.zeros(n // 2, dtype=int)))
    config = ProbeConfig(
        epochs=30, batch_size=64, learning_rate=1e-4, momentum=0.0, l2_reg=1e3, seed=0
    )
    probe = train_probe(X, y, X, y, None, config)
    assert np.linalg.norm(probe.coef_) < 1e-2
    assert abs(probe.val_auc_history_[-1] - 0.5) < 0.2


@pytest.mark.filterwarnings("ignore:overflow")
def test_divergence_raises_non_finite_loss():
    # lr * l2 >> 1 makes the shrinkage term an exponential amplifier
    X, y, vids = two_gaussians(n_per_class=30, seed=7)
    config = ProbeConfig(
        epochs=50, batch_size=8, learning_rate=10.0, momentum=0.9, l2_reg=1.0
    )
    with pytest.raises(NonFiniteLossError):
        train_probe(X, y, X, y, vids, config)


# --------------------------------------------------------------------------
# checkpoint selection
# --------------------------------------------------------------------------

def test_checkpoint_contract_with_scripted_val_auc(monkeypatch):
    """Engineered run: val AUC peaks at epoch 3 (0-based epoch 2) of 10,
    then degrades; the returned probe must be the epoch-3 snapshot."""
    import featprobe.probe as probe_mod

    scripted = [0.60, 0.70, 0.90, 0.85, 0.80, 0.75, 0.70, 0.65, 0.60, 0.55]
    it = iter(scripted)
    monkeypatch.setattr(probe_mod, "roc_auc", lambda y, s: next(it))
    X, y, vids = two_gaussians(seed=8)
    long_run = train_probe(X, y, X, y, vids, ProbeConfig(epochs=10, batch_size=16, seed=21))
    assert long_run.best_epoch_ == 2
    assert long_run.val_auc_history_ == scripted

    # independent check that the snapshot really is the state after 3 epochs:
    # updates do not depend on the AUC values, so a same-seed run stopped at
    # 3 epochs (scripted so its own best is its last epoch) must match bit
    # for bit
    prefix_it = iter([0.60, 0.70, 0.90])
    monkeypatch.setattr(probe_mod, "roc_auc", lambda y, s: next(prefix_it))
    prefix = train_probe(X, y, X, y, vids, ProbeConfig(epochs=3, batch_size=16, seed=21))
    assert prefix.best_epoch_ == 2
    assert np.array_equal(long_run.coef_, prefix.coef_)
    assert long_run.intercept_ == prefix.intercept_


def test_checkpoint_tie_breaks_to_earliest(monkeypatch):
    import featprobe.probe as probe_mod

    X, y, vids = two_gaussians(seed=10)
    it = iter([0.9, 0.9, 0.9, 0.9])
    monkeypatch.setattr(probe_mod, "roc_auc", lambda yy, ss: next(it))
    probe = train_probe(X, y, X, y, vids, ProbeConfig(epochs=4, batch_size=16, seed=5))
    assert probe.best_epoch_ == 0


# --------------------------------------------------------------------------
# scoring and persistence
# --------------------------------------------------------------------------

def test_score_frames_zero_probe():
    probe = LinearProbeClassifier()
    probe.coef_ = np.zeros(3)
    probe.intercept_ = 0.0
    assert np.array_equal(score_frames(probe, np.ones((4, 3))), np.zeros(4))


def test_score_frames_dot_product():
    probe = LinearProbeClassifier()
    probe.coef_ = np.array([1.0, 0.0])
    probe.intercept_ = 1.0
    assert score_frames(probe, np.array([[2.5, 9.0]]))[0] == pytest.approx(3.5)


def test_score_frames_dim_mismatch():
    probe = LinearProbeClassifier()
    probe.coef_ = np.zeros(3)
    probe.intercept_ = 0.0
    with pytest.raises(DimMismatchError):
        score_frames(probe, np.ones((2, 4)))


def test_sigmoid_of_scores_preserves_auc():
    X, y, vids = two_gaussians(seed=11)
    probe = train_probe(X, y, X, y, vids, ProbeConfig(epochs=4, batch_size=32, seed=1))
    s = score_frames(probe, X)
    sig = 1.0 / (1.0 + np.exp(-s))
    assert roc_auc(y, sig) == pytest.approx(roc_auc(y, s), abs=1e-12)


def test_probe_save_load_round_trip(tmp_path):
    X, y, vids = two_gaussians(seed=12)
    probe = train_probe(X, y, X, y, vids, ProbeConfig(epochs=3, batch_size=32, seed=2))
    path = tmp_path / "probe.fpkp"
    save_probe(probe, path)
    back = load_probe(path)
    assert np.array_equal(back.coef_, probe.coef_)
    assert back.intercept_ == probe.intercept_
    assert back.best_epoch_ == probe.best_epoch_
    assert back.val_auc_history_ == pytest.approx(probe.val_auc_history_)
    assert probe_digest(back) == probe_digest(probe)
    assert np.array_equal(score_frames(back, X), score_frames(probe, X))
