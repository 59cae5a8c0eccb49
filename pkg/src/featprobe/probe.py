"""Head-only logistic linear probe over frozen, conditioned features.

Training is mini-batch SGD with momentum at a fixed learning rate, shuffled
per epoch from a seeded generator, so (data, config) -> probe is a pure
function and two runs are bit-identical. After every epoch the validation
frames are scored, aggregated to video level by mean, and ranked by AUC; the
returned weights are the snapshot of the best-AUC epoch with ties resolved
to the earliest epoch.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .errors import (
    BadMagicError,
    DigestMismatchError,
    DimMismatchError,
    NonFiniteLossError,
    SingleClassSplitError,
    TruncatedFileError,
    VersionUnsupportedError,
)
from .featstore import atomic_write_bytes
from .metrics import mean_by_group, roc_auc
from .validation import as_binary_labels, as_float_matrix, both_classes_present

PROBE_MAGIC = b"FPKP"
PROBE_VERSION = 1


@dataclass(frozen=True)
class ProbeConfig:
    """Optimizer hyperparameters; the recipe is held fixed across a sweep."""

    epochs: int = 20
    batch_size: int = 256
    learning_rate: float = 0.1
    momentum: float = 0.9
    l2_reg: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.l2_reg < 0:
            raise ValueError("l2_reg must be non-negative")

    def canonical(self) -> str:
        return (
            f'{{"batch_size":{self.batch_size},"epochs":{self.epochs},'
            f'"l2_reg":{self.l2_reg!r},"learning_rate":{self.learning_rate!r},'
            f'"momentum":{self.momentum!r},"seed":{self.seed}}}'
        )


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # exp(-logaddexp(0, -z)) is overflow-safe for any z
    return np.exp(-np.logaddexp(0.0, -z))


def logistic_loss_and_grad(
    w: np.ndarray, b: float, X: np.ndarray, y: np.ndarray, l2_reg: float = 0.0
) -> tuple[float, np.ndarray, float]:
    """Mean logistic loss with L2 penalty and its exact gradient.

    loss = (1/n) sum_i [log(1 + exp(z_i)) - y_i z_i] + (l2/2) ||w||^2 with
    z_i = w.x_i + b, evaluated via logaddexp so large |z| cannot overflow.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    n = X.shape[0]
    z = X @ w + b
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2_reg * (w @ w))
    residual = _sigmoid(z) - y
    grad_w = X.T @ residual / n + l2_reg * w
    grad_b = float(residual.mean())
    return loss, grad_w, grad_b


class LinearProbeClassifier(BaseEstimator, ClassifierMixin):
    """Logistic linear head trained on frozen features.

    Fitted attributes: ``coef_`` (weights), ``intercept_``, ``best_epoch_``,
    ``val_auc_history_`` (video-level AUC per epoch) and ``loss_history_``
    (full train loss at each epoch end).
    """

    def __init__(
        self,
        epochs: int = 20,
        batch_size: int = 256,
        learning_rate: float = 0.1,
        momentum: float = 0.9,
        l2_reg: float = 0.0,
        seed: int = 0,
    ):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.l2_reg = l2_reg
        self.seed = seed

    @classmethod
    def from_config(cls, config: ProbeConfig) -> "LinearProbeClassifier":
        return cls(
            epochs=config.epochs,
            batch_size=config.batch_size,
            learning_rate=config.learning_rate,
            momentum=config.momentum,
            l2_reg=config.l2_reg,
            seed=config.seed,
        )

    def get_probe_config(self) -> ProbeConfig:
        return ProbeConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            l2_reg=self.l2_reg,
            seed=self.seed,
        )

    def fit(self, X, y, X_val=None, y_val=None, val_video_ids=None):
        """Train with per-epoch checkpointing on video-level validation AUC.

        ``val_video_ids`` groups validation frames into videos; without it
        every frame counts as its own single-frame video.
        """
        self.get_probe_config()  # bounds check on the hyperparameters
        X = as_float_matrix(X)
        y = as_binary_labels(y, n=X.shape[0])
        if X_val is None or y_val is None:
            raise ValueError("validation split is required for checkpoint selection")
        X_val = as_float_matrix(X_val)
        y_val = as_binary_labels(y_val, n=X_val.shape[0])
        if X_val.shape[1] != X.shape[1]:
            raise DimMismatchError(
                f"val dim {X_val.shape[1]} against train dim {X.shape[1]}"
            )
        if not both_classes_present(y):
            raise SingleClassSplitError("train split contains a single class")
        if val_video_ids is None:
            val_video_ids = np.arange(y_val.shape[0])
        vid_keys, _ = mean_by_group(np.zeros(y_val.shape[0]), val_video_ids)
        _, vid_label_means = mean_by_group(y_val.astype(np.float64), val_video_ids)
        vid_labels = vid_label_means.astype(np.int64)
        if not both_classes_present(vid_labels):
            raise SingleClassSplitError("validation split contains a single class")

        n, dim = X.shape
        w = np.zeros(dim, dtype=np.float64)
        b = 0.0
        vel_w = np.zeros(dim, dtype=np.float64)
        vel_b = 0.0
        rng = np.random.default_rng(self.seed)

        best_auc = -np.inf
        best_epoch = -1
        best_w = w.copy()
        best_b = b
        auc_history: list[float] = []
        loss_history: list[float] = []

        for epoch in range(self.epochs):
            perm = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = perm[start : start + self.batch_size]
                loss, grad_w, grad_b = logistic_loss_and_grad(
                    w, b, X[idx], y[idx], self.l2_reg
                )
                if not np.isfinite(loss):
                    raise NonFiniteLossError(
                        f"loss diverged at epoch {epoch}; lower the learning rate"
                    )
                vel_w = self.momentum * vel_w + grad_w
                vel_b = self.momentum * vel_b + grad_b
                w = w - self.learning_rate * vel_w
                b = b - self.learning_rate * vel_b
            epoch_loss, _, _ = logistic_loss_and_grad(w, b, X, y, self.l2_reg)
            if not np.isfinite(epoch_loss):
                raise NonFiniteLossError(
                    f"loss diverged at epoch {epoch}; lower the learning rate"
                )
            loss_history.append(epoch_loss)
            _, vid_scores = mean_by_group(X_val @ w + b, val_video_ids)
            epoch_auc = roc_auc(vid_labels, vid_scores)
            auc_history.append(epoch_auc)
            if epoch_auc > best_auc:  # strict: ties keep the earliest epoch
                best_auc = epoch_auc
                best_epoch = epoch
                best_w = w.copy()
                best_b = b

        self.coef_ = best_w
        self.intercept_ = float(best_b)
        self.best_epoch_ = int(best_epoch)
        self.val_auc_history_ = auc_history
        self.loss_history_ = loss_history
        self.classes_ = np.array([0, 1])
        return self

    def decision_function(self, X) -> np.ndarray:
        X = as_float_matrix(X)
        if X.shape[1] != self.coef_.shape[0]:
            raise DimMismatchError(
                f"input dim {X.shape[1]} against probe dim {self.coef_.shape[0]}"
            )
        return X @ self.coef_ + self.intercept_

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) > 0.0).astype(np.int64)


def train_probe(
    X_train, y_train, X_val, y_val, val_video_ids, config: ProbeConfig
) -> LinearProbeClassifier:
    probe = LinearProbeClassifier.from_config(config)
    return probe.fit(X_train, y_train, X_val=X_val, y_val=y_val, val_video_ids=val_video_ids)


def score_frames(probe: LinearProbeClassifier, X) -> np.ndarray:
    """Raw logits w.x + b; monotone in probability, sufficient for ranking."""
    return probe.decision_function(X)


# --------------------------------------------------------------------------
# checkpoint files (FPKP)
# --------------------------------------------------------------------------

def serialize_probe(probe: LinearProbeClassifier) -> bytes:
    w = np.ascontiguousarray(probe.coef_, dtype="<f8")
    hist = np.ascontiguousarray(probe.val_auc_history_, dtype="<f8")
    body = PROBE_MAGIC + struct.pack("<I", PROBE_VERSION)
    body += struct.pack("<I", w.shape[0]) + w.tobytes()
    body += struct.pack("<d", probe.intercept_)
    body += struct.pack("<I", probe.best_epoch_)
    body += struct.pack("<I", hist.shape[0]) + hist.tobytes()
    return body + hashlib.sha256(body).digest()


def probe_digest(probe: LinearProbeClassifier) -> str:
    return hashlib.sha256(serialize_probe(probe)[:-32]).hexdigest()


def save_probe(probe: LinearProbeClassifier, path: str | Path) -> None:
    atomic_write_bytes(path, serialize_probe(probe))


def load_probe(path: str | Path) -> LinearProbeClassifier:
    blob = Path(path).read_bytes()
    if len(blob) < 8 + 32:
        raise TruncatedFileError(f"{path}: shorter than the FPKP header")
    body, stored = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != stored:
        raise DigestMismatchError(f"{path}: probe digest mismatch")
    if body[:4] != PROBE_MAGIC:
        raise BadMagicError(f"{path}: magic {body[:4]!r}, expected {PROBE_MAGIC!r}")
    off = 4
    (version,) = struct.unpack_from("<I", body, off)
    off += 4
    if version != PROBE_VERSION:
        raise VersionUnsupportedError(f"{path}: probe version {version}")
    (dim,) = struct.unpack_from("<I", body, off)
    off += 4
    w = np.frombuffer(body, dtype="<f8", count=dim, offset=off).copy()
    off += dim * 8
    (b,) = struct.unpack_from("<d", body, off)
    off += 8
    (best_epoch,) = struct.unpack_from("<I", body, off)
    off += 4
    (n_hist,) = struct.unpack_from("<I", body, off)
    off += 4
    hist = np.frombuffer(body, dtype="<f8", count=n_hist, offset=off)
    probe = LinearProbeClassifier()
    probe.coef_ = w
    probe.intercept_ = float(b)
    probe.best_epoch_ = int(best_epoch)
    probe.val_auc_history_ = [float(v) for v in hist]
    probe.classes_ = np.array([0, 1])
    return probe
