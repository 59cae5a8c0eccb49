"""Post-pool feature conditioning: five variants behind one transformer API.

Two variants are parameter-free (per-sample layer normalization and L2), one
loads external parameters (affine layer normalization with a gamma/beta
sidecar), and two are fitted on the train split only (per-dimension
standardization and PCA whitening). Fitted statistics are cached keyed by a
digest of (train manifest content hash, config), so validation/test reuse
never refits and never sees anything but train rows.

All transforms consume float32 storage matrices and produce float64 output.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import ClassVar

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import (
    AffineFileMissingError,
    BadMagicError,
    CacheCorruptError,
    DimMismatchError,
    EigenFailureError,
    TooFewRowsError,
    TruncatedFileError,
    ZeroVectorError,
)
from .featstore import atomic_write_bytes
from .validation import as_float_matrix

KIND_LN = "LN"
KIND_LN_AFFINE = "LN_AFFINE"
KIND_L2 = "L2"
KIND_FEATURE_STD = "FEATURE_STD"
KIND_PCA_WHITEN = "PCA_WHITEN"
CONDITION_KINDS = (KIND_LN, KIND_LN_AFFINE, KIND_L2, KIND_FEATURE_STD, KIND_PCA_WHITEN)

DEFAULT_LN_EPS = 1e-6
DEFAULT_PCA_EPS = 1e-5

# constant columns map to 0 instead of Inf under Feature-Std
SIGMA_FLOOR = 1e-8

CACHE_MAGIC = b"FPKC"
CACHE_VERSION = 1
AFFINE_MAGIC = b"FPKA"


@dataclass(frozen=True)
class ConditionerConfig:
    """Which conditioning variant to apply, plus its numeric knobs."""

    kind: str
    ln_eps: float = DEFAULT_LN_EPS
    pca_eps: float = DEFAULT_PCA_EPS
    pca_components: int | None = None  # None = full rank
    affine_source: str | None = None

    def __post_init__(self):
        if self.kind not in CONDITION_KINDS:
            raise ValueError(f"unknown conditioning kind {self.kind!r}")
        if self.ln_eps <= 0:
            raise ValueError("ln_eps must be strictly positive")
        if self.pca_eps <= 0:
            raise ValueError("pca_eps must be strictly positive")
        if self.pca_components is not None and self.pca_components < 1:
            raise ValueError("pca_components must be a positive integer")

    def canonical(self) -> str:
        return json.dumps(
            {
                "kind": self.kind,
                "ln_eps": self.ln_eps,
                "pca_eps": self.pca_eps,
                "pca_components": self.pca_components,
                "affine_source": self.affine_source,
            },
            sort_keys=True,
            separators=(",", ":"),
        )


def compute_fit_key(config: ConditionerConfig, manifest_hash: str) -> str:
    payload = f"{manifest_hash}\n{config.canonical()}".encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


# --------------------------------------------------------------------------
# vector-level transforms
# --------------------------------------------------------------------------

def apply_ln(x, ln_eps: float = DEFAULT_LN_EPS) -> np.ndarray:
    """Per-sample layer normalization over the feature axis.

    y_j = (x_j - mean(x)) / sqrt(var_pop(x) + ln_eps), with population
    variance over the vector's own dimensions.
    """
    arr = np.asarray(x, dtype=np.float64)
    mu = arr.mean(axis=-1, keepdims=True)
    var = arr.var(axis=-1, keepdims=True)
    return (arr - mu) / np.sqrt(var + ln_eps)


def apply_ln_affine(x, gamma, beta, ln_eps: float = DEFAULT_LN_EPS) -> np.ndarray:
    """Elementwise gamma * apply_ln(x) + beta."""
    arr = np.asarray(x, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    beta = np.asarray(beta, dtype=np.float64)
    dim = arr.shape[-1]
    if gamma.shape != (dim,) or beta.shape != (dim,):
        raise DimMismatchError(
            f"gamma/beta of shape {gamma.shape}/{beta.shape} against dim {dim}"
        )
    return gamma * apply_ln(arr, ln_eps) + beta


def apply_l2(x) -> np.ndarray:
    """Scale each sample to unit Euclidean norm; zero vectors fail loudly."""
    arr = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    if np.any(norms == 0.0):
        raise ZeroVectorError("cannot L2-normalize an all-zero descriptor")
    return arr / norms


# --------------------------------------------------------------------------
# estimators
# --------------------------------------------------------------------------

class _ConditionerBase(BaseEstimator, TransformerMixin):
    """Shared config/caching plumbing for the five conditioners."""

    kind: ClassVar[str]

    def config(self) -> ConditionerConfig:
        params = {
            "ln_eps": getattr(self, "ln_eps", DEFAULT_LN_EPS),
            "pca_eps": getattr(self, "pca_eps", DEFAULT_PCA_EPS),
            "pca_components": getattr(self, "pca_components", None),
            "affine_source": getattr(self, "affine_source", None),
        }
        return ConditionerConfig(kind=self.kind, **params)

    def _finish_fit(self, manifest_hash: str | None) -> None:
        self.fit_key_ = (
            compute_fit_key(self.config(), manifest_hash)
            if manifest_hash is not None
            else None
        )

    # per-kind fitted arrays in a fixed order, for serialization
    def _state_arrays(self) -> list[tuple[str, np.ndarray]]:
        return []

    def _restore_state(self, arrays: dict[str, np.ndarray]) -> None:
        pass


class LayerNormConditioner(_ConditionerBase):
    """Parameter-free per-sample layer normalization."""

    kind = KIND_LN

    def __init__(self, ln_eps: float = DEFAULT_LN_EPS):
        self.ln_eps = ln_eps

    def fit(self, X, y=None, manifest_hash: str | None = None):
        self._finish_fit(manifest_hash)
        return self

    def transform(self, X) -> np.ndarray:
        return apply_ln(as_float_matrix(X), self.ln_eps)


class AffineLayerNormConditioner(_ConditionerBase):
    """Layer normalization followed by a loaded elementwise affine.

    Gamma/beta come from an FPKA sidecar (the frozen backbone head's affine
    parameters); without a sidecar the identity affine is used, which makes
    this variant coincide with plain LN.
    """

    kind = KIND_LN_AFFINE

    def __init__(self, ln_eps: float = DEFAULT_LN_EPS, affine_source: str | None = None):
        self.ln_eps = ln_eps
        self.affine_source = affine_source

    def fit(self, X, y=None, manifest_hash: str | None = None):
        X = as_float_matrix(X)
        dim = X.shape[1]
        if self.affine_source is None:
            self.gamma_ = np.ones(dim, dtype=np.float64)
            self.beta_ = np.zeros(dim, dtype=np.float64)
        else:
            gamma, beta = read_affine_sidecar(self.affine_source)
            if gamma.shape[0] != dim:
                raise DimMismatchError(
                    f"affine sidecar dim {gamma.shape[0]} against features dim {dim}"
                )
            self.gamma_ = gamma.astype(np.float64)
            self.beta_ = beta.astype(np.float64)
        self._finish_fit(manifest_hash)
        return self

    def transform(self, X) -> np.ndarray:
        return apply_ln_affine(as_float_matrix(X), self.gamma_, self.beta_, self.ln_eps)

    def _state_arrays(self):
        return [("gamma", self.gamma_), ("beta", self.beta_)]

    def _restore_state(self, arrays):
        self.gamma_ = arrays["gamma"]
        self.beta_ = arrays["beta"]


class L2Conditioner(_ConditionerBase):
    """Parameter-free per-sample unit-norm scaling."""

    kind = KIND_L2

    def __init__(self):
        pass

    def fit(self, X, y=None, manifest_hash: str | None = None):
        self._finish_fit(manifest_hash)
        return self

    def transform(self, X) -> np.ndarray:
        return apply_l2(as_float_matrix(X))


class FeatureStdConditioner(_ConditionerBase):
    """Per-dimension standardization with train-split mean/std."""

    kind = KIND_FEATURE_STD

    def __init__(self):
        pass

    def fit(self, X, y=None, manifest_hash: str | None = None):
        X = as_float_matrix(X)
        if X.shape[0] < 2:
            raise TooFewRowsError("Feature-Std needs at least 2 train rows")
        self.mean_ = X.mean(axis=0)
        self.scale_ = X.std(axis=0)  # population std
        self._finish_fit(manifest_hash)
        return self

    def transform(self, X) -> np.ndarray:
        X = as_float_matrix(X)
        if X.shape[1] != self.mean_.shape[0]:
            raise DimMismatchError(
                f"input dim {X.shape[1]} against fitted dim {self.mean_.shape[0]}"
            )
        return (X - self.mean_) / np.maximum(self.scale_, SIGMA_FLOOR)

    def _state_arrays(self):
        return [("mean", self.mean_), ("scale", self.scale_)]

    def _restore_state(self, arrays):
        self.mean_ = arrays["mean"]
        self.scale_ = arrays["scale"]


class PCAWhitenConditioner(_ConditionerBase):
    """Projection onto train-covariance eigenvectors with variance equalization.

    Fit eigendecomposes the population covariance of the train rows with a
    symmetric solver; eigenvalues are clamped at zero and sorted descending,
    and each eigenvector's sign is fixed so its largest-magnitude entry is
    positive (bit-reproducible fits).
    """

    kind = KIND_PCA_WHITEN

    def __init__(self, pca_eps: float = DEFAULT_PCA_EPS, pca_components: int | None = None):
        self.pca_eps = pca_eps
        self.pca_components = pca_components

    def fit(self, X, y=None, manifest_hash: str | None = None):
        X = as_float_matrix(X)
        n, dim = X.shape
        if n < 2:
            raise TooFewRowsError("PCA-Whiten needs at least 2 train rows")
        k = dim if self.pca_components is None else self.pca_components
        if k > dim:
            raise DimMismatchError(f"pca_components={k} exceeds feature dim {dim}")
        self.mean_ = X.mean(axis=0)
        centered = X - self.mean_
        cov = centered.T @ centered / n
        try:
            eigvals, eigvecs = np.linalg.eigh(cov)
        except np.linalg.LinAlgError as exc:
            raise EigenFailureError(f"eigendecomposition failed: {exc}") from exc
        order = np.argsort(eigvals)[::-1]
        eigvals = np.maximum(eigvals[order], 0.0)
        eigvecs = eigvecs[:, order]
        # sign convention: largest-|component| entry positive
        flip = eigvecs[np.argmax(np.abs(eigvecs), axis=0), np.arange(dim)] < 0
        eigvecs[:, flip] *= -1.0
        self.eigenvalues_ = eigvals[:k]
        self.components_ = eigvecs[:, :k]
        self._finish_fit(manifest_hash)
        return self

    def transform(self, X) -> np.ndarray:
        X = as_float_matrix(X)
        if X.shape[1] != self.mean_.shape[0]:
            raise DimMismatchError(
                f"input dim {X.shape[1]} against fitted dim {self.mean_.shape[0]}"
            )
        projected = (X - self.mean_) @ self.components_
        return projected / np.sqrt(self.eigenvalues_ + self.pca_eps)

    def _state_arrays(self):
        return [
            ("mean", self.mean_),
            ("eigenvalues", self.eigenvalues_),
            ("components", self.components_),
        ]

    def _restore_state(self, arrays):
        self.mean_ = arrays["mean"]
        self.eigenvalues_ = arrays["eigenvalues"]
        self.components_ = arrays["components"]


_CLASSES = {
    KIND_LN: LayerNormConditioner,
    KIND_LN_AFFINE: AffineLayerNormConditioner,
    KIND_L2: L2Conditioner,
    KIND_FEATURE_STD: FeatureStdConditioner,
    KIND_PCA_WHITEN: PCAWhitenConditioner,
}


def make_conditioner(config: ConditionerConfig) -> _ConditionerBase:
    """Unfitted estimator for a config; fit on train rows before use."""
    if config.kind == KIND_LN:
        return LayerNormConditioner(ln_eps=config.ln_eps)
    if config.kind == KIND_LN_AFFINE:
        return AffineLayerNormConditioner(
            ln_eps=config.ln_eps, affine_source=config.affine_source
        )
    if config.kind == KIND_L2:
        return L2Conditioner()
    if config.kind == KIND_FEATURE_STD:
        return FeatureStdConditioner()
    if config.kind == KIND_PCA_WHITEN:
        return PCAWhitenConditioner(
            pca_eps=config.pca_eps, pca_components=config.pca_components
        )
    raise ValueError(f"unknown conditioning kind {config.kind!r}")


def fit_conditioner(
    config: ConditionerConfig, X_train, manifest_hash: str | None = None
) -> _ConditionerBase:
    """Dispatch to the per-kind fit; parameter-free kinds skip the data pass."""
    cond = make_conditioner(config)
    return cond.fit(X_train, manifest_hash=manifest_hash)


# --------------------------------------------------------------------------
# affine sidecar (FPKA)
# --------------------------------------------------------------------------

def write_affine_sidecar(path: str | Path, gamma, beta) -> None:
    """FPKA layout: magic, u32 dim, dim float32 gamma, dim float32 beta."""
    gamma = np.ascontiguousarray(np.asarray(gamma, dtype="<f4"))
    beta = np.ascontiguousarray(np.asarray(beta, dtype="<f4"))
    if gamma.ndim != 1 or gamma.shape != beta.shape:
        raise DimMismatchError("gamma and beta must be equal-length vectors")
    blob = AFFINE_MAGIC + struct.pack("<I", gamma.shape[0])
    blob += gamma.tobytes() + beta.tobytes()
    atomic_write_bytes(path, blob)


def read_affine_sidecar(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    p = Path(path)
    if not p.exists():
        raise AffineFileMissingError(f"affine sidecar not found: {p}")
    blob = p.read_bytes()
    if len(blob) < 8:
        raise TruncatedFileError(f"{p}: shorter than the FPKA header")
    if blob[:4] != AFFINE_MAGIC:
        raise BadMagicError(f"{p}: magic {blob[:4]!r}, expected {AFFINE_MAGIC!r}")
    (dim,) = struct.unpack("<I", blob[4:8])
    expected = 8 + 2 * dim * 4
    if len(blob) != expected:
        raise TruncatedFileError(f"{p}: {len(blob)} bytes, header implies {expected}")
    gamma = np.frombuffer(blob, dtype="<f4", count=dim, offset=8)
    beta = np.frombuffer(blob, dtype="<f4", count=dim, offset=8 + dim * 4)
    return gamma.astype(np.float64), beta.astype(np.float64)


# --------------------------------------------------------------------------
# serialization and cache (FPKC)
# --------------------------------------------------------------------------

def _serialize_state(cond: _ConditionerBase) -> bytes:
    config_json = cond.config().canonical().encode("utf-8")
    fit_key = (getattr(cond, "fit_key_", None) or "").encode("ascii")
    out = [CACHE_MAGIC, struct.pack("<I", CACHE_VERSION)]
    out.append(struct.pack("<I", len(config_json)))
    out.append(config_json)
    out.append(struct.pack("<I", len(fit_key)))
    out.append(fit_key)
    arrays = cond._state_arrays()
    out.append(struct.pack("<I", len(arrays)))
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        name_b = name.encode("ascii")
        out.append(struct.pack("<I", len(name_b)))
        out.append(name_b)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def serialize_conditioner(cond: _ConditionerBase) -> bytes:
    body = _serialize_state(cond)
    return body + hashlib.sha256(body).digest()


def conditioner_digest(cond: _ConditionerBase) -> str:
    """Digest of the fitted state; changes iff the state changes."""
    return hashlib.sha256(_serialize_state(cond)).hexdigest()


def save_conditioner(cond: _ConditionerBase, path: str | Path) -> None:
    atomic_write_bytes(path, serialize_conditioner(cond))


def deserialize_conditioner(blob: bytes, origin: str = "<bytes>") -> _ConditionerBase:
    if len(blob) < 40:
        raise CacheCorruptError(f"{origin}: too short to be an FPKC entry")
    body, stored = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != stored:
        raise CacheCorruptError(f"{origin}: digest mismatch")
    if body[:4] != CACHE_MAGIC:
        raise CacheCorruptError(f"{origin}: bad magic {body[:4]!r}")
    off = 4
    (version,) = struct.unpack_from("<I", body, off)
    off += 4
    if version != CACHE_VERSION:
        raise CacheCorruptError(f"{origin}: unsupported cache version {version}")
    (n,) = struct.unpack_from("<I", body, off)
    off += 4
    config = json.loads(body[off : off + n].decode("utf-8"))
    off += n
    (n,) = struct.unpack_from("<I", body, off)
    off += 4
    fit_key = body[off : off + n].decode("ascii") or None
    off += n
    (n_arrays,) = struct.unpack_from("<I", body, off)
    off += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        (n,) = struct.unpack_from("<I", body, off)
        off += 4
        name = body[off : off + n].decode("ascii")
        off += n
        (ndim,) = struct.unpack_from("<I", body, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}Q", body, off)
        off += 8 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(body, dtype="<f8", count=count, offset=off).reshape(
            shape
        ).copy()
        off += count * 8
    cfg = ConditionerConfig(
        kind=config["kind"],
        ln_eps=config["ln_eps"],
        pca_eps=config["pca_eps"],
        pca_components=config["pca_components"],
        affine_source=config["affine_source"],
    )
    cond = make_conditioner(cfg)
    cond._restore_state(arrays)
    cond.fit_key_ = fit_key
    return cond


def load_conditioner(path: str | Path) -> _ConditionerBase:
    return deserialize_conditioner(Path(path).read_bytes(), origin=str(path))


def cache_put(cond: _ConditionerBase, cache_dir: str | Path) -> Path:
    """Store a fitted state under its fit key; idempotent for equal states."""
    fit_key = getattr(cond, "fit_key_", None)
    if not fit_key:
        raise ValueError("conditioner has no fit_key_; fit with manifest_hash first")
    path = Path(cache_dir) / f"{fit_key}.fpkc"
    save_conditioner(cond, path)
    return path


def cache_get(fit_key: str, cache_dir: str | Path) -> _ConditionerBase | None:
    path = Path(cache_dir) / f"{fit_key}.fpkc"
    if not path.exists():
        return None
    cond = load_conditioner(path)
    if cond.fit_key_ != fit_key:
        raise CacheCorruptError(f"{path}: stores fit key {cond.fit_key_}")
    return cond
