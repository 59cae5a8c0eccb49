"""featprobe: frozen-feature conditioning and linear-probe evaluation harness.

Condition pooled backbone descriptors five ways (LN, LN-Affine, L2,
Feature-Std, PCA-Whiten), train a logistic linear probe with validation-AUC
checkpoint selection, and evaluate under in-distribution,
leave-one-manipulation-out, and cross-dataset protocols with rank-based
metrics and bootstrap confidence intervals.
"""

from .conditioning import (
    CONDITION_KINDS,
    ConditionerConfig,
    AffineLayerNormConditioner,
    FeatureStdConditioner,
    L2Conditioner,
    LayerNormConditioner,
    PCAWhitenConditioner,
    apply_l2,
    apply_ln,
    apply_ln_affine,
    cache_get,
    cache_put,
    compute_fit_key,
    conditioner_digest,
    fit_conditioner,
    make_conditioner,
    read_affine_sidecar,
    write_affine_sidecar,
)
from .featstore import (
    SampleManifest,
    SampleRecord,
    check_paired,
    features_digest,
    load_manifest,
    read_features,
    select_rows,
    write_features,
    write_manifest,
)
from .metrics import (
    MetricReport,
    average_precision,
    bootstrap_ci,
    bootstrap_mean_of_folds,
    compute_report,
    eer,
    fpr_at_95,
    fpr_at_tpr,
    mean_by_group,
    roc_auc,
    roc_curve,
)
from .probe import (
    LinearProbeClassifier,
    ProbeConfig,
    load_probe,
    logistic_loss_and_grad,
    probe_digest,
    save_probe,
    score_frames,
    train_probe,
)
from .protocols import (
    FoldPlan,
    ProtocolSpec,
    ScoreArtifact,
    aggregate_video,
    build_cross_dataset,
    build_id,
    build_lomo,
    build_pooled_artifact,
    load_artifact,
    run_fold,
    run_lomo,
    run_protocol,
    save_artifact,
)

__version__ = "0.1.0"
