"""Two-stage hyperspectral image classification.

Stage 1 estimates per-pixel class probability maps with a kernel nu-SVC
(one-against-one, sigmoid-calibrated, pairwise-coupled); Stage 2 restores
each noisy probability map with a constrained TV + Tikhonov denoiser
solved by ADMM, keeping training pixels pinned, and classifies by
per-pixel argmax.
"""

from .core import (
    ConfusionMatrix,
    ConvergenceError,
    DataError,
    HyperCube,
    LabelMap,
    ProbabilityTensor,
    SplitSpec,
    as_f32_grid,
    normalize_cube,
    validate_cube,
)
from .coupling import couple, couple_batch
from .denoise import (
    AdmmDiagnostics,
    DenoiseParams,
    admm_denoise,
    denoise_tensor,
    gradient,
    gradient_adjoint,
    objective,
    project_w,
    shrink,
    solve_u,
    transfer_denominator,
)
from .metrics import (
    MetricsReport,
    classify_argmax,
    compute_metrics,
    confusion_from_predictions,
    metrics_from_confusion,
    misclassification_heatmap,
)
from .pipeline import (
    CvResult,
    RunConfig,
    TwoStageResult,
    cross_validate,
    run_two_stage,
    stratified_split,
)
from .svm import (
    BinaryModel,
    KernelSpec,
    MulticlassModel,
    class_pairs,
    decision,
    decision_batch,
    fit_sigmoid,
    gram,
    nu_upper_bound,
    pairwise_probability,
    predict_probabilities,
    predict_tensor,
    rbf,
    train_binary,
    train_multiclass,
)

__version__ = "0.1.0"
