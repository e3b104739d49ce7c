"""Bi-temporal hyperspectral change detection with a siamese multiscale
transformer network, built on a self-contained reverse-mode autodiff core."""

from .autodiff import Parameter, Rng, Tape, Tensor, backward, grad_check, no_grad, tensor
from .data import (
    BiTemporalScene,
    HyperCube,
    SplitIndex,
    extract_patch,
    load_cube,
    load_gt,
    load_scene,
    normalize_bands,
    stratified_split,
    synth_scene,
    write_cube,
    write_gt,
    write_scene,
)
from .errors import ConfigError, DataError, NumericError, ShapeError, UndefinedMetricError
from .metrics import (
    ChangeMap,
    ConfusionCounts,
    MetricsReport,
    compute_report,
    confusion,
    emit_report,
    f1,
    kappa_paper,
    kappa_standard,
    oa,
    precision,
    recall,
    render_change_map,
    save_change_map,
)
from .model import ChmffnModel, ModelConfig, bce_loss
from .training import (
    TrainConfig,
    TrainHistory,
    ablate,
    evaluate,
    load_checkpoint,
    save_checkpoint,
    sgd_step,
    sweep,
    train,
)

__version__ = "0.1.0"
