"""Stroke-sequence transformer for sketch recognition, retrieval, and completion."""

from .data import (
    DatasetSplit,
    Point5,
    Sketch,
    dataset_stats,
    normalize_offsets,
    parse_quickdraw_record,
    rdp_simplify,
    truncate_pad,
)
from .encoder import EncoderConfig, SharedLayerParams, WeightSharedEncoder
from .masking import (
    GestaltBatch,
    MaskPlan,
    ReconstructionNetwork,
    apply_mask,
    complete_sketch,
    sample_mask_plan,
    sgm_loss,
)
from .model import ModelConfig, SketchModel
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Parameter,
    Tensor,
    cross_entropy,
    gelu,
    l1_loss,
    layer_norm,
    matmul,
    no_grad,
    softmax,
)
from .train import RunConfig, TrainingCurve, evaluate, finetune, pretrain

__version__ = "0.1.0"
