"""stvox: scene-level spatiotemporal voxel memory engine.

A dense voxel-grid toolkit for streaming occupancy data: one scene-extent
memory replaces per-frame feature queues, updated in place with decay fusion
and uncertainty/flow-aware attention, plus evaluation metrics (mIoU and the
STCV temporal-consistency measure), reference loss functions, a synthetic
scene simulator and a temporal-fusion scaling benchmark.
"""

from .errors import DegeneratePoseError, InvariantViolation, PipelineError
from .geometry import (
    GridSpec,
    Pose,
    VoxelGrid,
    relative_transform,
    sample_bilinear_xy,
    sample_trilinear,
    world_to_grid,
)
from .fusion import (
    AttentionParams,
    FusionStrategy,
    ResourceTrace,
    UncertaintyMLPParams,
    cosine_similarity,
    deformable_attend,
    estimate_uncertainty,
    memory_attention_step,
    run_paradigm,
)
from .losses import focal_loss, gaussian_nll, l1_flow_loss, lovasz_softmax, total_loss
from .memory import (
    FrameIO,
    SceneMemory,
    TemporalAttributes,
    allocate_memory,
    decay_update_class_activation,
    extract_roi,
    write_attributes,
    write_labels,
    write_roi,
)
from .metrics import (
    ConsistencyLedger,
    LabelGrid,
    extended_eval_scope,
    miou,
    mstcv,
    per_class_stcv,
    stcv_frame,
)
from .simulator import (
    PipelineConfig,
    SceneScript,
    default_scene_script,
    generate_scene,
    run_benchmark,
    run_pipeline,
)

__version__ = "0.1.0"
