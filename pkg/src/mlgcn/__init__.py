"""mlgcn: multi-level graph convolution engine for 3D point clouds."""

from .blocks import (
    GcnBlockConfig,
    GnnBlockConfig,
    ModelConfig,
    ModelState,
    SegmentationConfig,
    classify,
    encode,
    init_model,
    load_model_config,
    make_gnn_block,
    model_backward,
    preset_light,
    preset_lighter,
    save_model_config,
    segment,
    trunk_forward,
)
from .flops import (
    CostReport,
    analyze_model,
    compare_shared_vs_recomputed,
    flops_dense,
    flops_graph,
)
from .knngraph import KnnGraph, build_knn_bruteforce, build_knn_indexed, gather_neighbors
from .pointset import (
    LabeledSample,
    PointCloud,
    TriangleMesh,
    augment,
    load_off_mesh,
    normalize_unit_sphere,
    read_dataset,
    sample_surface,
)
from .train import (
    AdamState,
    OptimizerState,
    EvalReport,
    TrainConfig,
    adam_step,
    cross_entropy_loss,
    evaluate_classification,
    evaluate_segmentation,
    lr_schedule,
    segmentation_scores,
    train_loop,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "CostReport", "EvalReport", "GcnBlockConfig", "GnnBlockConfig",
    "KnnGraph", "LabeledSample", "ModelConfig", "ModelState", "OptimizerState", "PointCloud",
    "SegmentationConfig", "TrainConfig", "TriangleMesh", "adam_step",
    "analyze_model", "augment", "build_knn_bruteforce", "build_knn_indexed",
    "classify", "compare_shared_vs_recomputed", "cross_entropy_loss", "encode",
    "evaluate_classification", "evaluate_segmentation", "flops_dense",
    "flops_graph", "gather_neighbors", "init_model", "load_model_config",
    "load_off_mesh", "lr_schedule", "make_gnn_block", "model_backward",
    "normalize_unit_sphere", "preset_light", "preset_lighter", "read_dataset",
    "sample_surface", "save_model_config", "segment", "segmentation_scores",
    "train_loop", "trunk_forward",
]
