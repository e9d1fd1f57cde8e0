"""Mesh codec: coarse mesh plus a quantized neural displacement field."""

from .mesh import (
    ManifoldReport,
    Mesh,
    MeshError,
    NormalizationTransform,
    face_area_and_normal,
    normalize_unit_bbox,
    raw_size_bits,
    raw_size_bytes,
    validate_edge_manifold,
)
from .io import load_mesh, save_mesh
from .simplify import (
    CollapseRejected,
    CollapseRecord,
    NonManifoldMeshError,
    SspMap,
    SurfacePoint,
    displacement,
    flatten_collapse_neighborhood,
    map_point,
    qslim_decimate_with_ssp,
)
from .subdivide import (
    SubdividedMesh,
    TrainingSet,
    bake_training_set,
    midpoint_subdivide,
    ssp_gt_quality,
)
from .inr import (
    InrConfig,
    InrParams,
    VertexBatch,
    adamw_step,
    backward,
    cosine_lr,
    forward,
    positional_encode,
    train,
)
from .codec import (
    HuffmanStream,
    QuantizedModel,
    SparsityMask,
    dequantize,
    huffman_decode,
    huffman_encode,
    l1_prune_step,
    prune_schedule,
    quantize_weights,
    quantized_forward,
)
from .container import (
    CompressedContainer,
    EncodeSettings,
    decode,
    encode,
    inspect,
)
from .metrics import (
    QualityReport,
    SpatialIndex,
    closest_point,
    compare_meshes,
    d_norm,
    d_pm,
    sample_surface,
)

__all__ = [
    "ManifoldReport", "Mesh", "MeshError", "NormalizationTransform",
    "face_area_and_normal", "normalize_unit_bbox", "raw_size_bits",
    "raw_size_bytes", "validate_edge_manifold",
    "load_mesh", "save_mesh",
    "CollapseRejected", "CollapseRecord", "NonManifoldMeshError", "SspMap",
    "SurfacePoint", "displacement", "flatten_collapse_neighborhood",
    "map_point", "qslim_decimate_with_ssp",
    "SubdividedMesh", "TrainingSet", "bake_training_set", "midpoint_subdivide",
    "ssp_gt_quality",
    "InrConfig", "InrParams", "VertexBatch", "adamw_step", "backward",
    "cosine_lr", "forward", "positional_encode", "train",
    "HuffmanStream", "QuantizedModel", "SparsityMask", "dequantize",
    "huffman_decode", "huffman_encode", "l1_prune_step", "prune_schedule",
    "quantize_weights", "quantized_forward",
    "CompressedContainer", "EncodeSettings", "decode", "encode", "inspect",
    "QualityReport", "SpatialIndex", "closest_point", "compare_meshes",
    "d_norm", "d_pm", "sample_surface",
]
