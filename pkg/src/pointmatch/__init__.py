"""Interactive anatomical point correspondence for 3D volume pairs.

Click a location in one scan, get the matching location in another:
hierarchical sparse-sampling descriptors plus a coarse-to-fine similarity
search, CPU-only and sub-second. See the README for the CLI, the HTTP
service, and the evaluation harness.
"""

from .errors import (
    CorruptHeader,
    EmptyInput,
    EmptySearchSpace,
    InvalidConfig,
    PayloadSizeMismatch,
    PointMatchError,
    QueryOutOfBounds,
    UnsupportedFormat,
)
from .harness import (
    AblationSpec,
    AnnotationPair,
    EvalReport,
    evaluate,
    froc_curve,
    read_manifest,
    run_ablation,
    write_manifest,
)
from .phantom import PhantomSpec, SmoothTransform, build_phantom_pair, generate_phantom_suite
from .sampling import (
    Descriptor,
    OffsetTable,
    SamplingModel,
    build_offset_table,
    decode_descriptor,
    extract_descriptor,
    get_offset_table,
)
from .search import (
    MatchResult,
    SearchConfig,
    SimilarityMap,
    exhaustive_match,
    match_point,
    similarity_map,
)
from .similarity import (
    HistogramSpec,
    SimilarityKind,
    combined_sim,
    cosine_sim,
    euclidean_sim,
    mutual_info,
)
from .volume import (
    Volume,
    VoxelPoint,
    WorldPoint,
    load_volume,
    sample_at,
    voxel_to_world,
    world_to_voxel,
    write_volume,
)

__version__ = "0.1.0"

__all__ = [
    "AblationSpec",
    "AnnotationPair",
    "CorruptHeader",
    "Descriptor",
    "EmptyInput",
    "EmptySearchSpace",
    "EvalReport",
    "HistogramSpec",
    "InvalidConfig",
    "MatchResult",
    "OffsetTable",
    "PayloadSizeMismatch",
    "PhantomSpec",
    "PointMatchError",
    "QueryOutOfBounds",
    "SamplingModel",
    "SearchConfig",
    "SimilarityKind",
    "SimilarityMap",
    "SmoothTransform",
    "UnsupportedFormat",
    "Volume",
    "VoxelPoint",
    "WorldPoint",
    "build_offset_table",
    "build_phantom_pair",
    "combined_sim",
    "cosine_sim",
    "decode_descriptor",
    "euclidean_sim",
    "evaluate",
    "exhaustive_match",
    "extract_descriptor",
    "froc_curve",
    "generate_phantom_suite",
    "get_offset_table",
    "load_volume",
    "match_point",
    "mutual_info",
    "read_manifest",
    "run_ablation",
    "sample_at",
    "similarity_map",
    "voxel_to_world",
    "world_to_voxel",
    "write_manifest",
    "write_volume",
]
