"""Natural-language-queryable scene maps and context-grounded task planning."""

from .core import Cluster, ContextElement, EmbeddingVector, FusionParams, Gaussian2D, bonus_f, kl_divergence
from .embedding import MockProviderSpec, MockVLM, QueryFeatures, RegionObservation, encode_region, encode_text, ensemble_score
from .planner import DetectedObject, Option, SkillLibrary, TemplateSet, bind_policy, generate_options, plan_with_objects, run_planner
from .proposal import ProposalPrompt, propose_objects
from .scene import (
    ChannelSchema,
    Frame,
    Intrinsics,
    Pose,
    QueryResult,
    RegionProposal,
    SceneRepresentation,
    build_map,
    extract_3d,
    heatmap,
    multiview_fuse,
    query_object,
    top_k,
)
from .store import load_map, save_map

__version__ = "0.1.0"

__all__ = [
    "ChannelSchema", "Cluster", "ContextElement", "DetectedObject", "EmbeddingVector", "Frame", "FusionParams",
    "Gaussian2D", "Intrinsics", "MockProviderSpec", "MockVLM", "Option", "Pose", "ProposalPrompt", "QueryFeatures",
    "QueryResult", "RegionObservation", "RegionProposal", "SceneRepresentation", "SkillLibrary", "TemplateSet",
    "bind_policy", "bonus_f", "build_map", "encode_region", "encode_text", "ensemble_score", "extract_3d",
    "generate_options", "heatmap", "kl_divergence", "load_map", "multiview_fuse", "plan_with_objects",
    "propose_objects", "query_object", "run_planner", "save_map", "top_k",
]
