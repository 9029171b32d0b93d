"""Graph-based hard negative mining for sequential recommendation.

Items are linked on a weighted item transition graph built from training
sequences; negatives for a target item are drawn with probability
proportional to ``exp(jaccard)`` over the neighborhood-overlap scores,
excluding items whose overlap exceeds a curriculum-controlled threshold.
"""

from gnno.dataset import (
    InteractionCorpus,
    InteractionRecord,
    SplitCorpus,
    build_corpus,
    kcore_filter,
    leave_one_out_split,
    parse_log,
)
from gnno.witg import TransitionGraph, WitgConfig, build_witg
from gnno.overlap import OverlapGroup, OverlapIndex, build_overlap_index, group_of, jaccard
from gnno.negsampler import (
    CurriculumSchedule,
    NegativeBatch,
    SamplerState,
    gnno_distribution,
    lambda_at,
    sample_batch,
    sample_dns,
    sample_gnno,
    sample_uniform,
)

__version__ = "0.1.0"

__all__ = [
    "InteractionCorpus",
    "InteractionRecord",
    "SplitCorpus",
    "build_corpus",
    "kcore_filter",
    "leave_one_out_split",
    "parse_log",
    "TransitionGraph",
    "WitgConfig",
    "build_witg",
    "OverlapGroup",
    "OverlapIndex",
    "build_overlap_index",
    "group_of",
    "jaccard",
    "CurriculumSchedule",
    "NegativeBatch",
    "SamplerState",
    "gnno_distribution",
    "lambda_at",
    "sample_batch",
    "sample_dns",
    "sample_gnno",
    "sample_uniform",
]
