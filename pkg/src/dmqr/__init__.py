"""Diverse multi-query rewriting for retrieval-augmented generation."""

from .model import (
    BASELINE_REWRITE,
    CCE,
    DMQR_POOL,
    FUSION_VARIANT,
    GQR,
    HYDE,
    KWR,
    ORIGINAL,
    PAR,
    Document,
    PipelineConfig,
    Query,
    QuerySet,
    RankedList,
    RewrittenQuery,
    build_query_set,
    document_key,
)
from .pipeline import Deps, PipelineTrace, method_config, run

__version__ = "0.1.0"

__all__ = [
    "BASELINE_REWRITE",
    "CCE",
    "DMQR_POOL",
    "Deps",
    "Document",
    "FUSION_VARIANT",
    "GQR",
    "HYDE",
    "KWR",
    "ORIGINAL",
    "PAR",
    "PipelineConfig",
    "PipelineTrace",
    "Query",
    "QuerySet",
    "RankedList",
    "RewrittenQuery",
    "build_query_set",
    "document_key",
    "method_config",
    "run",
]
