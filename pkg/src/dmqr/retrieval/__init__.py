from .bm25 import Bm25Index, CorpusDoc, LocalRetriever, bm25_score, build_index, load_corpus
from .cache import (
    CacheEntry,
    Retriever,
    SearchCache,
    cache_key,
    cached_search,
    cached_search_with_status,
)
from .remote import RemoteSearchRetriever, adapt_results

__all__ = [
    "Bm25Index",
    "CacheEntry",
    "CorpusDoc",
    "LocalRetriever",
    "RemoteSearchRetriever",
    "Retriever",
    "SearchCache",
    "adapt_results",
    "bm25_score",
    "build_index",
    "cache_key",
    "cached_search",
    "cached_search_with_status",
    "load_corpus",
]
