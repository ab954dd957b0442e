from .harness import (
    DatasetError,
    EvalItem,
    GoldLabelJudge,
    Judgment,
    LlmAnswerGrader,
    LlmJudge,
    MetricsReport,
    aggregate,
    judge_relevance,
    load_dataset,
    run_experiment,
)
from .metrics import exact_match, f1_token, hit_at_k, normalize_answer, precision_at_k

__all__ = [
    "DatasetError",
    "EvalItem",
    "GoldLabelJudge",
    "Judgment",
    "LlmAnswerGrader",
    "LlmJudge",
    "MetricsReport",
    "aggregate",
    "exact_match",
    "f1_token",
    "hit_at_k",
    "judge_relevance",
    "load_dataset",
    "normalize_answer",
    "precision_at_k",
    "run_experiment",
]
