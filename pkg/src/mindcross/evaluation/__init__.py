from .metrics import (
    CentroidClassifier,
    centroid_classifier,
    nway_topk,
    nway_topk_exact,
    retrieval_accuracy,
)
from .probe import domain_probe
from .report import (
    BudgetRow,
    MetricReport,
    SubjectMetrics,
    class_embeddings,
    evaluate,
    evaluate_async,
    nway_key,
    write_budget_csv,
)

__all__ = [
    "BudgetRow",
    "CentroidClassifier",
    "MetricReport",
    "SubjectMetrics",
    "centroid_classifier",
    "class_embeddings",
    "domain_probe",
    "evaluate",
    "evaluate_async",
    "nway_key",
    "nway_topk",
    "nway_topk_exact",
    "retrieval_accuracy",
    "write_budget_csv",
]
