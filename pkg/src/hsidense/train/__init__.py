from .cv import CvReport, FoldResult, evaluate_patients, report_csv, report_json, roc_csv, run_cv, run_fold
from .folds import FoldSplit, make_folds
from .loop import TrainConfig, class_weights, classify_region, train_fold
from .metrics import FoldReport, auc_trapezoid, compute_metrics, roc_curve
from .optim import AdamState, adam_step

__all__ = [
    "AdamState", "CvReport", "FoldReport", "FoldResult", "FoldSplit", "TrainConfig", "adam_step",
    "auc_trapezoid", "class_weights", "classify_region", "compute_metrics", "evaluate_patients", "make_folds", "report_csv",
    "report_json", "roc_csv", "roc_curve", "run_cv", "run_fold", "train_fold",
]
