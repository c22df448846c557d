"""Cross-validated training and evaluation with mean ± std reporting."""
import csv
import dataclasses
import io
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from ..errors import ConfigurationError
from .folds import make_folds
from .loop import TrainConfig, classify_region, train_fold
from .metrics import METRICS, aggregate, auc_trapezoid, compute_metrics, roc_curve

log = logging.getLogger(__name__)


@dataclass
class FoldResult:
    fold: int
    split: dict
    test: object = None
    validation: object = None
    predictions: list = field(default_factory=list)
    unevaluable: list = field(default_factory=list)
    trace: object = None
    rejected: str = None

    def to_dict(self):
        return {
            "fold": self.fold,
            "split": self.split,
            "rejected": self.rejected,
            "test": self.test.to_dict() if self.test else None,
            "validation": self.validation.to_dict() if self.validation else None,
            "predictions": self.predictions,
            "unevaluable": self.unevaluable,
            "trace": self.trace.to_dict() if self.trace else None,
        }


@dataclass
class CvReport:
    folds: list
    aggregate: dict
    pooled_roc: list
    pooled_auc: float
    config: dict = field(default_factory=dict)

    @property
    def accepted(self):
        return [f for f in self.folds if f.rejected is None]

    def table_row(self):
        """Metric -> ``"mean±std"`` strings, two decimals."""
        row = {}
        for m in METRICS:
            agg = self.aggregate[m]
            row[m] = "undefined" if agg["mean"] is None else f"{agg['mean']:.2f}±{agg['std']:.2f}"
        return row

    def to_dict(self):
        return {
            "config": self.config,
            "n_folds": len(self.folds),
            "rejected_folds": [f.fold for f in self.folds if f.rejected is not None],
            "aggregate": self.aggregate,
            "table": self.table_row(),
            "pooled_auc": self.pooled_auc,
            "pooled_roc": [_roc_point(p) for p in self.pooled_roc],
            "folds": [f.to_dict() for f in self.folds],
        }


def _roc_point(p):
    return [p[0], p[1], "inf" if math.isinf(p[2]) else p[2]]


def _json_safe(obj):
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    return obj


def report_json(report):
    return json.dumps(_json_safe(report.to_dict()), indent=2, sort_keys=True) + "\n"


def report_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fold", "n_regions", "tp", "fp", "tn", "fn", *METRICS, "rejected"])
    for f in report.folds:
        if f.test is None:
            w.writerow([f.fold, 0, "", "", "", "", *[""] * len(METRICS), f.rejected or ""])
            continue
        t = f.test
        vals = ["" if t.metric(m) is None else repr(t.metric(m)) for m in METRICS]
        w.writerow([f.fold, t.n_regions, t.tp, t.fp, t.tn, t.fn, *vals, f.rejected or ""])
    table = report.table_row()
    w.writerow(["mean±std", "", "", "", "", "", *[table[m] for m in METRICS], ""])
    return buf.getvalue()


def roc_csv(points):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fpr", "tpr", "threshold"])
    for fpr, tpr, thr in points:
        w.writerow([repr(fpr), repr(tpr), "inf" if math.isinf(thr) else repr(thr)])
    return buf.getvalue()


def evaluate_patients(model, prepared, patient_ids):
    """Region predictions for the given patients; unevaluable regions listed apart."""
    preds, skipped = [], []
    for pid in patient_ids:
        cube = prepared[pid]
        for rid, label in cube.region_labels.items():
            out = classify_region(model, cube.ordered.get(rid, []))
            if out is None:
                log.info("region %s unevaluable (no crop survived gating)", rid)
                skipped.append(rid)
                continue
            preds.append({
                "region_id": rid,
                "patient_id": pid,
                "label": int(label),
                "probability": out[0],
                "n_crops": len(cube.ordered[rid]),
            })
    return preds, skipped


def _metrics_of(preds):
    if not preds:
        return None
    return compute_metrics([p["probability"] for p in preds], [p["label"] for p in preds])


def fold_configs(split, spec, cfg):
    """Per-fold model and training seeds derived from the run seeds."""
    return (dataclasses.replace(spec, seed=spec.seed + split.fold),
            dataclasses.replace(cfg, seed=cfg.seed + 1000 * split.fold))


def fold_data(split, prepared):
    """Training sources of the train patients and ordered crops of the validation patients."""
    sources = [p for pid in split.train for p in prepared[pid].training]
    validation = [p for pid in split.validation for crops in prepared[pid].ordered.values() for p in crops]
    return sources, validation


def fold_report_json(split, report, predictions, unevaluable):
    """JSON and CSV text for a single evaluated fold."""
    doc = {
        "fold": split.fold,
        "split": split.to_dict(),
        "test": report.to_dict(),
        "predictions": predictions,
        "unevaluable": unevaluable,
    }
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fold", "n_regions", "tp", "fp", "tn", "fn", *METRICS])
    vals = ["" if report.metric(m) is None else repr(report.metric(m)) for m in METRICS]
    w.writerow([split.fold, report.n_regions, report.tp, report.fp, report.tn, report.fn, *vals])
    return json.dumps(_json_safe(doc), indent=2, sort_keys=True) + "\n", buf.getvalue()


def run_fold(split, prepared, spec, cfg):
    result = FoldResult(split.fold, split.to_dict())
    sources, validation_crops = fold_data(split, prepared)
    fold_spec, fold_cfg = fold_configs(split, spec, cfg)
    try:
        model, trace = train_fold(sources, fold_spec, fold_cfg, validation=validation_crops)
    except ConfigurationError as exc:
        result.rejected = str(exc)
        log.warning("fold %d rejected: %s", split.fold, exc)
        return result
    result.trace = trace
    val_preds, _ = evaluate_patients(model, prepared, split.validation)
    result.validation = _metrics_of(val_preds)
    result.predictions, result.unevaluable = evaluate_patients(model, prepared, split.test)
    result.test = _metrics_of(result.predictions)
    if result.test is None:
        result.rejected = "no evaluable test regions"
    return result


def run_cv(prepared, spec, cfg=TrainConfig(), folds=8, seed=0, threads=1):
    """Full protocol over ``prepared`` (patient id -> PreparedCube).

    Folds are independent; with ``threads > 1`` they run concurrently and are
    merged by fold index, so the report does not depend on scheduling.
    """
    splits = make_folds(sorted(prepared), folds, seed)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda s: run_fold(s, prepared, spec, cfg), splits))
    else:
        results = [run_fold(s, prepared, spec, cfg) for s in splits]
    results.sort(key=lambda r: r.fold)
    accepted = [r for r in results if r.rejected is None]
    agg = {m: aggregate([r.test.metric(m) for r in accepted]) for m in METRICS}
    pooled = [p for r in accepted for p in r.predictions]
    roc = roc_curve([p["probability"] for p in pooled], [p["label"] for p in pooled])
    return CvReport(results, agg, roc, auc_trapezoid(roc))

