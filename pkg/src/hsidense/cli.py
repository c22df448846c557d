"""Command-line entry point: ``hsidense <command> [--config PATH] [--out DIR] ...``.

Every command writes ``effective-config.json`` and ``run.log`` into the
output directory. Exit codes: 0 success, 1 invalid configuration or input,
2 runtime failure.
"""
import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import config as config_mod
from .errors import ConfigurationError, FormatError, HsiError, IncompatibleCheckpointError
from .gradcheck import format_table, run_model_checks, run_primitive_checks
from .hsi import Label, read_cube, read_manifest
from .models import load_params, save_params
from .phantom import cohort_plan, generate_cohort, iter_cohort
from .preprocess import PatchSet, PreparedCube, preprocess_cube, read_patches, write_patches
from .train import (
    evaluate_patients, make_folds, report_csv, report_json, roc_csv, run_cv, train_fold,
)
from .train.cv import fold_configs, fold_data, fold_report_json
from .train.metrics import compute_metrics

log = logging.getLogger("hsidense")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2
CACHE_INDEX = "patches.json"


class InputError(HsiError):
    """Missing or unreadable input file; ``path`` names it."""

    def __init__(self, message, path):
        super().__init__(f"{message}: {path}")
        self.path = str(path)


def _setup_logging(out_dir):
    root = logging.getLogger("hsidense")
    root.setLevel(logging.INFO)
    for h in list(root.handlers):
        root.removeHandler(h)
        h.close()
    fh = logging.FileHandler(out_dir / "run.log", mode="w", encoding="utf-8")
    fh.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    sh = logging.StreamHandler(sys.stderr)
    sh.setLevel(logging.WARNING)
    sh.setFormatter(logging.Formatter("%(levelname)s: %(message)s"))
    root.addHandler(fh)
    root.addHandler(sh)
    return fh


# dataset loading


def _load_manifest_cubes(path):
    path = Path(path)
    if not path.exists():
        raise InputError("manifest not found", path)
    base = path.parent
    for rec in read_manifest(path):
        cube_path = base / rec["path"]
        if not cube_path.exists():
            raise InputError("cube file listed in manifest not found", cube_path)
        try:
            yield read_cube(cube_path)
        except FormatError as exc:
            raise InputError(f"corrupt cube ({exc})", cube_path) from exc


def _iter_cubes(cfg):
    if cfg.dataset_path is None:
        log.info("generating %d phantom patients in memory", cfg.n_patients)
        return iter_cohort(cfg.n_patients, cfg.frac_both_regions, cfg.phantom)
    path = Path(cfg.dataset_path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    return _load_manifest_cubes(path)


def _read_cache(cache_dir):
    index_path = cache_dir / CACHE_INDEX
    index = json.loads(index_path.read_text(encoding="utf-8"))
    prepared = {}
    for entry in index["patients"]:
        pid = entry["patient_id"]
        training, wl = read_patches(cache_dir / entry["training"])
        ordered_set, _ = read_patches(cache_dir / entry["ordered"])
        groups = ordered_set.by_region()
        labels = {rid: Label(v) for rid, v in entry["regions"].items()}
        prepared[pid] = PreparedCube(
            pid, labels, {rid: list(groups.get(rid, [])) for rid in labels}, training,
            entry["mnf_components"], entry["rejected"], tuple(wl.tolist()),
        )
    return prepared


def load_prepared(cfg):
    """Patient id -> PreparedCube, from a patch cache or by preprocessing cubes."""
    if cfg.dataset_path is not None and (Path(cfg.dataset_path) / CACHE_INDEX).exists():
        log.info("reading patch cache %s", cfg.dataset_path)
        return _read_cache(Path(cfg.dataset_path))
    prepared = {}
    for cube, regions in _iter_cubes(cfg):
        prepared[cube.patient_id] = preprocess_cube(cube, regions, cfg.preprocess)
        p = prepared[cube.patient_id]
        log.info("preprocessed %s: %d training sources, %d ordered crops, mnf k=%d, %d gated",
                 cube.patient_id, len(p.training), sum(len(v) for v in p.ordered.values()),
                 p.mnf_components, p.rejected)
    return prepared


def cohort_ids(cfg):
    """Patient ids of the configured dataset, without loading any cube."""
    if cfg.dataset_path is None:
        return [pid for pid, _ in cohort_plan(cfg.n_patients, cfg.frac_both_regions, cfg.phantom.seed)]
    path = Path(cfg.dataset_path)
    if (path / CACHE_INDEX).exists():
        return [e["patient_id"] for e in json.loads((path / CACHE_INDEX).read_text())["patients"]]
    if path.is_dir():
        path = path / "manifest.jsonl"
    if not path.exists():
        raise InputError("manifest not found", path)
    return [rec["patient_id"] for rec in read_manifest(path)]


# commands


def cmd_generate(cfg, args):
    out = Path(cfg.output) / "data"
    records = generate_cohort(cfg.n_patients, cfg.frac_both_regions, cfg.phantom, out, n_folds=cfg.folds)
    log.info("wrote %d cubes to %s", len(records), out)
    print(f"wrote {len(records)} cubes and manifest.jsonl to {out}")


def cmd_preprocess(cfg, args):
    cache = Path(cfg.output) / "patches"
    cache.mkdir(parents=True, exist_ok=True)
    entries = []
    for pid, p in sorted(load_prepared(cfg).items()):
        wl = p.wavelengths
        ordered = PatchSet([c for rid in p.region_labels for c in p.ordered[rid]])
        names = {"training": f"{pid}.train.hsip", "ordered": f"{pid}.ordered.hsip"}
        write_patches(cache / names["training"], p.training, wl)
        write_patches(cache / names["ordered"], ordered, wl)
        entries.append({
            "patient_id": pid, **names, "regions": {rid: int(v) for rid, v in p.region_labels.items()},
            "mnf_components": p.mnf_components, "rejected": p.rejected,
        })
    (cache / CACHE_INDEX).write_text(json.dumps({"patients": entries}, indent=2, sort_keys=True) + "\n")
    print(f"wrote patch cache for {len(entries)} patients to {cache}")


def _fold_split(cfg, prepared, fold):
    splits = make_folds(sorted(prepared), cfg.folds, cfg.cv_seed)
    if not 0 <= fold < len(splits):
        raise ConfigurationError(f"--fold must lie in 0..{len(splits) - 1}", key="fold")
    return splits[fold]


def cmd_train(cfg, args):
    make_folds(cohort_ids(cfg), cfg.folds, cfg.cv_seed)
    prepared = load_prepared(cfg)
    split = _fold_split(cfg, prepared, args.fold)
    sources, validation = fold_data(split, prepared)
    spec, tcfg = fold_configs(split, cfg.model, cfg.train)
    model, trace = train_fold(sources, spec, tcfg, validation=validation)
    out = Path(cfg.output)
    ckpt = out / f"model-fold{split.fold}.hsim"
    save_params(model, ckpt)
    doc = {"fold": split.fold, "split": split.to_dict(), "trace": trace.to_dict(), "checkpoint": ckpt.name}
    (out / "trace.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    log.info("fold %d trained, final loss %.6f", split.fold, trace.losses[-1])
    print(f"checkpoint written to {ckpt}")


def cmd_evaluate(cfg, args):
    if args.checkpoint is None:
        raise ConfigurationError("evaluate needs --checkpoint PATH", key="checkpoint")
    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise InputError("checkpoint not found", ckpt)
    model = load_params(ckpt)
    make_folds(cohort_ids(cfg), cfg.folds, cfg.cv_seed)
    prepared = load_prepared(cfg)
    split = _fold_split(cfg, prepared, args.fold)
    preds, skipped = evaluate_patients(model, prepared, split.test)
    if not preds:
        raise HsiError(f"fold {split.fold} has no evaluable test regions")
    report = compute_metrics([p["probability"] for p in preds], [p["label"] for p in preds])
    out = Path(cfg.output)
    text_json, text_csv = fold_report_json(split, report, preds, skipped)
    (out / "report.json").write_text(text_json)
    (out / "report.csv").write_text(text_csv)
    (out / "roc.csv").write_text(roc_csv(report.roc))
    print(f"fold {split.fold}: accuracy {report.accuracy:.4f} over {report.n_regions} regions")


def cmd_cv(cfg, args):
    make_folds(cohort_ids(cfg), cfg.folds, cfg.cv_seed)
    prepared = load_prepared(cfg)
    report = run_cv(prepared, cfg.model, cfg.train, folds=cfg.folds, seed=cfg.cv_seed, threads=args.threads)
    # the output directory is not a run parameter; keep reports comparable across locations
    report.config = {k: v for k, v in cfg.document.items() if k != "output"}
    out = Path(cfg.output)
    (out / "report.json").write_text(report_json(report))
    (out / "report.csv").write_text(report_csv(report))
    (out / "roc.csv").write_text(roc_csv(report.pooled_roc))
    for metric, cell in report.table_row().items():
        print(f"{metric:12s} {cell}")


def cmd_gradcheck(cfg, args):
    results = run_primitive_checks(seed=cfg.model.seed) + run_model_checks(seed=cfg.model.seed)
    table = format_table(results)
    (Path(cfg.output) / "gradcheck.txt").write_text(table + "\n")
    print(table)
    if not all(r.passed for r in results):
        raise HsiError("finite-difference check failed for: " + ", ".join(r.name for r in results if not r.passed))


COMMANDS = {
    "generate": cmd_generate,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "cv": cmd_cv,
    "gradcheck": cmd_gradcheck,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="hsidense", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON run configuration (defaults apply to missing keys)")
    ap.add_argument("--out", help="output directory (overrides config 'output')")
    ap.add_argument("--seed", type=int, help="override every seed in the config")
    ap.add_argument("--threads", type=int, default=1, help="folds trained concurrently by 'cv'")
    ap.add_argument("--fold", type=int, default=0, help="fold index for 'train' and 'evaluate'")
    ap.add_argument("--checkpoint", help="model checkpoint for 'evaluate'")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = config_mod.load(args.config) if args.config else config_mod.parse({})
        if args.out:
            cfg = cfg.with_output(args.out)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        if args.threads < 1:
            raise ConfigurationError("--threads must be >= 1", key="threads")
    except ConfigurationError as exc:
        print(f"error: invalid configuration ({exc.key}): {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective-config.json").write_text(config_mod.effective(cfg))
    handler = _setup_logging(out)
    log.info("command %s, output %s", args.command, out)
    start = time.perf_counter()
    try:
        COMMANDS[args.command](cfg, args)
    except ConfigurationError as exc:
        log.error("invalid configuration (%s): %s", exc.key, exc)
        return EXIT_INVALID
    except (InputError, IncompatibleCheckpointError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    except HsiError as exc:
        log.error("runtime failure: %s", exc)
        return EXIT_RUNTIME
    except Exception:  # noqa: BLE001 - any crash is a runtime failure with a traceback in run.log
        log.exception("unexpected runtime failure")
        return EXIT_RUNTIME
    finally:
        log.info("finished in %.1f s", time.perf_counter() - start)
        handler.flush()
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
