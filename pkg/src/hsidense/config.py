"""JSON run configuration shared by every CLI command.

A config is a nested JSON object. Missing keys take defaults; unknown keys
are rejected. :func:`effective` returns the fully materialised document,
which re-parses to the same :class:`RunConfig`.
"""
import copy
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigurationError, HsiError
from .models import VARIANTS, ModelSpec
from .phantom import PhantomSpec
from .preprocess import PreprocessConfig
from .train import TrainConfig

def _listed(v):
    return [_listed(x) for x in v] if isinstance(v, (list, tuple)) else v


_PHANTOM_DEFAULTS = {f.name: getattr(PhantomSpec(), f.name) for f in dataclasses.fields(PhantomSpec)}
_PREP = PreprocessConfig()
_TRAIN = TrainConfig()
_MODEL = ModelSpec()

DEFAULTS = {
    "dataset": {
        "path": None,
        "n_patients": 40,
        "frac_both_regions": 0.7,
        "phantom": {k: _listed(v) for k, v in _PHANTOM_DEFAULTS.items()},
    },
    "preprocess": {
        "align": _PREP.align,
        "max_shift": _PREP.max_shift,
        "mnf": {"enabled": _PREP.mnf, "estimator": _PREP.mnf_estimator, "k": _PREP.mnf_k,
                "snr_threshold": _PREP.snr_threshold},
        "specular": {"threshold": _PREP.specular_threshold, "max_fraction": _PREP.specular_max_fraction},
        "patch": {"size": _PREP.patch_size, "stride": _PREP.stride, "source_size": _PREP.source_size,
                  "source_stride": _PREP.source_stride},
    },
    "model": {
        "variant": _MODEL.variant,
        "init_channels": _MODEL.initial_channels,
        "growth": _MODEL.growth_rate,
        "layers": list(_MODEL.layers_per_block),
        "bands": _MODEL.bands,
        "seed": _MODEL.seed,
    },
    "train": {
        "iterations": _TRAIN.iterations,
        "batch": _TRAIN.batch_size,
        "lr": _TRAIN.lr,
        "beta1": _TRAIN.beta1,
        "beta2": _TRAIN.beta2,
        "eps": _TRAIN.eps,
        "weighting": _TRAIN.weighting,
        "balanced_sampling": _TRAIN.balanced_sampling,
        "seed": _TRAIN.seed,
    },
    "cv": {"folds": 8, "seed": 0},
    "output": "runs/out",
}


def _merge(defaults, given, prefix=""):
    if not isinstance(given, dict):
        raise ConfigurationError(f"section {prefix or '<root>'} must be a JSON object", key=prefix or None)
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        path = f"{prefix}.{key}" if prefix else key
        if key not in defaults:
            raise ConfigurationError(f"unknown config key {path!r}", key=path)
        if isinstance(defaults[key], dict):
            out[key] = _merge(defaults[key], value, path)
        else:
            out[key] = value
    return out


def _typed(doc, path, kind):
    node = doc
    for part in path.split("."):
        node = node[part]
    ok = {
        "int": isinstance(node, int) and not isinstance(node, bool),
        "num": isinstance(node, (int, float)) and not isinstance(node, bool),
        "bool": isinstance(node, bool),
        "str": isinstance(node, str),
        "int?": node is None or (isinstance(node, int) and not isinstance(node, bool)),
        "str?": node is None or isinstance(node, str),
    }[kind]
    if not ok:
        raise ConfigurationError(f"{path} has invalid value {node!r} (expected {kind.rstrip('?')})", key=path)
    return node


@dataclass(frozen=True)
class RunConfig:
    document: dict
    phantom: PhantomSpec
    preprocess: PreprocessConfig
    model: ModelSpec
    train: TrainConfig
    folds: int
    cv_seed: int
    dataset_path: str
    n_patients: int
    frac_both_regions: float
    output: str

    def with_seed(self, seed):
        """Apply a global ``--seed`` override to every seeded section."""
        doc = copy.deepcopy(self.document)
        doc["dataset"]["phantom"]["seed"] = seed
        doc["model"]["seed"] = seed
        doc["train"]["seed"] = seed
        doc["cv"]["seed"] = seed
        return parse(doc)

    def with_output(self, out):
        doc = copy.deepcopy(self.document)
        doc["output"] = str(out)
        return parse(doc)


def parse(doc):
    """Validate a (possibly partial) config document into a :class:`RunConfig`."""
    doc = _merge(DEFAULTS, doc if doc is not None else {})
    for path in ("dataset.n_patients", "preprocess.max_shift", "preprocess.patch.size", "preprocess.patch.stride",
                 "preprocess.patch.source_size", "preprocess.patch.source_stride", "model.init_channels",
                 "model.growth", "model.bands", "model.seed", "train.iterations", "train.batch", "train.seed",
                 "cv.folds", "cv.seed"):
        _typed(doc, path, "int")
    for path in ("dataset.frac_both_regions", "preprocess.mnf.snr_threshold", "preprocess.specular.threshold",
                 "preprocess.specular.max_fraction", "train.lr", "train.beta1", "train.beta2", "train.eps"):
        _typed(doc, path, "num")
    for path in ("preprocess.align", "preprocess.mnf.enabled", "train.balanced_sampling"):
        _typed(doc, path, "bool")
    _typed(doc, "preprocess.mnf.k", "int?")
    _typed(doc, "dataset.path", "str?")
    _typed(doc, "output", "str")
    _typed(doc, "preprocess.mnf.estimator", "str")

    ds = doc["dataset"]
    if not 0.0 <= ds["frac_both_regions"] <= 1.0:
        raise ConfigurationError("dataset.frac_both_regions must lie in [0, 1]", key="dataset.frac_both_regions")
    if ds["n_patients"] < 1:
        raise ConfigurationError("dataset.n_patients must be >= 1", key="dataset.n_patients")
    if doc["preprocess"]["mnf"]["estimator"] != "shift-difference":
        raise ConfigurationError("preprocess.mnf.estimator must be 'shift-difference'", key="preprocess.mnf.estimator")
    spec_thr = doc["preprocess"]["specular"]["threshold"]
    if not 0.0 < spec_thr <= 1.0:
        raise ConfigurationError("preprocess.specular.threshold must lie in (0, 1]", key="preprocess.specular.threshold")
    if doc["model"]["variant"] not in VARIANTS:
        raise ConfigurationError(f"model.variant must be one of {VARIANTS}", key="model.variant")
    layers = doc["model"]["layers"]
    if not (isinstance(layers, list) and len(layers) == 3 and all(isinstance(v, int) and v >= 0 for v in layers)):
        raise ConfigurationError("model.layers must be three non-negative integers", key="model.layers")
    if doc["cv"]["folds"] < 2:
        raise ConfigurationError("cv.folds must be >= 2", key="cv.folds")

    try:
        ph = dict(ds["phantom"])
        for key in ("wavelengths", "healthy_bumps", "tumor_bumps", "specular_radius_px", "region_radius_px"):
            ph[key] = _tupled(ph[key])
        phantom = PhantomSpec.from_dict(ph)
    except ConfigurationError:
        raise
    except (HsiError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"dataset.phantom: {exc}", key="dataset.phantom") from exc

    p = doc["preprocess"]
    prep = PreprocessConfig(
        align=p["align"], max_shift=p["max_shift"], mnf=p["mnf"]["enabled"], mnf_estimator=p["mnf"]["estimator"],
        mnf_k=p["mnf"]["k"], snr_threshold=float(p["mnf"]["snr_threshold"]),
        specular_threshold=float(p["specular"]["threshold"]),
        specular_max_fraction=float(p["specular"]["max_fraction"]), patch_size=p["patch"]["size"],
        stride=p["patch"]["stride"], source_size=p["patch"]["source_size"],
        source_stride=p["patch"]["source_stride"],
    )
    m = doc["model"]
    model = ModelSpec(
        variant=m["variant"], initial_channels=m["init_channels"], growth_rate=m["growth"],
        layers_per_block=tuple(layers), bands=m["bands"], patch_size=prep.patch_size, seed=m["seed"],
    )
    if model.bands != len(phantom.wavelengths) and ds["path"] is None:
        raise ConfigurationError(
            f"model.bands={model.bands} but the phantom has {len(phantom.wavelengths)} bands", key="model.bands")
    try:
        model.validate()
    except HsiError as exc:
        raise ConfigurationError(f"model: {exc}", key="model") from exc
    t = doc["train"]
    train = TrainConfig(
        iterations=t["iterations"], batch_size=t["batch"], lr=float(t["lr"]), beta1=float(t["beta1"]),
        beta2=float(t["beta2"]), eps=float(t["eps"]), weighting=t["weighting"],
        balanced_sampling=t["balanced_sampling"], seed=t["seed"],
    )
    return RunConfig(
        document=doc, phantom=phantom, preprocess=prep, model=model, train=train, folds=doc["cv"]["folds"],
        cv_seed=doc["cv"]["seed"], dataset_path=ds["path"], n_patients=ds["n_patients"],
        frac_both_regions=float(ds["frac_both_regions"]), output=doc["output"],
    )


def _tupled(v):
    return tuple(_tupled(x) for x in v) if isinstance(v, list) else v


def load(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc.strerror}", key=str(path)) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"malformed JSON in {path}: {exc}", key=str(path)) from exc
    return parse(doc)


def effective(cfg):
    """Canonical JSON text of the fully materialised config."""
    return json.dumps(cfg.document, indent=2, sort_keys=True) + "\n"
