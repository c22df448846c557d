"""Per-cube preprocessing: alignment, MNF denoising, crop extraction, gating."""
import logging
from dataclasses import dataclass, field

from .align import MAX_SHIFT, align_bands
from .mnf import DEFAULT_SNR_THRESHOLD, apply_mnf, fit_mnf
from .patches import (
    ORDERED_STRIDE,
    PATCH_SIZE,
    SOURCE_SIZE,
    SPECULAR_MAX_FRACTION,
    SPECULAR_THRESHOLD,
    PatchSet,
    extract_patches,
    specular_gate,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PreprocessConfig:
    align: bool = True
    max_shift: int = MAX_SHIFT
    mnf: bool = True
    mnf_estimator: str = "shift-difference"
    mnf_k: int = None
    snr_threshold: float = DEFAULT_SNR_THRESHOLD
    specular_threshold: float = SPECULAR_THRESHOLD
    specular_max_fraction: float = SPECULAR_MAX_FRACTION
    patch_size: int = PATCH_SIZE
    stride: int = ORDERED_STRIDE
    source_size: int = SOURCE_SIZE
    source_stride: int = 8


@dataclass
class PreparedCube:
    """Gated crops of one cube: ordered evaluation crops per region and training sources."""

    patient_id: str
    region_labels: dict = field(default_factory=dict)
    ordered: dict = field(default_factory=dict)
    training: PatchSet = field(default_factory=PatchSet)
    mnf_components: int = 0
    rejected: int = 0
    wavelengths: tuple = ()


def preprocess_cube(cube, regions, cfg=PreprocessConfig()):
    if cfg.align and cube.bands > 1:
        cube = align_bands(cube, cfg.max_shift)
    k = 0
    if cfg.mnf:
        model = fit_mnf(cube, cfg.mnf_estimator, cfg.snr_threshold, cfg.mnf_k)
        cube = apply_mnf(cube, model)
        k = model.retained_components
    out = PreparedCube(cube.patient_id, mnf_components=k, wavelengths=tuple(cube.wavelengths_nm.tolist()))

    def gate(ps):
        kept = [p for p in ps if specular_gate(p, cfg.specular_threshold, cfg.specular_max_fraction)]
        out.rejected += len(ps) - len(kept)
        return kept

    for region in regions:
        out.region_labels[region.region_id] = region.label
        ordered = gate(extract_patches(cube, region, "ordered", cfg.stride, cfg.patch_size))
        out.ordered[region.region_id] = ordered
        sources = gate(extract_patches(cube, region, "training", cfg.source_stride, cfg.patch_size, cfg.source_size))
        out.training.extend(sources)
        if not ordered:
            log.warning("region %s has no crop surviving gating", region.region_id)
    return out
