from .align import align_bands, estimate_shifts, shift_plane
from .mnf import MnfModel, apply_mnf, fit_mnf
from .patches import (
    decode_patches,
    encode_patches,
    Patch,
    PatchSet,
    augment,
    extract_patches,
    read_patches,
    spectral_summary,
    specular_gate,
    write_patches,
)
from .pipeline import PreprocessConfig, PreparedCube, preprocess_cube

__all__ = [
    "MnfModel", "Patch", "PatchSet", "PreparedCube", "PreprocessConfig", "align_bands", "apply_mnf",
    "augment", "decode_patches", "encode_patches", "estimate_shifts", "extract_patches", "fit_mnf", "preprocess_cube", "read_patches",
    "shift_plane", "spectral_summary", "specular_gate", "write_patches",
]
