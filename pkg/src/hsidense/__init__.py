"""Densenet classifiers for hyperspectral tissue crops, with a numpy autodiff core."""
from .hsi import AnnotatedRegion, HyperspectralCube, Label, read_cube, write_cube
from .models import ModelParams, ModelSpec, build, forward, predict_proba
from .phantom import PhantomSpec, generate_cohort, generate_phantom
from .tensor import Tensor, backward

__version__ = "0.1.0"

__all__ = [
    "AnnotatedRegion", "HyperspectralCube", "Label", "ModelParams", "ModelSpec", "PhantomSpec", "Tensor",
    "backward", "build", "forward", "generate_cohort", "generate_phantom", "predict_proba", "read_cube",
    "write_cube",
]
