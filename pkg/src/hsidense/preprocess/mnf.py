"""Minimum noise fraction transform.

Components are generalized eigenvectors of the data covariance against the
noise covariance, ordered by descending eigenvalue ``lambda = v'Σv / v'Σ_N v``
(total-to-noise variance, ~1 for pure noise). Denoising projects onto the
leading components and maps back to band space.
"""
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ..errors import ParameterError
from ..hsi import HyperspectralCube

DEFAULT_SNR_THRESHOLD = 2.0


@dataclass(eq=False)
class MnfModel:
    mean: np.ndarray
    noise_covariance: np.ndarray
    data_covariance: np.ndarray
    eigenvalues: np.ndarray
    forward_basis: np.ndarray
    inverse_basis: np.ndarray
    retained_components: int
    ridge: float = 0.0

    @property
    def bands(self):
        return self.mean.size


def shift_difference_noise(cube):
    """Noise covariance from horizontal neighbour differences: ½·cov(x[r,c] - x[r,c+1])."""
    d = cube.data[:, :, :-1].astype(np.float64) - cube.data[:, :, 1:].astype(np.float64)
    return 0.5 * np.cov(d.reshape(cube.bands, -1))


NOISE_ESTIMATORS = {"shift-difference": shift_difference_noise}


def fit_mnf(cube, noise_estimator="shift-difference", snr_threshold=DEFAULT_SNR_THRESHOLD, k=None):
    """Fit the MNF basis of ``cube``.

    ``k`` fixes the retained component count; otherwise the smallest k that
    keeps every component with eigenvalue >= ``snr_threshold`` (at least 1).
    """
    b = cube.bands
    x = cube.pixels().astype(np.float64)
    if x.shape[0] < b + 1:
        raise ParameterError(f"MNF needs at least {b + 1} pixels, got {x.shape[0]}")
    try:
        estimate = NOISE_ESTIMATORS[noise_estimator]
    except KeyError:
        raise ParameterError(f"unknown noise estimator {noise_estimator!r}") from None
    mean = x.mean(axis=0)
    sigma = np.atleast_2d(np.cov(x, rowvar=False))
    noise = np.atleast_2d(estimate(cube))
    noise = 0.5 * (noise + noise.T)
    ridge = 0.0
    evals_n = np.linalg.eigvalsh(noise)
    tr = np.trace(noise)
    if evals_n[0] <= 1e-12 * max(evals_n[-1], np.finfo(float).tiny):
        ridge = 1e-9 * tr / b if tr > 0 else 1e-9
        noise = noise + ridge * np.eye(b)
    lam, vecs = linalg.eigh(sigma, noise)
    order = np.argsort(lam)[::-1]
    lam, vecs = lam[order], vecs[:, order]
    inverse = vecs.T @ noise
    if k is None:
        k = max(1, int(np.count_nonzero(lam >= snr_threshold)))
    _check_k(k, b)
    return MnfModel(mean, noise, sigma, lam, vecs, inverse, int(k), ridge)


def _check_k(k, b):
    if not 1 <= int(k) <= b:
        raise ParameterError(f"retained components must lie in 1..{b}, got {k}")


def transform(cube, model):
    """MNF component scores, (H*W)×B."""
    return (cube.pixels().astype(np.float64) - model.mean) @ model.forward_basis


def denoise_pixels(pixels, model, k=None):
    k = model.retained_components if k is None else k
    _check_k(k, model.bands)
    z = (np.asarray(pixels, dtype=np.float64) - model.mean) @ model.forward_basis
    z[:, k:] = 0.0
    return z @ model.inverse_basis + model.mean


def apply_mnf(cube, model, k=None):
    """Denoised cube: keep the leading ``k`` components, same band count."""
    k = model.retained_components if k is None else k
    _check_k(k, model.bands)
    rec = denoise_pixels(cube.pixels(), model, k)
    data = rec.T.reshape(cube.data.shape)
    return HyperspectralCube(np.clip(data, 0.0, None), cube.wavelengths_nm, cube.patient_id)
