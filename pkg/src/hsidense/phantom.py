"""Seeded synthetic hyperspectral phantoms of mucosa with a marked lesion.

Tissue reflectance is a smooth rising baseline minus Gaussian absorption
bumps. The tumor signature adds ``separation`` times an extra set of bumps
to the healthy one, so ``separation=0`` makes the classes spectrally
identical. Each cube also carries multiplicative texture, a linear
illumination ramp, additive sensor noise and saturated specular spots.
"""
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigurationError, ParameterError
from .hsi import DEFAULT_WAVELENGTHS, AnnotatedRegion, HyperspectralCube, Label, manifest_record, write_cube, write_manifest
from .preprocess.align import shift_plane

WINDOW = 32


@dataclass(frozen=True)
class PhantomSpec:
    height: int = 256
    width: int = 256
    wavelengths: tuple = tuple(DEFAULT_WAVELENGTHS.tolist())
    baseline_level: float = 0.35
    baseline_slope: float = 0.30
    # (center nm, width nm, depth) triples
    healthy_bumps: tuple = ((415.0, 12.0, 0.15), (542.0, 10.0, 0.07), (577.0, 10.0, 0.08))
    tumor_bumps: tuple = ((430.0, 20.0, 0.10), (560.0, 25.0, 0.08), (630.0, 30.0, -0.05))
    separation: float = 1.0
    texture_scale: float = 0.03
    texture_smoothness_px: float = 6.0
    noise_sigma: float = 0.01
    noisy_band_fraction: float = 0.0
    noisy_band_sigma: float = 0.0
    specular_count: int = 6
    specular_intensity: float = 1.0
    specular_radius_px: tuple = (2, 4)
    illumination_amplitude: float = 0.1
    region_radius_px: tuple = (40, 54)
    band_jitter_px: int = 0
    seed: int = 0

    def __post_init__(self):
        for name in ("wavelengths", "specular_radius_px", "region_radius_px"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        for name in ("healthy_bumps", "tumor_bumps"):
            object.__setattr__(self, name, tuple(tuple(float(v) for v in b) for b in getattr(self, name)))
        if self.separation < 0:
            raise ParameterError("separation must be >= 0")
        if self.noise_sigma < 0 or self.texture_scale < 0 or self.noisy_band_sigma < 0:
            raise ParameterError("noise scales must be >= 0")
        if not 0.0 <= self.noisy_band_fraction <= 1.0:
            raise ParameterError("noisy_band_fraction must lie in [0, 1]")

    def to_dict(self):
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = [list(x) if isinstance(x, tuple) else x for x in v]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def with_seed(self, seed):
        return dataclasses.replace(self, seed=int(seed))


def _bumps(wl, bumps):
    out = np.zeros_like(wl)
    for center, width, depth in bumps:
        out += depth * np.exp(-0.5 * ((wl - center) / width) ** 2)
    return out


def class_spectra(spec):
    """Noise-free reflectance of healthy and tumor tissue, shape 2×B."""
    wl = np.asarray(spec.wavelengths, dtype=np.float64)
    t = (wl - wl[0]) / max(wl[-1] - wl[0], 1.0)
    healthy = spec.baseline_level + spec.baseline_slope * t - _bumps(wl, spec.healthy_bumps)
    tumor = healthy - spec.separation * _bumps(wl, spec.tumor_bumps)
    return np.stack([healthy, tumor])


def _ellipse(h, w, cy, cx, ry, rx):
    yy, xx = np.mgrid[:h, :w]
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def fits_window(mask, size=WINDOW):
    """True if some size×size window lies entirely inside ``mask``."""
    if mask.shape[0] < size or mask.shape[1] < size:
        return False
    ii = np.pad(mask.astype(np.int64).cumsum(0).cumsum(1), ((1, 0), (1, 0)))
    sums = ii[size:, size:] - ii[:-size, size:] - ii[size:, :-size] + ii[:-size, :-size]
    return bool((sums == size * size).any())


def _place_regions(spec, rng):
    h, w = spec.height, spec.width
    r_lo, r_hi = spec.region_radius_px
    half = w // 2
    margin = 4
    if r_lo < 23 or 2 * r_lo + 2 * margin > min(h, half):
        raise ParameterError(
            f"cube {h}×{w} cannot hold two disjoint regions of radius {r_lo} each containing a {WINDOW}×{WINDOW} window"
        )
    r_hi = min(r_hi, (min(h, half) - 2 * margin) // 2)
    tumor_left = bool(rng.integers(2))
    masks = []
    for side in (0, 1):
        ry, rx = rng.uniform(r_lo, r_hi, 2)
        cy = rng.uniform(ry + margin, h - ry - margin)
        x0 = side * half
        cx = rng.uniform(x0 + rx + margin, x0 + half - rx - margin)
        masks.append(_ellipse(h, w, cy, cx, ry, rx))
    tumor, healthy = (masks[0], masks[1]) if tumor_left else (masks[1], masks[0])
    for m in (tumor, healthy):
        if not fits_window(m):
            raise ParameterError("generated region holds no full window")
    return tumor, healthy


def generate_phantom(spec, patient_id="P000", include_healthy=True):
    """Render one cube; returns ``(cube, regions)`` with the tumor region first."""
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    tumor_mask, healthy_mask = _place_regions(spec, rng)
    spectra = class_spectra(spec)
    n_bands = spectra.shape[1]

    texture = ndimage.gaussian_filter(rng.standard_normal((h, w)), spec.texture_smoothness_px, mode="reflect")
    texture /= texture.std() or 1.0
    theta = rng.uniform(0, 2 * np.pi)
    yy, xx = np.mgrid[:h, :w]
    u = 2.0 * xx / max(w - 1, 1) - 1.0
    v = 2.0 * yy / max(h - 1, 1) - 1.0
    shading = (1.0 + spec.illumination_amplitude * (np.cos(theta) * u + np.sin(theta) * v)) * (
        1.0 + spec.texture_scale * texture
    )

    refl = np.where(tumor_mask[None], spectra[1][:, None, None], spectra[0][:, None, None])
    cube = refl * shading[None]
    sigma = np.full(n_bands, spec.noise_sigma)
    n_noisy = int(round(spec.noisy_band_fraction * n_bands))
    if n_noisy:
        sigma[rng.choice(n_bands, n_noisy, replace=False)] += spec.noisy_band_sigma
    cube = cube + sigma[:, None, None] * rng.standard_normal((n_bands, h, w))

    for _ in range(spec.specular_count):
        rad = rng.uniform(*spec.specular_radius_px)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        cube[:, _ellipse(h, w, cy, cx, rad, rad)] = spec.specular_intensity

    if spec.band_jitter_px:
        j = spec.band_jitter_px
        for b in range(1, n_bands):
            dy, dx = rng.integers(-j, j + 1, 2)
            cube[b] = shift_plane(cube[b], dy, dx)

    cube = np.clip(cube, 0.0, 1.0).astype(np.float32)
    hsi = HyperspectralCube(cube, np.asarray(spec.wavelengths), patient_id)
    regions = [AnnotatedRegion(tumor_mask, Label.TUMOR, f"{patient_id}-T")]
    if include_healthy:
        regions.append(AnnotatedRegion(healthy_mask, Label.HEALTHY, f"{patient_id}-H"))
    return hsi, regions


def cohort_plan(n_patients, frac_both, seed):
    """Patient ids and which of them carry a healthy annotation."""
    if not 0.0 <= frac_both <= 1.0:
        raise ParameterError(f"frac_both must lie in [0, 1], got {frac_both}")
    ids = [f"P{i:03d}" for i in range(n_patients)]
    n_both = int(round(frac_both * n_patients))
    order = np.random.default_rng(seed).permutation(n_patients)
    both = set(order[:n_both].tolist())
    return [(pid, i in both) for i, pid in enumerate(ids)]


def patient_seed(base_seed, index):
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def iter_cohort(n_patients, frac_both, spec):
    """Yield ``(cube, regions)`` for every patient of a cohort, in id order."""
    for i, (pid, both) in enumerate(cohort_plan(n_patients, frac_both, spec.seed)):
        yield generate_phantom(spec.with_seed(patient_seed(spec.seed, i)), pid, include_healthy=both)


def generate_cohort(n_patients, frac_both, spec, out_dir, n_folds=None):
    """Write one HSIC file per patient plus ``manifest.jsonl``; returns the records."""
    if n_folds is not None and n_patients < n_folds:
        raise ConfigurationError(f"{n_patients} patients cannot fill {n_folds} folds", key="cv.folds")
    if n_patients < 1:
        raise ConfigurationError("n_patients must be >= 1", key="dataset.n_patients")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = []
    for cube, regions in iter_cohort(n_patients, frac_both, spec):
        path = out / f"{cube.patient_id}.hsic"
        write_cube(path, cube, regions)
        records.append(manifest_record(path.name, cube, regions))
    write_manifest(out / "manifest.jsonl", records)
    return records
