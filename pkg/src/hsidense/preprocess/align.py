"""Integer-translation band registration by normalized cross-correlation.

Every band is matched against band 0 over the central region (a margin of
``max_shift`` pixels is excluded) and translated by the best shift, with
edge replication filling the uncovered border.
"""
import logging

import numpy as np
from scipy import signal

from ..errors import ParameterError
from ..hsi import HyperspectralCube

log = logging.getLogger(__name__)

MAX_SHIFT = 8


def shift_plane(plane, dy, dx):
    """``out[r, c] = plane[r - dy, c - dx]`` with edge-replicated borders."""
    h, w = plane.shape
    rows = np.clip(np.arange(h) - dy, 0, h - 1)
    cols = np.clip(np.arange(w) - dx, 0, w - 1)
    return plane[np.ix_(rows, cols)]


def _window_sums(a, h, w):
    ii = np.pad(a.cumsum(0).cumsum(1), ((1, 0), (1, 0)))
    return ii[h:, w:] - ii[:-h, w:] - ii[h:, :-w] + ii[:-h, :-w]


def ncc_surface(ref, moving, max_shift=MAX_SHIFT):
    """NCC for every correction (dy, dx) in ±max_shift; index [dy+m, dx+m].

    Returns None when either plane is constant over the compared area.
    """
    m = max_shift
    ref = np.asarray(ref, dtype=np.float64)
    moving = np.asarray(moving, dtype=np.float64)
    h, w = ref.shape
    th, tw = h - 2 * m, w - 2 * m
    if th < 2 or tw < 2:
        raise ParameterError(f"plane {h}×{w} too small for a ±{m} px search")
    t = ref[m:h - m, m:w - m]
    t0 = t - t.mean()
    t_norm = np.sqrt((t0 * t0).sum())
    num = signal.correlate(moving, t0, mode="valid", method="fft")
    n = th * tw
    s1 = _window_sums(moving, th, tw)
    s2 = _window_sums(moving * moving, th, tw)
    var = np.maximum(s2 - s1 * s1 / n, 0.0)
    if t_norm <= 1e-12 * max(1.0, np.abs(t).max()) * np.sqrt(n) or not np.any(var > 0):
        return None
    with np.errstate(divide="ignore", invalid="ignore"):
        ncc = num / (t_norm * np.sqrt(var))
    ncc[var <= 1e-12 * max(1.0, s2.max())] = -np.inf
    # valid-mode index i corresponds to window start m - dy
    return ncc[::-1, ::-1]


def estimate_shifts(cube, max_shift=MAX_SHIFT):
    """Per-band integer corrections (dy, dx) relative to band 0, shape B×2."""
    if cube.bands < 2:
        raise ParameterError("alignment needs at least 2 bands")
    ref = cube.data[0]
    shifts = np.zeros((cube.bands, 2), dtype=np.int64)
    for b in range(1, cube.bands):
        surf = ncc_surface(ref, cube.data[b], max_shift)
        if surf is None:
            log.warning("band %d of %s is degenerate; alignment skipped", b, cube.patient_id)
            continue
        i, j = np.unravel_index(np.argmax(surf), surf.shape)
        shifts[b] = (i - max_shift, j - max_shift)
    return shifts


def align_bands(cube, max_shift=MAX_SHIFT, return_shifts=False):
    shifts = estimate_shifts(cube, max_shift)
    planes = [shift_plane(cube.data[b], dy, dx) if (dy or dx) else cube.data[b] for b, (dy, dx) in enumerate(shifts)]
    out = HyperspectralCube(np.stack(planes), cube.wavelengths_nm, cube.patient_id)
    return (out, shifts) if return_shifts else out
