"""Crop extraction, specular gating, spectral summaries and augmentation.

Crops are H×W×B float arrays (spatial first, bands last).
"""
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import FormatError, ParameterError
from ..hsi import ByteReader, Label

log = logging.getLogger(__name__)

PATCH_SIZE = 32
SOURCE_SIZE = 36
ORDERED_STRIDE = 16
SPECULAR_THRESHOLD = 0.95
SPECULAR_MAX_FRACTION = 0.02


@dataclass(eq=False)
class Patch:
    data: np.ndarray
    label: Label
    region_id: str
    patient_id: str
    origin: tuple

    def __post_init__(self):
        self.label = Label.parse(self.label)
        self.origin = tuple(int(v) for v in self.origin)


@dataclass
class PatchSet:
    patches: list = field(default_factory=list)

    def __len__(self):
        return len(self.patches)

    def __iter__(self):
        return iter(self.patches)

    def __getitem__(self, i):
        return self.patches[i]

    def stack(self):
        return np.stack([p.data for p in self.patches]) if self.patches else np.zeros((0, 0, 0, 0))

    def labels(self):
        return np.array([int(p.label) for p in self.patches], dtype=np.int64)

    def by_region(self):
        groups = {}
        for p in self.patches:
            groups.setdefault(p.region_id, []).append(p)
        return groups

    def extend(self, other):
        self.patches.extend(other)


def window_origins(mask, size, stride):
    """Raster-ordered (row, col) origins of windows lying fully inside ``mask``.

    The grid is anchored at the top-left corner of the mask's bounding box.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ParameterError("region mask is empty")
    if stride < 1:
        raise ParameterError("stride must be >= 1")
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    r0, r1, c0, c1 = rows[0], rows[-1] + 1, cols[0], cols[-1] + 1
    ii = np.pad(mask.astype(np.int64).cumsum(0).cumsum(1), ((1, 0), (1, 0)))
    full = size * size
    out = []
    for r in range(r0, r1 - size + 1, stride):
        for c in range(c0, c1 - size + 1, stride):
            inside = ii[r + size, c + size] - ii[r, c + size] - ii[r + size, c] + ii[r, c]
            if inside == full:
                out.append((int(r), int(c)))
    return out


def extract_patches(cube, region, mode="ordered", stride=ORDERED_STRIDE, size=PATCH_SIZE, source_size=SOURCE_SIZE):
    """Crops of ``cube`` inside ``region``.

    ``ordered`` mode yields evaluation crops of ``size``; ``training`` mode
    yields larger ``source_size`` windows for later random cropping.
    """
    if mode not in ("ordered", "training"):
        raise ParameterError(f"unknown extraction mode {mode!r}")
    win = size if mode == "ordered" else source_size
    origins = window_origins(region.mask, win, stride)
    if not origins:
        log.warning("region %s admits no %dx%d window; excluded", region.region_id, win, win)
    patches = [
        Patch(
            np.ascontiguousarray(cube.data[:, r:r + win, c:c + win].transpose(1, 2, 0)),
            region.label,
            region.region_id,
            cube.patient_id,
            (r, c),
        )
        for r, c in origins
    ]
    return PatchSet(patches)


def specular_gate(patch, threshold=SPECULAR_THRESHOLD, max_fraction=SPECULAR_MAX_FRACTION, dynamic_range=1.0):
    """True to keep a crop, False to reject it as specular.

    A pixel counts as specular when its brightest band reaches
    ``threshold * dynamic_range``; the crop is rejected when the specular
    fraction exceeds ``max_fraction``.
    """
    if not 0.0 < threshold <= 1.0:
        raise ParameterError(f"threshold must lie in (0, 1], got {threshold}")
    data = patch.data if isinstance(patch, Patch) else np.asarray(patch)
    peak = data.max(axis=-1)
    frac = np.count_nonzero(peak >= threshold * dynamic_range) / peak.size
    return bool(frac <= max_fraction)


def spectral_summary(x):
    """Per-pixel mean and population std over the band axis (last axis -> 2)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 2:
        raise ParameterError("spectral summary needs at least 2 bands")
    return np.stack([x.mean(axis=-1), x.std(axis=-1)], axis=-1)


def augment(source, rng, size=PATCH_SIZE, offset=None, flips=None):
    """Random ``size`` crop of a larger source, then independent 50% flips.

    ``offset`` (row, col) and ``flips`` (vertical, horizontal) override the
    random draws; the band axis is never touched.
    """
    data = source.data if isinstance(source, Patch) else np.asarray(source)
    h, w = data.shape[:2]
    if h <= size or w <= size:
        raise ParameterError(f"source {h}×{w} must be strictly larger than the {size}×{size} target")
    if offset is None:
        offset = (int(rng.integers(h - size + 1)), int(rng.integers(w - size + 1)))
    if flips is None:
        flips = (bool(rng.random() < 0.5), bool(rng.random() < 0.5))
    r, c = offset
    out = data[r:r + size, c:c + size]
    if flips[0]:
        out = out[::-1]
    if flips[1]:
        out = out[:, ::-1]
    out = np.ascontiguousarray(out)
    if isinstance(source, Patch):
        return Patch(out, source.label, source.region_id, source.patient_id,
                     (source.origin[0] + r, source.origin[1] + c))
    return out


# patch container: HSIC framing, mask omitted, label byte per patch

PATCH_MAGIC = b"HSIP"
PATCH_VERSION = 1


def encode_patches(patchset, wavelengths):
    wl = np.asarray(wavelengths, dtype="<f4")
    if len(patchset):
        h, w, b = patchset[0].data.shape
    else:
        h = w = 0
        b = wl.size
    parts = [PATCH_MAGIC, struct.pack("<HIIII", PATCH_VERSION, len(patchset), h, w, b), wl.tobytes()]
    for p in patchset:
        if p.data.shape != (h, w, b):
            raise ParameterError("all patches in a container must share one shape")
        rid, pid = p.region_id.encode("utf-8"), p.patient_id.encode("utf-8")
        parts += [
            struct.pack("<BH", int(p.label), len(rid)), rid,
            struct.pack("<I", len(pid)), pid,
            struct.pack("<II", *p.origin),
            np.ascontiguousarray(p.data.transpose(2, 0, 1), dtype="<f4").tobytes(),
        ]
    return b"".join(parts)


def decode_patches(raw):
    r = ByteReader(raw)
    if r.take(4, "magic") != PATCH_MAGIC:
        raise FormatError("magic mismatch, not a patch container", 0)
    version, n, h, w, b = r.unpack("<HIIII", "header")
    if version != PATCH_VERSION:
        raise FormatError(f"unsupported patch container version {version}", 4)
    wl = r.array("<f4", b, "wavelengths").astype(np.float32)
    patches = []
    for _ in range(n):
        (label,) = r.unpack("<B", "label")
        rid = r.text("<H", "region id")
        pid = r.text("<I", "patient id")
        origin = r.unpack("<II", "origin")
        data = r.array("<f4", h * w * b, "patch data").reshape(b, h, w).transpose(1, 2, 0)
        patches.append(Patch(np.ascontiguousarray(data, dtype=np.float32), Label(label), rid, pid, origin))
    if r.pos != len(raw):
        raise FormatError("trailing bytes after last patch", r.pos)
    return PatchSet(patches), wl


def write_patches(path, patchset, wavelengths):
    Path(path).write_bytes(encode_patches(patchset, wavelengths))


def read_patches(path):
    return decode_patches(Path(path).read_bytes())
