"""Hyperspectral cube container, annotations and the HSIC file format.

HSIC layout (little-endian)::

    b"HSIC" | u16 version=1 | u32 H | u32 W | u32 B | B x f32 wavelengths
    | u32 len + UTF-8 patient id | H*W*B x f32 data (band-major, row-major)
    | u16 region count | per region: u8 label, u16 len + UTF-8 id, H*W x u8 mask

Manifests are JSON lines, one record per cube:
``{"path": ..., "patient_id": ..., "regions": [{"id": ..., "label": ...}]}``.
"""
import enum
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidInputError

HSIC_MAGIC = b"HSIC"
HSIC_VERSION = 1
DEFAULT_WAVELENGTHS = 380.0 + 10.0 * np.arange(30)


class Label(enum.IntEnum):
    HEALTHY = 0
    TUMOR = 1

    @classmethod
    def parse(cls, value):
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(int(value))


@dataclass(eq=False)
class HyperspectralCube:
    """Radiance volume stored band-major: ``data[band, row, col]``, float32 in [0, 1]."""

    data: np.ndarray
    wavelengths_nm: np.ndarray
    patient_id: str = ""

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        self.wavelengths_nm = np.asarray(self.wavelengths_nm, dtype=np.float32)
        if self.data.ndim != 3:
            raise InvalidInputError(f"cube data must be B×H×W, got shape {self.data.shape}")
        if self.wavelengths_nm.shape != (self.bands,):
            raise InvalidInputError(f"{self.wavelengths_nm.size} wavelengths for {self.bands} bands")
        if self.bands > 1 and np.any(np.diff(self.wavelengths_nm) <= 0):
            raise InvalidInputError("wavelengths must be strictly ascending")
        if not np.all(np.isfinite(self.data)) or (self.data.size and self.data.min() < 0):
            raise InvalidInputError("cube intensities must be finite and non-negative")

    @property
    def bands(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    def pixels(self):
        """(H*W)×B matrix of pixel spectra."""
        return self.data.reshape(self.bands, -1).T

    def with_data(self, data):
        return HyperspectralCube(np.clip(data, 0.0, None), self.wavelengths_nm, self.patient_id)

    def __eq__(self, other):
        return (
            isinstance(other, HyperspectralCube)
            and self.patient_id == other.patient_id
            and np.array_equal(self.wavelengths_nm, other.wavelengths_nm)
            and np.array_equal(self.data, other.data)
        )


@dataclass(eq=False)
class AnnotatedRegion:
    mask: np.ndarray
    label: Label
    region_id: str

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=bool)
        self.label = Label.parse(self.label)
        if self.mask.ndim != 2 or not self.mask.any():
            raise InvalidInputError(f"region {self.region_id!r}: mask must be a non-empty H×W plane")

    def __eq__(self, other):
        return (
            isinstance(other, AnnotatedRegion)
            and self.label == other.label
            and self.region_id == other.region_id
            and np.array_equal(self.mask, other.mask)
        )


def validate_regions(cube, regions):
    seen = set()
    for r in regions:
        if r.mask.shape != (cube.height, cube.width):
            raise InvalidInputError(f"region {r.region_id!r} mask {r.mask.shape} does not match cube")
        if r.label in seen:
            raise InvalidInputError(f"more than one {r.label.name.lower()} region in cube {cube.patient_id!r}")
        seen.add(r.label)


def encode_cube(cube, regions=()):
    validate_regions(cube, regions)
    pid = cube.patient_id.encode("utf-8")
    parts = [
        HSIC_MAGIC,
        struct.pack("<HIII", HSIC_VERSION, cube.height, cube.width, cube.bands),
        cube.wavelengths_nm.astype("<f4").tobytes(),
        struct.pack("<I", len(pid)),
        pid,
        cube.data.astype("<f4").tobytes(),
        struct.pack("<H", len(regions)),
    ]
    for r in regions:
        rid = r.region_id.encode("utf-8")
        parts += [struct.pack("<BH", int(r.label), len(rid)), rid, r.mask.astype(np.uint8).tobytes()]
    return b"".join(parts)


class ByteReader:
    """Cursor over a byte string that reports the offset of any truncation."""

    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.raw):
            raise FormatError(f"truncated payload while reading {what}", self.pos)
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def array(self, dtype, count, what):
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(dt.itemsize * count, what), dtype=dt, count=count)

    def text(self, length_fmt, what):
        (n,) = self.unpack(length_fmt, f"{what} length")
        start = self.pos
        try:
            return self.take(n, what).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{what} is not valid UTF-8", start) from exc


def decode_cube(raw):
    r = ByteReader(raw)
    if r.take(4, "magic") != HSIC_MAGIC:
        raise FormatError("magic mismatch, not an HSIC file", 0)
    version, h, w, b = r.unpack("<HIII", "header")
    if version != HSIC_VERSION:
        raise FormatError(f"unsupported HSIC version {version}", 4)
    wl_offset = r.pos
    wavelengths = r.array("<f4", b, "wavelengths")
    if b > 1 and np.any(np.diff(wavelengths) <= 0):
        raise FormatError(f"wavelength grid inconsistent with {b} ascending bands", wl_offset)
    pid = r.text("<I", "patient id")
    data = r.array("<f4", h * w * b, "cube data").reshape(b, h, w).astype(np.float32)
    (n_regions,) = r.unpack("<H", "region count")
    regions = []
    for _ in range(n_regions):
        (label,) = r.unpack("<B", "region label")
        if label not in (0, 1):
            raise FormatError(f"invalid region label {label}", r.pos - 1)
        rid = r.text("<H", "region id")
        mask = r.array("u1", h * w, f"mask of region {rid!r}").reshape(h, w).astype(bool)
        regions.append(AnnotatedRegion(mask, Label(label), rid))
    if r.pos != len(raw):
        raise FormatError(f"{len(raw) - r.pos} trailing bytes after last region", r.pos)
    return HyperspectralCube(data, wavelengths, pid), regions


def write_cube(path, cube, regions=()):
    Path(path).write_bytes(encode_cube(cube, list(regions)))


def read_cube(path):
    """Returns ``(cube, regions)``."""
    return decode_cube(Path(path).read_bytes())


def write_manifest(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_manifest(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def manifest_record(path, cube, regions):
    return {
        "path": str(path),
        "patient_id": cube.patient_id,
        "regions": [{"id": r.region_id, "label": r.label.name.lower()} for r in regions],
    }
