"""Densenet backbone with three hyperspectral input treatments.

Variants differ only in how a H×W×B crop enters the network:

* ``Densenet2D``    - bands stacked as channels, 2-D convolutions (B×H×W input)
* ``Densenet2D_MS`` - per-pixel spectral mean and std as two channels
* ``Densenet3D``    - one-channel B×H×W volume, 3-D convolutions

Layout: initial conv -> 3 dense blocks joined by 2 transitions -> BN-ReLU ->
global average pooling -> dense layer to two logits.
"""
import dataclasses
import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import DimensionError, FormatError, IncompatibleCheckpointError, SpecError
from .preprocess.patches import spectral_summary
from .tensor import Tensor, no_grad

VARIANTS = ("Densenet2D", "Densenet2D_MS", "Densenet3D")
CHECKPOINT_MAGIC = b"HSIM"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    variant: str = "Densenet3D"
    initial_channels: int = 16
    growth_rate: int = 12
    layers_per_block: tuple = (4, 4, 4)
    bands: int = 30
    num_classes: int = 2
    patch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "layers_per_block", tuple(int(v) for v in self.layers_per_block))
        self.validate()

    def validate(self):
        if self.variant not in VARIANTS:
            raise SpecError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if len(self.layers_per_block) != 3:
            raise SpecError(f"exactly 3 dense blocks required, got {len(self.layers_per_block)}")
        if min(self.layers_per_block) < 1:
            raise SpecError("every dense block needs at least one layer")
        if self.num_classes != 2:
            raise SpecError("num_classes must be 2")
        if self.initial_channels < 1 or self.growth_rate < 1:
            raise SpecError("initial_channels and growth_rate must be positive")
        if self.bands < 2:
            raise SpecError("at least 2 bands are required")
        # two 2x poolings must leave every pooled extent >= 1
        extents = [self.patch_size, self.patch_size]
        if self.variant == "Densenet3D":
            extents.append(self.bands)
        for e in extents:
            if e // 4 < 1:
                raise SpecError(f"extent {e} collapses below 1 before global pooling")

    @property
    def is_3d(self):
        return self.variant == "Densenet3D"

    @property
    def in_channels(self):
        return {"Densenet2D": self.bands, "Densenet2D_MS": 2, "Densenet3D": 1}[self.variant]

    def input_shape(self):
        """Per-sample network input shape (channels first)."""
        p = self.patch_size
        if self.is_3d:
            return (1, self.bands, p, p)
        return (self.in_channels, p, p)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["layers_per_block"] = list(self.layers_per_block)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class ModelParams:
    spec: ModelSpec
    params: dict = field(default_factory=dict)
    buffers: dict = field(default_factory=dict)

    def trainable(self):
        return list(self.params.items())

    def parameter_count(self):
        return sum(t.size for t in self.params.values())

    def copy(self):
        return ModelParams(
            self.spec,
            {k: Tensor(v.data, requires_grad=True, name=k) for k, v in self.params.items()},
            {k: v.copy() for k, v in self.buffers.items()},
        )


def block_channels(spec):
    """Channels entering each composite layer, per block, plus the final width."""
    ch = spec.initial_channels
    plan = []
    for i, n_layers in enumerate(spec.layers_per_block):
        plan.append([ch + j * spec.growth_rate for j in range(n_layers)])
        ch += n_layers * spec.growth_rate
        if i < 2:
            ch //= 2
    return plan, ch


def build(spec):
    """Fresh He-normal initialised parameters; the dense head starts at zero."""
    rng = np.random.default_rng(spec.seed)
    kshape = (3, 3, 3) if spec.is_3d else (3, 3)
    params, buffers = {}, {}

    def conv(name, c_out, c_in, shape):
        fan_in = c_in * int(np.prod(shape))
        w = rng.standard_normal((c_out, c_in) + shape) * np.sqrt(2.0 / fan_in)
        params[name] = Tensor(w, requires_grad=True, name=name)

    def norm(prefix, c):
        params[f"{prefix}.gamma"] = Tensor(np.ones(c), requires_grad=True, name=f"{prefix}.gamma")
        params[f"{prefix}.beta"] = Tensor(np.zeros(c), requires_grad=True, name=f"{prefix}.beta")
        buffers[f"{prefix}.running_mean"] = np.zeros(c)
        buffers[f"{prefix}.running_var"] = np.ones(c)

    conv("init.conv", spec.initial_channels, spec.in_channels, kshape)
    ch = spec.initial_channels
    for i, n_layers in enumerate(spec.layers_per_block):
        for j in range(n_layers):
            norm(f"block{i}.layer{j}.bn", ch)
            conv(f"block{i}.layer{j}.conv", spec.growth_rate, ch, kshape)
            ch += spec.growth_rate
        if i < 2:
            norm(f"trans{i}.bn", ch)
            conv(f"trans{i}.conv", ch // 2, ch, (1,) * len(kshape))
            ch //= 2
    norm("final.bn", ch)
    params["head.weight"] = Tensor(np.zeros((spec.num_classes, ch)), requires_grad=True, name="head.weight")
    params["head.bias"] = Tensor(np.zeros(spec.num_classes), requires_grad=True, name="head.bias")
    return ModelParams(spec, params, buffers)


def prepare_input(spec, patches):
    """Turn an N×H×W×B stack of crops into the variant's network input."""
    x = np.asarray(patches, dtype=np.float64)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise DimensionError(f"expected N×H×W×B crops, got shape {x.shape}")
    if spec.variant == "Densenet2D_MS":
        x = spectral_summary(x)
    x = np.transpose(x, (0, 3, 1, 2))
    if spec.is_3d:
        x = x[:, None]
    return np.ascontiguousarray(x)


def forward(model, batch, training=False, buffers=None):
    """Logits (N×2) for a prepared batch.

    Training mode normalises with batch statistics and updates ``buffers``
    (defaults to ``model.buffers``) in place.
    """
    spec, p = model.spec, model.params
    buffers = model.buffers if buffers is None else buffers
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    expected = spec.input_shape()
    if x.ndim != len(expected) + 1 or tuple(x.shape[1:]) != expected:
        raise DimensionError(f"stage 'input': {spec.variant} expects N×{'×'.join(map(str, expected))}, got {x.shape}")
    conv = ops.conv3d if spec.is_3d else ops.conv2d

    def bn_relu(h, prefix):
        return ops.relu(ops.batch_norm(
            h, p[f"{prefix}.gamma"], p[f"{prefix}.beta"],
            buffers[f"{prefix}.running_mean"], buffers[f"{prefix}.running_var"], training,
        ))

    h = conv(x, p["init.conv"], 1, 1)
    for i, n_layers in enumerate(spec.layers_per_block):
        for j in range(n_layers):
            name = f"block{i}.layer{j}"
            new = conv(bn_relu(h, f"{name}.bn"), p[f"{name}.conv"], 1, 1)
            h = ops.concat([h, new], axis=1)
        if i < 2:
            h = conv(bn_relu(h, f"trans{i}.bn"), p[f"trans{i}.conv"], 1, 0)
            h = ops.avg_pool(h, 2)
    h = ops.global_avg_pool(bn_relu(h, "final.bn"))
    return ops.dense(h, p["head.weight"], p["head.bias"])


def predict_proba(model, batch, chunk=64):
    """Eval-mode class probabilities, rows summing to one."""
    batch = np.asarray(batch)
    with no_grad():
        out = [ops.softmax(forward(model, batch[i:i + chunk]).data) for i in range(0, len(batch), chunk)]
    return np.concatenate(out, axis=0) if out else np.zeros((0, model.spec.num_classes))


# checkpoints


def _is_buffer(name):
    return name.endswith(".running_mean") or name.endswith(".running_var")


def save_params(model, path):
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<H", CHECKPOINT_VERSION))
    spec_json = json.dumps(model.spec.to_dict(), sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(spec_json)))
    buf.write(spec_json)
    tensors = [(k, v.data) for k, v in model.params.items()] + list(model.buffers.items())
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors:
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


class _Reader:
    def __init__(self, raw):
        self.raw, self.pos = raw, 0

    def take(self, n, what):
        if self.pos + n > len(self.raw):
            raise FormatError(f"truncated checkpoint while reading {what}", self.pos)
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_params(path, expected_spec=None):
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(4, "magic") != CHECKPOINT_MAGIC:
        raise IncompatibleCheckpointError(f"{path}: not a model checkpoint (bad magic)")
    (version,) = r.unpack("<H", "version")
    if version != CHECKPOINT_VERSION:
        raise IncompatibleCheckpointError(f"{path}: unsupported checkpoint version {version}")
    (n,) = r.unpack("<I", "spec length")
    try:
        spec = ModelSpec.from_dict(json.loads(r.take(n, "spec").decode("utf-8")))
    except (ValueError, TypeError) as exc:
        raise IncompatibleCheckpointError(f"{path}: unreadable model spec ({exc})") from exc
    if expected_spec is not None and spec != expected_spec:
        raise IncompatibleCheckpointError(f"{path}: checkpoint spec {spec} does not match expected {expected_spec}")
    reference = build(spec)
    params, buffers = {}, {}
    (count,) = r.unpack("<I", "tensor count")
    for _ in range(count):
        (ln,) = r.unpack("<H", "name length")
        name = r.take(ln, "name").decode("utf-8")
        (rank,) = r.unpack("<B", "rank")
        shape = r.unpack(f"<{rank}I", "extents")
        nbytes = 8 * int(np.prod(shape))
        arr = np.frombuffer(r.take(nbytes, f"payload of {name}"), dtype="<f8").reshape(shape).astype(np.float64)
        if _is_buffer(name):
            buffers[name] = arr
        else:
            params[name] = Tensor(arr, requires_grad=True, name=name)
    want = {k: v.shape for k, v in reference.params.items()}
    got = {k: v.shape for k, v in params.items()}
    if want != got or set(buffers) != set(reference.buffers):
        raise IncompatibleCheckpointError(f"{path}: tensor layout does not match spec {spec}")
    ordered = {k: params[k] for k in reference.params}
    return ModelParams(spec, ordered, {k: buffers[k] for k in reference.buffers})
