"""Central finite-difference verification of analytic gradients.

Relative error of a gradient ``a`` against its numerical estimate ``n`` is
``max|a - n| / max(max|a|, max|n|)``; the reported figure for a case is the
maximum over all of the case's inputs.
"""
from dataclasses import dataclass

import numpy as np

from . import models, ops
from .tensor import Tensor

FD_STEP = 1e-5
TOLERANCE = 1e-4


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    n_checked: int

    @property
    def passed(self):
        return self.max_rel_error < TOLERANCE


def relative_error(analytic, numeric):
    scale = max(np.abs(analytic).max(), np.abs(numeric).max())
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def numerical_grad(fn, arrays, index, h=FD_STEP, coords=None):
    """Central differences of scalar ``fn(*arrays)`` w.r.t. ``arrays[index]``.

    ``coords`` restricts the estimate to a subset of flat positions (others
    are left at zero).
    """
    base = [a.copy() for a in arrays]
    target = base[index]
    flat = target.reshape(-1)
    grad = np.zeros_like(target)
    gflat = grad.reshape(-1)
    positions = range(flat.size) if coords is None else coords
    for i in positions:
        orig = flat[i]
        flat[i] = orig + h
        up = fn(*base)
        flat[i] = orig - h
        down = fn(*base)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * h)
    return grad


def check_function(name, build, arrays, h=FD_STEP):
    """Compare backward() against finite differences for every input.

    ``build(*tensors)`` must return a scalar :class:`Tensor`.
    """

    def scalar(*arrs):
        return build(*[Tensor(a) for a in arrs]).item()

    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    build(*tensors).backward()
    worst, count = 0.0, 0
    for i, t in enumerate(tensors):
        numeric = numerical_grad(scalar, arrays, i, h)
        worst = max(worst, relative_error(t.grad, numeric))
        count += t.size
    return GradCheckResult(name, worst, count)


def _projected(out, seed):
    """Fixed random linear functional of ``out`` so every output element matters."""
    r = np.random.default_rng(seed).standard_normal(out.shape)
    return (out * r).sum()


def primitive_cases(seed=0):
    """(name, build, arrays) triples covering every differentiable primitive."""
    rng = np.random.default_rng(seed)
    counter = iter(range(seed + 1000, seed + 2000))

    def with_proj(fn):
        case_seed = next(counter)
        return lambda *ts: _projected(fn(*ts), case_seed)

    def bn_train(x, g, b):
        c = x.shape[1]
        return ops.batch_norm(x, g, b, np.zeros(c), np.ones(c), training=True)

    def bn_eval(x, g, b):
        rm = np.array([0.3, -0.2, 0.1])
        rv = np.array([1.5, 0.7, 2.0])
        return ops.batch_norm(x, g, b, rm, rv, training=False)

    labels = np.array([0, 1, 1, 0, 1])
    cw = np.array([1.2143, 0.85])

    # keep ReLU inputs away from the kink so central differences are smooth
    relu_in = rng.uniform(0.05, 1.0, (2, 3, 4, 4)) * rng.choice([-1.0, 1.0], (2, 3, 4, 4))

    return [
        ("add", with_proj(lambda a, b: a + b), [rng.standard_normal((3, 4)), rng.standard_normal((1, 4))]),
        ("mul", with_proj(lambda a, b: a * b), [rng.standard_normal((3, 4)), rng.standard_normal((3, 1))]),
        ("pow", with_proj(lambda a: a**2), [rng.standard_normal((3, 4))]),
        ("sum", lambda a: (a.sum(axis=1) ** 2).sum(), [rng.standard_normal((3, 4))]),
        ("conv2d", with_proj(lambda x, w: ops.conv2d(x, w, 1, 1)),
         [rng.standard_normal((2, 3, 6, 6)), rng.standard_normal((4, 3, 3, 3))]),
        ("conv2d_stride2", with_proj(lambda x, w: ops.conv2d(x, w, 2, 0)),
         [rng.standard_normal((1, 2, 7, 7)), rng.standard_normal((3, 2, 3, 3))]),
        ("conv3d", with_proj(lambda x, w: ops.conv3d(x, w, 1, 1)),
         [rng.standard_normal((2, 2, 4, 5, 5)), rng.standard_normal((3, 2, 3, 3, 3))]),
        ("conv3d_1x1", with_proj(lambda x, w: ops.conv3d(x, w, 1, 0)),
         [rng.standard_normal((2, 4, 3, 4, 4)), rng.standard_normal((2, 4, 1, 1, 1))]),
        ("batch_norm_train", with_proj(bn_train),
         [rng.standard_normal((4, 3, 3, 3)), rng.uniform(0.5, 1.5, 3), rng.standard_normal(3)]),
        ("batch_norm_eval", with_proj(bn_eval),
         [rng.standard_normal((4, 3, 3, 3)), rng.uniform(0.5, 1.5, 3), rng.standard_normal(3)]),
        ("relu", with_proj(ops.relu), [relu_in]),
        ("avg_pool2d", with_proj(lambda x: ops.avg_pool(x, 2)), [rng.standard_normal((2, 3, 5, 4))]),
        ("avg_pool3d", with_proj(lambda x: ops.avg_pool(x, 2)), [rng.standard_normal((1, 2, 5, 4, 4))]),
        ("global_avg_pool", with_proj(ops.global_avg_pool), [rng.standard_normal((2, 3, 3, 4, 4))]),
        ("dense", with_proj(ops.dense),
         [rng.standard_normal((5, 4)), rng.standard_normal((2, 4)), rng.standard_normal(2)]),
        ("concat", with_proj(lambda a, b: ops.concat([a, b], axis=1)),
         [rng.standard_normal((2, 2, 3, 3)), rng.standard_normal((2, 3, 3, 3))]),
        ("softmax_cross_entropy", lambda z: ops.softmax_cross_entropy(z, labels, cw),
         [rng.standard_normal((5, 2))]),
    ]


def run_primitive_checks(seed=0):
    return [check_function(name, build, arrays) for name, build, arrays in primitive_cases(seed)]


def micro_spec(variant, seed=0):
    """Smallest spec exercising every layer type: growth 2, one layer per block."""
    return models.ModelSpec(variant=variant, initial_channels=3, growth_rate=2, layers_per_block=(1, 1, 1),
                            bands=4, patch_size=8, seed=seed)


def check_model(variant, seed=0):
    """Loss gradient of a full training-mode forward pass w.r.t. every parameter.

    Parameters are perturbed away from their initial values (the head starts
    at zero, which would hide every upstream gradient). Running statistics are
    copied per evaluation so finite differences see identical buffers.
    """
    spec = micro_spec(variant, seed)
    model = models.build(spec)
    rng = np.random.default_rng(seed + 7)
    names = sorted(model.params)
    arrays = [model.params[n].data + 0.3 * rng.standard_normal(model.params[n].shape) for n in names]
    crops = rng.uniform(0.0, 1.0, (2, spec.patch_size, spec.patch_size, spec.bands))
    batch = models.prepare_input(spec, crops)
    labels = np.array([0, 1])
    weights = np.array([1.2143, 0.85])

    def build(*tensors):
        probe = models.ModelParams(spec, dict(zip(names, tensors)), {})
        buffers = {k: v.copy() for k, v in model.buffers.items()}
        logits = models.forward(probe, batch, training=True, buffers=buffers)
        return ops.softmax_cross_entropy(logits, labels, weights)

    return check_function(f"model:{variant}", build, arrays)


def run_model_checks(seed=0):
    return [check_model(v, seed) for v in models.VARIANTS]


def format_table(results):
    lines = [f"{'check':<28}{'max rel err':>14}  {'n':>6}  status"]
    for r in results:
        status = f"< {TOLERANCE:g}" if r.passed else "FAIL"
        lines.append(f"{r.name:<28}{r.max_rel_error:>14.3e}  {r.n_checked:>6}  {status}")
    return "\n".join(lines)
