import numpy as np

from hsidense import ops
from hsidense.gradcheck import format_table, run_model_checks, run_primitive_checks
from hsidense.models import VARIANTS, ModelSpec, build, forward, predict_proba, prepare_input
from hsidense.tensor import Tensor, backward

# A tiny graph by hand: loss = sum(relu(x * w)), gradients land on the leaves.
x = Tensor(np.array([[1.0, -2.0, 3.0]]), requires_grad=True)
w = Tensor(np.array([[0.5, 0.5, -1.0]]), requires_grad=True)
loss = ops.relu(x * w).sum()
backward(loss)
print("loss", loss.item(), "dL/dx", x.grad, "dL/dw", w.grad)

# Every primitive and all three networks against central differences
results = run_primitive_checks() + run_model_checks()
print(format_table(results))

# The three input treatments of a 32x32x30 crop
for variant in VARIANTS:
    spec = ModelSpec(variant=variant)
    print(f"{variant:14s} input {spec.input_shape()}  parameters {build(spec).parameter_count():,}")

# A forward pass on random crops; the zero-initialised head gives p = 0.5 everywhere
spec = ModelSpec(variant="Densenet3D", initial_channels=4, growth_rate=4, layers_per_block=(1, 1, 1))
model = build(spec)
crops = np.random.default_rng(0).random((3, 32, 32, 30))
batch = prepare_input(spec, crops)
print("Densenet3D batch", batch.shape, "logits", forward(model, batch).data.tolist())
print("tumor probability", predict_proba(model, batch)[:, 1])
