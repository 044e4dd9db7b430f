# A tour of the tensor engine: strict-shape ops, reverse-mode gradients,
# and the finite-difference checker that keeps every op honest.

import numpy as np

from srvp.tensor import Tensor, matmul, softmax, l2_normalize
from srvp.gradcheck import gradcheck, run_suite

rng = np.random.default_rng(0)

# tensors are float64 and track gradients when asked to
x = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
y = Tensor([[0.5, -1.0], [2.0, 0.0]], requires_grad=True)

loss = (matmul(x, y) * matmul(x, y)).sum()
loss.backward()
print("loss:", loss.item())
print("dloss/dx:\n", x.grad)

# softmax is max-shifted, so absurd logits stay finite
print("softmax([1000, 0]):", softmax(Tensor([1000.0, 0.0]), axis=0).data)

# unit-norm rows, and zero rows pass through untouched
m = Tensor([[3.0, 4.0], [0.0, 0.0]])
print("l2_normalize rows:\n", l2_normalize(m, axis=1).data)

# shapes must match exactly; the engine refuses silent broadcasting
try:
    Tensor([1.0, 2.0]) + Tensor([1.0, 2.0, 3.0])
except Exception as e:
    print("strict shapes:", e)

# gradcheck compares reverse-mode gradients against central differences
a = Tensor(rng.standard_normal((3, 4)))
b = Tensor(rng.standard_normal((4, 2)))
err = gradcheck(lambda t, u: softmax(matmul(t, u), axis=1).sum(axis=0).reshape((2,))[0:1].sum(),
                [a, b])
print(f"softmax @ matmul chain, max relative error: {err:.2e}")

# the full registry: one randomized case per differentiable op
print("\nper-op gradcheck (registry):")
for name, err, ok in run_suite(include_end_to_end=False):
    print(f"  {'ok ' if ok else 'BAD'} {name:<22} {err:.2e}")
