"""A tour of the autodiff substrate.

Builds a few tensors, runs the named primitives forward and backward, and
shows the finite-difference oracle that every network in this package is
checked against.
"""

import numpy as np

from factormix import tensor as T
from factormix.tensor import Tensor, finite_diff_check, forward_primitive

print("== forward primitives ==")
x = Tensor([[1.0, -2.0, 0.5]])
print("relu   ", forward_primitive("relu", x).data)
print("abs    ", forward_primitive("abs", x).data)
print("softmax", forward_primitive("softmax", x).data)

print("\n== reverse mode ==")
w = Tensor(np.array([[0.3], [-0.7], [1.1]]), requires_grad=True)
loss = T.sum_(T.tanh(T.matmul(x, w)))
loss.backward()
print("loss      ", loss.item())
print("d loss/d w", w.grad.ravel())

print("\n== the finite-difference oracle ==")
rng = np.random.default_rng(0)
w1 = Tensor(rng.standard_normal((3, 4)) * 0.5, requires_grad=True)
w2 = Tensor(rng.standard_normal((4, 1)) * 0.5, requires_grad=True)
inputs = Tensor(rng.standard_normal((5, 3)))


def two_layer(w1, w2):
    return T.sum_(T.matmul(T.tanh(T.matmul(inputs, w1)), w2))


report = finite_diff_check(two_layer, [w1, w2], step=1e-5, tol=1e-4)
print(f"max relative error vs central differences: {report.max_rel_error:.2e}")
print(f"passed: {report.passed}")
