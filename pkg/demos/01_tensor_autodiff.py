"""Tour of the tensor engine: ops, broadcasting, and reverse-mode gradients.

Run: python demos/01_tensor_autodiff.py
"""
import numpy as np

from pfcnet import tensor as T
from pfcnet.optim import grad_check
from pfcnet.tensor import Tensor, backward

print("== building expressions ==")
a = Tensor([[1.0, 2.0], [3.0, 4.0]], requires_grad=True)
b = Tensor([[5.0], [6.0]])
y = T.matmul(a, b)
print("a @ b =", y.data.ravel())

loss = y.sum()
backward(loss)
print("d(sum)/da =\n", a.grad)

print("\n== a small conv feature extractor ==")
rng = np.random.default_rng(0)
image = Tensor(rng.random((3, 8, 6)), requires_grad=True, dtype=np.float64)
kernel = Tensor(rng.normal(size=(4, 3, 3, 3)), dtype=np.float64)
fmap = T.relu(T.conv2d(image, kernel, stride=1, padding=1))
pooled = T.concat([T.pool2d_global(fmap, "average"),
                   T.pool2d_global(fmap, "max")])
print("feature map:", fmap.shape, "-> pooled descriptor:", pooled.shape)

print("\n== cross-entropy behaves sensibly ==")
sharp = T.softmax_cross_entropy(Tensor([[12.0, 0.0, 0.0]]), [0])
flat = T.softmax_cross_entropy(Tensor([[0.0, 0.0, 0.0]]), [0])
print(f"confident correct prediction: {sharp.item():.6f}")
print(f"uniform prediction:           {flat.item():.6f} (= ln 3 = {np.log(3):.6f})")

print("\n== gradients vs central finite differences ==")
w = Tensor(rng.normal(size=(6, 4)), dtype=np.float64)


def head(t):
    h = T.relu(T.matmul(t, w))
    return T.softmax_cross_entropy(h, [1, 3])


x = Tensor(rng.normal(size=(2, 6)), dtype=np.float64)
report = grad_check(head, x, rtol=1e-4)
print(f"max relative error {report.max_rel_error:.2e} "
      f"({'PASS' if report.passed else 'FAIL'} at rtol 1e-4)")
