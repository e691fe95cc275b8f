"""Tour of the tiny reverse-mode autodiff engine behind clspool.

Builds a small computation graph by hand, runs backward(), and checks a
couple of the gradients against central finite differences.
"""

import numpy as np

from clspool import tensor as T
from clspool.tensor import Tensor

rng = np.random.default_rng(0)

# A two-layer net on a fixed input, ending in a cross-entropy loss.
x = Tensor(rng.normal(size=(4, 3)))
W1 = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
b1 = Tensor(np.zeros(5), requires_grad=True)
W2 = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
labels = np.array([0, 1, 1, 0])

hidden = T.gelu(T.add(T.matmul(x, W1), b1))
probs = T.softmax(T.matmul(hidden, W2), axis=1)
loss = T.cross_entropy(probs, labels)
print(f"loss = {loss.item():.6f}")

loss.backward()
print(f"dL/dW1 norm = {np.linalg.norm(W1.grad):.6f}")
print(f"dL/db1      = {np.round(b1.grad, 4)}")

# Spot-check one coordinate of dL/dW2 with a central difference.
i, j = 2, 1
h = 1e-6


def loss_at(w):
    W2_probe = Tensor(w)
    hid = T.gelu(T.add(T.matmul(x, W1), b1))
    return T.cross_entropy(T.softmax(T.matmul(hid, W2_probe), axis=1), labels).item()


wplus = W2.data.copy()
wplus[i, j] += h
wminus = W2.data.copy()
wminus[i, j] -= h
fd = (loss_at(wplus) - loss_at(wminus)) / (2 * h)
print(f"dL/dW2[{i},{j}]: autodiff {W2.grad[i, j]:.8f}  finite-diff {fd:.8f}")

# The tape is consumed by backward(); reusing it is an error.
try:
    loss.backward()
except RuntimeError as e:
    print(f"second backward correctly refused: {e}")
