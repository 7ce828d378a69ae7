"""
Recording a computation and checking its gradient
=================================================

Every differentiable op in ``sgrnet.numerics`` appends itself to the active
``Record``. ``backward`` walks the tape in reverse; ``grad_check`` compares
the result with central differences in float64.
"""

import numpy as np

from sgrnet.numerics import Record, Tensor, conv3d, grad_check, matmul, relu, softmax_cross_entropy

rng = np.random.default_rng(0)

# a two-layer perceptron on four samples; no broadcasting, so shapes line up exactly
w1 = Tensor(rng.normal(size=(5, 8)), requires_grad=True)
w2 = Tensor(rng.normal(size=(8, 3)), requires_grad=True)
x = Tensor(rng.normal(size=(4, 5)))
labels = [0, 2, 1, 1]


def loss():
    return softmax_cross_entropy(matmul(relu(matmul(x, w1)), w2), labels)


with Record() as rec:
    value = loss()
grads = rec.backward(value)
print("loss", float(value.data))
print("grad norm of w1", np.linalg.norm(grads[w1]))

# the same function through finite differences
print("max relative error", grad_check(loss, [w1, w2]))

# conv3d is a primitive too: a centered delta kernel with same padding is the identity
cube = Tensor(rng.uniform(size=(1, 9, 5, 5)))
delta = np.zeros((1, 1, 3, 3, 3))
delta[0, 0, 1, 1, 1] = 1.0
out = conv3d(cube, Tensor(delta), pad=("same", "same", "same"))
print("delta kernel is identity:", np.array_equal(out.data, cube.data))
