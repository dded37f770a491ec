"""A tour of the reverse-mode autodiff core everything else is built on.

Builds a two-layer network by hand, trains it on a toy regression with the
bundled Adam, and cross-checks one analytic gradient against central finite
differences. Runs in a couple of seconds.
"""

import numpy as np

from scoresinger.tensor import (Adam, Parameters, RngState, Tensor, const,
                                finite_difference_check, glorot, relu, tmean)

rng = RngState(0)
params = Parameters()
w1 = params.add("w1", glorot(rng.child(0), (3, 16), 3, 16, np.float64))
b1 = params.add("b1", np.zeros(16))
w2 = params.add("w2", glorot(rng.child(1), (16, 1), 16, 1, np.float64))

x = rng.normal((64, 3))
target = np.sin(x.sum(axis=1, keepdims=True))

print("parameters:", list(params.names()), "total size", params.total_size())


def loss_fn() -> Tensor:
    pred = relu(const(x) @ w1 + b1) @ w2
    err = pred - const(target)
    return tmean(err * err)


opt = Adam(params, lr=3e-3)
for step in range(400):
    params.zero_grad()
    loss = loss_fn()
    loss.backward()
    opt.step()
    if step % 100 == 0:
        print(f"step {step:3d} mse {loss.item():.4f}")
print(f"final    mse {loss_fn().item():.4f}")

# every analytic gradient agrees with central differences
worst = finite_difference_check(loss_fn, params, epsilon=1e-5)
print(f"max relative gradient error vs finite differences: {worst:.2e}")
assert worst < 1e-3
print("ok")
