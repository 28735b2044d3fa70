"""A short tour of the numpy autodiff core: nodes, backward, gradient checks, Adam."""

import numpy as np

from excl.diffcore import AdamState, Rng, adam_step, backward, constant, grad_check, ops, parameter

rng = Rng(0)

# parameters collect gradients, constants do not
W = parameter(rng.normal(size=(4, 3)), "W")
b = parameter(np.zeros(3), "b")
x = constant(rng.normal(size=(5, 4)))

y = ops.tanh(ops.affine(x, W, b))  # (5, 3)
loss = ops.mean(ops.sq_diff(y, constant(np.ones((5, 3)))))
print("loss", float(loss.value))

backward(loss)
print("dL/db", b.grad)

# the same gradient, checked against central differences
err = grad_check(lambda: ops.mean(ops.sq_diff(ops.tanh(ops.affine(x, W, b)), constant(np.ones((5, 3))))),
                 {"W": W, "b": b})
print("max relative error vs finite differences: %.2e" % err)

# a fused LSTM over a padded batch: (B, T, D) -> (B, T, H), gates i, f, g, o
H = 6
Wx = parameter(rng.normal(size=(4, 4 * H)) * 0.3)
Uh = parameter(rng.normal(size=(H, 4 * H)) * 0.3)
bias = parameter(np.zeros(4 * H))
seq = constant(rng.normal(size=(2, 7, 4)))
states = ops.lstm(seq, Wx, Uh, bias)
print("lstm states", states.shape)

# masked softmax ignores padded positions entirely
logits = constant([[1.0, 2.0, 3.0, 50.0]])
mask = np.array([[True, True, True, False]])
print("masked softmax", np.round(ops.softmax(logits, mask).value, 4))

# a few Adam steps on f(w) = sum(w^2)
w = parameter([1.0, -2.0])
state = AdamState(lr=0.1)
for step in range(50):
    w.zero_grad()
    backward(ops.total(ops.mul(w, w)))
    adam_step({"w": w}, state)
print("w after 50 Adam steps", np.round(w.value, 4))
