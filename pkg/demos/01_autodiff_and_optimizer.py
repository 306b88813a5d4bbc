"""Tour of the numeric core: tensors, reverse-mode gradients, the
stop-gradient boundary, and the AdamW/EMA optimizer."""

import numpy as np

from latentdiff import autodiff as ad
from latentdiff.autodiff import Tensor, parameter, stop_gradient
from latentdiff.optim import OptimizerState, adamw_step, zero_grads

print("== gradients through a small expression ==")
x = parameter([1.0, 2.0, 3.0], name="x")
loss = (x ** 2.0).sum()
ad.backward(loss)
print("f(x) = sum(x^2) at", x.data, "-> grad", x.grad)

print("\n== gradient check against central differences ==")
w = parameter(np.random.default_rng(0).normal(size=(4, 3)), name="w")
inp = Tensor(np.random.default_rng(1).normal(size=(2, 4)))
tgt = Tensor(np.random.default_rng(2).normal(size=(2, 3)))


def forward():
    return ad.mse_loss(ad.gelu(inp @ w), tgt)


ad.backward(forward())
h = 1e-5
flat = w.data.reshape(-1)
i = 5
orig = flat[i]
flat[i] = orig + h
up = float(forward().data)
flat[i] = orig - h
down = float(forward().data)
flat[i] = orig
fd = (up - down) / (2 * h)
print(f"autodiff grad[{i}] = {w.grad.reshape(-1)[i]:.10f}")
print(f"finite diff       = {fd:.10f}")

print("\n== stop-gradient: identity forward, opaque backward ==")
zero_grads({"w": w, "x": x})
y = stop_gradient(x)
combined = (y * 10.0).sum() + (x * 2.0).sum()
ad.backward(combined)
print("grad through stop_gradient path is blocked -> grad =", x.grad)

print("\n== AdamW with warmup, clipping and an EMA shadow ==")
p = parameter(np.array([20.0]), name="p")
params = {"p": p}
state = OptimizerState(lr=0.5, weight_decay=0.0, warmup_steps=5,
                       clip_norm=1.0, ema_decay=0.9).init(params)
for step in range(25):
    loss = (p ** 2.0).sum()
    ad.backward(loss)
    adamw_step(params, state)
    zero_grads(params)
    if step % 6 == 0:
        print(f"step {step:2d}: loss {float(loss.data):8.3f} "
              f"p {p.data[0]:7.3f} ema {state.ema['p'][0]:7.3f}")
print("EMA trails the raw parameter, as a slow moving average should.")
