"""Check the hand-written LSTM backward pass against finite differences.

    python3 demos/01_gradient_check.py
"""
import numpy as np

from fedstlf import nn

# %% a small two-layer model and a few random 12-step windows
m = nn.init_params([1, 4, 4], seed=0)
rng = np.random.default_rng(0)
X = rng.random((3, 12))
y = rng.random(3)
print("parameters:", nn.param_count(m.widths))

# %% analytic gradient of the batch-mean squared error
loss, grads = nn.batch_gradient(m, X, y)
analytic = nn.flatten(grads)
print(f"loss {loss:.6f}")

# %% central differences, one coordinate at a time
h = 1e-5
v = nn.flatten(m)
numeric = np.empty_like(v)
for k in range(v.size):
    e = np.zeros_like(v)
    e[k] = h
    up = nn.mse_loss(nn.predict(nn.unflatten(v + e, m.widths), X), y)[0]
    down = nn.mse_loss(nn.predict(nn.unflatten(v - e, m.widths), X), y)[0]
    numeric[k] = (up - down) / (2 * h)

mask = np.abs(analytic) > 1e-8
rel = np.abs(analytic - numeric)[mask] / np.maximum(np.abs(analytic), np.abs(numeric))[mask]
print(f"checked {mask.sum()} components, worst relative error {rel.max():.2e}")
