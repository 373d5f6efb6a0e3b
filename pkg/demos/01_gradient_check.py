"""Check the autodiff engine against central finite differences.

Builds a small LSTM + Gaussian head, then compares backward() with
numerical derivatives for every parameter array.
"""

import numpy as np

from jvae import autodiff as ad
from jvae.autodiff import Tensor
from jvae.gradcheck import analytic_grad, check_gradients, numeric_grad
from jvae.layers import LinearHeadParams, LstmStackParams, linear_head, lstm_forward
from jvae.prob import GaussianParams, hetero_nll, kld_to_standard_normal

rng = np.random.default_rng(0)
stack = LstmStackParams(num_layers=2, input_dim=3, hidden_dim=4)
head = LinearHeadParams(4, 6)

params = {"x": rng.normal(size=(5, 3))}
params.update({f"lstm.{k}": v for k, v in stack.init(rng).items()})
params.update({f"head.{k}": v for k, v in head.init(rng).items()})
params["head.b"] = rng.normal(size=6) * 0.1  # make the bias gradient non-trivial
target = rng.normal(size=(5, 3))


def loss(p):
    h = lstm_forward(stack, {k[5:]: v for k, v in p.items() if k.startswith("lstm.")}, p["x"])
    out = linear_head({"w": p["head.w"], "b": p["head.b"]}, h)
    g = GaussianParams(out[:, :3], out[:, 3:])
    return hetero_nll(target, g) + kld_to_standard_normal(g)


# check_gradients scores entries allclose-style: |a - n| <= 1e-7 counts as exact
errors = check_gradients(loss, params, h=1e-5)
print("all within tolerance:", max(errors.values()) < 1e-4)

# the raw disagreement is far below that tolerance
analytic = analytic_grad(loss, params)
for name in params:
    numeric = numeric_grad(lambda a: loss({k: Tensor(v) for k, v in a.items()}).item(),
                           params, name, h=1e-5)
    diff = np.abs(analytic[name] - numeric).max()
    print(f"{name:10s} max |analytic - numeric| {diff:.1e}  "
          f"largest gradient {np.abs(analytic[name]).max():.2f}")

# the engine records one node per operation; the LSTM layer is a single fused node
g = ad.Graph()
bound = {k: g.variable(v) for k, v in params.items()}
total = loss(bound)
print("graph nodes:", len(g), "node tags:", sorted(set(g.tags)))
