"""Plot per-term loss traces of a joint VAE against a standard VAE.

On the synthetic corpus the joint model's KL term settles above the plain
VAE's, and the DA regression loss drops fast and then flattens.
"""

import tempfile
from pathlib import Path

import numpy as np

from jvae.config import TrainConfig
from jvae.reference import reference_corpus
from jvae.traces import plot_traces, quartile_median, series
from jvae.train import train_run

train, _ = reference_corpus(seed=0)
out = Path(tempfile.mkdtemp())
runs = {}
for objective in ("vae", "matched"):
    res = train_run(TrainConfig(objective=objective, epochs=30), train, out / objective)
    runs[objective] = res

for objective, res in runs.items():
    steps, kld = series(res.rows)["kld"]
    print(f"{objective:8s} KLD median over final quartile {quartile_median(kld):.4f}")

steps, da = series(runs["matched"].rows)["mse_da"]
print("mse_da at steps 1, 100, 400, last:", np.round(da[[0, 99, 399, -1]], 3))

names = plot_traces([runs["matched"].metrics_path, runs["vae"].metrics_path],
                    out / "traces.png", labels=["joint", "vae"])
print("plotted", ", ".join(names), "->", out / "traces.png")
