"""Sweep loss weights of the matched joint VAE over the nine-row grid.

Each grid point is trained from a fresh seed-derived initialisation and
scored on held-out utterances; the lowest frame error is tagged best.
"""

import tempfile
from pathlib import Path

from jvae.config import TrainConfig
from jvae.reference import reference_corpus
from jvae.train import WEIGHT_GRID, grid_run

train, held = reference_corpus(seed=0)
out = Path(tempfile.mkdtemp()) / "grid"
rows = grid_run(TrainConfig(objective="matched", epochs=3), WEIGHT_GRID, train, out,
                eval_corpus=held)

print("lambda2 lambda3 lambda_da beta  error%  status")
for r in rows:
    w = r.weights
    print(f"{w.lambda2:7g} {w.lambda3:7g} {w.lambda_da:9g} {w.beta:4g}  "
          f"{r.frame_error_pct:6.2f}  {r.status}")
print("summary written to", out / "summary.csv")
