"""Train the matched joint VAE next to the two baselines and compare.

A shortened version of the reference experiment: one seed and fewer epochs,
so numbers are noisier than the acceptance run.
"""

from jvae.config import TrainConfig
from jvae.reference import reference_corpus
from jvae.train import evaluate, train_run

train, held = reference_corpus(seed=0)
print(f"{len(train)} training / {len(held)} held-out utterances")

for objective in ("am", "da", "matched"):
    cfg = TrainConfig(objective=objective, epochs=20, seed=0)
    res = train_run(cfg, train)
    ev = evaluate(cfg, res.params, held)
    last = res.rows[-1]
    terms = "  ".join(f"{k}={v:.3f}" for k, v in last.terms.items())
    print(f"{objective:8s} frame error {ev.frame_error_pct:5.1f}%  "
          f"enhancement gain {ev.mean_enhancement_gain:+.3f}  last batch: {terms}")
