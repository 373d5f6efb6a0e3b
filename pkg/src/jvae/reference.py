"""The desk-scale reference experiment.

One reference run trains, for each seed, a standard VAE, an acoustic
model on raw far-field features, the DA baseline and the matched joint VAE
on 100 synthetic utterances, then scores each on 20 held-out utterances.
Everything uses the library defaults except the seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import TrainConfig
from .data import SynthConfig, generate_utterances
from .train import evaluate, train_run

__all__ = [
    "REFERENCE_SEEDS",
    "REFERENCE_OBJECTIVES",
    "TRAIN_UTTS",
    "EVAL_UTTS",
    "reference_corpus",
    "SeedResult",
    "run_reference",
    "median_over_seeds",
]

REFERENCE_SEEDS = (0, 1, 2, 3, 4)
REFERENCE_OBJECTIVES = ("vae", "am", "da", "matched")
TRAIN_UTTS, EVAL_UTTS = 100, 20


def reference_corpus(seed: int, t_range=(20, 40)) -> tuple:
    """``(train, held_out)`` utterance lists for one seed, default generator settings."""
    utts = generate_utterances(SynthConfig(seed=seed), TRAIN_UTTS + EVAL_UTTS, t_range)
    return utts[:TRAIN_UTTS], utts[TRAIN_UTTS:]


@dataclass
class SeedResult:
    seed: int
    evals: dict = field(default_factory=dict)    # objective -> EvalResult
    rows: dict = field(default_factory=dict)     # objective -> list of MetricsRow

    def error(self, objective: str) -> float:
        return self.evals[objective].frame_error_pct

    def series(self, objective: str, term: str) -> np.ndarray:
        return np.array([r.terms[term] for r in self.rows[objective]])


def run_reference(seeds: Sequence[int] = REFERENCE_SEEDS,
                  objectives: Sequence[str] = REFERENCE_OBJECTIVES,
                  base: Optional[TrainConfig] = None, out_dir=None) -> list:
    """Train and evaluate every objective for every seed.

    The corpus and the model initialisation share the seed. With
    ``out_dir`` set, each run writes to ``seed<k>/<objective>/``.
    """
    base = base or TrainConfig()
    results = []
    for seed in seeds:
        train, held = reference_corpus(seed)
        res = SeedResult(seed)
        for obj in objectives:
            cfg = base.replace(objective=obj, seed=seed)
            run_dir = Path(out_dir) / f"seed{seed}" / obj if out_dir is not None else None
            tr = train_run(cfg, train, run_dir)
            res.rows[obj] = tr.rows
            res.evals[obj] = evaluate(cfg, tr.params, held)
        results.append(res)
    return results


def median_over_seeds(results: Sequence[SeedResult], objective: str,
                      metric: str = "frame_error_pct") -> float:
    return float(np.median([getattr(r.evals[objective], metric) for r in results]))
