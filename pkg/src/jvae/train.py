"""Optimisation loop, evaluation and loss-weight grid search.

A run is fully determined by its :class:`~jvae.config.TrainConfig` and
corpus: parameter initialisation, minibatch order and reparameterisation
noise all derive from ``cfg.seed``, so repeated runs produce byte-identical
metrics logs.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .autodiff import Graph
from .config import LossWeights, TrainConfig, dump_config
from .data import CorpusManifest, batch_iterator, load_corpus
from .models import (
    TERMS,
    check_compatible,
    classify,
    enhance,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)

__all__ = [
    "METRICS_COLUMNS",
    "SUMMARY_COLUMNS",
    "WEIGHT_GRID",
    "NonFiniteLossError",
    "MetricsRow",
    "Adam",
    "clip_gradients",
    "TrainResult",
    "train_run",
    "EvalResult",
    "evaluate",
    "GridRow",
    "grid_run",
    "derive_seed",
    "read_metrics",
    "weighted_sum_ok",
]

log = logging.getLogger(__name__)

METRICS_COLUMNS = ("step", "epoch") + TERMS + ("total",)
SUMMARY_COLUMNS = ("lambda2", "lambda3", "lambda_da", "beta", "frame_error_pct", "status")

# (lambda1, lambda2, lambda3, lambda_da, beta), lambda1 fixed at 1
WEIGHT_GRID = [
    LossWeights(1, 1, 1, 1, 1),
    LossWeights(1, 1, 0.1, 1, 1),
    LossWeights(1, 1, 0.1, 10, 1),
    LossWeights(1, 10, 0.1, 10, 1),
    LossWeights(1, 1, 1, 10, 1),
    LossWeights(1, 10, 1, 1, 1),
    LossWeights(1, 10, 1, 10, 1),
    LossWeights(1, 10, 0.1, 1, 1),
    LossWeights(1, 10, 10, 1, 1),
]


class NonFiniteLossError(FloatingPointError):
    def __init__(self, step: int, term: str, value: float):
        self.step, self.term, self.value = step, term, value
        super().__init__(f"non-finite loss at step {step}: {term} = {value}")


@dataclass
class MetricsRow:
    step: int
    epoch: int
    terms: dict
    total: float

    def csv_fields(self) -> list:
        vals = [str(self.step), str(self.epoch)]
        vals += [repr(float(self.terms[t])) if t in self.terms else "" for t in TERMS]
        vals.append(repr(float(self.total)))
        return vals


def weighted_sum_ok(terms: Mapping[str, float], total: float, weights: Mapping[str, float],
                    tol: float = 1e-10) -> bool:
    """``total == sum(weight * term)`` over present terms, absent weights 0."""
    acc = sum(weights.get(k, 0.0) * v for k, v in terms.items())
    return abs(acc - total) <= tol * max(1.0, abs(total))


class Adam:
    """Adaptive-moment updates applied in place to a dict of arrays."""

    def __init__(self, params: Mapping[str, np.ndarray], lr: float = 1e-3,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.lr, self.eps = lr, eps
        self.b1, self.b2 = betas
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: Mapping[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            params[k] = params[k] - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Rescale ``grads`` in place to global L2 norm <= ``max_norm``.

    Returns the norm before clipping.
    """
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale
    return norm


@dataclass
class TrainResult:
    params: dict
    rows: list
    checkpoint: Optional[Path] = None
    metrics_path: Optional[Path] = None


def _as_utterances(corpus) -> list:
    if isinstance(corpus, (CorpusManifest, str, Path)):
        return load_corpus(corpus)
    return list(corpus)


def _checkpoint_meta(cfg: TrainConfig, epoch: int) -> dict:
    return {"objective": cfg.objective, "epoch": epoch, "config": dump_config(cfg)}


def train_run(cfg: TrainConfig, corpus, out_dir=None, params: Optional[dict] = None,
              on_epoch: Optional[Callable[[int, dict], None]] = None,
              detach_y_path: bool = False) -> TrainResult:
    """Train ``cfg.objective`` on ``corpus`` (manifest, path or utterances).

    With ``out_dir`` set, ``metrics.csv`` gains one row per minibatch and
    ``checkpoint.jvae`` is rewritten at the end of each epoch. ``on_epoch``
    is called with the epoch number and current parameters after each epoch.
    ``detach_y_path`` cuts the close-talk decoder off from the encoder in
    ``jvae-approx`` runs.
    """
    utts = _as_utterances(corpus)
    if not utts:
        raise ValueError("training corpus is empty")

    params = dict(params) if params is not None else init_params(cfg.model, cfg.objective, cfg.seed)
    opt = Adam(params, cfg.learning_rate, (cfg.beta1, cfg.beta2), cfg.epsilon)
    noise_rng = np.random.default_rng([cfg.seed, 1])

    metrics_fh = ckpt = metrics_path = writer = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = out_dir / "metrics.csv"
        ckpt = out_dir / "checkpoint.jvae"
        (out_dir / "train.cfg").write_text(dump_config(cfg))
        metrics_fh = open(metrics_path, "w", newline="")
        writer = csv.writer(metrics_fh, lineterminator="\n")
        writer.writerow(METRICS_COLUMNS)

    rows = []
    step = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            for batch in batch_iterator(utts, cfg.batch_size, cfg.seed, epoch):
                step += 1
                graph = Graph()
                bound = {k: graph.variable(v) for k, v in params.items()}
                tr = forward(cfg.objective, cfg.model, bound, batch.far, batch.close, batch.labels,
                             weights=cfg.weights, lengths=batch.lengths, rng=noise_rng,
                             am_features=cfg.am_features, detach_y_path=detach_y_path)
                values = tr.loss_terms
                for name, v in values.items():
                    if not math.isfinite(v):
                        raise NonFiniteLossError(step, name, v)
                if tr.total.tracked:
                    graph.backward(tr.total)
                    grads = {k: graph.grad(t) for k, t in bound.items()}
                    clip_gradients(grads, cfg.clip_norm)
                    opt.step(params, grads)
                row = MetricsRow(step, epoch, {k: values[k] for k in TERMS if k in values},
                                 values["total"])
                rows.append(row)
                if writer is not None:
                    writer.writerow(row.csv_fields())
            if metrics_fh is not None:
                metrics_fh.flush()
                save_checkpoint(ckpt, params, _checkpoint_meta(cfg, epoch))
            log.info("epoch %d/%d  total=%.4f", epoch, cfg.epochs, rows[-1].total)
            if on_epoch is not None:
                on_epoch(epoch, params)
    finally:
        if metrics_fh is not None:
            metrics_fh.close()
    return TrainResult(params, rows, ckpt, metrics_path)


def read_metrics(path) -> list:
    """Parse a metrics CSV into :class:`MetricsRow` objects."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != METRICS_COLUMNS:
            raise ValueError(f"{path}: expected header {','.join(METRICS_COLUMNS)}")
        rows = []
        for i, rec in enumerate(reader, 2):
            if len(rec) != len(METRICS_COLUMNS):
                raise ValueError(f"{path}:{i}: expected {len(METRICS_COLUMNS)} fields")
            try:
                terms = {t: float(v) for t, v in zip(TERMS, rec[2:-1]) if v != ""}
                rows.append(MetricsRow(int(rec[0]), int(rec[1]), terms, float(rec[-1])))
            except ValueError:
                raise ValueError(f"{path}:{i}: malformed number") from None
    return rows


# -- evaluation ------------------------------------------------------------

@dataclass
class EvalResult:
    frame_error_pct: float
    mean_enhancement_gain: float


def evaluate(cfg: TrainConfig, checkpoint, corpus) -> EvalResult:
    """Frame-classification error and enhancement gain on held-out data.

    ``checkpoint`` is a path or a parameter dict. Frame error is NaN for
    objectives without an acoustic model.
    """
    if isinstance(checkpoint, (str, Path)):
        params, _ = load_checkpoint(checkpoint)
    else:
        params = dict(checkpoint)
    check_compatible(params, cfg.model, cfg.objective)
    utts = _as_utterances(corpus)
    has_am = cfg.objective in ("da", "am", "matched")
    wrong = frames = 0
    gains = []
    for u in utts:
        enh = enhance(cfg.model, params, u.far, cfg.objective)
        gains.append(np.linalg.norm(u.far - u.close, axis=1)
                     - np.linalg.norm(enh - u.close, axis=1))
        if has_am:
            wrong += int(np.sum(classify(cfg.model, params, enh) != u.labels))
            frames += u.num_frames
    err = 100.0 * wrong / frames if has_am else float("nan")
    return EvalResult(err, float(np.mean(np.concatenate(gains))))


# -- grid search -----------------------------------------------------------

def derive_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


@dataclass
class GridRow:
    weights: LossWeights
    frame_error_pct: float = float("nan")
    status: str = "ok"
    run_dir: Optional[Path] = None
    rows: list = field(default_factory=list, repr=False)

    def csv_fields(self) -> list:
        w = self.weights
        err = "" if math.isnan(self.frame_error_pct) else repr(self.frame_error_pct)
        return [repr(w.lambda2), repr(w.lambda3), repr(w.lambda_da), repr(w.beta), err, self.status]


def _grid_point(args):
    index, cfg, train_utts, eval_utts, run_dir = args
    try:
        res = train_run(cfg, train_utts, run_dir)
        ev = evaluate(cfg, res.params, eval_utts)
        return GridRow(cfg.weights, ev.frame_error_pct, "ok", run_dir, res.rows)
    except Exception as exc:  # one failed point must not stop the grid
        log.warning("grid point %d failed: %s", index, exc)
        return GridRow(cfg.weights, float("nan"), f"failed: {type(exc).__name__}", run_dir)


def grid_run(base: TrainConfig, grid: Sequence[LossWeights], corpus, out_dir=None,
             eval_corpus=None, jobs: int = 1) -> list:
    """Train and evaluate one model per weight setting, in input order.

    Each point gets a fresh initialisation seeded by
    ``derive_seed(base.seed, index)``. The lowest-error successful row is
    tagged ``best``. With ``out_dir`` set, runs go to ``run_XX/`` and the
    summary to ``summary.csv``.
    """
    if not grid:
        raise ValueError("grid is empty")
    for w in grid:
        if w.lambda1 != 1:
            log.warning("grid summary omits lambda1; got lambda1=%s", w.lambda1)
    train_utts = _as_utterances(corpus)
    eval_utts = _as_utterances(eval_corpus) if eval_corpus is not None else train_utts
    out_dir = Path(out_dir) if out_dir is not None else None
    tasks = []
    for i, w in enumerate(grid):
        cfg = base.replace(weights=w, seed=derive_seed(base.seed, i))
        run_dir = out_dir / f"run_{i:02d}" if out_dir is not None else None
        tasks.append((i, cfg, train_utts, eval_utts, run_dir))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_grid_point, tasks))
    else:
        results = [_grid_point(t) for t in tasks]

    ok = [r for r in results if r.status == "ok" and not math.isnan(r.frame_error_pct)]
    if ok:
        min(ok, key=lambda r: r.frame_error_pct).status = "best"
    elif len(results) == 1 and results[0].status == "ok":
        results[0].status = "best"

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "summary.csv").write_text(summary_csv(results))
    return results


def summary_csv(rows: Sequence[GridRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in rows:
        w.writerow(r.csv_fields())
    return buf.getvalue()
