"""Central finite-difference gradient checks against :class:`~jvae.autodiff.Graph`."""

from __future__ import annotations

from typing import Callable, Mapping, Optional

import numpy as np

from .autodiff import Graph, Tensor

__all__ = ["numeric_grad", "analytic_grad", "max_rel_error", "check_gradients"]


def numeric_grad(f: Callable[[dict], float], inputs: Mapping[str, np.ndarray], name: str,
                 h: float = 1e-5, indices=None) -> np.ndarray:
    """d f / d inputs[name] by central differences, forward values only.

    ``f`` receives a dict of plain arrays and returns a float. With
    ``indices`` (flat positions) only those entries are perturbed; the rest
    of the result is NaN.
    """
    base = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    x = base[name]
    out = np.full(x.shape, np.nan)
    flat = x.reshape(-1)
    for i in (range(flat.size) if indices is None else indices):
        old = flat[i]
        flat[i] = old + h
        fp = f(base)
        flat[i] = old - h
        fm = f(base)
        flat[i] = old
        out.reshape(-1)[i] = (fp - fm) / (2 * h)
    return out


def analytic_grad(f_tensor: Callable[[dict], Tensor], inputs: Mapping[str, np.ndarray]) -> dict:
    """Gradients of ``f_tensor`` via one backward pass."""
    g = Graph()
    bound = {k: g.variable(v) for k, v in inputs.items()}
    loss = f_tensor(bound)
    g.backward(loss)
    return {k: g.grad(t) for k, t in bound.items()}


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> float:
    """Largest relative error over entries where ``numeric`` is defined.

    Entries where both values are below ``floor`` in magnitude count as
    exact; otherwise the error is ``|a - n| / max(|a|, |n|)``.
    """
    mask = ~np.isnan(numeric)
    a, n = analytic[mask], numeric[mask]
    diff = np.abs(a - n)
    scale = np.maximum(np.abs(a), np.abs(n))
    rel = np.where((diff <= floor) | (scale <= floor), 0.0, diff / np.maximum(scale, floor))
    return float(rel.max()) if rel.size else 0.0


def check_gradients(f_tensor: Callable[[dict], Tensor], inputs: Mapping[str, np.ndarray],
                    h: float = 1e-5, floor: float = 1e-7, max_entries: Optional[int] = None,
                    rng: Optional[np.random.Generator] = None) -> dict:
    """Per-input max relative error between backward() and central differences.

    ``max_entries`` subsamples large inputs (positions drawn from ``rng``).
    """
    def f_value(arrs):
        return f_tensor({k: Tensor(v) for k, v in arrs.items()}).item()

    rng = rng or np.random.default_rng(0)
    grads = analytic_grad(f_tensor, inputs)
    errors = {}
    for name, arr in inputs.items():
        size = np.size(arr)
        idx = None
        if max_entries is not None and size > max_entries:
            idx = rng.choice(size, max_entries, replace=False)
        num = numeric_grad(f_value, inputs, name, h, idx)
        errors[name] = max_rel_error(grads[name], num, floor)
    return errors
