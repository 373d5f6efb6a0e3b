"""Diagonal-Gaussian heads and the loss terms built on them.

Every loss reduces the same way: sum over feature dimensions, then mean over
frames. For padded batches pass ``frame_weights`` (see :func:`frame_weights`)
which also averages over utterances so each utterance counts equally
regardless of its length.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor, as_tensor

__all__ = [
    "LOGVAR_MIN",
    "LOGVAR_MAX",
    "GaussianParams",
    "LatentSample",
    "frame_weights",
    "reparam_sample",
    "kld_to_standard_normal",
    "hetero_nll",
    "mse",
    "cross_entropy",
]

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0


@dataclass
class GaussianParams:
    """Per-frame mean and natural-log variance."""

    mean: Tensor
    logvar: Tensor

    def __post_init__(self):
        self.mean = as_tensor(self.mean)
        self.logvar = as_tensor(self.logvar)
        if self.mean.shape != self.logvar.shape:
            raise ShapeError("GaussianParams", self.mean.shape, self.logvar.shape)

    @classmethod
    def from_head(cls, mean, raw_logvar) -> "GaussianParams":
        """Build from network outputs, clamping the log-variance."""
        return cls(as_tensor(mean), ad.clip(raw_logvar, LOGVAR_MIN, LOGVAR_MAX))

    @property
    def shape(self) -> tuple:
        return self.mean.shape


@dataclass
class LatentSample:
    value: Tensor
    noise: np.ndarray


def frame_weights(lengths, num_frames: int) -> np.ndarray:
    """``(B, T)`` weights: 1/(B * length) on valid frames, 0 on padding."""
    lengths = np.asarray(lengths)
    valid = np.arange(num_frames)[None, :] < lengths[:, None]
    return valid / (lengths[:, None] * len(lengths))


def _reduce(per_frame: Tensor, weights: Optional[np.ndarray]) -> Tensor:
    if weights is None:
        return ad.mean(per_frame)
    if weights.shape != per_frame.shape:
        raise ShapeError("frame_weights", weights.shape, per_frame.shape)
    return ad.sum(per_frame * weights)


def reparam_sample(g: GaussianParams, noise) -> LatentSample:
    """``mean + exp(logvar / 2) * noise``; gradients reach mean and logvar only."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != g.shape:
        raise ShapeError("reparam_sample", g.shape, noise.shape)
    value = g.mean + ad.exp(g.logvar * 0.5) * noise
    return LatentSample(value, noise)


def kld_to_standard_normal(g: GaussianParams, weights: Optional[np.ndarray] = None) -> Tensor:
    """KL(N(mean, exp(logvar)) || N(0, I)), closed form."""
    # expm1 keeps exp(l) - 1 - l non-negative for tiny l
    per_dim = (ad.expm1(g.logvar) - g.logvar) + ad.square(g.mean)
    return _reduce(ad.sum(per_dim, axis=-1) * 0.5, weights)


def hetero_nll(target, g: GaussianParams, weights: Optional[np.ndarray] = None) -> Tensor:
    """Gaussian negative log-likelihood with learned per-dimension variance.

    The additive ``0.5 * D * log(2 pi)`` is dropped.
    """
    target = as_tensor(target)
    if target.shape != g.shape:
        raise ShapeError("hetero_nll", target.shape, g.shape)
    resid2 = ad.square(target - g.mean)
    per_dim = resid2 * ad.exp(-g.logvar) + g.logvar
    return _reduce(ad.sum(per_dim, axis=-1) * 0.5, weights)


def mse(target, pred, weights: Optional[np.ndarray] = None) -> Tensor:
    target, pred = as_tensor(target), as_tensor(pred)
    if target.shape != pred.shape:
        raise ShapeError("mse", target.shape, pred.shape)
    return _reduce(ad.sum(ad.square(target - pred), axis=-1), weights)


def cross_entropy(logits, labels, weights: Optional[np.ndarray] = None) -> Tensor:
    """Mean over frames of ``-log softmax(logits)[label]``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels)
    k = logits.shape[-1]
    if labels.shape != logits.shape[:-1]:
        raise ShapeError("cross_entropy", logits.shape, labels.shape)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"cross_entropy: labels must lie in [0, {k}), "
                         f"got range [{labels.min()}, {labels.max()}]")
    onehot = np.eye(k)[labels]
    nll = -ad.sum(ad.log_softmax(logits) * onehot, axis=-1)
    return _reduce(nll, weights)
