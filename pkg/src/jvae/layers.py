"""Recurrent and dense building blocks: LSTM stacks, linear heads, splicing.

Sequences are ``(T, D)`` or batched ``(B, T, D)`` tensors. Parameters are
plain float64 arrays keyed by name; at training time they are bound to graph
variables and passed in as a mapping of tensors.

Gate layout for an LSTM layer weight ``W`` of shape ``(D_in + H, 4H)`` is
``[input, forget, cell, output]`` along the last axis; the first ``D_in``
rows act on the input frame and the last ``H`` rows on the previous hidden
state.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor, as_tensor

__all__ = [
    "LstmStackParams",
    "LinearHeadParams",
    "lstm_layer",
    "lstm_layer_composite",
    "lstm_forward",
    "linear_head",
    "splice",
    "splice_indices",
]


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True)
class LstmStackParams:
    """Shape description of a stack of unidirectional LSTM layers."""

    num_layers: int
    input_dim: int
    hidden_dim: int

    def __post_init__(self):
        if min(self.num_layers, self.input_dim, self.hidden_dim) < 1:
            raise ValueError(f"LSTM sizes must be positive: {self}")

    def shapes(self) -> dict[str, tuple]:
        out = {}
        for i in range(self.num_layers):
            d_in = self.input_dim if i == 0 else self.hidden_dim
            out[f"l{i}.w"] = (d_in + self.hidden_dim, 4 * self.hidden_dim)
            out[f"l{i}.b"] = (4 * self.hidden_dim,)
        return out

    def init(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        """Uniform in [-k, k], k = 1/sqrt(fan_in); forget-gate bias 1.0."""
        params = {}
        h = self.hidden_dim
        for name, shape in self.shapes().items():
            if name.endswith(".w"):
                k = 1.0 / np.sqrt(shape[0])
                params[name] = rng.uniform(-k, k, size=shape)
            else:
                b = np.zeros(shape)
                b[h:2 * h] = 1.0
                params[name] = b
        return params


@dataclass(frozen=True)
class LinearHeadParams:
    in_dim: int
    out_dim: int

    def shapes(self) -> dict[str, tuple]:
        return {"w": (self.in_dim, self.out_dim), "b": (self.out_dim,)}

    def init(self, rng: np.random.Generator) -> dict[str, np.ndarray]:
        k = 1.0 / np.sqrt(self.in_dim)
        return {"w": rng.uniform(-k, k, size=(self.in_dim, self.out_dim)),
                "b": np.zeros(self.out_dim)}


def lstm_layer(x, w, b) -> Tensor:
    """One LSTM layer over time as a single graph node.

    Zero initial hidden and cell state. The backward pass is hand-written
    backpropagation through time.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim not in (2, 3) or w.ndim != 2 or b.ndim != 1:
        raise ShapeError("lstm", x.shape, w.shape, b.shape)
    h4 = w.shape[1]
    hdim = h4 // 4
    d_in = x.shape[-1]
    if h4 != 4 * hdim or w.shape[0] != d_in + hdim or b.shape[0] != h4:
        raise ShapeError("lstm", x.shape, w.shape, b.shape)

    squeeze = x.ndim == 2
    xd = x.data[None] if squeeze else x.data
    nb, nt, _ = xd.shape
    wx, wh = w.data[:d_in], w.data[d_in:]

    pre = xd @ wx + b.data
    gates = np.empty((nb, nt, h4))
    cells = np.empty((nb, nt, hdim))
    tanh_c = np.empty((nb, nt, hdim))
    hs = np.empty((nb, nt, hdim))
    h = np.zeros((nb, hdim))
    c = np.zeros((nb, hdim))
    for t in range(nt):
        a = pre[:, t] + h @ wh
        s = _sigmoid(a)
        i_g, f_g, o_g = s[:, :hdim], s[:, hdim:2 * hdim], s[:, 3 * hdim:]
        g_g = np.tanh(a[:, 2 * hdim:3 * hdim])
        c = f_g * c + i_g * g_g
        tc = np.tanh(c)
        h = o_g * tc
        gates[:, t, :hdim] = i_g
        gates[:, t, hdim:2 * hdim] = f_g
        gates[:, t, 2 * hdim:3 * hdim] = g_g
        gates[:, t, 3 * hdim:] = o_g
        cells[:, t] = c
        tanh_c[:, t] = tc
        hs[:, t] = h

    def vjp(g_out):
        g_h_all = g_out[None] if squeeze else g_out
        d_pre = np.empty((nb, nt, h4))
        dh_next = np.zeros((nb, hdim))
        dc_next = np.zeros((nb, hdim))
        for t in range(nt - 1, -1, -1):
            i_g = gates[:, t, :hdim]
            f_g = gates[:, t, hdim:2 * hdim]
            g_g = gates[:, t, 2 * hdim:3 * hdim]
            o_g = gates[:, t, 3 * hdim:]
            tc = tanh_c[:, t]
            c_prev = cells[:, t - 1] if t > 0 else 0.0
            dh = g_h_all[:, t] + dh_next
            dc = dh * o_g * (1.0 - tc * tc) + dc_next
            d_pre[:, t, :hdim] = dc * g_g * i_g * (1.0 - i_g)
            d_pre[:, t, hdim:2 * hdim] = dc * c_prev * f_g * (1.0 - f_g)
            d_pre[:, t, 2 * hdim:3 * hdim] = dc * i_g * (1.0 - g_g * g_g)
            d_pre[:, t, 3 * hdim:] = dh * tc * o_g * (1.0 - o_g)
            dc_next = dc * f_g
            dh_next = d_pre[:, t] @ wh.T
        flat = d_pre.reshape(-1, h4)
        h_prev = np.concatenate([np.zeros((nb, 1, hdim)), hs[:, :-1]], axis=1)
        gw = np.concatenate([xd.reshape(-1, d_in).T @ flat,
                             h_prev.reshape(-1, hdim).T @ flat], axis=0)
        gx = d_pre @ wx.T
        return (gx[0] if squeeze else gx), gw, flat.sum(axis=0)

    out = hs[0] if squeeze else hs
    return ad._record("lstm", out, (x, w, b), vjp)


def lstm_layer_composite(x, w, b) -> Tensor:
    """The same recurrence as :func:`lstm_layer`, spelled out in primitives.

    Slow (one graph node per gate per frame); kept as a second route for
    checking the fused node.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    hdim = w.shape[1] // 4
    squeeze = x.ndim == 2
    if squeeze:
        x = ad.reshape(x, (1,) + x.shape)
    nb, nt = x.shape[0], x.shape[1]
    h = Tensor(np.zeros((nb, hdim)))
    c = Tensor(np.zeros((nb, hdim)))
    outs = []
    for t in range(nt):
        a = ad.matmul(ad.concat([x[:, t], h]), w) + b
        i_g = ad.sigmoid(a[:, :hdim])
        f_g = ad.sigmoid(a[:, hdim:2 * hdim])
        g_g = ad.tanh(a[:, 2 * hdim:3 * hdim])
        o_g = ad.sigmoid(a[:, 3 * hdim:])
        c = f_g * c + i_g * g_g
        h = o_g * ad.tanh(c)
        outs.append(ad.reshape(h, (nb, 1, hdim)))
    out = ad.concat(outs, axis=1)
    return out[0] if squeeze else out


def lstm_forward(stack: LstmStackParams, params: Mapping[str, Tensor], seq) -> Tensor:
    """Run a stack of LSTM layers; returns the last layer's hidden sequence."""
    h = as_tensor(seq)
    if h.shape[-1] != stack.input_dim:
        raise ShapeError("lstm_forward", h.shape, (stack.input_dim,))
    if h.ndim < 2 or h.shape[-2] < 1:
        raise ShapeError("lstm_forward", h.shape)
    for i in range(stack.num_layers):
        h = lstm_layer(h, params[f"l{i}.w"], params[f"l{i}.b"])
    return h


def linear_head(params: Mapping[str, Tensor], seq) -> Tensor:
    """Per-frame affine map ``seq @ w + b``."""
    seq = as_tensor(seq)
    w = params["w"]
    if seq.shape[-1] != w.shape[0]:
        raise ShapeError("linear_head", seq.shape, w.shape)
    return ad.matmul(seq, w) + params["b"]


def splice_indices(num_frames: int, context: int, lengths=None) -> np.ndarray:
    """Source frame index for every (frame, offset) pair, edge-replicated.

    Returns ``(T, 2c+1)`` indices, or ``(B, T, 2c+1)`` when ``lengths`` gives
    the valid length of each padded sequence in a batch.
    """
    offsets = np.arange(-context, context + 1)
    idx = np.arange(num_frames)[:, None] + offsets[None, :]
    if lengths is None:
        return np.clip(idx, 0, num_frames - 1)
    last = np.asarray(lengths)[:, None, None] - 1
    return np.clip(idx[None], 0, last)


def splice(seq, context: int, lengths: Optional[np.ndarray] = None) -> Tensor:
    """Concatenate each frame with its ``context`` neighbours on both sides.

    Frames beyond either end of a sequence are replaced by the edge frame.
    With a batch ``(B, T, D)`` and ``lengths``, the right edge of each row is
    its own last valid frame rather than the padded end.
    """
    seq = as_tensor(seq)
    if context < 0:
        raise ValueError("context must be non-negative")
    if context == 0:
        return seq
    width = 2 * context + 1
    if seq.ndim == 2:
        nt, d = seq.shape
        idx = splice_indices(nt, context)
        return ad.reshape(ad.getitem(seq, idx), (nt, width * d))
    nb, nt, d = seq.shape
    if lengths is None:
        lengths = np.full(nb, nt)
    idx = splice_indices(nt, context, lengths)
    rows = np.arange(nb)[:, None, None]
    return ad.reshape(ad.getitem(seq, (rows, idx)), (nb, nt, width * d))
