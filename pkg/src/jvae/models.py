"""The trainable systems and their forward passes.

Six objectives share one parameter namespace, ``<component>.<part>.<name>``:

``vae``           encoder(x) -> z -> decoder_x; ELBO on far-field features
``da``            denoising autoencoder + acoustic model (MSE + CE)
``am``            acoustic model alone on spliced raw features (CE)
``jvae-approx``   joint VAE, posterior conditioned on x only
``jvae-relaxed``  joint VAE whose encoder also sees a DA estimate of y
``matched``       ``jvae-relaxed`` trained jointly with the acoustic model

Every forward returns a :class:`ForwardTrace` holding the intermediate
tensors, the individual loss terms and their weighted total.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .config import OBJECTIVES, LossWeights, ModelConfig
from .layers import LinearHeadParams, LstmStackParams, linear_head, lstm_forward, splice
from .prob import (
    GaussianParams,
    LatentSample,
    cross_entropy,
    frame_weights,
    hetero_nll,
    kld_to_standard_normal,
    mse,
    reparam_sample,
)

__all__ = [
    "TERMS",
    "CHECKPOINT_VERSION",
    "CheckpointError",
    "ForwardTrace",
    "component_specs",
    "init_params",
    "term_weights",
    "forward",
    "vae_forward",
    "da_forward",
    "am_forward",
    "jvae_approx_forward",
    "jvae_relaxed_forward",
    "matched_forward",
    "enhance",
    "am_logits",
    "classify",
    "save_checkpoint",
    "load_checkpoint",
    "check_compatible",
]

TERMS = ("mse_x", "mse_y", "kld", "mse_da", "ce")
CHECKPOINT_VERSION = "JVAE-CKPT-1"


class CheckpointError(ValueError):
    pass


@dataclass
class ForwardTrace:
    objective: str
    da_pred: Optional[Tensor] = None
    z_posterior: Optional[GaussianParams] = None
    z_sample: Optional[LatentSample] = None
    x_recon: Optional[GaussianParams] = None
    y_pred: Optional[GaussianParams] = None
    am_logits: Optional[Tensor] = None
    terms: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    total: Optional[Tensor] = None

    @property
    def loss_terms(self) -> dict:
        """Scalar values of every present term, plus ``total``."""
        out = {k: self.terms[k].item() for k in TERMS if k in self.terms}
        if self.total is not None:
            out["total"] = self.total.item()
        return out

    def _finish(self, weights: dict) -> "ForwardTrace":
        self.weights = weights
        total = None
        for name in TERMS:
            if name not in self.terms:
                continue
            w = weights.get(name, 0.0)
            if w == 0.0:
                continue
            contrib = self.terms[name] * w
            total = contrib if total is None else total + contrib
        self.total = total if total is not None else Tensor(0.0)
        return self


def term_weights(objective: str, w: LossWeights) -> dict:
    """Weight applied to each loss term under ``objective``."""
    table = {
        "vae": {"mse_x": 1.0, "kld": w.lambda3},
        "da": {"mse_da": w.lambda1, "ce": w.lambda2},
        "am": {"ce": 1.0},
        "jvae-approx": {"mse_x": w.lambda1, "mse_y": w.lambda2, "kld": w.lambda3},
        "jvae-relaxed": {"mse_x": w.lambda1, "mse_y": w.lambda2, "kld": w.lambda3,
                         "mse_da": w.lambda_da},
        "matched": {"mse_x": w.lambda1, "mse_y": w.lambda2, "kld": w.lambda3,
                    "mse_da": w.lambda_da, "ce": w.beta},
    }
    return table[objective]


# -- parameters ------------------------------------------------------------

def component_specs(cfg: ModelConfig, objective: str) -> dict:
    """Layer shapes for every component ``objective`` uses, in a fixed order."""
    if objective not in OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")
    d, dz = cfg.feature_dim, cfg.latent_dim
    da = {"lstm": LstmStackParams(cfg.da_layers, d, cfg.da_hidden),
          "out": LinearHeadParams(cfg.da_hidden, d)}
    am = {"lstm": LstmStackParams(cfg.am_layers, cfg.splice_width * d, cfg.am_hidden),
          "out": LinearHeadParams(cfg.am_hidden, cfg.num_classes)}

    def encoder(d_in):
        return {"lstm": LstmStackParams(cfg.encoder_layers, d_in, cfg.encoder_hidden),
                "mu": LinearHeadParams(cfg.encoder_hidden, dz),
                "logvar": LinearHeadParams(cfg.encoder_hidden, dz)}

    def decoder(d_in, layers, hidden):
        return {"lstm": LstmStackParams(layers, d_in, hidden),
                "mu": LinearHeadParams(hidden, d),
                "logvar": LinearHeadParams(hidden, d)}

    dec_x = decoder(dz, cfg.decoder_x_layers, cfg.decoder_x_hidden)
    dec_y = decoder(dz + d, cfg.decoder_y_layers, cfg.decoder_y_hidden)
    relaxed_in = d + cfg.splice_width * d
    if objective == "vae":
        return {"encoder": encoder(d), "decoder_x": dec_x}
    if objective == "da":
        return {"da": da, "am": am}
    if objective == "am":
        return {"am": am}
    if objective == "jvae-approx":
        return {"encoder": encoder(d), "decoder_x": dec_x, "decoder_y": dec_y}
    specs = {"da": da, "encoder": encoder(relaxed_in), "decoder_x": dec_x, "decoder_y": dec_y}
    if objective == "matched":
        specs["am"] = am
    return specs


def _component_rng(seed: int, component: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(component.encode())])


def init_params(cfg: ModelConfig, objective: str, seed: int) -> dict:
    """Fresh parameters. Each component draws from its own seeded stream,
    so a component's initial values do not depend on which others exist."""
    params = {}
    for comp, parts in component_specs(cfg, objective).items():
        rng = _component_rng(seed, comp)
        for part, stack in parts.items():
            for name, arr in stack.init(rng).items():
                params[f"{comp}.{part}.{name}"] = arr
    return params


def _scope(params: Mapping, prefix: str) -> dict:
    n = len(prefix) + 1
    return {k[n:]: v for k, v in params.items() if k.startswith(prefix + ".")}


def _lstm(cfg, objective, params, comp, seq):
    stack = component_specs(cfg, objective)[comp]["lstm"]
    return lstm_forward(stack, _scope(params, f"{comp}.lstm"), seq)


def _gaussian(params, comp, h) -> GaussianParams:
    return GaussianParams.from_head(linear_head(_scope(params, f"{comp}.mu"), h),
                                    linear_head(_scope(params, f"{comp}.logvar"), h))


# -- forward passes --------------------------------------------------------

@dataclass
class _Inputs:
    x: Tensor
    y: Optional[Tensor]
    labels: Optional[np.ndarray]
    lengths: Optional[np.ndarray]
    weights: Optional[np.ndarray]


def _inputs(cfg: ModelConfig, x, y=None, labels=None, lengths=None) -> _Inputs:
    x = as_tensor(x)
    if x.ndim not in (2, 3) or x.shape[-1] != cfg.feature_dim:
        raise ad.ShapeError("model input", x.shape, (cfg.feature_dim,))
    if x.shape[-2] < 1:
        raise ValueError("sequences need at least one frame")
    if y is not None:
        y = as_tensor(y)
        if y.shape != x.shape:
            raise ValueError(f"far-field and close-talk features are not aligned: "
                             f"{x.shape} vs {y.shape}")
    if labels is not None:
        labels = np.asarray(labels)
        if labels.shape != x.shape[:-1]:
            raise ValueError(f"labels shape {labels.shape} does not match frames {x.shape[:-1]}")
    weights = None
    if lengths is not None:
        lengths = np.asarray(lengths)
        if x.ndim != 3 or lengths.shape != (x.shape[0],):
            raise ValueError("lengths needs a (B, T, D) batch with one length per row")
        weights = frame_weights(lengths, x.shape[1])
    return _Inputs(x, y, labels, lengths, weights)


def _noise(shape, noise, rng) -> np.ndarray:
    if noise is not None:
        return np.asarray(noise, dtype=np.float64)
    if rng is not None:
        return rng.standard_normal(shape)
    return np.zeros(shape)


def _latent(cfg, objective, params, enc_in, noise, rng):
    h = _lstm(cfg, objective, params, "encoder", enc_in)
    post = _gaussian(params, "encoder", h)
    return post, reparam_sample(post, _noise(post.shape, noise, rng))


def vae_forward(cfg: ModelConfig, params, x, *, weights: LossWeights = LossWeights(),
                lengths=None, noise=None, rng=None) -> ForwardTrace:
    """Standard VAE on far-field features; total is the negative ELBO."""
    inp = _inputs(cfg, x, lengths=lengths)
    post, z = _latent(cfg, "vae", params, inp.x, noise, rng)
    x_rec = _gaussian(params, "decoder_x", _lstm(cfg, "vae", params, "decoder_x", z.value))
    tr = ForwardTrace("vae", z_posterior=post, z_sample=z, x_recon=x_rec)
    tr.terms = {"mse_x": hetero_nll(inp.x, x_rec, inp.weights),
                "kld": kld_to_standard_normal(post, inp.weights)}
    return tr._finish(term_weights("vae", weights))


def am_logits(cfg: ModelConfig, params, features, lengths=None) -> Tensor:
    """Acoustic-model logits for (possibly enhanced) features."""
    spliced = splice(features, cfg.splice_context, lengths)
    h = _lstm(cfg, "am", params, "am", spliced)
    return linear_head(_scope(params, "am.out"), h)


def _da_map(cfg, objective, params, x) -> Tensor:
    h = _lstm(cfg, objective, params, "da", x)
    return linear_head(_scope(params, "da.out"), h)


def da_forward(cfg: ModelConfig, params, x, y=None, labels=None, *,
               weights: LossWeights = LossWeights(), lengths=None) -> ForwardTrace:
    """DA baseline: far-field -> estimated close-talk -> spliced -> AM."""
    inp = _inputs(cfg, x, y, labels, lengths)
    y_hat = _da_map(cfg, "da", params, inp.x)
    tr = ForwardTrace("da", da_pred=y_hat, am_logits=am_logits(cfg, params, y_hat, inp.lengths))
    if inp.y is not None:
        tr.terms["mse_da"] = mse(inp.y, y_hat, inp.weights)
    if inp.labels is not None:
        tr.terms["ce"] = cross_entropy(tr.am_logits, inp.labels, inp.weights)
    return tr._finish(term_weights("da", weights))


def am_forward(cfg: ModelConfig, params, features, labels=None, *, lengths=None) -> ForwardTrace:
    inp = _inputs(cfg, features, labels=labels, lengths=lengths)
    tr = ForwardTrace("am", am_logits=am_logits(cfg, params, inp.x, inp.lengths))
    if inp.labels is not None:
        tr.terms["ce"] = cross_entropy(tr.am_logits, inp.labels, inp.weights)
    return tr._finish(term_weights("am", LossWeights()))


def _decoders(cfg, objective, params, inp: _Inputs, z: LatentSample, detach_y_path: bool):
    x_rec = _gaussian(params, "decoder_x", _lstm(cfg, objective, params, "decoder_x", z.value))
    z_in = ad.detach(z.value) if detach_y_path else z.value
    dec_y_in = ad.concat([z_in, inp.x])
    y_pred = _gaussian(params, "decoder_y", _lstm(cfg, objective, params, "decoder_y", dec_y_in))
    return x_rec, y_pred


def jvae_approx_forward(cfg: ModelConfig, params, x, y=None, *,
                        weights: LossWeights = LossWeights(), lengths=None, noise=None,
                        rng=None, detach_y_path: bool = False) -> ForwardTrace:
    """Joint VAE with the posterior conditioned on far-field features only."""
    inp = _inputs(cfg, x, y, lengths=lengths)
    post, z = _latent(cfg, "jvae-approx", params, inp.x, noise, rng)
    x_rec, y_pred = _decoders(cfg, "jvae-approx", params, inp, z, detach_y_path)
    tr = ForwardTrace("jvae-approx", z_posterior=post, z_sample=z, x_recon=x_rec, y_pred=y_pred)
    tr.terms["mse_x"] = hetero_nll(inp.x, x_rec, inp.weights)
    if inp.y is not None:
        tr.terms["mse_y"] = hetero_nll(inp.y, y_pred, inp.weights)
    tr.terms["kld"] = kld_to_standard_normal(post, inp.weights)
    return tr._finish(term_weights("jvae-approx", weights))


def _relaxed(cfg, objective, params, inp: _Inputs, noise, rng) -> ForwardTrace:
    y_da = _da_map(cfg, objective, params, inp.x)
    enc_in = ad.concat([inp.x, splice(y_da, cfg.splice_context, inp.lengths)])
    post, z = _latent(cfg, objective, params, enc_in, noise, rng)
    x_rec, y_pred = _decoders(cfg, objective, params, inp, z, False)
    tr = ForwardTrace(objective, da_pred=y_da, z_posterior=post, z_sample=z,
                      x_recon=x_rec, y_pred=y_pred)
    if inp.y is not None:
        tr.terms["mse_x"] = hetero_nll(inp.x, x_rec, inp.weights)
        tr.terms["mse_y"] = hetero_nll(inp.y, y_pred, inp.weights)
        tr.terms["kld"] = kld_to_standard_normal(post, inp.weights)
        tr.terms["mse_da"] = mse(inp.y, y_da, inp.weights)
    return tr


def jvae_relaxed_forward(cfg: ModelConfig, params, x, y=None, *,
                         weights: LossWeights = LossWeights(), lengths=None, noise=None,
                         rng=None) -> ForwardTrace:
    """Joint VAE whose encoder sees x and the spliced DA estimate of y.

    Close-talk features enter only through the loss terms; with ``y=None``
    this is the inference path and no terms are produced.
    """
    inp = _inputs(cfg, x, y, lengths=lengths)
    tr = _relaxed(cfg, "jvae-relaxed", params, inp, noise, rng)
    return tr._finish(term_weights("jvae-relaxed", weights))


def matched_forward(cfg: ModelConfig, params, x, y=None, labels=None, *,
                    weights: LossWeights = LossWeights(), lengths=None, noise=None,
                    rng=None) -> ForwardTrace:
    """Relaxed joint VAE plus an AM fed the spliced predicted close-talk mean."""
    inp = _inputs(cfg, x, y, labels, lengths)
    tr = _relaxed(cfg, "matched", params, inp, noise, rng)
    tr.am_logits = am_logits(cfg, params, tr.y_pred.mean, inp.lengths)
    if inp.labels is not None:
        tr.terms["ce"] = cross_entropy(tr.am_logits, inp.labels, inp.weights)
    return tr._finish(term_weights("matched", weights))


def forward(objective: str, cfg: ModelConfig, params, x, y=None, labels=None, *,
            weights: LossWeights = LossWeights(), lengths=None, noise=None, rng=None,
            am_features: str = "far", detach_y_path: bool = False) -> ForwardTrace:
    """Dispatch to the forward pass of ``objective`` with training inputs.

    ``detach_y_path`` only affects ``jvae-approx``.
    """
    if objective == "vae":
        return vae_forward(cfg, params, x, weights=weights, lengths=lengths, noise=noise, rng=rng)
    if objective == "da":
        return da_forward(cfg, params, x, y, labels, weights=weights, lengths=lengths)
    if objective == "am":
        feats = x if am_features == "far" else y
        return am_forward(cfg, params, feats, labels, lengths=lengths)
    if objective == "jvae-approx":
        return jvae_approx_forward(cfg, params, x, y, weights=weights, lengths=lengths,
                                   noise=noise, rng=rng, detach_y_path=detach_y_path)
    if objective == "jvae-relaxed":
        return jvae_relaxed_forward(cfg, params, x, y, weights=weights, lengths=lengths,
                                    noise=noise, rng=rng)
    if objective == "matched":
        return matched_forward(cfg, params, x, y, labels, weights=weights, lengths=lengths,
                               noise=noise, rng=rng)
    raise ValueError(f"unknown objective {objective!r}")


# -- inference -------------------------------------------------------------

def enhance(cfg: ModelConfig, params, x, objective: str = "matched") -> np.ndarray:
    """Predicted close-talk features for far-field ``x`` (T x D).

    Joint-VAE variants decode through the posterior mean (zero noise) and
    return the mean of the close-talk decoder. The DA baseline returns its
    regression output. Objectives without a far-to-close mapping return ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    p = {k: Tensor(v) if not isinstance(v, Tensor) else ad.detach(v) for k, v in params.items()}
    if objective in ("jvae-relaxed", "matched"):
        inp = _inputs(cfg, x)
        return _relaxed(cfg, objective, p, inp, None, None).y_pred.mean.data
    if objective == "jvae-approx":
        return jvae_approx_forward(cfg, p, x).y_pred.mean.data
    if objective == "da":
        _inputs(cfg, x)
        return _da_map(cfg, "da", p, Tensor(x)).data
    return x.copy()


def classify(cfg: ModelConfig, params, features) -> np.ndarray:
    """Per-frame argmax of the acoustic model's logits."""
    p = {k: Tensor(v) if not isinstance(v, Tensor) else ad.detach(v) for k, v in params.items()}
    logits = am_logits(cfg, p, np.asarray(features, dtype=np.float64))
    return np.argmax(logits.data, axis=-1)


# -- checkpoints -----------------------------------------------------------

def save_checkpoint(path, params: Mapping[str, np.ndarray], meta: Optional[dict] = None) -> None:
    """Write named float64 arrays as ``JVAE-CKPT-1``.

    Layout: the version line, one line of JSON with ``meta`` and an
    ``arrays`` manifest of (name, shape, offset) where offsets are bytes from
    the start of the data block, then the little-endian float64 data.
    """
    entries, blobs, offset = [], [], 0
    for name, arr in params.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += a.nbytes
    header = json.dumps({"meta": meta or {}, "arrays": entries}, sort_keys=True)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(f"{CHECKPOINT_VERSION}\n{header}\n".encode())
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def load_checkpoint(path) -> tuple:
    """Return ``(params, meta)`` from a checkpoint file."""
    raw = Path(path).read_bytes()
    first = raw.find(b"\n")
    second = raw.find(b"\n", first + 1)
    if first < 0 or second < 0 or raw[:first].decode(errors="replace") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_VERSION} checkpoint")
    try:
        header = json.loads(raw[first + 1:second])
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: bad manifest: {exc}") from None
    data = raw[second + 1:]
    params = {}
    for e in header["arrays"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        end = e["offset"] + 8 * n
        if end > len(data):
            raise CheckpointError(f"{path}: array {e['name']!r} runs past end of file")
        arr = np.frombuffer(data[e["offset"]:end], dtype="<f8").astype(np.float64)
        params[e["name"]] = arr.reshape(e["shape"])
    return params, header.get("meta", {})


def check_compatible(params: Mapping[str, np.ndarray], cfg: ModelConfig, objective: str) -> None:
    expected = {k: v.shape for k, v in init_params(cfg, objective, 0).items()}
    got = {k: tuple(np.shape(v)) for k, v in params.items()}
    if expected != got:
        missing = sorted(set(expected) - set(got))
        bad = sorted(k for k in set(expected) & set(got) if expected[k] != got[k])
        extra = sorted(set(got) - set(expected))
        raise CheckpointError(f"checkpoint does not match {objective!r} model: "
                              f"missing={missing[:3]} mismatched={bad[:3]} unexpected={extra[:3]}")
