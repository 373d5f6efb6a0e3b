"""Synthetic parallel corpora, feature files and minibatches.

The generator stands in for time-aligned close-talk / far-field recordings.
A hidden Markov chain over ``num_states`` labels emits close-talk frames
around fixed per-state mean vectors; far-field frames are the close-talk
frames run through a causal, exponentially decaying "room" kernel, scaled by
a per-utterance channel gain, with additive Gaussian noise.

File formats
------------
FBT1 feature file::

    FBT1 <T> <D>
    <D floats>      # T lines, %.17g, space separated

Label file: one integer per line. Manifest: one tab-separated record per
line, ``id  x-path  y-path  label-path  T`` with paths relative to the
manifest's directory.
"""

from __future__ import annotations

import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

__all__ = [
    "FeatureFileError",
    "MalformedHeaderError",
    "RowLengthError",
    "NonNumericError",
    "ParallelUtterance",
    "SynthConfig",
    "CorpusManifest",
    "ManifestEntry",
    "Batch",
    "write_features",
    "read_features",
    "write_labels",
    "read_labels",
    "generate_utterances",
    "generate_corpus",
    "rir_kernel",
    "read_manifest",
    "write_manifest",
    "load_corpus",
    "make_batch",
    "batch_iterator",
]

MAGIC = "FBT1"


class FeatureFileError(ValueError):
    """A feature file could not be parsed."""

    def __init__(self, path, line: int, message: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class MalformedHeaderError(FeatureFileError):
    pass


class RowLengthError(FeatureFileError):
    pass


class NonNumericError(FeatureFileError):
    pass


@dataclass
class ParallelUtterance:
    id: str
    far: np.ndarray
    close: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        n = len(self.labels)
        if self.far.shape != self.close.shape or self.far.shape[0] != n:
            raise ValueError(f"utterance {self.id!r} is not time-aligned: "
                             f"far {self.far.shape}, close {self.close.shape}, labels {n}")

    @property
    def num_frames(self) -> int:
        return len(self.labels)


@dataclass
class SynthConfig:
    num_states: int = 10
    stay_prob: float = 0.9
    feature_dim: int = 8
    rir_length: int = 6
    rir_decay: float = 0.6
    noise_std: float = 0.3
    close_noise_std: float = 0.1
    gain_range: tuple = (0.7, 1.0)
    seed: int = 0

    def __post_init__(self):
        checks = [
            (self.num_states >= 1, "num_states must be >= 1"),
            (0.0 <= self.stay_prob <= 1.0, "stay_prob must lie in [0, 1]"),
            (self.feature_dim >= 1, "feature_dim must be >= 1"),
            (self.rir_length >= 1, "rir_length must be >= 1"),
            (self.rir_decay > 0, "rir_decay must be positive"),
            (self.noise_std >= 0, "noise_std must be non-negative"),
            (self.close_noise_std >= 0, "close_noise_std must be non-negative"),
            (0 < self.gain_range[0] <= self.gain_range[1], "gain_range must be 0 < lo <= hi"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        self.gain_range = tuple(float(g) for g in self.gain_range)


@dataclass
class ManifestEntry:
    id: str
    x_path: Path
    y_path: Path
    label_path: Path
    num_frames: int


@dataclass
class CorpusManifest:
    entries: list
    feature_dim: int
    path: Optional[Path] = None
    synth: Optional[SynthConfig] = None

    def __len__(self):
        return len(self.entries)

    def subset(self, ids: Sequence[str]) -> "CorpusManifest":
        keep = set(ids)
        return CorpusManifest([e for e in self.entries if e.id in keep],
                              self.feature_dim, None, self.synth)


# -- feature files ---------------------------------------------------------

def write_features(path, m) -> None:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"refusing to write non-finite values to {path}")
    lines = [f"{MAGIC} {m.shape[0]} {m.shape[1]}"]
    lines += [" ".join("%.17g" % v for v in row) for row in m]
    Path(path).write_text("\n".join(lines) + "\n")


def read_features(path) -> np.ndarray:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise MalformedHeaderError(path, 1, "empty file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != MAGIC:
        raise MalformedHeaderError(path, 1, f"expected '{MAGIC} <T> <D>', got {lines[0]!r}")
    try:
        nt, d = int(head[1]), int(head[2])
    except ValueError:
        raise MalformedHeaderError(path, 1, f"non-integer dimensions in {lines[0]!r}") from None
    if nt < 0 or d < 1:
        raise MalformedHeaderError(path, 1, f"invalid dimensions T={nt} D={d}")
    out = np.empty((nt, d))
    for t in range(nt):
        lineno = t + 2
        if t + 1 >= len(lines):
            raise RowLengthError(path, lineno, f"expected {nt} rows, file ends after {t}")
        toks = lines[t + 1].split()
        if len(toks) != d:
            raise RowLengthError(path, lineno, f"expected {d} values, found {len(toks)}")
        for j, tok in enumerate(toks):
            try:
                v = float(tok)
            except ValueError:
                v = math.nan
            if not math.isfinite(v):
                # the writer never emits nan/inf, so such tokens are not data
                raise NonNumericError(path, lineno, f"non-numeric token {tok!r}")
            out[t, j] = v
    extra = [i for i in range(nt + 1, len(lines)) if lines[i].strip()]
    if extra:
        raise RowLengthError(path, extra[0] + 1, f"unexpected data after {nt} rows")
    return out


def write_labels(path, labels) -> None:
    Path(path).write_text("".join(f"{int(v)}\n" for v in labels))


def read_labels(path) -> np.ndarray:
    vals = []
    with open(path) as fh:
        for i, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                vals.append(int(line))
            except ValueError:
                raise NonNumericError(path, i, f"non-integer label {line.strip()!r}") from None
    return np.asarray(vals, dtype=np.int64)


# -- synthesis -------------------------------------------------------------

def rir_kernel(length: int, decay: float) -> np.ndarray:
    w = decay ** np.arange(length, dtype=np.float64)
    return w / w.sum()


def _state_means(cfg: SynthConfig) -> np.ndarray:
    rng = np.random.default_rng([cfg.seed, 0])
    means = rng.standard_normal((cfg.num_states, cfg.feature_dim))
    return means / np.linalg.norm(means, axis=1, keepdims=True)


def _label_path(rng, cfg: SynthConfig, nt: int) -> np.ndarray:
    k = cfg.num_states
    labels = np.empty(nt, dtype=np.int64)
    labels[0] = rng.integers(k)
    for t in range(1, nt):
        if k == 1 or rng.random() < cfg.stay_prob:
            labels[t] = labels[t - 1]
        else:
            nxt = rng.integers(k - 1)
            labels[t] = nxt + (nxt >= labels[t - 1])
    return labels


def convolve_channel(close: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Per-dimension causal convolution with zero history before frame 0."""
    out = np.zeros_like(close)
    for k, wk in enumerate(kernel):
        if k == 0:
            out += wk * close
        else:
            out[k:] += wk * close[:-k]
    return out


def generate_utterances(cfg: SynthConfig, num_utts: int, t_range=(20, 40)) -> list:
    """Generate ``num_utts`` parallel utterances in memory.

    Utterance ``i`` draws from its own stream seeded by ``(seed, i + 1)`` so
    any prefix of a corpus is reproducible independently of its size.
    """
    tmin, tmax = t_range
    if tmin < cfg.rir_length or tmax < tmin:
        raise ValueError(f"t_range must satisfy rir_length <= tmin <= tmax, got {t_range}")
    means = _state_means(cfg)
    kernel = rir_kernel(cfg.rir_length, cfg.rir_decay)
    utts = []
    for i in range(num_utts):
        rng = np.random.default_rng([cfg.seed, i + 1])
        nt = int(rng.integers(tmin, tmax + 1))
        labels = _label_path(rng, cfg, nt)
        close = means[labels] + cfg.close_noise_std * rng.standard_normal((nt, cfg.feature_dim))
        gain = rng.uniform(*cfg.gain_range)
        far = gain * convolve_channel(close, kernel)
        far = far + cfg.noise_std * rng.standard_normal((nt, cfg.feature_dim))
        utts.append(ParallelUtterance(f"utt{i:05d}", far, close, labels))
    return utts


def generate_corpus(cfg: SynthConfig, num_utts: int, t_range, out_dir,
                    manifest_name: str = "manifest.tsv") -> CorpusManifest:
    """Write a synthetic corpus to ``out_dir`` and return its manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    feat_dir = out_dir / "feats"
    feat_dir.mkdir(exist_ok=True)
    entries = []
    for u in generate_utterances(cfg, num_utts, t_range):
        xp, yp, lp = (feat_dir / f"{u.id}.x.fbt", feat_dir / f"{u.id}.y.fbt",
                      feat_dir / f"{u.id}.lab")
        write_features(xp, u.far)
        write_features(yp, u.close)
        write_labels(lp, u.labels)
        entries.append(ManifestEntry(u.id, xp, yp, lp, u.num_frames))
    manifest = CorpusManifest(entries, cfg.feature_dim, out_dir / manifest_name, cfg)
    write_manifest(manifest.path, manifest)
    lines = [f"{k} = {','.join(map(str, v)) if isinstance(v, tuple) else v}"
             for k, v in asdict(cfg).items()]
    (out_dir / "synth.cfg").write_text("\n".join(lines) + "\n")
    return manifest


# -- manifests -------------------------------------------------------------

def write_manifest(path, manifest: CorpusManifest) -> None:
    path = Path(path)
    base = path.parent.resolve()
    rows = []
    for e in manifest.entries:
        rel = [os.path.relpath(Path(p).resolve(), base) for p in (e.x_path, e.y_path, e.label_path)]
        rows.append("\t".join([e.id, *rel, str(e.num_frames)]))
    path.write_text("".join(r + "\n" for r in rows))


def read_manifest(path) -> CorpusManifest:
    path = Path(path)
    base = path.parent
    entries = []
    for i, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise ValueError(f"{path}:{i}: expected 5 tab-separated fields, got {len(parts)}")
        uid, xp, yp, lp, nt = parts
        entries.append(ManifestEntry(uid, base / xp, base / yp, base / lp, int(nt)))
    if not entries:
        raise ValueError(f"{path}: manifest is empty")
    dim = _header_dim(entries[0].x_path)
    return CorpusManifest(entries, dim, path)


def _header_dim(path) -> int:
    with open(path) as fh:
        head = fh.readline().split()
    if len(head) != 3 or head[0] != MAGIC:
        raise MalformedHeaderError(path, 1, "bad header")
    return int(head[2])


def load_corpus(manifest) -> list:
    """Read every utterance listed in a manifest (object or path)."""
    if not isinstance(manifest, CorpusManifest):
        manifest = read_manifest(manifest)
    utts = []
    for e in manifest.entries:
        x, y, lab = read_features(e.x_path), read_features(e.y_path), read_labels(e.label_path)
        u = ParallelUtterance(e.id, x, y, lab)
        if u.num_frames != e.num_frames or x.shape[1] != manifest.feature_dim:
            raise ValueError(f"utterance {e.id!r} does not match its manifest record")
        utts.append(u)
    return utts


# -- batching --------------------------------------------------------------

@dataclass
class Batch:
    """Right-padded ``(B, T, D)`` arrays plus per-utterance lengths."""

    ids: list
    far: np.ndarray
    close: np.ndarray
    labels: np.ndarray
    lengths: np.ndarray = field(default=None)

    @property
    def size(self) -> int:
        return len(self.ids)


def make_batch(utts: Sequence[ParallelUtterance]) -> Batch:
    if not utts:
        raise ValueError("cannot batch zero utterances")
    lengths = np.array([u.num_frames for u in utts])
    nt, d = lengths.max(), utts[0].far.shape[1]
    far = np.zeros((len(utts), nt, d))
    close = np.zeros((len(utts), nt, d))
    labels = np.zeros((len(utts), nt), dtype=np.int64)
    for i, u in enumerate(utts):
        n = u.num_frames
        far[i, :n], close[i, :n], labels[i, :n] = u.far, u.close, u.labels
    return Batch([u.id for u in utts], far, close, labels, lengths)


def batch_iterator(utts: Sequence[ParallelUtterance], batch_size: int,
                   shuffle_seed: Optional[int], epoch: int = 0) -> Iterator[Batch]:
    """Yield whole-utterance batches for one epoch.

    The order is a permutation drawn from ``(shuffle_seed, epoch)``; pass
    ``shuffle_seed=None`` to keep corpus order.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not utts:
        raise ValueError("cannot iterate over an empty corpus")
    order = np.arange(len(utts))
    if shuffle_seed is not None:
        order = np.random.default_rng([shuffle_seed, epoch]).permutation(len(utts))
    for start in range(0, len(order), batch_size):
        yield make_batch([utts[i] for i in order[start:start + batch_size]])
