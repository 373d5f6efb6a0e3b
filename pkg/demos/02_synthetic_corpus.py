"""Generate a small parallel corpus and look at what the channel does.

Close-talk features are noisy state means; far-field features are the same
frames smeared by a decaying impulse response, attenuated and re-noised.
"""

import tempfile
from pathlib import Path

import numpy as np

from jvae.data import SynthConfig, generate_corpus, load_corpus, rir_kernel

cfg = SynthConfig(seed=0)
print("impulse response:", np.round(rir_kernel(cfg.rir_length, cfg.rir_decay), 3))

out = Path(tempfile.mkdtemp()) / "corpus"
manifest = generate_corpus(cfg, num_utts=10, t_range=(20, 40), out_dir=out)
print("manifest:", manifest.path)
print(manifest.path.read_text().splitlines()[0])

utts = load_corpus(manifest.path)
u = utts[0]
print(f"{u.id}: {u.num_frames} frames, labels {u.labels[:12]} ...")

dist = np.concatenate([np.linalg.norm(v.far - v.close, axis=1) for v in utts])
print(f"mean far/close frame distance {dist.mean():.3f} "
      f"(close-talk noise floor {cfg.close_noise_std * np.sqrt(cfg.feature_dim):.3f})")

# label runs follow the sticky Markov chain: mean run length ~ 1 / (1 - stay_prob)
runs = [np.diff(np.flatnonzero(np.diff(v.labels, prepend=-1, append=-1))) for v in utts]
print(f"mean label run length {np.mean(np.concatenate(runs)):.1f} frames")
