"""``jvae`` command-line entry point.

Exit codes: 0 success, 1 I/O failure, 2 usage or configuration error,
3 non-finite loss during training.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import re
import sys
from pathlib import Path

from . import __version__
from .config import OBJECTIVES, ConfigError, LossWeights, load_config
from .data import FeatureFileError, SynthConfig, generate_corpus, load_corpus, write_features
from .models import CheckpointError, check_compatible, enhance, load_checkpoint
from .traces import plot_traces
from .train import WEIGHT_GRID, NonFiniteLossError, evaluate, grid_run, train_run

__all__ = ["main", "build_parser"]

EXIT_IO, EXIT_USAGE, EXIT_NUMERIC = 1, 2, 3

log = logging.getLogger("jvae")


class UsageError(Exception):
    pass


def _typed(conv, check, what):
    def parse(text):
        try:
            value = conv(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid value {text!r}") from None
        if not check(value):
            raise argparse.ArgumentTypeError(f"{text!r} {what}")
        return value
    return parse


positive_int = _typed(int, lambda v: v >= 1, "must be a positive integer")
non_negative = _typed(float, lambda v: v >= 0, "must be non-negative")
positive = _typed(float, lambda v: v > 0, "must be positive")
probability = _typed(float, lambda v: 0 <= v <= 1, "must lie in [0, 1]")


def _env_seed():
    raw = os.environ.get("JVAE_SEED")
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"JVAE_SEED must be an integer, got {raw!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="jvae", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    g = sub.add_parser("gen-data", help="write a synthetic parallel corpus")
    g.add_argument("--out", required=True, type=Path)
    g.add_argument("--utts", required=True, type=positive_int)
    g.add_argument("--tmin", type=positive_int, default=20)
    g.add_argument("--tmax", type=positive_int, default=40)
    g.add_argument("--dim", type=positive_int, default=8)
    g.add_argument("--states", type=positive_int, default=10)
    g.add_argument("--stay-prob", type=probability, default=0.9)
    g.add_argument("--rir-len", type=positive_int, default=6)
    g.add_argument("--rir-decay", type=positive, default=0.6)
    g.add_argument("--noise-std", type=non_negative, default=0.3)
    g.add_argument("--seed", type=int)
    g.add_argument("--eval-utts", type=positive_int,
                   help="also write a held-out corpus of this many utterances to OUT/eval")

    def model_flags(sp, out_required=True):
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--weights", type=LossWeights.parse, metavar="L1,L2,L3,LDA,BETA",
                        help="override the config's loss weights")
        sp.add_argument("--corpus", required=True, type=Path, metavar="MANIFEST")
        sp.add_argument("--out", required=out_required, type=Path)
        sp.add_argument("--objective", choices=OBJECTIVES)
        sp.add_argument("--seed", type=int)

    t = sub.add_parser("train", help="train one model")
    model_flags(t)
    t.add_argument("--epochs", type=positive_int)

    gr = sub.add_parser("grid", help="train and evaluate one model per weight tuple")
    model_flags(gr)
    gr.add_argument("--grid", type=Path,
                    help="file of weight tuples, one 'l1,l2,l3,lda,beta' per line "
                         "(default: the built-in nine-row grid)")
    gr.add_argument("--eval-corpus", type=Path, metavar="MANIFEST")
    gr.add_argument("--jobs", type=positive_int, default=1)

    e = sub.add_parser("eval", help="frame error and enhancement gain of a checkpoint")
    model_flags(e, out_required=False)
    e.add_argument("--checkpoint", required=True, type=Path)

    en = sub.add_parser("enhance", help="write enhanced features for every utterance")
    model_flags(en)
    en.add_argument("--checkpoint", required=True, type=Path)

    pt = sub.add_parser("plot-traces", help="plot per-term losses against mini-batch")
    pt.add_argument("--metrics", required=True, type=Path, action="append",
                    help="metrics CSV; repeat to overlay runs")
    pt.add_argument("--label", action="append", help="series prefix per --metrics")
    pt.add_argument("--out", required=True, type=Path)
    return p


def _load_cfg(args):
    defaults = {}
    env = _env_seed()
    if env is not None:
        defaults["seed"] = env
    cfg = load_config(args.config, defaults)
    changes = {}
    if args.weights is not None:
        changes["weights"] = args.weights
    if args.objective is not None:
        changes["objective"] = args.objective
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "epochs", None) is not None:
        changes["epochs"] = args.epochs
    return cfg.replace(**changes) if changes else cfg


def _gen_data(args):
    if args.tmin > args.tmax:
        raise UsageError("--tmin must not exceed --tmax")
    if args.tmin < args.rir_len:
        raise UsageError("--tmin must be at least --rir-len")
    seed = args.seed if args.seed is not None else (_env_seed() or 0)
    cfg = SynthConfig(num_states=args.states, stay_prob=args.stay_prob, feature_dim=args.dim,
                      rir_length=args.rir_len, rir_decay=args.rir_decay,
                      noise_std=args.noise_std, seed=seed)
    man = generate_corpus(cfg, args.utts, (args.tmin, args.tmax), args.out)
    print(man.path)
    if args.eval_utts:
        # a distinct generator seed keeps held-out utterances disjoint from training
        ev = generate_corpus(dataclasses.replace(cfg, seed=seed + 1_000_003),
                             args.eval_utts, (args.tmin, args.tmax), args.out / "eval")
        print(ev.path)


def _train(args):
    cfg = _load_cfg(args)
    res = train_run(cfg, args.corpus, args.out)
    last = res.rows[-1]
    print(f"{res.metrics_path}\t{res.checkpoint}\tsteps={last.step}\ttotal={last.total!r}")


def _read_grid(path):
    grid = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if line:
            try:
                grid.append(LossWeights.parse(",".join(re.split(r"[,\s]+", line))))
            except ConfigError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    if not grid:
        raise ConfigError(f"{path}: no weight tuples")
    return grid


def _grid(args):
    cfg = _load_cfg(args)
    grid = _read_grid(args.grid) if args.grid else [LossWeights(*w) for w in WEIGHT_GRID]
    rows = grid_run(cfg, grid, args.corpus, args.out, eval_corpus=args.eval_corpus,
                    jobs=args.jobs)
    print(args.out / "summary.csv")
    failed = [r for r in rows if r.status.startswith("failed")]
    if failed:
        log.warning("%d of %d grid points failed", len(failed), len(rows))


def _load_params(cfg, path):
    params, _ = load_checkpoint(path)
    check_compatible(params, cfg.model, cfg.objective)
    return params


def _eval(args):
    cfg = _load_cfg(args)
    res = evaluate(cfg, _load_params(cfg, args.checkpoint), args.corpus)
    out = {"frame_error_pct": None if res.frame_error_pct != res.frame_error_pct
           else res.frame_error_pct, "mean_enhancement_gain": res.mean_enhancement_gain}
    text = json.dumps(out)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "eval.json").write_text(text + "\n")
    print(text)


def _enhance(args):
    cfg = _load_cfg(args)
    params = _load_params(cfg, args.checkpoint)
    args.out.mkdir(parents=True, exist_ok=True)
    lines = []
    for u in load_corpus(args.corpus):
        path = args.out / f"{u.id}.enh.fbt"
        write_features(path, enhance(cfg.model, params, u.far, cfg.objective))
        lines.append(f"{u.id}\t{path.name}\n")
    (args.out / "enhanced.tsv").write_text("".join(lines))
    print(args.out / "enhanced.tsv")


def _plot(args):
    if args.label is not None and len(args.label) != len(args.metrics):
        raise UsageError("give one --label per --metrics")
    names = plot_traces(args.metrics, args.out, args.label)
    print(f"{args.out}\t{','.join(names)}")


COMMANDS = {"gen-data": _gen_data, "train": _train, "grid": _grid, "eval": _eval,
            "enhance": _enhance, "plot-traces": _plot}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except NonFiniteLossError as exc:
        print(f"jvae: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FeatureFileError as exc:
        print(f"jvae: {exc}", file=sys.stderr)
        return EXIT_IO if args.command != "plot-traces" else EXIT_USAGE
    except (UsageError, ConfigError, CheckpointError, ValueError) as exc:
        print(f"jvae: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"jvae: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
