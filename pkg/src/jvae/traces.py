"""Loss-trace plotting and summary statistics over metrics logs."""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .models import TERMS
from .train import read_metrics

__all__ = ["series", "plot_traces", "quartile_median", "quartile_slope"]


def series(rows) -> dict:
    """``{term: (steps, values)}`` for every term present in any row."""
    out = {}
    for term in TERMS:
        pts = [(r.step, r.terms[term]) for r in rows if term in r.terms]
        if pts:
            steps, vals = zip(*pts)
            out[term] = (np.array(steps), np.array(vals))
    return out


def _quartile(values: np.ndarray, which: int) -> np.ndarray:
    n = len(values)
    lo, hi = (which * n) // 4, ((which + 1) * n) // 4
    return values[lo:hi]


def quartile_median(values, which: int = 3) -> float:
    """Median of quartile ``which`` (0 = first, 3 = last) of a series."""
    return float(np.median(_quartile(np.asarray(values, float), which)))


def quartile_slope(steps, values, which: int) -> float:
    """Least-squares slope of a series restricted to one quartile."""
    s = _quartile(np.asarray(steps, float), which)
    v = _quartile(np.asarray(values, float), which)
    return float(np.polyfit(s, v, 1)[0])


def plot_traces(metrics: Sequence, out, labels: Optional[Sequence[str]] = None) -> list:
    """Plot every non-empty loss column against step.

    ``metrics`` is a list of CSV paths; several files are overlaid and their
    series prefixed with ``labels``. Writes a PNG when matplotlib is
    importable; otherwise writes ``<out>.dat`` plus a gnuplot script
    ``<out>.gp``. Returns the series names.
    """
    out = Path(out)
    if labels is None:
        labels = [Path(m).parent.name or Path(m).stem for m in metrics] if len(metrics) > 1 else [""]
    all_series = []
    for path, label in zip(metrics, labels):
        rows = read_metrics(path)
        if not rows:
            raise ValueError(f"{path}: no rows")
        for term, (steps, vals) in series(rows).items():
            all_series.append((f"{label}:{term}" if label else term, steps, vals))

    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        _write_gnuplot(all_series, out)
    else:
        fig, ax = plt.subplots(figsize=(8, 4.5))
        for name, steps, vals in all_series:
            ax.plot(steps, vals, label=name, linewidth=1)
        ax.set_xlabel("mini-batch")
        ax.set_ylabel("loss term")
        ax.legend(fontsize="small")
        fig.tight_layout()
        fig.savefig(out, dpi=120)
        plt.close(fig)
    return [s[0] for s in all_series]


def _write_gnuplot(all_series, out: Path) -> None:
    dat = out.with_suffix(".dat")
    blocks = []
    for name, steps, vals in all_series:
        lines = [f"# {name}"] + [f"{s} {v!r}" for s, v in zip(steps, vals)]
        blocks.append("\n".join(lines))
    dat.write_text("\n\n\n".join(blocks) + "\n")
    plots = ", ".join(f"'{dat.name}' index {i} with lines title '{name}'"
                      for i, (name, _, _) in enumerate(all_series))
    out.with_suffix(".gp").write_text(
        f"set terminal pngcairo size 960,540\nset output '{out.name}'\n"
        f"set xlabel 'mini-batch'\nplot {plots}\n")
