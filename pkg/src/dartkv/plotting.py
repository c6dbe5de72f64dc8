"""Figure rendering for experiment outputs.

Each experiment's report path can render a PNG next to its CSV. Figures are
presentation artifacts only; every number they draw is in the CSV.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import analytic

_BAND_COLORS = {1: "#f2d7d5", 2: "#d5e8d4", 3: "#d4e1f5", 4: "#fdebd0",
                5: "#e8daef", 6: "#d1f2eb"}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_sweep(rows: list[dict], path) -> None:
    """Age-averaged success vs load, one line per copy count, with the
    analytically optimal copy count shaded in the background."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    copies_seen = sorted({r["copies"] for r in rows})
    loads = sorted({r["load"] for r in rows})

    # background bands: analytic argmax between consecutive grid loads
    edges = np.geomspace(min(loads) * 0.9, max(loads) * 1.1, 120)
    for left, right in zip(edges[:-1], edges[1:]):
        best = analytic.optimal_copies(0.5 * (left + right), copies_seen)
        ax.axvspan(left, right, color=_BAND_COLORS.get(best, "#eeeeee"),
                   lw=0, zorder=0)

    for copies in copies_seen:
        sub = sorted((r for r in rows if r["copies"] == copies),
                     key=lambda r: r["load"])
        xs = [r["load"] for r in sub]
        ax.plot(xs, [r["measured"] for r in sub], "o-", ms=4,
                label=f"{copies} copies", zorder=3)
        ax.plot(xs, [r["analytic"] for r in sub], "k--", lw=0.8, zorder=2)
    ax.set_xscale("log")
    ax.set_xlabel("load (keys written / slots)")
    ax.set_ylabel("mean query success")
    ax.set_title("Success vs load; shading = analytically optimal copy count")
    ax.legend(loc="lower left", fontsize=8)
    _save(fig, path)


def plot_aging(rows: list[dict], path) -> None:
    """Success vs insertion-age percentile, one line per configuration."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    combos = sorted({(r["load"], r["copies"]) for r in rows})
    for load, copies in combos:
        sub = sorted((r for r in rows
                      if r["load"] == load and r["copies"] == copies),
                     key=lambda r: r["bucket"])
        xs = [100 * 0.5 * (r["age_lo"] + r["age_hi"]) for r in sub]
        ax.plot(xs, [r["measured"] for r in sub], "-",
                label=f"load {load:g}, {copies} copies")
        ax.plot(xs, [r["analytic"] for r in sub], "k--", lw=0.7)
    ax.set_xlabel("age percentile (0 = oldest report)")
    ax.set_ylabel("query success")
    ax.set_ylim(0, 1.02)
    ax.set_title("Data aging (dashed = analytic)")
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_correctness(rows: list[dict], path) -> None:
    """Wrong-answer rate vs checksum width with the analytic bound band."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    oldest = sorted((r for r in rows if r["scope"] == "oldest"),
                    key=lambda r: r["checksum_bits"])
    xs = [r["checksum_bits"] for r in oldest]
    floor = 1e-12
    ax.fill_between(xs, [max(r["bound_lo"], floor) for r in oldest],
                    [max(r["bound_hi"], floor) for r in oldest],
                    alpha=0.3, label="analytic bounds", color="#74a3c7")
    ax.plot(xs, [max(r["error_rate"], floor) for r in oldest], "o-",
            color="#b03a2e", label="measured (oldest keys)")
    allrows = sorted((r for r in rows if r["scope"] == "all"),
                     key=lambda r: r["checksum_bits"])
    ax.plot([r["checksum_bits"] for r in allrows],
            [max(r["error_rate"], floor) for r in allrows], "s--",
            color="#7d6608", label="measured (all ages)")
    ax.set_yscale("log")
    ax.set_xlabel("checksum bits")
    ax.set_ylabel("wrong-answer probability")
    ax.set_title("Return errors vs checksum width")
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_e2e(rows: list[dict], path) -> None:
    """Live vs offline success for each end-to-end run."""
    fig, ax = plt.subplots(figsize=(5.6, 3.6))
    labels = [f"drop={r['drop_rate']:g}\nreports/key={r['copies_per_report']}"
              for r in rows]
    x = np.arange(len(rows))
    ax.bar(x - 0.22, [r["measured_live"] for r in rows], width=0.2,
           label="live (UDP+TCP)")
    ax.bar(x, [r["measured_offline"] for r in rows], width=0.2,
           label="offline twin")
    ax.bar(x + 0.22, [r["analytic"] for r in rows], width=0.2,
           label="fill-model analytic")
    ax.set_xticks(x, labels, fontsize=8)
    ax.set_ylabel("query success")
    ax.set_ylim(0, 1.05)
    ax.set_title("End-to-end wire path")
    ax.legend(fontsize=8)
    _save(fig, path)


PLOTTER_FOR_KIND = {
    "sweep": plot_sweep,
    "aging": plot_aging,
    "correctness": plot_correctness,
    "e2e": plot_e2e,
}
