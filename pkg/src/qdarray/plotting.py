"""Renders simulation artifacts to image files.

Two families: matplotlib figures (PNG, for eyeballing results) and 8-bit
PGM heatmaps (parseable anywhere without an imaging library).  The Agg
backend is forced at import so everything works headless; every function
writes a file and returns its path.

Figure functions take plain arrays or duck-typed result objects, not
library classes, so they render records from disk just as well as fresh
results.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.colors import BoundaryNorm, ListedColormap

from .errors import ValidationError

STATE_NAMES = ("SC", "Barrier", "SD", "DD")
# fixed 8-bit gray per state label, in label order
STATE_GRAYS = (0, 85, 170, 255)
STATE_COLORS = ("#5c5c5c", "#1d2951", "#c2571a", "#f2c14e")

# currents span many decades; color scales clip this far below the peak
_DECADES = 12.0


def _finish(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def _log_scale(current: np.ndarray) -> np.ndarray:
    a = np.abs(np.asarray(current, dtype=float))
    peak = a.max()
    if peak <= 0.0:
        return np.zeros_like(a)
    return np.log10(np.maximum(a, peak * 10.0 ** (-_DECADES)))


def plot_sweep(v: np.ndarray, current: np.ndarray, charge: np.ndarray,
               path) -> Path:
    """Current (log scale) and electron number against one gate voltage."""
    v, current, charge = map(np.asarray, (v, current, charge))
    if not v.shape == current.shape == charge.shape:
        raise ValidationError(
            f"sweep arrays disagree: {v.shape}, {current.shape}, {charge.shape}")
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.plot(v, _log_scale(current), color=STATE_COLORS[2], lw=1.0)
    ax.set_xlabel("gate voltage (mV)")
    ax.set_ylabel("log10 current (arb.)", color=STATE_COLORS[2])
    twin = ax.twinx()
    twin.step(v, charge, where="mid", color=STATE_COLORS[1], lw=1.0)
    twin.set_ylabel("electron number", color=STATE_COLORS[1])
    return _finish(fig, path)


def plot_current_map(x: np.ndarray, y: np.ndarray, current: np.ndarray,
                     path) -> Path:
    """Heatmap of a 2-D current map on a log color scale."""
    current = np.asarray(current)
    _check_map(x, y, current)
    fig, ax = plt.subplots(figsize=(4.6, 4.0))
    im = ax.imshow(_log_scale(current), origin="lower", aspect="auto",
                   extent=(x[0], x[-1], y[0], y[-1]), cmap="inferno")
    fig.colorbar(im, ax=ax, label="log10 current (arb.)")
    ax.set_xlabel("V_x (mV)")
    ax.set_ylabel("V_y (mV)")
    return _finish(fig, path)


def plot_state_map(x: np.ndarray, y: np.ndarray, state: np.ndarray,
                   path) -> Path:
    """Heatmap of the four-state classification of a 2-D map."""
    state = np.asarray(state)
    _check_map(x, y, state)
    fig, ax = plt.subplots(figsize=(4.6, 4.0))
    im = ax.imshow(state, origin="lower", aspect="auto",
                   extent=(x[0], x[-1], y[0], y[-1]),
                   cmap=ListedColormap(STATE_COLORS),
                   norm=BoundaryNorm(np.arange(-0.5, 4), 4))
    bar = fig.colorbar(im, ax=ax, ticks=range(4))
    bar.ax.set_yticklabels(STATE_NAMES)
    ax.set_xlabel("V_x (mV)")
    ax.set_ylabel("V_y (mV)")
    return _finish(fig, path)


def _check_map(x, y, grid):
    if grid.ndim != 2 or grid.shape != (len(y), len(x)):
        raise ValidationError(
            f"map shaped {grid.shape} does not match axes ({len(y)}, {len(x)})")


def plot_tuning_trace(trace, path) -> Path:
    """State probabilities and fitness over one tuning run.

    `trace` needs `.entries` (each with `.prob` and `.delta`) and
    `.best_index`; the best evaluation is marked.
    """
    probs = np.array([e.prob for e in trace.entries])
    deltas = [e.delta for e in trace.entries]
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(6.0, 4.6), sharex=True)
    for k, name in enumerate(STATE_NAMES):
        top.plot(probs[:, k], label=name, color=STATE_COLORS[k], lw=1.0)
    top.set_ylabel("probability")
    top.legend(ncol=4, fontsize=8, loc="upper center")
    bottom.plot(deltas, color="k", lw=1.0)
    bottom.axvline(trace.best_index, color=STATE_COLORS[2], ls="--", lw=0.8)
    bottom.set_xlabel("evaluation")
    bottom.set_ylabel("distance to target")
    return _finish(fig, path)


def plot_training_curves(metrics, path) -> Path:
    """Train/validation loss per epoch; the snapshot epoch is marked."""
    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    epochs = np.arange(1, len(metrics.train_loss) + 1)
    ax.plot(epochs, metrics.train_loss, label="train", color=STATE_COLORS[1])
    ax.plot(epochs, metrics.val_loss, label="validation", color=STATE_COLORS[2])
    ax.axvline(metrics.best_epoch + 1, color="k", ls="--", lw=0.8)
    if min(metrics.train_loss) > 0 and min(metrics.val_loss) > 0:
        ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    return _finish(fig, path)


# ---------------------------------------------------------------------------
# PGM export

def _write_pgm_bytes(path, comments: list[str], pixels: np.ndarray) -> Path:
    path = Path(path)
    h, w = pixels.shape
    head = "".join(f"# {c}\n" for c in comments)
    # rows run top to bottom, so flip to put increasing y at the bottom
    # like the figures
    body = pixels[::-1].astype(np.uint8).tobytes()
    path.write_bytes(f"P5\n{head}{w} {h}\n255\n".encode("ascii") + body)
    return path


def write_pgm(path, values: np.ndarray) -> Path:
    """8-bit PGM of a real-valued map, linearly normalized.

    The header comment records the min/max mapped onto 0/255.  A constant
    map has no usable range; it renders as uniform gray 128 and the
    comment says so.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValidationError(f"PGM export needs a 2-D array, got {values.shape}")
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        comments = [f"degenerate range: min == max == {lo!r}; uniform gray 128"]
        pixels = np.full(values.shape, 128)
    else:
        comments = [f"linear gray map: min={lo!r} -> 0, max={hi!r} -> 255"]
        pixels = np.rint((values - lo) * (255.0 / (hi - lo)))
    comments.append("rows top to bottom: y axis descending")
    return _write_pgm_bytes(path, comments, pixels)


def write_state_pgm(path, state: np.ndarray) -> Path:
    """8-bit PGM of a state-label map with four fixed gray levels."""
    state = np.asarray(state)
    if state.ndim != 2:
        raise ValidationError(f"PGM export needs a 2-D array, got {state.shape}")
    if not np.isin(state, range(4)).all():
        raise ValidationError("state map holds labels outside 0..3")
    levels = ", ".join(f"{n}={g}" for n, g in zip(STATE_NAMES, STATE_GRAYS))
    comments = [f"state gray levels: {levels}",
                "rows top to bottom: y axis descending"]
    return _write_pgm_bytes(path, comments,
                            np.asarray(STATE_GRAYS)[state.astype(int)])
