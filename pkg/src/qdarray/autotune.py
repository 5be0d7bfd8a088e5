"""Gate-voltage auto-tuning: drive a voltage window toward a target state.

The tuner never sees device internals.  Each step asks a map provider for
the 30x30 current map of the present window, runs the state CNN on it,
and scores the predicted probability vector against the target with an
L2 distance.  A compass (pattern) search moves the window center: poll
+/- one step along every controlled axis, move to the best improving
neighbour, halve the step when nothing improves.  The CNN output is
piecewise-constant in window position, so a gradient-free method with
plateau tolerance is the right shape of optimizer.

Providers: a simulator-backed one (windows computed on demand, cached)
and a stack-backed one that crops precomputed maps, choosing the nearest
slice along a third control axis.  Repeated centers are served from a
memo and do not consume evaluation budget.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .errors import ValidationError
from .neuralnet import Weights, predict_probability_vector
from .transport import SimulateOptions, simulate_map


@dataclass(frozen=True)
class VoltageWindow:
    """A square sub-region of gate-voltage space, plus extra control axes.

    `center` holds the controlled gate voltages (mV): two in-map axes and
    optionally one stacked axis.  `span` is the window edge length along
    the two in-map axes; the third axis is a point, not a range.
    """

    center: tuple[float, ...]
    span: tuple[float, float] = (40.0, 40.0)
    resolution: int = 30

    def __post_init__(self):
        center = tuple(float(c) for c in self.center)
        object.__setattr__(self, "center", center)
        span = self.span
        if np.isscalar(span):
            span = (float(span), float(span))
        object.__setattr__(self, "span", tuple(float(s) for s in span))
        if len(center) not in (2, 3):
            raise ValidationError(f"window needs 2 or 3 axes, got {len(center)}")
        if len(self.span) != 2 or any(s <= 0 for s in self.span):
            raise ValidationError(f"window span must be two positive extents, "
                                  f"got {self.span}")
        if self.resolution < 2:
            raise ValidationError(f"resolution must be >= 2, got {self.resolution}")


class MapProvider(Protocol):
    """Anything that can produce a current map for a voltage window."""

    @property
    def bounds(self) -> tuple[tuple[float, float], ...]: ...

    def current_map(self, window: VoltageWindow) -> np.ndarray: ...


def fitness(p: np.ndarray, p0: np.ndarray,
            norm: Callable[[np.ndarray], float] | None = None) -> float:
    """Distance between two state probability vectors (default Euclidean)."""
    p, p0 = np.asarray(p, dtype=float), np.asarray(p0, dtype=float)
    for name, v in (("p", p), ("p0", p0)):
        if v.shape != (4,) or np.any(v < -1e-9) or abs(v.sum() - 1.0) > 1e-6:
            raise ValidationError(f"{name} is not on the 4-simplex: {v}")
    if norm is None:
        return float(np.linalg.norm(p - p0))
    return float(norm(p - p0))


@dataclass(frozen=True)
class TraceEntry:
    window: VoltageWindow
    prob: np.ndarray
    delta: float
    clamped: bool = False


@dataclass(frozen=True)
class FitnessTrace:
    """Every CNN evaluation of one tuning run, in order."""

    entries: tuple[TraceEntry, ...]
    status: str                # 'converged' | 'stagnated' | 'budget' | 'step-limit'

    @property
    def evaluations(self) -> int:
        return len(self.entries)

    @property
    def best_index(self) -> int:
        return int(np.argmin([e.delta for e in self.entries]))

    @property
    def best(self) -> TraceEntry:
        return self.entries[self.best_index]


@dataclass(frozen=True)
class TuneOptions:
    delta_stop: float = 0.35
    stagnation: int = 10       # evaluations without a new best
    shrink: float = 0.5
    step_stop_fraction: float = 0.05
    initial_step: tuple[float, ...] | None = None   # default: one window span

    def __post_init__(self):
        if self.delta_stop < 0 or self.stagnation < 1:
            raise ValidationError("delta_stop must be >= 0, stagnation >= 1")
        if not 0 < self.shrink < 1 or not 0 < self.step_stop_fraction < 1:
            raise ValidationError("shrink and step_stop_fraction must be in (0,1)")


class _Stop(Exception):
    def __init__(self, status):
        self.status = status


class _Search:
    """Evaluation bookkeeping: memo, trace, and the three stop conditions."""

    def __init__(self, provider, cnn, p0, budget, options, norm):
        self.provider = provider
        self.cnn = cnn
        self.p0 = p0
        self.budget = budget
        self.options = options
        self.norm = norm
        self.entries = []
        self.seen = {}
        self.best_delta = np.inf
        self.stale = 0

    @staticmethod
    def key(center):
        return tuple(round(c, 9) for c in center)

    def evaluate(self, window: VoltageWindow, clamped: bool) -> float:
        key = self.key(window.center)
        if key in self.seen:
            return self.seen[key]
        if len(self.entries) >= self.budget:
            raise _Stop("budget")
        current = self.provider.current_map(window)
        p = predict_probability_vector(self.cnn, current)
        delta = fitness(p, self.p0, self.norm)
        self.entries.append(TraceEntry(window=window, prob=p, delta=delta,
                                       clamped=clamped))
        self.seen[key] = delta
        if delta < self.best_delta:
            self.best_delta = delta
            self.stale = 0
        else:
            self.stale += 1
        if delta <= self.options.delta_stop:
            raise _Stop("converged")
        if self.stale >= self.options.stagnation:
            raise _Stop("stagnated")
        return delta


def _clamp_center(center, span, bounds):
    """Keep the whole window inside the provider bounds."""
    out = []
    clamped = False
    for i, c in enumerate(center):
        lo, hi = bounds[i]
        margin = span[i] / 2.0 if i < 2 else 0.0
        if hi - lo < 2 * margin:
            raise ValidationError(f"axis {i}: window span {span[i]} exceeds "
                                  f"provider range [{lo}, {hi}]")
        c2 = min(max(c, lo + margin), hi - margin)
        clamped = clamped or (c2 != c)
        out.append(c2)
    return tuple(out), clamped


def tune(provider: MapProvider, cnn: Weights, start: VoltageWindow,
         p0, budget: int, options: TuneOptions | None = None,
         norm: Callable[[np.ndarray], float] | None = None) -> FitnessTrace:
    """Compass-search the window center until the CNN sees the target state.

    Returns the full evaluation trace; `trace.best` is the tuned window.
    Out-of-bounds proposals are clamped and their entries flagged.

    Raises
    ------
    ValidationError
        Budget < 1, start window outside the provider bounds, or a
        dimension mismatch between window and provider.
    """
    options = options or TuneOptions()
    if budget < 1:
        raise ValidationError(f"budget must be >= 1, got {budget}")
    bounds = tuple(provider.bounds)
    dim = len(start.center)
    if dim != len(bounds):
        raise ValidationError(f"window has {dim} axes, provider has {len(bounds)}")
    clamped_start, was_clamped = _clamp_center(start.center, start.span, bounds)
    if was_clamped:
        raise ValidationError(f"start window {start.center} is outside the "
                              f"provider bounds {bounds}")
    steps = options.initial_step or (start.span[0],) * dim
    if len(steps) != dim or any(s <= 0 for s in steps):
        raise ValidationError(f"need {dim} positive initial steps, got {steps}")

    search = _Search(provider, cnn, np.asarray(p0, dtype=float), budget,
                     options, norm)
    status = "step-limit"
    try:
        center = start.center
        current_delta = search.evaluate(start, False)
        scale = 1.0
        while scale >= options.step_stop_fraction:
            best_prop, best_delta = None, np.inf
            for axis in range(dim):
                for sign in (1.0, -1.0):
                    prop = list(center)
                    prop[axis] += sign * steps[axis] * scale
                    prop, was_clamped = _clamp_center(prop, start.span, bounds)
                    delta = search.evaluate(replace(start, center=prop),
                                            was_clamped)
                    if delta < best_delta:
                        best_prop, best_delta = prop, delta
            if best_delta < current_delta:
                center, current_delta = best_prop, best_delta
            else:
                scale *= options.shrink
    except _Stop as stop:
        status = stop.status
    return FitnessTrace(entries=tuple(search.entries), status=status)


def export_trace_csv(trace: FitnessTrace, path) -> None:
    """One row per evaluation: center, probabilities, distance, clamp flag."""
    dim = len(trace.entries[0].window.center) if trace.entries else 2
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration"] + [f"center_{i}" for i in range(dim)]
                        + ["p_sc", "p_barrier", "p_sd", "p_dd", "delta",
                           "clamped"])
        for i, e in enumerate(trace.entries):
            writer.writerow([i] + [f"{c:.9g}" for c in e.window.center]
                            + [f"{p:.9g}" for p in e.prob]
                            + [f"{e.delta:.9g}", int(e.clamped)])


# ---------------------------------------------------------------------------
# providers

class SimulatorProvider:
    """Windows computed on demand from the transport pipeline, memoized."""

    def __init__(self, device, gate_x: int = 1, gate_y: int = 3,
                 bounds=((0.0, 400.0), (0.0, 400.0)),
                 options: SimulateOptions | None = None, threads: int = 1):
        self.device = device
        self.gate_x = gate_x
        self.gate_y = gate_y
        self._bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        self.options = options
        self.threads = threads
        self._cache = {}

    @property
    def bounds(self):
        return self._bounds

    def current_map(self, window: VoltageWindow) -> np.ndarray:
        if len(window.center) != 2:
            raise ValidationError("simulator provider controls exactly 2 axes")
        key = (_Search.key(window.center), window.span, window.resolution)
        if key not in self._cache:
            cx, cy = window.center
            xs = np.linspace(cx - window.span[0] / 2, cx + window.span[0] / 2,
                             window.resolution)
            ys = np.linspace(cy - window.span[1] / 2, cy + window.span[1] / 2,
                             window.resolution)
            result = simulate_map(self.device, self.gate_x, self.gate_y,
                                  xs, ys, self.options, threads=self.threads)
            self._cache[key] = result.current
        return self._cache[key]


class StackProvider:
    """Windows cropped from a precomputed map stack.

    The third window axis picks the nearest stack slice (ties to the lower
    value); the in-map axes are sampled bilinearly at the window
    resolution.  Queries beyond the stored extent are refused rather than
    extrapolated.
    """

    def __init__(self, stack):
        self.stack = stack
        self._bounds = (
            (float(stack.x_values[0]), float(stack.x_values[-1])),
            (float(stack.y_values[0]), float(stack.y_values[-1])),
            (float(stack.z_values[0]), float(stack.z_values[-1])),
        )

    @property
    def bounds(self):
        return self._bounds

    def _slice_index(self, z: float) -> int:
        # argmin takes the first (lower-z) slice on exact ties
        return int(np.argmin(np.abs(self.stack.z_values - z)))

    def current_map(self, window: VoltageWindow) -> np.ndarray:
        if len(window.center) != 3:
            raise ValidationError("stack provider needs a 3-axis window")
        cx, cy, cz = window.center
        res = window.resolution
        xs = np.linspace(cx - window.span[0] / 2, cx + window.span[0] / 2, res)
        ys = np.linspace(cy - window.span[1] / 2, cy + window.span[1] / 2, res)
        xv, yv = self.stack.x_values, self.stack.y_values
        tol = 1e-9
        if xs[0] < xv[0] - tol or xs[-1] > xv[-1] + tol or \
                ys[0] < yv[0] - tol or ys[-1] > yv[-1] + tol:
            raise ValidationError(
                f"window {window.center} span {window.span} leaves the stack "
                f"extent x[{xv[0]}, {xv[-1]}] y[{yv[0]}, {yv[-1]}]")
        grid = self.stack.maps[self._slice_index(cz)].astype(np.float64)
        # separable bilinear resample via fractional indices
        fx = np.interp(xs, xv, np.arange(len(xv)))
        fy = np.interp(ys, yv, np.arange(len(yv)))
        i0 = np.clip(np.floor(fx).astype(int), 0, len(xv) - 2)
        j0 = np.clip(np.floor(fy).astype(int), 0, len(yv) - 2)
        wx = fx - i0
        wy = fy - j0
        rows = grid[:, i0] * (1.0 - wx) + grid[:, i0 + 1] * wx
        return rows[j0] * (1.0 - wy)[:, None] + rows[j0 + 1] * wy[:, None]
