"""Self-consistent Thomas-Fermi electron density and charging model.

The wire's band minimum is shifted by the gate potential and by the
electron-electron interaction,

    eps(x) = eps0 - e V(x) + integral K(x, x') n(x') dx',

with a softened Coulomb kernel K(x, x') = k0 / sqrt((x-x')^2 + sigma_soft^2).
The band offset eps0 equals the contact chemical potential mu, so the
ungated wire carries a thin electron gas.  For a 2-D density of states the
occupation integral has a closed form,

    n(x) = g0 kT ln(1 + exp((mu - eps(x)) / kT)),

and the pair (eps, n) is iterated to self-consistency with damped mixing.
The converged density is then segmented into islands; islands detached
from both wire ends are quantum dots, and a constant-interaction charging
model on those dots gives configuration energies and the equilibrium
charge state.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .device import DeviceSpec, Grid, PhysicalConstants, compose_potential
from .errors import ConvergenceError, StateError, ValidationError


def coulomb_kernel(grid: Grid, constants: PhysicalConstants) -> np.ndarray:
    """Softened interaction matrix K[i, j] = k0 / sqrt(dx_ij^2 + sigma^2), in meV."""
    x = grid.x
    d = x[:, None] - x[None, :]
    return constants.k0 / np.sqrt(d * d + constants.sigma_soft**2)


def band_minimum(v: np.ndarray, density: np.ndarray, constants: PhysicalConstants,
                 grid: Grid, kernel: np.ndarray | None = None) -> np.ndarray:
    """Effective band minimum eps0 - e V + integral K n, in meV.

    Both `v` (mV) and `density` (nm^-1) may carry leading batch axes.
    """
    if kernel is None:
        kernel = coulomb_kernel(grid, constants)
    kw = kernel * grid.trapezoid_weights[None, :]
    return constants.mu - np.asarray(v) + np.asarray(density) @ kw.T


def density_from_band(eps: np.ndarray, constants: PhysicalConstants) -> np.ndarray:
    """Closed-form 2-D electron gas density for a band minimum eps (meV).

    Uses log(1 + e^z) = logaddexp(0, z), which is exact in both the deeply
    pinched-off (z << 0) and the degenerate (z >> 0) limits.
    """
    z = (constants.mu - np.asarray(eps)) / constants.kT
    return constants.g0_mev * constants.kT * np.logaddexp(0.0, z)


@dataclass(frozen=True)
class SolverOptions:
    """Knobs of the self-consistency iteration.

    The interaction is ramped linearly from zero over the first
    `ramp_iterations` sweeps; convergence is only tested once the ramp is
    complete.  The residual is the infinity norm of the fixed-point defect
    |f(n) - n|, so at convergence one further iteration moves the density
    by at most mixing * tol.
    """

    mixing: float = 0.3
    tol: float = 1e-6
    max_iterations: int = 1000
    ramp_iterations: int = 50

    def __post_init__(self):
        if not 0.0 < self.mixing <= 1.0:
            raise ValidationError(f"mixing must be in (0, 1], got {self.mixing}")
        if self.tol <= 0:
            raise ValidationError(f"tol must be positive, got {self.tol}")
        if self.ramp_iterations < 0:
            raise ValidationError("ramp_iterations must be >= 0")
        if self.max_iterations <= self.ramp_iterations:
            raise ValidationError(
                f"max_iterations ({self.max_iterations}) must exceed "
                f"ramp_iterations ({self.ramp_iterations})")


def solve_density(v: np.ndarray, constants: PhysicalConstants, grid: Grid,
                  options: SolverOptions | None = None) -> np.ndarray:
    """Self-consistent density for one potential profile or a batch of them.

    Parameters
    ----------
    v : ndarray, shape (n_points,) or (batch, n_points)
        Gate potential in mV.
    options : SolverOptions, optional

    Returns
    -------
    ndarray
        Density in nm^-1, same shape as `v`.

    Raises
    ------
    ConvergenceError
        If any row fails to converge within max_iterations; carries the
        worst remaining residual.

    Notes
    -----
    Rows of a batch are iterated together but frozen individually the
    moment they converge, so batch and row-by-row solves agree to
    floating-point accuracy.
    """
    opts = options or SolverOptions()
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    v2 = np.atleast_2d(v)
    if v2.shape[-1] != grid.n_points:
        raise ValidationError(
            f"potential has {v2.shape[-1]} points, grid has {grid.n_points}")

    kw = coulomb_kernel(grid, constants) * grid.trapezoid_weights[None, :]
    base = constants.mu - v2
    g0kt = constants.g0_mev * constants.kT
    inv_kt = 1.0 / constants.kT

    out = np.empty_like(base)
    act = np.arange(base.shape[0])
    n_act = np.zeros_like(base)
    base_act = base
    worst = np.inf
    for it in range(1, opts.max_iterations + 1):
        if opts.ramp_iterations > 0:
            scale = min(1.0, it / opts.ramp_iterations)
        else:
            scale = 1.0
        eps = base_act + scale * (n_act @ kw.T)
        f = g0kt * np.logaddexp(0.0, (constants.mu - eps) * inv_kt)
        res = np.max(np.abs(f - n_act), axis=1)
        n_act = n_act + opts.mixing * (f - n_act)
        if it > opts.ramp_iterations:
            done = res <= opts.tol
            if done.any():
                out[act[done]] = n_act[done]
                keep = ~done
                act, n_act, base_act = act[keep], n_act[keep], base_act[keep]
                if act.size == 0:
                    break
            worst = float(res.max()) if res.size else 0.0
    if act.size:
        raise ConvergenceError(
            f"{act.size} of {base.shape[0]} profiles not converged after "
            f"{opts.max_iterations} iterations (residual {worst:.3e} > tol {opts.tol:.1e})",
            residual=worst, iterations=opts.max_iterations)
    return out[0] if single else out


def solve_device(device: DeviceSpec,
                 options: SolverOptions | None = None) -> np.ndarray:
    """Density of a device at its stored gate voltages."""
    return solve_density(compose_potential(device), device.constants,
                         device.grid, options)


def default_island_threshold(constants: PhysicalConstants) -> float:
    """Density below which a grid point counts as depleted (nm^-1).

    Set four orders of magnitude under the thermal scale g0*kT, far below
    the ambient density of the ungated wire, g0*kT*ln 2.
    """
    return 1e-4 * constants.g0_mev * constants.kT


@dataclass(frozen=True)
class IslandSegmentation:
    """Contiguous runs of density above a threshold.

    Attributes
    ----------
    spans : tuple of (start, stop)
        Half-open index ranges of the islands, left to right.
    touches_left, touches_right : tuple of bool
        Whether each island reaches the first / last grid point.  Islands
        touching either end are contact reservoirs, not dots.
    threshold : float
        Density cut used for the segmentation (nm^-1).
    """

    spans: tuple[tuple[int, int], ...]
    touches_left: tuple[bool, ...]
    touches_right: tuple[bool, ...]
    threshold: float

    @property
    def interior(self) -> tuple[tuple[int, int], ...]:
        """Spans of islands detached from both wire ends (the dots)."""
        return tuple(s for s, tl, tr in
                     zip(self.spans, self.touches_left, self.touches_right)
                     if not (tl or tr))


def segment_islands(density: np.ndarray, threshold: float,
                    n_points: int | None = None) -> IslandSegmentation:
    """Split a density profile into islands of n > threshold."""
    density = np.asarray(density)
    if density.ndim != 1:
        raise ValidationError("segment_islands expects a single 1-D profile")
    if threshold <= 0:
        raise ValidationError(f"threshold must be positive, got {threshold}")
    n = density.size if n_points is None else n_points
    mask = np.concatenate(([False], density > threshold, [False]))
    edges = np.flatnonzero(np.diff(mask.astype(np.int8)))
    starts, stops = edges[0::2], edges[1::2]
    return IslandSegmentation(
        spans=tuple((int(a), int(b)) for a, b in zip(starts, stops)),
        touches_left=tuple(bool(a == 0) for a in starts),
        touches_right=tuple(bool(b == n) for b in stops),
        threshold=threshold,
    )


def filter_small_islands(seg: IslandSegmentation, density: np.ndarray,
                         grid: Grid, min_charge: float = 1e-5) -> IslandSegmentation:
    """Drop interior islands whose integrated charge is below min_charge.

    Sub-resolution slivers appear when the density grazes the threshold
    over a point or two; they hold no electron and would otherwise make
    the charging model singular.  Contact-touching islands are never
    dropped, however thin: they mark where the reservoirs end.
    """
    keep = []
    for i, (a, b) in enumerate(seg.spans):
        if seg.touches_left[i] or seg.touches_right[i]:
            keep.append(i)
            continue
        q = np.trapezoid(density[a:b], dx=grid.spacing)
        if q >= min_charge:
            keep.append(i)
    return IslandSegmentation(
        spans=tuple(seg.spans[i] for i in keep),
        touches_left=tuple(seg.touches_left[i] for i in keep),
        touches_right=tuple(seg.touches_right[i] for i in keep),
        threshold=seg.threshold,
    )


class StateLabel(IntEnum):
    """Device state taxonomy; integer values are the dataset label order."""

    SC = 0        # short circuit: one island spans the whole wire
    BARRIER = 1   # no dot between the contacts
    SD = 2        # single dot
    DD = 3        # double dot


def classify_state(seg: IslandSegmentation) -> StateLabel:
    """Map a segmentation onto the four transport states.

    Raises
    ------
    StateError
        For three or more interior islands, which the taxonomy does not
        cover.
    """
    for tl, tr in zip(seg.touches_left, seg.touches_right):
        if tl and tr:
            return StateLabel.SC
    k = len(seg.interior)
    if k == 0:
        return StateLabel.BARRIER
    if k == 1:
        return StateLabel.SD
    if k == 2:
        return StateLabel.DD
    raise StateError(f"found {k} dots; the state taxonomy stops at 2")


@dataclass(eq=False)
class CapacitanceModel:
    """Constant-interaction model over the interior islands.

    The energy of an integer occupation vector q is

        E(q) = sum_ij e_matrix[i, j] (q - z)_i (q - z)_j

    with z the continuous equilibrium charges integrated from the density.

    Attributes
    ----------
    e_matrix : ndarray, shape (k, k)
        Symmetric positive semi-definite energy matrix (meV).
    z : ndarray, shape (k,)
        Integrated island charges (electrons).
    spans : tuple of (start, stop)
        Grid index range of each island, left to right.
    """

    e_matrix: np.ndarray
    z: np.ndarray
    spans: tuple[tuple[int, int], ...]

    @property
    def n_islands(self) -> int:
        return self.z.size


def capacitance_model(density: np.ndarray, seg: IslandSegmentation,
                      constants: PhysicalConstants, grid: Grid) -> CapacitanceModel:
    """Build the charging model from a converged density.

    Diagonal terms carry a kinetic contribution c_k * integral n^2 / q^2
    on top of the Coulomb energy; off-diagonal terms are the density-
    weighted average of the interaction kernel between island pairs.

    Raises
    ------
    ValidationError
        If an interior island has no integrated charge (a single-point
        sliver); filter those out first.
    """
    spans = seg.interior
    k = len(spans)
    if k == 0:
        return CapacitanceModel(e_matrix=np.zeros((0, 0)), z=np.zeros(0), spans=())
    kernel = coulomb_kernel(grid, constants)
    dx = grid.spacing

    charges = np.empty(k)
    weighted = []      # trapezoid-weighted density per island
    for i, (a, b) in enumerate(spans):
        seg_n = density[a:b]
        charges[i] = np.trapezoid(seg_n, dx=dx)
        if charges[i] <= 0:
            raise ValidationError(
                f"island {i} (points {a}:{b}) has zero integrated charge")
        w = np.full(b - a, dx)
        w[0] *= 0.5
        w[-1] *= 0.5
        weighted.append(w * seg_n)

    e = np.empty((k, k))
    for i, (a_i, b_i) in enumerate(spans):
        for j in range(i, k):
            a_j, b_j = spans[j]
            coul = weighted[i] @ kernel[a_i:b_i, a_j:b_j] @ weighted[j]
            if i == j:
                coul += constants.c_k * np.trapezoid(density[a_i:b_i] ** 2, dx=dx)
            e[i, j] = e[j, i] = coul / (charges[i] * charges[j])
    return CapacitanceModel(e_matrix=e, z=charges, spans=spans)


def config_energy(model: CapacitanceModel, occupation: np.ndarray) -> np.ndarray:
    """Energy (meV) of integer occupation vectors; accepts a (batch, k) stack."""
    q = np.asarray(occupation, dtype=float)
    if q.shape[-1] != model.n_islands:
        raise ValidationError(
            f"occupation has {q.shape[-1]} entries for {model.n_islands} islands")
    d = q - model.z
    return np.einsum("...i,ij,...j->...", d, model.e_matrix, d)


def equilibrium_charge(model: CapacitanceModel, radius: int = 2) -> np.ndarray:
    """Integer occupation minimising the configuration energy.

    Searches the box [floor(z_i) - radius, ceil(z_i) + radius] clipped at
    zero, which always brackets the quadratic minimum.  Exact energy ties
    go to the lexicographically smallest occupation.
    """
    if radius < 1:
        raise ValidationError(f"radius must be >= 1, got {radius}")
    k = model.n_islands
    if k == 0:
        return np.zeros(0, dtype=int)
    axes = [np.arange(max(0, int(np.floor(z)) - radius),
                      int(np.ceil(z)) + radius + 1)
            for z in model.z]
    mesh = np.meshgrid(*axes, indexing="ij")
    configs = np.stack([m.ravel() for m in mesh], axis=-1)
    energies = config_energy(model, configs)
    return configs[int(np.argmin(energies))].copy()
