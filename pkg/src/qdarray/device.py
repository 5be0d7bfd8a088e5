"""Device geometry, material constants, and electrostatic gate potentials.

Units throughout the package: lengths in nm, gate voltages in mV, energies
in meV and densities in nm^-1.  The elementary charge is 1 in these units,
so a gate voltage of 1 mV shifts the conduction band by 1 meV.  The one
exception is the source-drain bias, quoted in ueV because it is tiny
compared with every other energy in the problem.

A device is a 1-D wire on a uniform grid with a row of cylindrical gates
below it.  Each gate contributes a screened line-charge potential

    V(x) = V0 / ln(h/r0) * ln(sqrt((x-x0)^2 + h^2) / r0) * exp(-|x-x0|/sigma_sc)

which is V0 directly under the gate surface and decays on the screening
length sigma_sc away from it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class Grid:
    """Uniform 1-D spatial grid, endpoints included.

    Parameters
    ----------
    x_min, x_max : float
        Wire extent in nm.
    n_points : int
        Number of grid points, at least 2.
    """

    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        if not self.x_max > self.x_min:
            raise ValidationError(
                f"grid needs x_max > x_min, got [{self.x_min}, {self.x_max}]")
        if self.n_points < 2:
            raise ValidationError(f"grid needs >= 2 points, got {self.n_points}")

    @cached_property
    def x(self) -> np.ndarray:
        """Grid point coordinates (nm)."""
        return np.linspace(self.x_min, self.x_max, self.n_points)

    @property
    def spacing(self) -> float:
        """Distance between neighbouring points (nm)."""
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @cached_property
    def trapezoid_weights(self) -> np.ndarray:
        """Quadrature weights w such that sum(w * f) = trapezoid integral of f."""
        w = np.full(self.n_points, self.spacing)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w


@dataclass(frozen=True)
class GateSpec:
    """One cylindrical gate below the wire.

    Parameters
    ----------
    v0 : float
        Gate voltage (mV).  Negative raises the band, forming a barrier.
    x0 : float
        Gate position along the wire (nm).
    h : float
        Distance from gate axis to the wire (nm); must exceed r0.
    r0 : float
        Gate cylinder radius (nm), positive.
    sigma_sc : float
        Screening length of the electron gas (nm), positive.
    """

    v0: float
    x0: float
    h: float = 50.0
    r0: float = 5.0
    sigma_sc: float = 20.0

    def __post_init__(self):
        if self.r0 <= 0:
            raise ValidationError(f"gate radius must be positive, got r0={self.r0}")
        if self.h <= self.r0:
            raise ValidationError(
                f"gate must sit below the wire: need h > r0, got h={self.h}, r0={self.r0}")
        if self.sigma_sc <= 0:
            raise ValidationError(
                f"screening length must be positive, got {self.sigma_sc}")


@dataclass(frozen=True)
class PhysicalConstants:
    """Material and environment constants.

    Parameters
    ----------
    k0 : float
        Electron-electron interaction strength (meV).
    sigma_soft : float
        Softening length of the interaction kernel (nm).
    g0 : float
        Density of states of the wire (eV^-1 nm^-1).
    c_k : float
        Kinetic-energy coefficient of the charging model (meV nm).
    mu : float
        Chemical potential of the contacts (meV); also the band offset
        far from all gates, so the ungated wire is weakly conducting.
    bias : float
        Source-drain bias (ueV), split symmetrically across the contacts.
    kT : float
        Thermal energy (meV).
    hbar_eff, m_eff : float
        Unit constants of the semiclassical rate model; rates and currents
        are reported in the arbitrary units these define.  Default 1.
    """

    k0: float = 10.0
    sigma_soft: float = 2.0
    g0: float = 0.5
    c_k: float = 1.0
    mu: float = 100.0
    bias: float = 10.0
    kT: float = 0.1
    hbar_eff: float = 1.0
    m_eff: float = 1.0

    def __post_init__(self):
        if self.sigma_soft <= 0:
            raise ValidationError(
                f"kernel softening must be positive, got {self.sigma_soft}")
        if self.g0 <= 0 or self.kT <= 0 or self.mu <= 0:
            raise ValidationError("g0, kT and mu must all be positive")
        if self.hbar_eff <= 0 or self.m_eff <= 0:
            raise ValidationError("hbar_eff and m_eff must be positive")

    @property
    def g0_mev(self) -> float:
        """Density of states in meV^-1 nm^-1."""
        return self.g0 * 1e-3

    @property
    def bias_mev(self) -> float:
        """Source-drain bias in meV."""
        return self.bias * 1e-3


@dataclass(frozen=True)
class DeviceSpec:
    """A gated wire: grid, ordered gate row, and constants."""

    grid: Grid
    gates: tuple[GateSpec, ...]
    constants: PhysicalConstants = PhysicalConstants()

    def __post_init__(self):
        if len(self.gates) == 0:
            raise ValidationError("device needs at least one gate")
        positions = [g.x0 for g in self.gates]
        if any(b <= a for a, b in zip(positions, positions[1:])):
            raise ValidationError(
                f"gates must be ordered left to right, got x0 = {positions}")

    def with_gate_voltages(self, voltages: dict[int, float]) -> "DeviceSpec":
        """Copy of the device with selected gate voltages replaced.

        Parameters
        ----------
        voltages : dict
            Maps gate index to new v0 (mV).
        """
        gates = list(self.gates)
        for idx, v in voltages.items():
            if not 0 <= idx < len(gates):
                raise ValidationError(
                    f"gate index {idx} outside 0..{len(gates) - 1}")
            gates[idx] = replace(gates[idx], v0=float(v))
        return replace(self, gates=tuple(gates))


def gate_potential(gate: GateSpec, grid: Grid) -> np.ndarray:
    """Potential profile of a single gate on the grid (mV)."""
    x = grid.x
    d = x - gate.x0
    prefactor = gate.v0 / np.log(gate.h / gate.r0)
    radial = np.log(np.sqrt(d * d + gate.h * gate.h) / gate.r0)
    return prefactor * radial * np.exp(-np.abs(d) / gate.sigma_sc)


def compose_potential(device: DeviceSpec) -> np.ndarray:
    """Total gate potential, the sum of all gate profiles (mV)."""
    total = np.zeros(device.grid.n_points)
    for gate in device.gates:
        total += gate_potential(gate, device.grid)
    return total


def sweep_potentials(device: DeviceSpec, gate_index: int,
                     values: np.ndarray) -> np.ndarray:
    """Stack of total potentials with one gate voltage swept.

    Exploits linearity of the profile in v0, so the geometry factors are
    evaluated once.  Returns shape (len(values), n_points), in mV.
    """
    values = np.asarray(values, dtype=float)
    if not 0 <= gate_index < len(device.gates):
        raise ValidationError(
            f"gate index {gate_index} outside 0..{len(device.gates) - 1}")
    base = np.zeros(device.grid.n_points)
    for i, gate in enumerate(device.gates):
        if i != gate_index:
            base += gate_potential(gate, device.grid)
    unit = gate_potential(replace(device.gates[gate_index], v0=1.0), device.grid)
    return base[None, :] + values[:, None] * unit[None, :]


def sample_device(mean: DeviceSpec, rel_sigma: float, seed,
                  max_attempts: int = 100) -> DeviceSpec:
    """Draw a random device around a mean geometry.

    Every gate parameter (v0, x0, h, r0) is drawn from a normal
    distribution centred on its mean value with standard deviation
    rel_sigma * |mean value|.  Screening length, constants and the grid
    are left untouched.  Draws violating a geometric invariant (h <= r0,
    unordered gates) are rejected and redrawn.

    Parameters
    ----------
    mean : DeviceSpec
        Centre of the distribution.
    rel_sigma : float
        Relative standard deviation; 0 reproduces the mean exactly.
    seed : int, sequence of int, or numpy.random.Generator
        Source of randomness.
    """
    if rel_sigma < 0:
        raise ValidationError(f"rel_sigma must be >= 0, got {rel_sigma}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    for _ in range(max_attempts):
        gates = []
        for gate in mean.gates:
            drawn = {
                name: float(rng.normal(val, rel_sigma * abs(val)))
                for name, val in (("v0", gate.v0), ("x0", gate.x0),
                                  ("h", gate.h), ("r0", gate.r0))
            }
            gates.append(replace(gate, **drawn))
        try:
            return replace(mean, gates=tuple(gates))
        except ValidationError:
            continue
    raise ValidationError(
        f"could not draw a valid device in {max_attempts} attempts; "
        f"rel_sigma={rel_sigma} is likely too large for this geometry")


def three_gate_device(v_plunger: float = 0.0, v_barrier: float = -200.0,
                      n_points: int = 128) -> DeviceSpec:
    """Barrier-plunger-barrier device forming a single dot.

    Wire spans (-40, 40) nm with gates at -20, 0 and +20 nm, all at
    height 50 nm with radius 5 nm.
    """
    return DeviceSpec(
        grid=Grid(-40.0, 40.0, n_points),
        gates=(
            GateSpec(v0=v_barrier, x0=-20.0),
            GateSpec(v0=v_plunger, x0=0.0),
            GateSpec(v0=v_barrier, x0=20.0),
        ),
    )


def five_gate_device(v_plunger1: float = 0.0, v_plunger2: float = 0.0,
                     v_barrier: float = -200.0, n_points: int = 128) -> DeviceSpec:
    """Five-gate double-dot device: barriers at -40, 0, 40 nm, plungers
    at -20 and +20 nm, on a (-60, 60) nm wire."""
    return DeviceSpec(
        grid=Grid(-60.0, 60.0, n_points),
        gates=(
            GateSpec(v0=v_barrier, x0=-40.0),
            GateSpec(v0=v_plunger1, x0=-20.0),
            GateSpec(v0=v_barrier, x0=0.0),
            GateSpec(v0=v_plunger2, x0=20.0),
            GateSpec(v0=v_barrier, x0=40.0),
        ),
    )


def device_to_dict(device: DeviceSpec) -> dict:
    """JSON-ready dict representation of a device."""
    return {
        "grid": {"x_min": device.grid.x_min, "x_max": device.grid.x_max,
                 "n_points": device.grid.n_points},
        "gates": [
            {"v0": g.v0, "x0": g.x0, "h": g.h, "r0": g.r0, "sigma_sc": g.sigma_sc}
            for g in device.gates
        ],
        "constants": {
            "k0": device.constants.k0, "sigma_soft": device.constants.sigma_soft,
            "g0": device.constants.g0, "c_k": device.constants.c_k,
            "mu": device.constants.mu, "bias": device.constants.bias,
            "kT": device.constants.kT,
        },
    }


def device_from_dict(data: dict) -> DeviceSpec:
    """Inverse of device_to_dict.  Raises ValidationError on missing keys."""
    try:
        grid = Grid(**data["grid"])
        gates = tuple(GateSpec(**g) for g in data["gates"])
        constants = PhysicalConstants(**data["constants"])
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed device dict: {exc}") from exc
    return DeviceSpec(grid=grid, gates=gates, constants=constants)


def save_device(device: DeviceSpec, path) -> None:
    """Write a device to a JSON file."""
    with open(path, "w") as fh:
        json.dump(device_to_dict(device), fh, indent=2)
        fh.write("\n")


def load_device(path) -> DeviceSpec:
    """Read a device from a JSON file written by save_device."""
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON: {exc}") from exc
    return device_from_dict(data)
