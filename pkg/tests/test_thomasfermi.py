"""Tests for the self-consistent density solver and charging model.

Oracles are independent of the implementation: closed-form integrals of
the softened kernel, direct quadrature of the occupation integral, and
brute-force enumeration for equilibrium charges.
"""

import numpy as np
import pytest

from qdarray.device import (
    DeviceSpec,
    GateSpec,
    Grid,
    PhysicalConstants,
    compose_potential,
    sample_device,
    three_gate_device,
)
from qdarray.errors import ConvergenceError, StateError, ValidationError
from qdarray.thomasfermi import (
    CapacitanceModel,
    IslandSegmentation,
    SolverOptions,
    StateLabel,
    band_minimum,
    capacitance_model,
    classify_state,
    config_energy,
    coulomb_kernel,
    default_island_threshold,
    density_from_band,
    equilibrium_charge,
    filter_small_islands,
    segment_islands,
    solve_density,
    solve_device,
)

CONST = PhysicalConstants()


# ---------------------------------------------------------------------------
# band minimum and occupation closed form

def test_kernel_matches_definition():
    grid = Grid(-10.0, 10.0, 11)
    k = coulomb_kernel(grid, CONST)
    assert k.shape == (11, 11)
    # peak on the diagonal: K0 / sigma
    assert np.allclose(np.diag(k), CONST.k0 / CONST.sigma_soft)
    i, j = 2, 7
    d = grid.x[i] - grid.x[j]
    assert k[i, j] == pytest.approx(CONST.k0 / np.hypot(d, CONST.sigma_soft), rel=1e-14)
    assert np.array_equal(k, k.T)


def test_band_minimum_constant_density_closed_form():
    # for n(x) = n0 the interaction integral is exact:
    #   integral K dx' = K0 [asinh((b-x)/s) + asinh((x-a)/s)]
    grid = Grid(-40.0, 40.0, 2001)
    n0 = 0.05
    density = np.full(grid.n_points, n0)
    v = np.zeros(grid.n_points)
    eps = band_minimum(v, density, CONST, grid)
    s = CONST.sigma_soft
    exact = CONST.mu + n0 * CONST.k0 * (
        np.arcsinh((grid.x_max - grid.x) / s) + np.arcsinh((grid.x - grid.x_min) / s))
    assert np.allclose(eps, exact, rtol=2e-5)


def test_band_minimum_batch_and_potential_sign():
    grid = Grid(-40.0, 40.0, 64)
    zero = np.zeros(grid.n_points)
    v = np.linspace(-5.0, 5.0, grid.n_points)
    # no density: eps = mu - V
    assert np.allclose(band_minimum(v, zero, CONST, grid), CONST.mu - v)
    batch_v = np.stack([v, 2 * v])
    batch_n = np.stack([zero, zero])
    eps = band_minimum(batch_v, batch_n, CONST, grid)
    assert eps.shape == (2, grid.n_points)
    assert np.allclose(eps[1], CONST.mu - 2 * v)


def test_density_closed_form_matches_quadrature():
    # n = integral_eps' g0 / (1 + exp((e - mu)/kT)) de, evaluated numerically
    for eps_p in (CONST.mu - 3.0, CONST.mu - 0.05, CONST.mu + 0.25):
        e = np.linspace(eps_p, CONST.mu + 60 * CONST.kT, 400001)
        integrand = CONST.g0_mev / (1.0 + np.exp((e - CONST.mu) / CONST.kT))
        oracle = np.trapezoid(integrand, e)
        assert density_from_band(eps_p, CONST) == pytest.approx(oracle, rel=1e-7)


def test_density_limits():
    g0kt = CONST.g0_mev * CONST.kT
    # at the chemical potential: g0 kT ln 2
    assert density_from_band(CONST.mu, CONST) == pytest.approx(g0kt * np.log(2.0), rel=1e-14)
    # 2 meV above mu at kT = 0.1: suppressed by e^-20
    assert density_from_band(CONST.mu + 2.0, CONST) == pytest.approx(
        g0kt * np.exp(-20.0), rel=1e-8)
    # deep barrier underflows cleanly to zero instead of warning
    assert density_from_band(CONST.mu + 1e5, CONST) == 0.0
    # degenerate limit: n -> g0 (mu - eps)
    assert density_from_band(CONST.mu - 50.0, CONST) == pytest.approx(
        CONST.g0_mev * 50.0, rel=1e-12)


# ---------------------------------------------------------------------------
# self-consistency

def test_solver_non_interacting_closed_form():
    # K0 = 0 decouples the fixed point; the solution is the bare occupation
    const = PhysicalConstants(k0=0.0)
    dev = three_gate_device(v_plunger=300.0)
    v = compose_potential(dev)
    n = solve_density(v, const, dev.grid)
    direct = density_from_band(const.mu - v, const)
    assert np.allclose(n, direct, atol=1e-6)


def test_solver_one_more_iteration_is_a_fixed_point():
    dev = three_gate_device(v_plunger=300.0)
    opts = SolverOptions()
    n = solve_device(dev, opts)
    eps = band_minimum(compose_potential(dev), n, dev.constants, dev.grid)
    f = density_from_band(eps, dev.constants)
    assert np.max(np.abs(f - n)) <= opts.tol


def test_solver_batch_matches_single_rows():
    dev = three_gate_device()
    base = compose_potential(dev)
    bumps = np.linspace(0.0, 320.0, 7)
    stack = base[None, :] + bumps[:, None] * np.exp(-dev.grid.x**2 / 50.0)[None, :]
    batch = solve_density(stack, dev.constants, dev.grid)
    for row, v in zip(batch, stack):
        single = solve_density(v, dev.constants, dev.grid)
        assert np.allclose(row, single, atol=1e-12)


def test_solver_monotone_in_potential_without_interaction():
    const = PhysicalConstants(k0=0.0)
    dev = three_gate_device(v_plunger=120.0)
    v = compose_potential(dev)
    lifted = v + np.exp(-dev.grid.x**2 / 800.0)  # positive bump
    n = solve_density(v, const, dev.grid)
    m = solve_density(lifted, const, dev.grid)
    assert np.all(m >= n)


def test_solver_reports_nonconvergence():
    dev = three_gate_device(v_plunger=300.0)
    opts = SolverOptions(tol=1e-12, max_iterations=3, ramp_iterations=1)
    with pytest.raises(ConvergenceError) as err:
        solve_device(dev, opts)
    assert err.value.residual > 1e-12
    assert err.value.iterations == 3


def test_solver_rejects_wrong_grid_size():
    dev = three_gate_device()
    with pytest.raises(ValidationError):
        solve_density(np.zeros(17), dev.constants, dev.grid)


def test_solver_options_validation():
    with pytest.raises(ValidationError):
        SolverOptions(mixing=0.0)
    with pytest.raises(ValidationError):
        SolverOptions(mixing=1.5)
    with pytest.raises(ValidationError):
        SolverOptions(tol=-1.0)
    with pytest.raises(ValidationError):
        SolverOptions(max_iterations=40, ramp_iterations=50)


# ---------------------------------------------------------------------------
# island segmentation and state taxonomy

def test_segment_islands_patterns():
    thr = 1.0
    seg = segment_islands(np.array([0.0, 2.0, 2.0, 0.0, 2.0, 0.0]), thr)
    assert seg.spans == ((1, 3), (4, 5))
    assert seg.touches_left == (False, False)
    assert seg.touches_right == (False, False)
    assert seg.interior == ((1, 3), (4, 5))

    full = segment_islands(np.full(5, 2.0), thr)
    assert full.spans == ((0, 5),)
    assert full.touches_left == (True,) and full.touches_right == (True,)
    assert full.interior == ()

    empty = segment_islands(np.zeros(5), thr)
    assert empty.spans == ()

    left = segment_islands(np.array([2.0, 2.0, 0.0, 0.0]), thr)
    assert left.touches_left == (True,) and left.touches_right == (False,)


def test_segment_islands_validation():
    with pytest.raises(ValidationError):
        segment_islands(np.zeros((2, 4)), 1.0)
    with pytest.raises(ValidationError):
        segment_islands(np.zeros(4), 0.0)


def test_default_threshold_value():
    # 1e-4 of the thermal density scale g0 kT
    assert default_island_threshold(CONST) == pytest.approx(
        1e-4 * 5e-4 * 0.1, rel=1e-12)


def test_classify_state_taxonomy():
    def seg(spans, tl, tr):
        return IslandSegmentation(spans=spans, touches_left=tl,
                                  touches_right=tr, threshold=1.0)

    assert classify_state(seg(((0, 9),), (True,), (True,))) is StateLabel.SC
    assert classify_state(seg((), (), ())) is StateLabel.BARRIER
    assert classify_state(seg(((3, 5),), (False,), (False,))) is StateLabel.SD
    assert classify_state(
        seg(((3, 5), (6, 8)), (False, False), (False, False))) is StateLabel.DD
    # contact fingers on both sides plus one dot is still a single dot
    assert classify_state(
        seg(((0, 2), (3, 5), (7, 9)), (True, False, False),
            (False, False, True))) is StateLabel.SD
    with pytest.raises(StateError):
        classify_state(seg(((0, 1), (2, 3), (4, 5)),
                           (False,) * 3, (False,) * 3))


def test_filter_small_islands():
    grid = Grid(0.0, 10.0, 11)
    density = np.zeros(11)
    density[1:4] = 0.5          # real dot, q = 1.0
    density[6] = 0.5            # single-point sliver, q = 0
    density[9:11] = 0.5         # right contact finger, thin but kept
    seg = segment_islands(density, 0.1)
    assert seg.spans == ((1, 4), (6, 7), (9, 11))
    kept = filter_small_islands(seg, density, grid)
    assert kept.spans == ((1, 4), (9, 11))
    assert kept.interior == ((1, 4),)


def test_three_gate_states_versus_plunger():
    # closed at V_P = 0, a single dot once the plunger opens it
    thr = default_island_threshold(CONST)
    closed = solve_device(three_gate_device(v_plunger=0.0))
    assert classify_state(segment_islands(closed, thr)) is StateLabel.BARRIER

    dev = three_gate_device(v_plunger=300.0)
    n = solve_device(dev)
    seg = filter_small_islands(segment_islands(n, thr), n, dev.grid)
    assert classify_state(seg) is StateLabel.SD
    (a, b), = seg.interior
    # the dot sits under the plunger, between the barrier gates
    assert dev.grid.x[a] > -20.0 and dev.grid.x[b - 1] < 20.0


def test_ungated_wire_is_a_short_circuit():
    # with no gates the whole wire carries the ambient thermal density
    grid = Grid(-40.0, 40.0, 128)
    dev = DeviceSpec(grid=grid, gates=(GateSpec(v0=0.0, x0=0.0),), constants=CONST)
    n = solve_device(dev)
    assert np.all(n > default_island_threshold(CONST))
    seg = segment_islands(n, default_island_threshold(CONST))
    assert classify_state(seg) is StateLabel.SC


def test_island_geometry_stable_under_refinement():
    thr = default_island_threshold(CONST)
    edges = {}
    for n_points in (128, 256):
        dev = three_gate_device(v_plunger=300.0, n_points=n_points)
        n = solve_device(dev)
        seg = filter_small_islands(segment_islands(n, thr), n, dev.grid)
        assert len(seg.interior) == 1
        (a, b), = seg.interior
        edges[n_points] = (dev.grid.x[a], dev.grid.x[b - 1],
                           np.trapezoid(n[a:b], dx=dev.grid.spacing))
    dx = 80.0 / 127
    assert edges[128][0] == pytest.approx(edges[256][0], abs=2 * dx)
    assert edges[128][1] == pytest.approx(edges[256][1], abs=2 * dx)
    assert edges[128][2] == pytest.approx(edges[256][2], rel=0.01)


# ---------------------------------------------------------------------------
# charging model

def _flat_island_model(n0=0.05, span=(400, 1601), grid=Grid(-10.0, 10.0, 2001)):
    density = np.zeros(grid.n_points)
    density[span[0]:span[1]] = n0
    seg = IslandSegmentation(spans=(span,), touches_left=(False,),
                             touches_right=(False,), threshold=1e-9)
    return capacitance_model(density, seg, CONST, grid), grid


def test_capacitance_flat_island_closed_form():
    # for constant density over a length L the Coulomb double integral is
    #   2 K0 [L asinh(L/s) - sqrt(L^2 + s^2) + s]
    # and E11 = (coulomb + c_k L) / L^2 independent of n0
    model, grid = _flat_island_model()
    a, b = model.spans[0]
    length = (b - 1 - a) * grid.spacing
    s = CONST.sigma_soft
    coul = 2 * CONST.k0 * (length * np.arcsinh(length / s)
                           - np.hypot(length, s) + s)
    oracle = (coul + CONST.c_k * length) / length**2
    assert model.e_matrix[0, 0] == pytest.approx(oracle, rel=1e-6)
    assert model.z[0] == pytest.approx(0.05 * length, rel=1e-12)
    # n0 cancels except in z
    model2, _ = _flat_island_model(n0=0.4)
    assert model2.e_matrix[0, 0] == pytest.approx(model.e_matrix[0, 0], rel=1e-12)


def test_capacitance_distant_islands_coupling():
    # two narrow islands far apart couple like point charges:
    #   E12 -> K0 / sqrt(D^2 + s^2)
    grid = Grid(-15.0, 15.0, 3001)
    density = np.zeros(grid.n_points)
    left = (990, 1011)    # x ~ -5.1 .. -4.9
    right = (1990, 2011)  # x ~ +4.9 .. +5.1
    density[left[0]:left[1]] = 0.2
    density[right[0]:right[1]] = 0.2
    seg = IslandSegmentation(spans=(left, right), touches_left=(False, False),
                             touches_right=(False, False), threshold=1e-9)
    model = capacitance_model(density, seg, CONST, grid)
    d = 10.0
    assert model.e_matrix[0, 1] == pytest.approx(
        CONST.k0 / np.hypot(d, CONST.sigma_soft), rel=1e-3)
    assert model.e_matrix[0, 1] == model.e_matrix[1, 0]


def test_capacitance_rejects_zero_charge_island():
    grid = Grid(0.0, 10.0, 11)
    density = np.zeros(11)
    density[4] = 1.0  # single point: trapezoid charge is zero
    seg = IslandSegmentation(spans=((4, 5),), touches_left=(False,),
                             touches_right=(False,), threshold=0.5)
    with pytest.raises(ValidationError):
        capacitance_model(density, seg, CONST, grid)


def test_capacitance_no_islands():
    grid = Grid(0.0, 10.0, 11)
    seg = IslandSegmentation(spans=(), touches_left=(), touches_right=(),
                             threshold=0.5)
    model = capacitance_model(np.zeros(11), seg, CONST, grid)
    assert model.n_islands == 0
    assert equilibrium_charge(model).size == 0


def test_config_energy_identities():
    e = np.array([[2.0, 0.5], [0.5, 1.5]])
    model = CapacitanceModel(e_matrix=e, z=np.array([1.0, 2.0]),
                             spans=((0, 1), (2, 3)))
    assert config_energy(model, np.array([1, 2])) == pytest.approx(0.0, abs=1e-15)
    sym = CapacitanceModel(e_matrix=np.array([[2.0, 0.5], [0.5, 2.0]]),
                           z=np.array([1.5, 1.5]), spans=((0, 1), (2, 3)))
    assert config_energy(sym, np.array([2, 1])) == pytest.approx(
        config_energy(sym, np.array([1, 2])), rel=1e-14)
    single = CapacitanceModel(e_matrix=np.array([[3.25]]), z=np.array([2.0]),
                              spans=((0, 1),))
    assert config_energy(single, np.array([3])) == pytest.approx(3.25, rel=1e-14)
    batch = config_energy(model, np.array([[1, 2], [2, 2], [0, 0]]))
    assert batch.shape == (3,)
    with pytest.raises(ValidationError):
        config_energy(model, np.array([1, 2, 3]))


def test_equilibrium_charge_simple_cases():
    one = CapacitanceModel(e_matrix=np.array([[1.0]]), z=np.array([2.1]),
                           spans=((0, 1),))
    assert equilibrium_charge(one).tolist() == [2]
    low = CapacitanceModel(e_matrix=np.array([[1.0]]), z=np.array([0.2]),
                           spans=((0, 1),))
    assert equilibrium_charge(low).tolist() == [0]
    with pytest.raises(ValidationError):
        equilibrium_charge(one, radius=0)


def test_equilibrium_charge_tie_breaks_lexicographically():
    # z = (0.5): E(0) = E(1); the smaller occupation wins
    tie = CapacitanceModel(e_matrix=np.array([[1.0]]), z=np.array([0.5]),
                           spans=((0, 1),))
    assert equilibrium_charge(tie).tolist() == [0]
    sym = CapacitanceModel(e_matrix=np.array([[1.0, 0.3], [0.3, 1.0]]),
                           z=np.array([1.5, 1.5]), spans=((0, 1), (2, 3)))
    # (1,2) and (2,1) are degenerate; lexicographic order prefers (1,2)
    assert equilibrium_charge(sym).tolist() == [1, 2]


def _random_model(rng):
    k = rng.integers(1, 4)
    diag = rng.uniform(1.0, 5.0, size=k)
    e = np.diag(diag)
    for i in range(k):
        for j in range(i + 1, k):
            e[i, j] = e[j, i] = rng.uniform(0.0, 0.6) * np.sqrt(diag[i] * diag[j])
    z = rng.uniform(0.0, 4.0, size=k)
    return CapacitanceModel(e_matrix=e, z=z, spans=tuple((i, i + 1) for i in range(k)))


def test_equilibrium_charge_matches_brute_force():
    import itertools

    rng = np.random.default_rng(7)
    for _ in range(100):
        model = _random_model(rng)
        got = equilibrium_charge(model)  # default radius 2
        axes = [range(max(0, int(np.floor(z)) - 3), int(np.ceil(z)) + 4)
                for z in model.z]
        best, best_e = None, np.inf
        for q in itertools.product(*axes):
            e = config_energy(model, np.array(q))
            if e < best_e - 1e-12 or (abs(e - best_e) <= 1e-12 and q < best):
                best, best_e = q, e
        assert got.tolist() == list(best)


def test_generated_devices_have_physical_charging_matrices():
    rng_seed = 20260
    thr = default_island_threshold(CONST)
    checked = 0
    for i in range(40):
        mean = three_gate_device(v_plunger=320.0)
        dev = sample_device(mean, rel_sigma=0.05, seed=rng_seed + i)
        n = solve_device(dev)
        seg = filter_small_islands(segment_islands(n, thr), n, dev.grid)
        if not seg.interior:
            continue
        model = capacitance_model(n, seg, dev.constants, dev.grid)
        e = model.e_matrix
        assert np.array_equal(e, e.T)
        eig = np.linalg.eigvalsh(e)
        assert eig.min() >= -1e-10 * e.max()
        # self-interaction dominates cross terms
        for r in range(model.n_islands):
            assert np.all(e[r, r] >= e[r] - 1e-12)
        assert np.all(model.z > 0)
        checked += 1
    assert checked >= 30
