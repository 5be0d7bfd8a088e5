"""Markov-chain blockade transport over charge configurations.

Charge moves one electron at a time: contact <-> edge dot, or between
neighbouring dots.  Each move gets a rate

    R = f_T(dE) * p_WKB / tau,

the product of a Fermi acceptance factor for the energy cost, a WKB
tunneling probability through the barrier the electron crosses, and an
attempt time: the edge dot's own for a lead move, the geometric mean of
the two dots' for an interdot move.  The stationary distribution of the
resulting chain gives the current as the net probability flux across the
left contact.

Energy bookkeeping: configuration energies come from the capacitance
model, whose reference is the contact chemical potential (the density the
charges are integrated from equilibrated against the contacts).  A lead
move therefore costs only the bias offset of that contact, dE_cap -/+
bias/2, not the full chemical potential.  Each edge pair shares one
(p_WKB, tau); direction enters through f_T alone, so at zero bias every
cycle satisfies detailed balance and the current vanishes identically.

Rates and currents are in arbitrary units.  Kinetic energies enter the
semiclassical factors in eV x nm units with hbar_eff = m_eff = 1, so a
100 meV barrier 20 nm wide has tunneling action ~ 9 -- the same order as
a semiconductor-mass electron in SI units.  Keeping the action at this
scale is what makes the blockade peaks stand out of the smooth barrier
envelope: with meV-scale actions (hundreds per barrier) the envelope
slope would bury every peak.
"""

from __future__ import annotations

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .device import DeviceSpec, Grid, PhysicalConstants, compose_potential, sweep_potentials
from .errors import StationaryStateError, ValidationError
from .thomasfermi import (
    CapacitanceModel,
    IslandSegmentation,
    SolverOptions,
    StateLabel,
    band_minimum,
    capacitance_model,
    classify_state,
    config_energy,
    default_island_threshold,
    equilibrium_charge,
    filter_small_islands,
    segment_islands,
    solve_density,
)

# Reported for short-circuit pixels, where the blockade picture does not
# apply; far above any blockade current so SC regions saturate in maps.
SHORT_CIRCUIT_CURRENT = 1.0


def fermi_factor(delta_e, kT: float):
    """Occupation factor f_T(dE) = 1 / (1 + exp(dE / kT)), overflow-safe."""
    if kT <= 0:
        raise ValidationError(f"kT must be positive, got {kT}")
    t = np.asarray(delta_e, dtype=float) / kT
    e = np.exp(-np.abs(t))
    out = np.where(t >= 0, e / (1.0 + e), 1.0 / (1.0 + e))
    return float(out) if out.ndim == 0 else out


# meV -> eV: the semiclassical factors take kinetic energies in eV
_EV = 1e-3


def wkb_probability(v_eff: np.ndarray, mu: float, barrier: tuple[int, int],
                    grid: Grid, hbar_eff: float = 1.0) -> float:
    """Tunneling probability through the barrier index range [a, b).

    p = exp(-integral sqrt(2 m (V_e - mu)) / hbar dx) with the integrand
    clamped to zero wherever the profile dips below mu, so a transparent
    range gives exactly 1.  `v_eff` and `mu` are in meV.
    """
    a, b = barrier
    if not 0 <= a < b <= len(v_eff):
        raise ValidationError(f"empty or out-of-range barrier {barrier}")
    over = np.clip(np.asarray(v_eff[a:b]) - mu, 0.0, None)
    action = np.trapezoid(np.sqrt(2.0 * _EV * over), dx=grid.spacing)
    return float(np.exp(-action / hbar_eff))


def attempt_time(island: tuple[int, int], mu: float, grid: Grid,
                 m_eff: float = 1.0) -> float:
    """Classical traversal time of a dot: its length over sqrt(2 mu / m)."""
    a, b = island
    length = (b - 1 - a) * grid.spacing
    if length <= 0:
        raise ValidationError(f"island {island} has no extent")
    if mu <= 0:
        raise ValidationError(f"mu must be positive, got {mu}")
    return length / np.sqrt(2.0 * _EV * mu / m_eff)


def transition_rate(e_from: float, e_to: float, p_wkb: float, tau: float,
                    kT: float) -> float:
    """Rate of one electron move costing e_to - e_from."""
    if tau <= 0:
        raise ValidationError(f"tau must be positive, got {tau}")
    return p_wkb * fermi_factor(e_to - e_from, kT) / tau


@dataclass(frozen=True)
class ChargeNode:
    """One charge configuration and its capacitance energy (meV)."""

    config: tuple[int, ...]
    energy: float


@dataclass(frozen=True)
class TransitionEdge:
    """Directed electron move between two nodes.

    direction is +1 when the electron moves rightward through the device
    (in from the left contact, out to the right, or dot i -> i+1).
    """

    source: int
    target: int
    rate: float
    kind: str       # 'lead-left' | 'lead-right' | 'interdot'
    direction: int


@dataclass(frozen=True)
class MarkovGraph:
    """Charge-configuration chain; node 0 is the equilibrium root."""

    nodes: tuple[ChargeNode, ...]
    edges: tuple[TransitionEdge, ...]
    order: int

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def max_rate(self) -> float:
        return max((e.rate for e in self.edges), default=0.0)


def build_graph(model: CapacitanceModel, seg: IslandSegmentation,
                v_eff: np.ndarray, constants: PhysicalConstants, grid: Grid,
                order: int = 1) -> MarkovGraph:
    """Breadth-first charge graph around the equilibrium configuration.

    Nodes are the non-negative configurations within `order` electrons of
    the root on every island, connected by single-electron moves.  Barrier
    transparencies are taken from `v_eff` (the self-consistent band
    profile) over the gaps between islands and contacts; each edge pair
    shares one WKB factor and one attempt time.
    """
    if order != 1:
        raise ValidationError(
            f"only order-1 graphs are supported (co-tunneling excluded), got {order}")
    k = model.n_islands
    root = equilibrium_charge(model)
    if k == 0:
        node = ChargeNode(config=(), energy=0.0)
        return MarkovGraph(nodes=(node,), edges=(), order=order)

    spans = model.spans
    n = grid.n_points
    left_edge = max((b for (a, b), tl in zip(seg.spans, seg.touches_left) if tl),
                    default=0)
    right_edge = min((a for (a, b), tr in zip(seg.spans, seg.touches_right) if tr),
                     default=n)
    taus = [attempt_time(s, constants.mu, grid, constants.m_eff) for s in spans]
    gaps = {"lead-left": (left_edge, spans[0][0]),
            "lead-right": (spans[-1][1], right_edge)}
    for i in range(k - 1):
        gaps[("interdot", i)] = (spans[i][1], spans[i + 1][0])
    wkb = {key: wkb_probability(v_eff, constants.mu, gap, grid, constants.hbar_eff)
           for key, gap in gaps.items()}

    half_bias = 0.5 * constants.bias_mev

    def in_window(cfg):
        return all(c >= 0 and abs(c - r) <= order for c, r in zip(cfg, root))

    # moves: (delta config, kind, tau, p_wkb, lead offset mu_lead - mu,
    #         direction of the forward move)
    moves = []
    e = np.eye(k, dtype=int)
    moves.append((e[0], "lead-left", taus[0], wkb["lead-left"], half_bias, +1))
    moves.append((e[k - 1], "lead-right", taus[k - 1], wkb["lead-right"],
                  -half_bias, -1))
    for i in range(k - 1):
        # geometric mean keeps the pair rate symmetric under mirror reflection
        moves.append((e[i + 1] - e[i], ("interdot", i),
                      float(np.sqrt(taus[i] * taus[i + 1])),
                      wkb[("interdot", i)], 0.0, +1))

    root_t = tuple(int(c) for c in root)
    index = {root_t: 0}
    configs = [root_t]
    queue = deque([root_t])
    while queue:
        cfg = queue.popleft()
        for delta, *_ in moves:
            for sign in (+1, -1):
                nxt = tuple(int(c) for c in np.asarray(cfg) + sign * delta)
                if in_window(nxt) and nxt not in index:
                    index[nxt] = len(configs)
                    configs.append(nxt)
                    queue.append(nxt)

    energies = config_energy(model, np.array(configs, dtype=float))
    nodes = tuple(ChargeNode(config=c, energy=float(en))
                  for c, en in zip(configs, energies))

    edges = []
    for u, cfg in enumerate(configs):
        for delta, kind, tau, p, offset, direction in moves:
            nxt = tuple(int(c) for c in np.asarray(cfg) + delta)
            if not in_window(nxt):
                continue
            v = index[nxt]
            kind_name = kind if isinstance(kind, str) else "interdot"
            # forward: the move as defined (electron in from a lead, or
            # dot i -> i+1); a lead move costs dE_cap - (mu_lead - mu)
            de_fwd = nodes[v].energy - nodes[u].energy - offset
            edges.append(TransitionEdge(
                source=u, target=v, kind=kind_name, direction=direction,
                rate=transition_rate(0.0, de_fwd, p, tau, constants.kT)))
            edges.append(TransitionEdge(
                source=v, target=u, kind=kind_name, direction=-direction,
                rate=transition_rate(0.0, -de_fwd, p, tau, constants.kT)))
    return MarkovGraph(nodes=nodes, edges=tuple(edges), order=order)


def generator_matrix(graph: MarkovGraph) -> np.ndarray:
    """Generator M with M[v, u] = rate(u -> v) and columns summing to zero."""
    n = graph.n_nodes
    m = np.zeros((n, n))
    for e in graph.edges:
        m[e.target, e.source] += e.rate
    np.fill_diagonal(m, -m.sum(axis=0))
    return m


def _components(graph: MarkovGraph) -> list[list[int]]:
    """Connected components over edges with a strictly positive rate."""
    adj = [[] for _ in range(graph.n_nodes)]
    for e in graph.edges:
        if e.rate > 0.0:
            adj[e.source].append(e.target)
            adj[e.target].append(e.source)
    seen = [False] * graph.n_nodes
    comps = []
    for start in range(graph.n_nodes):
        if seen[start]:
            continue
        comp, queue = [], deque([start])
        seen[start] = True
        while queue:
            u = queue.popleft()
            comp.append(u)
            for v in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    queue.append(v)
        comps.append(comp)
    return comps


def _nullspace_pi(m: np.ndarray) -> tuple[np.ndarray, int]:
    """Smallest-singular-vector candidate for the stationary state."""
    _, s, vh = np.linalg.svd(m)
    null_dim = int(np.sum(s <= 1e-10 * s[0])) if s[0] > 0 else m.shape[0]
    v = vh[-1]
    v = v * np.sign(v[np.argmax(np.abs(v))])
    return v, max(null_dim, 1)


def _finish_pi(v: np.ndarray, m: np.ndarray, max_rate: float) -> np.ndarray:
    """Clip, normalize and residual-check a stationary candidate.

    Stationary weights scale as exp(-dE/kT), so entries whose true value
    sits below the SVD noise floor come back as tiny values of either
    sign; those are clipped.  Negative entries beyond noise scale mean a
    genuinely sign-indefinite vector and are refused.
    """
    if np.min(v) < -1e-8 * np.max(np.abs(v)):
        raise StationaryStateError("nullspace vector has large negative entries",
                                   components=())
    pi = np.clip(v, 0.0, None)
    total = pi.sum()
    if total <= 0:
        raise StationaryStateError("nullspace vector sums to zero",
                                   components=())
    pi /= total
    residual = float(np.max(np.abs(m @ pi)))
    if residual > 1e-8 * max(max_rate, 1e-300):
        raise StationaryStateError(
            f"stationary residual {residual:.3e} exceeds 1e-8 of the peak rate",
            components=())
    return pi


def _rate_matrix(graph: MarkovGraph) -> np.ndarray:
    """Dense rates[u, v] = total rate u -> v, zero diagonal."""
    rates = np.zeros((graph.n_nodes, graph.n_nodes))
    for e in graph.edges:
        if e.source != e.target:
            rates[e.source, e.target] += e.rate
    return rates


def _scc_structure(rates: np.ndarray) -> tuple[list[list[int]], list[bool]]:
    """Strongly connected components of the positive-rate digraph.

    Returns the components (each sorted) and a per-component flag marking
    the closed ones (no positive rate leaving the component).  Iterative
    Tarjan; the graphs here are tiny but deep recursion is avoided anyway.
    """
    n = rates.shape[0]
    adj = [np.nonzero(rates[u] > 0.0)[0].tolist() for u in range(n)]
    index = [-1] * n
    low = [0] * n
    on_stack = [False] * n
    stack: list[int] = []
    comp_of = [-1] * n
    comps: list[list[int]] = []
    counter = 0
    for root in range(n):
        if index[root] >= 0:
            continue
        work = [(root, 0)]
        while work:
            u, ei = work[-1]
            if ei == 0:
                index[u] = low[u] = counter
                counter += 1
                stack.append(u)
                on_stack[u] = True
            advanced = False
            while ei < len(adj[u]):
                v = adj[u][ei]
                ei += 1
                if index[v] < 0:
                    work[-1] = (u, ei)
                    work.append((v, 0))
                    advanced = True
                    break
                if on_stack[v]:
                    low[u] = min(low[u], index[v])
            if advanced:
                continue
            work.pop()
            if low[u] == index[u]:
                comp = []
                while True:
                    w = stack.pop()
                    on_stack[w] = False
                    comp_of[w] = len(comps)
                    comp.append(w)
                    if w == u:
                        break
                comps.append(sorted(comp))
            if work:
                parent = work[-1][0]
                low[parent] = min(low[parent], low[u])
    closed = [True] * len(comps)
    for u in range(n):
        for v in adj[u]:
            if comp_of[u] != comp_of[v]:
                closed[comp_of[u]] = False
    return comps, closed


def _structural_pi(graph: MarkovGraph) -> np.ndarray:
    """Stationary state of a chain whose rate matrix is one-way reducible.

    Thermal factors underflow for moves costing more than ~750 kT, so a
    path can carry rate in one direction only.  The chain, started at the
    root, then settles into whichever closed classes it can still reach:
    stationary state inside each class, absorption probability as its
    weight, zero on transient nodes.  With exact rates the missing links
    would be ~e^-750 of the fast scale, so the excluded states carry no
    weight on any physical timescale.
    """
    n = graph.n_nodes
    rates = _rate_matrix(graph)
    pi = np.zeros(n)

    # restrict to what the root can reach; nothing else is ever visited
    seen = np.zeros(n, dtype=bool)
    seen[0] = True
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in np.nonzero(rates[u] > 0.0)[0]:
            if not seen[v]:
                seen[v] = True
                queue.append(int(v))
    reach = np.nonzero(seen)[0]
    sub = rates[np.ix_(reach, reach)]

    comps, closed = _scc_structure(sub)
    if len(comps) == 1:
        gen = sub.T.copy()
        np.fill_diagonal(gen, -sub.sum(axis=1))
        v, _ = _nullspace_pi(gen)
        pi[reach] = _finish_pi(v, gen, float(sub.max()))
        return pi

    comp_of = np.empty(len(reach), dtype=int)
    for ci, comp in enumerate(comps):
        comp_of[comp] = ci
    classes = [comp for comp, shut in zip(comps, closed) if shut]
    if closed[comp_of[0]]:
        weights = {comp_of[0]: 1.0}
    else:
        # absorption probabilities of the embedded jump chain, root row
        transient = np.nonzero([not closed[c] for c in comp_of])[0]
        t_index = {t: i for i, t in enumerate(transient)}
        out = sub[transient].sum(axis=1)
        p_tt = sub[np.ix_(transient, transient)] / out[:, None]
        b = np.stack([sub[np.ix_(transient, comp)].sum(axis=1) / out
                      for comp in classes], axis=1)
        try:
            absorb = np.linalg.solve(np.eye(len(transient)) - p_tt, b)
        except np.linalg.LinAlgError as err:
            raise StationaryStateError(
                f"absorption system is singular: {err}",
                components=tuple(tuple(reach[c]) for c in classes)) from None
        w = absorb[t_index[0]]
        if w.min() < -1e-9 or abs(w.sum() - 1.0) > 1e-6:
            raise StationaryStateError(
                "absorption weights are ill-conditioned",
                components=tuple(tuple(reach[c]) for c in classes))
        weights = {comp_of[classes[k][0]]: max(float(w[k]), 0.0)
                   for k in range(len(classes))}

    for comp, shut in zip(comps, closed):
        ci = comp_of[comp[0]]
        wk = weights.get(ci, 0.0)
        if not shut or wk == 0.0:
            continue
        block = sub[np.ix_(comp, comp)]
        gen = block.T.copy()
        np.fill_diagonal(gen, -block.sum(axis=1))
        v, _ = _nullspace_pi(gen)
        pi[reach[comp]] = wk * _finish_pi(v, gen, float(max(block.max(), 0.0)))
    return pi


def stationary_distribution(graph: MarkovGraph,
                            on_disconnected: str = "error") -> np.ndarray:
    """Stationary probability per node, by SVD nullspace of the generator.

    Parameters
    ----------
    on_disconnected : {'error', 'root_component'}
        Rate underflow can split the chain into pieces with no connecting
        rate, or (one-way underflow) leave several closed classes inside
        one undirected piece.  'error' raises naming the components;
        'root_component' follows the chain started at the root: stationary
        state over the closed classes the root reaches, weighted by
        absorption probability, zero elsewhere.

    Raises
    ------
    StationaryStateError
        Degenerate nullspace under 'error', or an ill-conditioned solve.
    """
    if on_disconnected not in ("error", "root_component"):
        raise ValidationError(f"unknown disconnection policy {on_disconnected!r}")
    n = graph.n_nodes
    if n == 1:
        return np.ones(1)
    max_rate = graph.max_rate()
    comps = _components(graph)
    if len(comps) > 1 or max_rate == 0.0:
        if on_disconnected == "error":
            raise StationaryStateError(
                f"chain splits into {len(comps)} pieces with no connecting rate",
                components=tuple(tuple(c) for c in comps))
        root_comp = sorted(next(c for c in comps if 0 in c))
        pi = np.zeros(n)
        if len(root_comp) == 1:
            pi[0] = 1.0
            return pi
        sub_index = {node: i for i, node in enumerate(root_comp)}
        sub = MarkovGraph(
            nodes=tuple(graph.nodes[i] for i in root_comp),
            edges=tuple(replace(e, source=sub_index[e.source],
                                target=sub_index[e.target])
                        for e in graph.edges
                        if e.source in sub_index and e.target in sub_index),
            order=graph.order)
        pi[root_comp] = stationary_distribution(sub, on_disconnected="root_component")
        return pi

    m = generator_matrix(graph)
    v, null_dim = _nullspace_pi(m)
    if null_dim > 1 or np.min(v) < -1e-8 * np.max(np.abs(v)):
        # connected by undirected rates yet reducible in one direction:
        # thermal underflow has produced several closed classes, or left
        # the root transient.  resolve the class structure explicitly if
        # asked to, otherwise report
        if on_disconnected == "error":
            rates = _rate_matrix(graph)
            comps, closed = _scc_structure(rates)
            raise StationaryStateError(
                f"stationary state is {null_dim}-fold degenerate "
                f"(one-way rate underflow)",
                components=tuple(tuple(c) for c, shut in zip(comps, closed)
                                 if shut))
        return _structural_pi(graph)
    return _finish_pi(v, m, max_rate)


def graph_current(graph: MarkovGraph, pi: np.ndarray) -> float:
    """Net rightward electron flux across the left contact (arb. units)."""
    if len(pi) != graph.n_nodes:
        raise ValidationError(
            f"distribution has {len(pi)} entries for {graph.n_nodes} nodes")
    return float(sum(e.direction * e.rate * pi[e.source]
                     for e in graph.edges if e.kind == "lead-left"))


@dataclass(frozen=True)
class SimulateOptions:
    """Pipeline knobs shared by point, sweep and map simulation."""

    solver: SolverOptions = field(default_factory=SolverOptions)
    min_island_charge: float = 1e-5
    radius: int = 2
    order: int = 1


@dataclass(frozen=True)
class PointResult:
    """Transport result at one voltage configuration."""

    current: float
    charge: tuple[int, ...]
    state: StateLabel


def _transport_point(v: np.ndarray, density: np.ndarray, constants: PhysicalConstants,
                     grid: Grid, opts: SimulateOptions) -> PointResult:
    threshold = default_island_threshold(constants)
    seg = segment_islands(density, threshold)
    seg = filter_small_islands(seg, density, grid, opts.min_island_charge)
    state = classify_state(seg)
    if state is StateLabel.SC:
        return PointResult(current=SHORT_CIRCUIT_CURRENT, charge=(), state=state)
    if state is StateLabel.BARRIER:
        return PointResult(current=0.0, charge=(), state=state)
    model = capacitance_model(density, seg, constants, grid)
    v_eff = band_minimum(v, density, constants, grid)
    graph = build_graph(model, seg, v_eff, constants, grid, opts.order)
    pi = stationary_distribution(graph, on_disconnected="root_component")
    return PointResult(current=graph_current(graph, pi),
                       charge=graph.nodes[0].config, state=state)


def simulate_point(device: DeviceSpec,
                   options: SimulateOptions | None = None) -> PointResult:
    """Current, equilibrium charge and state at the stored gate voltages."""
    opts = options or SimulateOptions()
    v = compose_potential(device)
    density = solve_density(v, device.constants, device.grid, opts.solver)
    return _transport_point(v, density, device.constants, device.grid, opts)


@dataclass(frozen=True)
class SweepResult:
    """1-D gate sweep: current, total charge and state per voltage."""

    gate_index: int
    values: np.ndarray
    current: np.ndarray
    charge: np.ndarray
    state: np.ndarray

    def __post_init__(self):
        m = len(self.values)
        if not (len(self.current) == len(self.charge) == len(self.state) == m):
            raise ValidationError("sweep arrays must share one length")


def simulate_sweep(device: DeviceSpec, gate_index: int, values: np.ndarray,
                   options: SimulateOptions | None = None) -> SweepResult:
    """Sweep one gate voltage; densities are solved as a single batch."""
    opts = options or SimulateOptions()
    values = np.asarray(values, dtype=float)
    pots = sweep_potentials(device, gate_index, values)
    densities = solve_density(pots, device.constants, device.grid, opts.solver)
    current = np.empty(len(values))
    charge = np.zeros(len(values), dtype=int)
    state = np.empty(len(values), dtype=np.int8)
    for i, (v, n) in enumerate(zip(pots, densities)):
        res = _transport_point(v, n, device.constants, device.grid, opts)
        current[i] = res.current
        charge[i] = sum(res.charge)
        state[i] = int(res.state)
    return SweepResult(gate_index=gate_index, values=values, current=current,
                       charge=charge, state=state)


@dataclass(frozen=True)
class MapResult:
    """2-D gate-gate map; arrays are indexed [y, x] image style.

    charge holds per-island occupations padded with -1 (one dot fills
    entry 0; a double dot fills both).
    """

    gate_x: int
    gate_y: int
    x_values: np.ndarray
    y_values: np.ndarray
    current: np.ndarray
    state: np.ndarray
    charge: np.ndarray


def simulate_map(device: DeviceSpec, gate_x: int, gate_y: int,
                 x_values: np.ndarray, y_values: np.ndarray,
                 options: SimulateOptions | None = None,
                 threads: int = 1) -> MapResult:
    """Map current/state/charge over two gate voltages.

    The self-consistent solve runs as one batch over all pixels; the
    transport stage is independent per pixel and splits across `threads`.
    """
    opts = options or SimulateOptions()
    x_values = np.asarray(x_values, dtype=float)
    y_values = np.asarray(y_values, dtype=float)
    if gate_x == gate_y:
        raise ValidationError("map axes must use two different gates")
    base_dev = device.with_gate_voltages({gate_x: 0.0, gate_y: 0.0})
    base = compose_potential(base_dev)
    ux = compose_potential(device.with_gate_voltages(
        {gate_x: 1.0, gate_y: 0.0})) - base
    uy = compose_potential(device.with_gate_voltages(
        {gate_x: 0.0, gate_y: 1.0})) - base
    ny, nx = len(y_values), len(x_values)
    pots = (base[None, :]
            + np.repeat(y_values, nx)[:, None] * uy[None, :]
            + np.tile(x_values, ny)[:, None] * ux[None, :])
    densities = solve_density(pots, device.constants, device.grid, opts.solver)

    current = np.empty(ny * nx)
    state = np.empty(ny * nx, dtype=np.int8)
    charge = np.full((ny * nx, 2), -1, dtype=np.int16)

    def work(i):
        res = _transport_point(pots[i], densities[i], device.constants,
                               device.grid, opts)
        current[i] = res.current
        state[i] = int(res.state)
        for j, q in enumerate(res.charge):
            charge[i, j] = q

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(work, range(ny * nx)))
    else:
        for i in range(ny * nx):
            work(i)
    return MapResult(gate_x=gate_x, gate_y=gate_y, x_values=x_values,
                     y_values=y_values, current=current.reshape(ny, nx),
                     state=state.reshape(ny, nx),
                     charge=charge.reshape(ny, nx, 2))
