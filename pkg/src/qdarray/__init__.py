"""Quantum-dot nanowire simulator with neural-network tuning tools.

The package models a 1-D gated wire: a Thomas-Fermi solver turns gate
voltages into electron density, a constant-interaction charging model and
a Markov-chain transport solver turn the density into current, and the
higher layers generate labelled datasets, train small neural networks on
them, and drive a gradient-free tuner that steers a device toward a
target charge state.
"""

from .autotune import (
    FitnessTrace,
    SimulatorProvider,
    StackProvider,
    TuneOptions,
    VoltageWindow,
    export_trace_csv,
    fitness,
    tune,
)
from .dataset import (
    DatasetManifest,
    MapDataset,
    MapRecord,
    MapStack,
    SubMapDataset,
    SubMapSample,
    SweepDataset,
    SweepRecord,
    export_record_csv,
    extract_submaps,
    gen_map_dataset,
    gen_sweep_dataset,
    load_dataset,
    load_map_stack,
    map_stack_from_csv,
    normalize_current,
    save_dataset,
    save_map_stack,
)
from .device import (
    DeviceSpec,
    GateSpec,
    Grid,
    PhysicalConstants,
    compose_potential,
    device_from_dict,
    device_to_dict,
    five_gate_device,
    gate_potential,
    load_device,
    sample_device,
    save_device,
    sweep_potentials,
    three_gate_device,
)
from .errors import (
    ConvergenceError,
    DataFormatError,
    StateError,
    StationaryStateError,
    TrainingDivergedError,
    ValidationError,
)
from .neuralnet import (
    Metrics,
    NetworkSpec,
    TrainConfig,
    Weights,
    charge_accuracy,
    charge_id_network,
    forward,
    init_weights,
    load_weights,
    pixel_state_network,
    predict,
    predict_probability_vector,
    save_weights,
    state_accuracy,
    submap_cnn,
    top1_accuracy,
    train,
)
from .thomasfermi import (
    CapacitanceModel,
    IslandSegmentation,
    SolverOptions,
    StateLabel,
    capacitance_model,
    classify_state,
    equilibrium_charge,
    segment_islands,
    solve_density,
    solve_device,
)
from .transport import (
    MapResult,
    MarkovGraph,
    PointResult,
    SimulateOptions,
    SweepResult,
    build_graph,
    simulate_map,
    simulate_point,
    simulate_sweep,
    stationary_distribution,
)

__version__ = "0.1.0"
