"""Command-line pipeline tying the library together.

Subcommands: simulate, gen-dataset, train, eval, tune, export.  Every run
reads options from (in increasing precedence) built-in defaults, an
optional `--config` file of `key = value` lines, and explicit flags, then
writes the fully resolved set as `<subcommand>-config.txt` next to its
outputs, so any run can be reproduced from its snapshot alone.

Exit codes: 0 success; 2 usage (unknown/missing/malformed options);
3 validation (bad inputs, malformed files); 4 numeric failure (solver or
training did not converge).  On any failure the partially written
outputs are removed.

`--threads` falls back to the QDARRAY_THREADS environment variable, then
to the processor count.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from .autotune import (
    SimulatorProvider,
    StackProvider,
    TuneOptions,
    VoltageWindow,
    export_trace_csv,
    tune,
)
from .dataset import (
    MapDataset,
    SubMapDataset,
    SweepDataset,
    export_record_csv,
    extract_submaps,
    gen_map_dataset,
    gen_sweep_dataset,
    load_dataset,
    load_map_stack,
    normalize_current,
    save_dataset,
)
from .device import DeviceSpec, device_to_dict, five_gate_device, three_gate_device
from .errors import (
    ConvergenceError,
    DataFormatError,
    StateError,
    StationaryStateError,
    TrainingDivergedError,
    ValidationError,
)
from .neuralnet import (
    STATE_ORDER,
    TrainConfig,
    apply_transform,
    charge_accuracy,
    charge_id_network,
    load_weights,
    pixel_state_network,
    predict,
    save_weights,
    state_accuracy,
    submap_cnn,
    top1_accuracy,
    train,
)
from .plotting import (
    plot_current_map,
    plot_state_map,
    plot_sweep,
    plot_training_curves,
    plot_tuning_trace,
    write_pgm,
    write_state_pgm,
)
from .transport import simulate_map, simulate_sweep


class _UsageError(Exception):
    """Bad command line or config key; exits with code 2."""


# ---------------------------------------------------------------------------
# option plumbing

_REQUIRED = object()


def _int(s: str) -> int:
    return int(s)


def _float(s: str) -> float:
    return float(s)


def _range_pair(s: str) -> tuple[float, float]:
    lo, sep, hi = s.partition(":")
    if not sep:
        raise ValueError(f"expected lo:hi, got {s!r}")
    pair = (float(lo), float(hi))
    if pair[0] >= pair[1]:
        raise ValueError(f"empty range {s!r}")
    return pair


def _float_tuple(s: str) -> tuple[float, ...]:
    return tuple(float(p) for p in s.split(","))


def _choice(*allowed: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        if s not in allowed:
            raise ValueError(f"expected one of {', '.join(allowed)}; got {s!r}")
        return s
    return parse


def _show_range(v) -> str:
    return f"{v[0]:g}:{v[1]:g}"


def _show_tuple(v) -> str:
    return ",".join(f"{c:g}" for c in v)


@dataclass(frozen=True)
class _Opt:
    name: str                  # long flag without the leading dashes
    parse: Callable[[str], object]
    default: object            # _REQUIRED marks mandatory options
    help: str
    show: Callable[[object], str] = str   # inverse of parse, for snapshots


_COMMON = (
    _Opt("out", str, _REQUIRED, "output directory"),
    _Opt("seed", _int, 0, "seed for every random choice in the run"),
    _Opt("threads", _int, None,
         "worker threads (default: QDARRAY_THREADS, else processor count)"),
)

_DEVICE_OPTS = (
    _Opt("device", _choice("three-gate", "five-gate"), _REQUIRED,
         "device preset"),
    _Opt("grid-points", _int, 0, "wire grid points (0 keeps the preset)"),
)

_SWEEP_OPTS = (
    _Opt("gate", _int, 1, "gate index for 1-D sweeps"),
    _Opt("range", _range_pair, (0.0, 400.0),
         "swept voltage range lo:hi in mV", _show_range),
    _Opt("points", _int, 512, "samples along a sweep"),
)

_MAP_OPTS = (
    _Opt("gate-x", _int, 1, "gate on the map x axis"),
    _Opt("gate-y", _int, 3, "gate on the map y axis"),
    _Opt("pixels", _int, 100, "map resolution per axis"),
)

_OPTIONS: dict[str, tuple[_Opt, ...]] = {
    "simulate": _DEVICE_OPTS + (
        _Opt("mode", _choice("sweep", "map", ""), "",
             "sweep or map (default: sweep for three-gate, map for five-gate)"),
    ) + _SWEEP_OPTS + _MAP_OPTS,
    "gen-dataset": _DEVICE_OPTS[1:] + (
        _Opt("kind", _choice("sweep", "map", "submap"), _REQUIRED,
             "record type to generate"),
        _Opt("count", _int, _REQUIRED, "number of records"),
        _Opt("rel-sigma", _float, 0.05, "relative device parameter jitter"),
        _Opt("source", str, "", "map dataset directory (submap kind only)"),
        _Opt("size", _int, 30, "submap window edge in pixels"),
        _Opt("normalize", str, "raw",
             "current scaling: raw, max-abs, or a positive constant"),
    ) + _SWEEP_OPTS + _MAP_OPTS,
    "train": (
        _Opt("task", _choice("charge", "state", "submap"), _REQUIRED,
             "network to train"),
        _Opt("data", str, _REQUIRED, "training dataset directory"),
        _Opt("epochs", _int, 30, "training epochs"),
        _Opt("batch", _int, 64, "minibatch size"),
        _Opt("learning-rate", _float, 1e-3, "Adam learning rate"),
        _Opt("val-fraction", _float, 0.1, "held-out validation fraction"),
        _Opt("transform", _choice("none", "maxabs-log12"), "maxabs-log12",
             "input preprocessing recorded in the weight file"),
    ),
    "eval": (
        _Opt("weights", str, _REQUIRED, "weight file"),
        _Opt("data", str, _REQUIRED, "evaluation dataset directory"),
    ),
    "tune": (
        _Opt("weights", str, _REQUIRED, "state CNN weight file"),
        _Opt("stack", str, "",
             "map stack directory (default: simulate a five-gate device)"),
        _Opt("gate-x", _int, 1, "simulated gate on the window x axis"),
        _Opt("gate-y", _int, 3, "simulated gate on the window y axis"),
        _Opt("start", _float_tuple, _REQUIRED,
             "starting window center, comma-separated mV", _show_tuple),
        _Opt("span", _float, 40.0, "window edge length (mV)"),
        _Opt("resolution", _int, 30, "window pixels per axis"),
        _Opt("target", _choice("sc", "barrier", "sd", "dd"), "dd",
             "state the tuner drives toward"),
        _Opt("budget", _int, 50, "maximum CNN evaluations"),
        _Opt("delta-stop", _float, 0.35, "fitness threshold declaring success"),
    ),
    "export": (
        _Opt("data", str, _REQUIRED, "dataset directory"),
        _Opt("record", _int, 0, "record index to export"),
        _Opt("what", _choice("auto", "sweep", "current", "state", "submap"),
             "auto", "artifact kind (auto follows the dataset)"),
    ),
}


def _options_for(sub: str) -> tuple[_Opt, ...]:
    return _OPTIONS[sub] + _COMMON


def _read_config(path: Path) -> dict[str, str]:
    """`key = value` per line; # starts a comment; blank lines ignored."""
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    pairs = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValidationError(
                f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        pairs[key.strip()] = value.strip()
    return pairs


@dataclass(frozen=True)
class RunConfig:
    """One resolved invocation: subcommand plus every option value."""

    subcommand: str
    values: dict

    def __getitem__(self, key: str):
        return self.values[key]


def _resolve(sub: str, explicit: dict[str, str]) -> RunConfig:
    """Merge defaults, config file and flags; convert and check types."""
    config_path = explicit.pop("config", None)
    from_file = _read_config(Path(config_path)) if config_path else {}
    values = {}
    for opt in _options_for(sub):
        if opt.name in explicit:
            raw = explicit.pop(opt.name)
            from_file.pop(opt.name, None)   # flag wins over the file
        elif opt.name in from_file:
            raw = from_file.pop(opt.name)
        else:
            if opt.default is _REQUIRED:
                raise _UsageError(f"missing required option --{opt.name}")
            values[opt.name] = opt.default
            continue
        try:
            values[opt.name] = opt.parse(raw)
        except ValueError as err:
            raise _UsageError(f"option --{opt.name}: {err}") from err
    if from_file:
        names = ", ".join(sorted(from_file))
        raise _UsageError(f"config keys unknown to '{sub}': {names}")
    if values["threads"] is None:
        env = os.environ.get("QDARRAY_THREADS", "")
        try:
            values["threads"] = int(env) if env else (os.cpu_count() or 1)
        except ValueError as err:
            raise _UsageError(f"QDARRAY_THREADS: {err}") from err
    if values["threads"] < 1:
        raise _UsageError(f"--threads must be >= 1, got {values['threads']}")
    return RunConfig(subcommand=sub, values=values)


class _OutputDir:
    """Output directory that can undo everything a failed run created."""

    def __init__(self, root):
        self.root = Path(root)
        self.existed = self.root.is_dir()
        self.root.mkdir(parents=True, exist_ok=True)
        self.before = set(self.root.iterdir()) if self.existed else set()

    def path(self, name: str) -> Path:
        return self.root / name

    def discard(self) -> None:
        if not self.existed:
            shutil.rmtree(self.root, ignore_errors=True)
            return
        for entry in set(self.root.iterdir()) - self.before:
            if entry.is_dir():
                shutil.rmtree(entry, ignore_errors=True)
            else:
                entry.unlink(missing_ok=True)


def _write_snapshot(config: RunConfig, out: _OutputDir) -> None:
    lines = [f"# qdarray {config.subcommand}: resolved configuration"]
    for opt in sorted(_options_for(config.subcommand), key=lambda o: o.name):
        lines.append(f"{opt.name} = {opt.show(config[opt.name])}")
    out.path(f"{config.subcommand}-config.txt").write_text(
        "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# subcommands

def _make_device(config: RunConfig) -> DeviceSpec:
    factory = {"three-gate": three_gate_device,
               "five-gate": five_gate_device}[config["device"]]
    n = config["grid-points"]
    return factory(n_points=n) if n else factory()


def _raise_with_device(err: Exception, device: DeviceSpec) -> None:
    """Re-raise a solver failure with the device parameters appended."""
    params = json.dumps(device_to_dict(device), sort_keys=True)
    raise type(err)(f"{err} [device: {params}]") from err


def cmd_simulate(config: RunConfig, out: _OutputDir) -> None:
    device = _make_device(config)
    mode = config["mode"] or \
        ("map" if config["device"] == "five-gate" else "sweep")
    lo, hi = config["range"]
    if mode == "sweep":
        values = np.linspace(lo, hi, config["points"])
        try:
            res = simulate_sweep(device, config["gate"], values)
        except (ConvergenceError, StationaryStateError, StateError) as err:
            _raise_with_device(err, device)
        rows = np.column_stack([res.values, res.current, res.charge])
        np.savetxt(out.path("sweep.csv"), rows, delimiter=",",
                   fmt=("%.9g", "%.17e", "%d"),
                   header="v_mV,current,charge", comments="")
        plot_sweep(res.values, res.current, res.charge, out.path("sweep.png"))
        print(f"sweep: gate {config['gate']}, {len(values)} points, "
              f"{int(res.charge.max())} electrons at {hi:g} mV -> {out.root}")
    else:
        axis = np.linspace(lo, hi, config["pixels"])
        try:
            res = simulate_map(device, config["gate-x"], config["gate-y"],
                               axis, axis, threads=config["threads"])
        except (ConvergenceError, StationaryStateError, StateError) as err:
            _raise_with_device(err, device)
        xx, yy = np.meshgrid(res.x_values, res.y_values)
        rows = np.column_stack([xx.ravel(), yy.ravel(),
                                res.current.ravel(), res.state.ravel()])
        np.savetxt(out.path("map.csv"), rows, delimiter=",",
                   fmt=("%.9g", "%.9g", "%.17e", "%d"),
                   header="v_x_mV,v_y_mV,current,state", comments="")
        write_pgm(out.path("current.pgm"), res.current)
        write_state_pgm(out.path("state.pgm"), res.state)
        plot_current_map(res.x_values, res.y_values, res.current,
                         out.path("current.png"))
        plot_state_map(res.x_values, res.y_values, res.state,
                       out.path("state.png"))
        states = ", ".join(
            f"{name}={int((res.state == k).sum())}"
            for k, name in enumerate(STATE_ORDER))
        print(f"map: {config['pixels']}x{config['pixels']} pixels "
              f"({states}) -> {out.root}")


def cmd_gen_dataset(config: RunConfig, out: _OutputDir) -> None:
    kind = config["kind"]
    grid = {"n_points": config["grid-points"]} if config["grid-points"] else {}
    if kind == "sweep":
        dataset = gen_sweep_dataset(
            three_gate_device(**grid), config["count"], config["seed"],
            rel_sigma=config["rel-sigma"], gate_index=config["gate"],
            v_range=config["range"], n_points=config["points"])
    elif kind == "map":
        dataset = gen_map_dataset(
            five_gate_device(**grid), config["count"], config["seed"],
            rel_sigma=config["rel-sigma"], gate_x=config["gate-x"],
            gate_y=config["gate-y"], n_pixels=config["pixels"],
            threads=config["threads"])
    else:
        if not config["source"]:
            raise _UsageError("submap generation needs --source MAPDIR")
        maps = load_dataset(config["source"])
        if not isinstance(maps, MapDataset):
            raise ValidationError(
                f"--source holds a {maps.manifest.kind} dataset, need maps")
        dataset = extract_submaps(maps, config["count"], config["seed"],
                                  size=config["size"])
    norm = config["normalize"]
    if norm != "raw":
        if norm != "max-abs":
            try:
                norm = float(norm)
            except ValueError as err:
                raise _UsageError(
                    "--normalize must be raw, max-abs, or a positive "
                    f"number; got {norm!r}") from err
        dataset = normalize_current(dataset, norm)
    save_dataset(dataset, out.root)
    print(f"{kind} dataset: {dataset.manifest.count} records, "
          f"seed {config['seed']} -> {out.root}")


def _training_arrays(dataset, task: str):
    """Inputs, targets, network spec and loss for one training task."""
    if task == "charge":
        if not isinstance(dataset, SweepDataset):
            raise ValidationError(
                f"task 'charge' trains on sweeps, got {dataset.manifest.kind}")
        spec = charge_id_network(n_points=dataset.current.shape[1])
        return dataset.current, dataset.charge.astype(np.float64), spec, "mse"
    if task == "state":
        if not isinstance(dataset, MapDataset):
            raise ValidationError(
                f"task 'state' trains on maps, got {dataset.manifest.kind}")
        n = dataset.current.shape[0]
        spec = pixel_state_network(n_pixels=dataset.current.shape[1])
        return (dataset.current.reshape(n, -1),
                dataset.state.reshape(n, -1).astype(np.float64), spec, "mse")
    if not isinstance(dataset, SubMapDataset):
        raise ValidationError(
            f"task 'submap' trains on submaps, got {dataset.manifest.kind}")
    spec = submap_cnn(size=dataset.pixels.shape[1])
    return dataset.pixels, dataset.prob, spec, "cross-entropy"


def cmd_train(config: RunConfig, out: _OutputDir) -> None:
    dataset = load_dataset(config["data"])
    x, y, spec, loss = _training_arrays(dataset, config["task"])
    train_config = TrainConfig(
        epochs=config["epochs"], batch_size=config["batch"],
        learning_rate=config["learning-rate"], loss=loss,
        val_fraction=config["val-fraction"], seed=config["seed"])
    weights, metrics = train(spec, (apply_transform(config["transform"], x), y),
                             train_config, transform=config["transform"])
    save_weights(weights, out.path("weights.qdnw"))
    rows = np.column_stack([np.arange(1, len(metrics.train_loss) + 1),
                            metrics.train_loss, metrics.val_loss])
    np.savetxt(out.path("metrics.csv"), rows, delimiter=",",
               fmt=("%d", "%.17e", "%.17e"),
               header="epoch,train_loss,val_loss", comments="")
    plot_training_curves(metrics, out.path("curves.png"))
    print(f"trained {config['task']} on {len(x)} records: best epoch "
          f"{metrics.best_epoch + 1}/{config['epochs']}, validation loss "
          f"{metrics.val_loss[metrics.best_epoch]:.6g} -> {out.root}")


def _predict_batched(weights, x: np.ndarray, batch: int = 256) -> np.ndarray:
    parts = [predict(weights, x[i:i + batch])
             for i in range(0, x.shape[0], batch)]
    return np.concatenate(parts, axis=0)


def _eval_arrays(dataset):
    """Per-kind (inputs, truth, accuracy fn, record shape)."""
    if isinstance(dataset, SweepDataset):
        return (dataset.current, dataset.charge, charge_accuracy,
                dataset.current.shape[1:])
    if isinstance(dataset, MapDataset):
        n = dataset.current.shape[0]
        return (dataset.current.reshape(n, -1), dataset.state.reshape(n, -1),
                state_accuracy, (dataset.current[0].size,))
    return dataset.pixels, dataset.prob, top1_accuracy, dataset.pixels.shape[1:]


def cmd_eval(config: RunConfig, out: _OutputDir) -> None:
    weights = load_weights(config["weights"])
    dataset = load_dataset(config["data"])
    x, truth, accuracy_fn, record_shape = _eval_arrays(dataset)
    if tuple(weights.spec.input_shape) != tuple(record_shape):
        raise ValidationError(
            f"weights expect inputs shaped {weights.spec.input_shape}, "
            f"dataset records are {tuple(record_shape)}")
    accuracy = accuracy_fn(_predict_batched(weights, x), truth)
    with open(out.path("metrics.csv"), "w") as fh:
        fh.write("metric,value\n")
        fh.write(f"kind,{dataset.manifest.kind}\n")
        fh.write(f"count,{dataset.manifest.count}\n")
        fh.write(f"accuracy,{accuracy!r}\n")
    print(f"eval: {dataset.manifest.kind} x {dataset.manifest.count}, "
          f"accuracy {accuracy:.4f}")


def cmd_tune(config: RunConfig, out: _OutputDir) -> None:
    weights = load_weights(config["weights"])
    if config["stack"]:
        provider = StackProvider(load_map_stack(config["stack"]))
    else:
        provider = SimulatorProvider(five_gate_device(),
                                     gate_x=config["gate-x"],
                                     gate_y=config["gate-y"],
                                     threads=config["threads"])
    start = VoltageWindow(center=config["start"],
                          span=(config["span"], config["span"]),
                          resolution=config["resolution"])
    target = np.zeros(4)
    target[("sc", "barrier", "sd", "dd").index(config["target"])] = 1.0
    trace = tune(provider, weights, start, target, config["budget"],
                 TuneOptions(delta_stop=config["delta-stop"]))
    export_trace_csv(trace, out.path("trace.csv"))
    plot_tuning_trace(trace, out.path("trace.png"))
    best = trace.best
    center = _show_tuple(best.window.center)
    with open(out.path("result.csv"), "w") as fh:
        fh.write("status,evaluations,best_center,best_delta\n")
        fh.write(f"{trace.status},{trace.evaluations},"
                 f"\"{center}\",{best.delta!r}\n")
    print(f"tune: {trace.status} after {trace.evaluations} evaluations; "
          f"best delta {best.delta:.4f} at ({center}) mV -> {out.root}")


def cmd_export(config: RunConfig, out: _OutputDir) -> None:
    dataset = load_dataset(config["data"])
    index = config["record"]
    if not 0 <= index < dataset.manifest.count:
        raise ValidationError(
            f"record {index} outside dataset of {dataset.manifest.count}")
    kind = config["what"]
    allowed = {SweepDataset: ("sweep",), MapDataset: ("current", "state"),
               SubMapDataset: ("submap",)}[type(dataset)]
    if kind != "auto" and kind not in allowed:
        raise ValidationError(
            f"artifact kind {kind!r} unavailable for a "
            f"{dataset.manifest.kind} dataset (have: {', '.join(allowed)})")
    wanted = allowed if kind == "auto" else (kind,)
    export_record_csv(dataset, index, out.path("record.csv"))
    written = ["record.csv"]
    record = dataset.record(index)
    if "sweep" in wanted:
        plot_sweep(record.v_p, record.current, record.charge,
                   out.path("sweep.png"))
        written.append("sweep.png")
    if "current" in wanted:
        write_pgm(out.path("current.pgm"), record.current)
        plot_current_map(record.v_p1, record.v_p2, record.current,
                         out.path("current.png"))
        written += ["current.pgm", "current.png"]
    if "state" in wanted:
        write_state_pgm(out.path("state.pgm"), record.state)
        plot_state_map(record.v_p1, record.v_p2, record.state,
                       out.path("state.png"))
        written += ["state.pgm", "state.png"]
    if "submap" in wanted:
        size = record.pixels.shape[0]
        write_pgm(out.path("submap.pgm"), record.pixels)
        plot_current_map(np.arange(size), np.arange(size), record.pixels,
                         out.path("submap.png"))
        written += ["submap.pgm", "submap.png"]
    print(f"export: record {index} of {dataset.manifest.kind} dataset -> "
          f"{', '.join(written)} in {out.root}")


_COMMANDS = {
    "simulate": cmd_simulate,
    "gen-dataset": cmd_gen_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "tune": cmd_tune,
    "export": cmd_export,
}

_HELP = {
    "simulate": "sweep or map one device and render the results",
    "gen-dataset": "sample devices and build a training corpus",
    "train": "fit one of the three networks on a dataset",
    "eval": "score saved weights against a dataset",
    "tune": "drive a window toward a target state with a trained CNN",
    "export": "render one dataset record to CSV/PGM/PNG",
}


# ---------------------------------------------------------------------------
# entry point

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qdarray",
        description="Quantum dot array simulation and tuning pipeline.")
    subs = parser.add_subparsers(dest="subcommand", required=True)
    for sub in _COMMANDS:
        p = subs.add_parser(sub, help=_HELP[sub],
                            argument_default=argparse.SUPPRESS)
        p.add_argument("--config", metavar="PATH",
                       help="key = value file with defaults for any option")
        for opt in _options_for(sub):
            p.add_argument(f"--{opt.name}", metavar=opt.name.upper(),
                           help=opt.help)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        namespace = parser.parse_args(argv)
    except SystemExit as exit_:   # argparse printed usage already
        return exit_.code if isinstance(exit_.code, int) else 2
    explicit = {key.replace("_", "-"): value
                for key, value in vars(namespace).items()
                if key != "subcommand"}
    try:
        config = _resolve(namespace.subcommand, explicit)
    except _UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 2
    except (ValidationError, DataFormatError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    out = _OutputDir(config["out"])
    try:
        _write_snapshot(config, out)
        _COMMANDS[config.subcommand](config, out)
        return 0
    except BaseException as err:
        out.discard()
        if isinstance(err, _UsageError):
            print(f"usage error: {err}", file=sys.stderr)
            return 2
        if isinstance(err, (ValidationError, DataFormatError,
                            FileNotFoundError)):
            print(f"error: {err}", file=sys.stderr)
            return 3
        if isinstance(err, (ConvergenceError, StationaryStateError,
                            StateError, TrainingDivergedError)):
            print(f"numeric failure: {err}", file=sys.stderr)
            return 4
        raise


if __name__ == "__main__":
    sys.exit(main())
