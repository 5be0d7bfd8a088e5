"""Training corpora: sweep, map and sub-map datasets with file storage.

Generation draws device realizations around a mean geometry (Gaussian
jitter on the gate parameters), runs the transport pipeline, and collects
the results in columnar arrays.  Each record's sampling seed derives from
(dataset seed, record index, attempt), so regeneration is byte-identical
and a failed device resamples deterministically without disturbing its
neighbours.

Storage is a directory: one human-readable JSON manifest plus one flat
little-endian binary per array.  Array files carry a small self-deciding
header (magic, kind, dtype, shape) so they parse anywhere without this
package.  Bulk currents are float32; axes and probability vectors keep
full double precision.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .device import DeviceSpec, device_from_dict, device_to_dict, sample_device
from .errors import (ConvergenceError, DataFormatError, StateError,
                     StationaryStateError, ValidationError)
from .transport import SimulateOptions, simulate_map, simulate_sweep

logger = logging.getLogger(__name__)

ARRAY_MAGIC = b"QDA1"
DATASET_VERSION = 1
N_STATES = 4


# ---------------------------------------------------------------------------
# flat binary arrays

def write_array(path, array: np.ndarray, kind: str) -> None:
    """Write one array: magic, JSON header (kind, dtype, shape), raw bytes."""
    array = np.ascontiguousarray(array)
    dtype = array.dtype.newbyteorder("<")
    header = json.dumps({"kind": kind, "dtype": dtype.str,
                         "shape": list(array.shape)}).encode()
    with open(path, "wb") as fh:
        fh.write(ARRAY_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(array.astype(dtype, copy=False).tobytes())


def read_array(path) -> tuple[np.ndarray, str]:
    """Read an array file back; returns (array, kind).

    Raises
    ------
    DataFormatError
        Wrong magic, unparseable header, or byte-count mismatch.
    """
    raw = Path(path).read_bytes()
    if raw[:4] != ARRAY_MAGIC:
        raise DataFormatError(f"{path}: not an array file (bad magic {raw[:4]!r})")
    hlen = int(np.frombuffer(raw[4:8], dtype="<u4")[0])
    try:
        header = json.loads(raw[8:8 + hlen].decode())
        dtype = np.dtype(header["dtype"])
        shape = tuple(int(s) for s in header["shape"])
        kind = header["kind"]
    except (ValueError, KeyError, TypeError) as exc:
        raise DataFormatError(f"{path}: unreadable header ({exc})") from exc
    payload = raw[8 + hlen:]
    expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
    if len(payload) != expected:
        raise DataFormatError(
            f"{path}: expected {expected} payload bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype=dtype).reshape(shape).copy(), kind


# ---------------------------------------------------------------------------
# dataset containers

@dataclass(frozen=True)
class DatasetManifest:
    """Provenance of one generated dataset."""

    kind: str                  # 'sweep' | 'map' | 'submap'
    count: int
    shape: tuple[int, ...]
    seed: int
    rel_sigma: float
    mean_device: DeviceSpec | None
    normalization: dict = field(default_factory=lambda: {"mode": "raw"})


@dataclass(frozen=True)
class SweepRecord:
    """One device's plunger sweep: current and charge versus voltage."""

    device: DeviceSpec
    v_p: np.ndarray
    current: np.ndarray
    charge: np.ndarray


@dataclass(eq=False)
class SweepDataset:
    manifest: DatasetManifest
    v_p: np.ndarray            # shared voltage axis, (n_points,)
    current: np.ndarray        # (count, n_points) float32
    charge: np.ndarray         # (count, n_points) int32
    devices: tuple[DeviceSpec, ...]

    def record(self, i: int) -> SweepRecord:
        return SweepRecord(device=self.devices[i], v_p=self.v_p,
                           current=self.current[i], charge=self.charge[i])


@dataclass(frozen=True)
class MapRecord:
    """One device's 2-D plunger-plunger current and state map."""

    device: DeviceSpec
    v_p1: np.ndarray
    v_p2: np.ndarray
    current: np.ndarray
    state: np.ndarray


@dataclass(eq=False)
class MapDataset:
    manifest: DatasetManifest
    v_p1: np.ndarray           # x axis, (n_pixels,)
    v_p2: np.ndarray           # y axis, (n_pixels,)
    current: np.ndarray        # (count, ny, nx) float32
    state: np.ndarray          # (count, ny, nx) int8
    devices: tuple[DeviceSpec, ...]

    def record(self, i: int) -> MapRecord:
        return MapRecord(device=self.devices[i], v_p1=self.v_p1, v_p2=self.v_p2,
                         current=self.current[i], state=self.state[i])


@dataclass(frozen=True)
class SubMapSample:
    """A window cut from a map with its region-averaged state probabilities."""

    pixels: np.ndarray
    prob: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.prob)
        if p.shape != (N_STATES,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValidationError(f"not a probability vector: {p}")


@dataclass(eq=False)
class SubMapDataset:
    manifest: DatasetManifest
    pixels: np.ndarray         # (count, size, size) float32
    prob: np.ndarray           # (count, 4) float64

    def record(self, i: int) -> SubMapSample:
        return SubMapSample(pixels=self.pixels[i], prob=self.prob[i])


# ---------------------------------------------------------------------------
# generation

def _record_seed(seed: int, index: int, attempt: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=seed, spawn_key=(index, attempt))


_MAX_RESAMPLE = 25


def gen_sweep_dataset(mean: DeviceSpec, n_devices: int, seed: int,
                      rel_sigma: float = 0.05, gate_index: int = 1,
                      v_range: tuple[float, float] = (0.0, 400.0),
                      n_points: int = 512,
                      options: SimulateOptions | None = None) -> SweepDataset:
    """Plunger sweeps of `n_devices` Gaussian realizations of `mean`.

    Devices whose solve fails are logged and resampled with a fresh
    sub-seed, so the output always holds exactly `n_devices` records.
    """
    if n_devices < 1:
        raise ValidationError(f"n_devices must be >= 1, got {n_devices}")
    v_p = np.linspace(v_range[0], v_range[1], n_points)
    current = np.empty((n_devices, n_points), dtype=np.float32)
    charge = np.empty((n_devices, n_points), dtype=np.int32)
    devices = []
    for i in range(n_devices):
        for attempt in range(_MAX_RESAMPLE):
            dev = sample_device(mean, rel_sigma, _record_seed(seed, i, attempt))
            try:
                res = simulate_sweep(dev, gate_index, v_p, options)
            except (ConvergenceError, StateError, StationaryStateError) as exc:
                logger.warning("sweep record %d attempt %d failed (%s); resampling",
                               i, attempt, exc)
                continue
            current[i] = res.current
            charge[i] = res.charge
            devices.append(dev)
            break
        else:
            raise ConvergenceError(
                f"record {i}: no valid device in {_MAX_RESAMPLE} resamples",
                residual=float("nan"), iterations=_MAX_RESAMPLE)
    manifest = DatasetManifest(kind="sweep", count=n_devices, shape=(n_points,),
                               seed=seed, rel_sigma=rel_sigma, mean_device=mean)
    return SweepDataset(manifest=manifest, v_p=v_p, current=current,
                        charge=charge, devices=tuple(devices))


def gen_map_dataset(mean: DeviceSpec, n_devices: int, seed: int,
                    rel_sigma: float = 0.05, gate_x: int = 1, gate_y: int = 3,
                    v_range: tuple[float, float] = (0.0, 400.0),
                    n_pixels: int = 100,
                    options: SimulateOptions | None = None,
                    threads: int = 1) -> MapDataset:
    """2-D plunger-plunger current/state maps of sampled devices."""
    if n_devices < 1:
        raise ValidationError(f"n_devices must be >= 1, got {n_devices}")
    axis = np.linspace(v_range[0], v_range[1], n_pixels)
    current = np.empty((n_devices, n_pixels, n_pixels), dtype=np.float32)
    state = np.empty((n_devices, n_pixels, n_pixels), dtype=np.int8)
    devices = []
    for i in range(n_devices):
        for attempt in range(_MAX_RESAMPLE):
            dev = sample_device(mean, rel_sigma, _record_seed(seed, i, attempt))
            try:
                res = simulate_map(dev, gate_x, gate_y, axis, axis, options,
                                   threads=threads)
            except (ConvergenceError, StateError, StationaryStateError) as exc:
                logger.warning("map record %d attempt %d failed (%s); resampling",
                               i, attempt, exc)
                continue
            current[i] = res.current
            state[i] = res.state
            devices.append(dev)
            break
        else:
            raise ConvergenceError(
                f"record {i}: no valid device in {_MAX_RESAMPLE} resamples",
                residual=float("nan"), iterations=_MAX_RESAMPLE)
    manifest = DatasetManifest(kind="map", count=n_devices,
                               shape=(n_pixels, n_pixels), seed=seed,
                               rel_sigma=rel_sigma, mean_device=mean)
    return MapDataset(manifest=manifest, v_p1=axis, v_p2=axis, current=current,
                      state=state, devices=tuple(devices))


def extract_submaps(maps: MapDataset, count: int, seed: int,
                    size: int = 30) -> SubMapDataset:
    """Uniformly sampled windows with window-averaged state probabilities.

    Window positions and source maps are drawn with replacement; the label
    is the mean of the per-pixel one-hot state vectors.
    """
    ny, nx = maps.current.shape[1:]
    if size < 1 or size > min(ny, nx):
        raise ValidationError(f"window size {size} does not fit {ny}x{nx} maps")
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    pixels = np.empty((count, size, size), dtype=np.float32)
    prob = np.empty((count, N_STATES))
    for k in range(count):
        m = int(rng.integers(0, maps.current.shape[0]))
        y0 = int(rng.integers(0, ny - size + 1))
        x0 = int(rng.integers(0, nx - size + 1))
        pixels[k] = maps.current[m, y0:y0 + size, x0:x0 + size]
        window = maps.state[m, y0:y0 + size, x0:x0 + size]
        prob[k] = np.bincount(window.ravel(), minlength=N_STATES) / (size * size)
    manifest = DatasetManifest(kind="submap", count=count, shape=(size, size),
                               seed=seed, rel_sigma=maps.manifest.rel_sigma,
                               mean_device=maps.manifest.mean_device,
                               normalization=dict(maps.manifest.normalization))
    return SubMapDataset(manifest=manifest, pixels=pixels, prob=prob)


# ---------------------------------------------------------------------------
# normalization

def normalize_current(dataset, mode="max-abs"):
    """Rescale the current arrays; labels and axes are untouched.

    mode 'max-abs' divides each record by its own peak |current| (records
    that are identically zero are left as they are and flagged in the
    manifest); a number divides every record by that constant.
    """
    currents = dataset.pixels if isinstance(dataset, SubMapDataset) else dataset.current
    flat = currents.reshape(currents.shape[0], -1)
    if mode == "max-abs":
        scale = np.abs(flat).max(axis=1).astype(np.float64)
        skipped = np.flatnonzero(scale == 0.0)
        scale[scale == 0.0] = 1.0
        meta = {"mode": "max-abs"}
        if skipped.size:
            meta["skipped"] = [int(i) for i in skipped]
            logger.warning("normalize_current: %d all-zero records left unscaled",
                           skipped.size)
    else:
        c = float(mode)
        if c <= 0:
            raise ValidationError(f"normalization constant must be > 0, got {c}")
        scale = np.full(currents.shape[0], c)
        meta = {"mode": "constant", "scale": c}
    shape = (-1,) + (1,) * (currents.ndim - 1)
    scaled = (currents.astype(np.float64) / scale.reshape(shape)).astype(currents.dtype)
    manifest = replace(dataset.manifest, normalization=meta)
    if isinstance(dataset, SubMapDataset):
        return replace(dataset, manifest=manifest, pixels=scaled)
    return replace(dataset, manifest=manifest, current=scaled)


# ---------------------------------------------------------------------------
# save / load

def _manifest_dict(ds, arrays: dict[str, str], devices=None) -> dict:
    man = ds.manifest
    out = {
        "format": "qdarray-dataset",
        "version": DATASET_VERSION,
        "kind": man.kind,
        "count": man.count,
        "shape": list(man.shape),
        "seed": man.seed,
        "rel_sigma": man.rel_sigma,
        "normalization": man.normalization,
        "mean_device": device_to_dict(man.mean_device) if man.mean_device else None,
        "arrays": arrays,
    }
    if devices is not None:
        out["devices"] = [device_to_dict(d) for d in devices]
    return out


def save_dataset(dataset, path) -> None:
    """Write a dataset directory: manifest.json plus one file per array."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    kind = dataset.manifest.kind
    if isinstance(dataset, SweepDataset):
        arrays = {"v_p": ("v_p.qda", dataset.v_p),
                  "current": ("current.qda", dataset.current),
                  "charge": ("charge.qda", dataset.charge)}
        devices = dataset.devices
    elif isinstance(dataset, MapDataset):
        arrays = {"v_p1": ("v_p1.qda", dataset.v_p1),
                  "v_p2": ("v_p2.qda", dataset.v_p2),
                  "current": ("current.qda", dataset.current),
                  "state": ("state.qda", dataset.state)}
        devices = dataset.devices
    elif isinstance(dataset, SubMapDataset):
        arrays = {"pixels": ("pixels.qda", dataset.pixels),
                  "prob": ("prob.qda", dataset.prob)}
        devices = None
    else:
        raise ValidationError(f"cannot save object of type {type(dataset).__name__}")
    for name, (fname, arr) in arrays.items():
        write_array(path / fname, arr, kind=f"{kind}/{name}")
    manifest = _manifest_dict(dataset, {n: f for n, (f, _) in arrays.items()},
                              devices)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))


_EXPECTED_ARRAYS = {"sweep": ("v_p", "current", "charge"),
                    "map": ("v_p1", "v_p2", "current", "state"),
                    "submap": ("pixels", "prob")}


def load_dataset(path):
    """Load a dataset directory written by save_dataset.

    Raises
    ------
    DataFormatError
        Missing or malformed manifest, version or kind mismatch, payload
        shape or count inconsistent with the manifest.
    """
    path = Path(path)
    try:
        man = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise DataFormatError(f"{path}: no manifest.json") from exc
    except ValueError as exc:
        raise DataFormatError(f"{path}: manifest is not valid JSON") from exc
    if man.get("format") != "qdarray-dataset":
        raise DataFormatError(f"{path}: not a dataset directory")
    if man.get("version") != DATASET_VERSION:
        raise DataFormatError(
            f"{path}: dataset version {man.get('version')} unsupported "
            f"(expected {DATASET_VERSION})")
    kind = man.get("kind")
    if kind not in _EXPECTED_ARRAYS:
        raise DataFormatError(f"{path}: unknown dataset kind {kind!r}")
    data = {}
    for name in _EXPECTED_ARRAYS[kind]:
        try:
            fname = man["arrays"][name]
        except KeyError as exc:
            raise DataFormatError(f"{path}: manifest lists no array {name!r}") from exc
        arr, akind = read_array(path / fname)
        if akind != f"{kind}/{name}":
            raise DataFormatError(
                f"{path}/{fname}: holds {akind!r}, manifest expects {kind}/{name}")
        data[name] = arr
    count = int(man["count"])
    mean_device = device_from_dict(man["mean_device"]) if man["mean_device"] else None
    manifest = DatasetManifest(kind=kind, count=count,
                               shape=tuple(man["shape"]), seed=man["seed"],
                               rel_sigma=man["rel_sigma"], mean_device=mean_device,
                               normalization=man["normalization"])
    if kind == "sweep":
        if data["current"].shape != (count,) + manifest.shape or \
                data["charge"].shape != data["current"].shape:
            raise DataFormatError(f"{path}: payload shapes disagree with manifest")
        devices = tuple(device_from_dict(d) for d in man["devices"])
        if len(devices) != count:
            raise DataFormatError(f"{path}: {len(devices)} devices for {count} records")
        return SweepDataset(manifest=manifest, v_p=data["v_p"],
                            current=data["current"], charge=data["charge"],
                            devices=devices)
    if kind == "map":
        if data["current"].shape != (count,) + manifest.shape or \
                data["state"].shape != data["current"].shape:
            raise DataFormatError(f"{path}: payload shapes disagree with manifest")
        devices = tuple(device_from_dict(d) for d in man["devices"])
        if len(devices) != count:
            raise DataFormatError(f"{path}: {len(devices)} devices for {count} records")
        return MapDataset(manifest=manifest, v_p1=data["v_p1"], v_p2=data["v_p2"],
                          current=data["current"], state=data["state"],
                          devices=devices)
    if data["pixels"].shape != (count,) + manifest.shape or \
            data["prob"].shape != (count, N_STATES):
        raise DataFormatError(f"{path}: payload shapes disagree with manifest")
    return SubMapDataset(manifest=manifest, pixels=data["pixels"],
                         prob=data["prob"])


# ---------------------------------------------------------------------------
# external map stacks (measured-style data entry point)

@dataclass(eq=False)
class MapStack:
    """A stack of 2-D current maps over a third control axis.

    The stand-in for experimental data: x/y are the in-map gate axes, z is
    the stacked control (for example a barrier voltage per slice).  All
    three axes must be strictly increasing.
    """

    maps: np.ndarray        # (n_slices, ny, nx)
    x_values: np.ndarray
    y_values: np.ndarray
    z_values: np.ndarray

    def __post_init__(self):
        maps = np.asarray(self.maps)
        if maps.ndim != 3:
            raise ValidationError(f"stack must be 3-D, got shape {maps.shape}")
        n, ny, nx = maps.shape
        if (len(self.z_values), len(self.y_values), len(self.x_values)) != (n, ny, nx):
            raise ValidationError("axis lengths disagree with the stack shape")
        for name, ax in (("x", self.x_values), ("y", self.y_values),
                         ("z", self.z_values)):
            if len(ax) > 1 and not np.all(np.diff(ax) > 0):
                raise ValidationError(f"{name} axis must be strictly increasing")


def save_map_stack(stack: MapStack, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = {"maps": stack.maps.astype(np.float32),
              "x_values": stack.x_values, "y_values": stack.y_values,
              "z_values": stack.z_values}
    for name, arr in arrays.items():
        write_array(path / f"{name}.qda", arr, kind=f"stack/{name}")
    manifest = {"format": "qdarray-dataset", "version": DATASET_VERSION,
                "kind": "stack", "count": int(stack.maps.shape[0]),
                "shape": list(stack.maps.shape[1:]),
                "arrays": {n: f"{n}.qda" for n in arrays}}
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_map_stack(path) -> MapStack:
    path = Path(path)
    try:
        man = json.loads((path / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise DataFormatError(f"{path}: no manifest.json") from exc
    if man.get("kind") != "stack" or man.get("version") != DATASET_VERSION:
        raise DataFormatError(f"{path}: not a map-stack directory")
    data = {}
    for name in ("maps", "x_values", "y_values", "z_values"):
        arr, akind = read_array(path / man["arrays"][name])
        if akind != f"stack/{name}":
            raise DataFormatError(f"{path}: array {name} holds {akind!r}")
        data[name] = arr
    return MapStack(maps=data["maps"], x_values=data["x_values"],
                    y_values=data["y_values"], z_values=data["z_values"])


def map_stack_from_csv(paths, x_values, y_values, z_values,
                       delimiter: str = ",") -> MapStack:
    """Assemble a stack from per-slice CSV grids plus user axis metadata."""
    maps = []
    for p in paths:
        try:
            maps.append(np.loadtxt(p, delimiter=delimiter, ndmin=2))
        except ValueError as exc:
            raise DataFormatError(f"{p}: not a numeric CSV grid ({exc})") from exc
    shapes = {m.shape for m in maps}
    if len(shapes) != 1:
        raise DataFormatError(f"CSV slices disagree in shape: {sorted(shapes)}")
    return MapStack(maps=np.stack(maps).astype(np.float32),
                    x_values=np.asarray(x_values, dtype=float),
                    y_values=np.asarray(y_values, dtype=float),
                    z_values=np.asarray(z_values, dtype=float))


# ---------------------------------------------------------------------------
# CSV export

def export_record_csv(dataset, index: int, path) -> None:
    """Write one record as CSV for plotting."""
    path = Path(path)
    if isinstance(dataset, SweepDataset):
        rec = dataset.record(index)
        rows = np.column_stack([rec.v_p, rec.current, rec.charge])
        np.savetxt(path, rows, delimiter=",", header="v_p_mV,current,charge",
                   comments="")
    elif isinstance(dataset, MapDataset):
        rec = dataset.record(index)
        xx, yy = np.meshgrid(rec.v_p1, rec.v_p2)
        rows = np.column_stack([xx.ravel(), yy.ravel(),
                                rec.current.ravel(), rec.state.ravel()])
        np.savetxt(path, rows, delimiter=",",
                   header="v_p1_mV,v_p2_mV,current,state", comments="")
    elif isinstance(dataset, SubMapDataset):
        rec = dataset.record(index)
        prob = ",".join(f"{p:.6f}" for p in rec.prob)
        np.savetxt(path, rec.pixels, delimiter=",",
                   header=f"prob_sc_barrier_sd_dd={prob}")
    else:
        raise ValidationError(f"cannot export object of type {type(dataset).__name__}")
