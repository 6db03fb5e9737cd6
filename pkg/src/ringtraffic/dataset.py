"""Supervised windows cut from simulated trajectories, plus their file format."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .formats import LengthMismatchError, read_container, write_container
from .metropolis import DeltaMode, SimulationConfig, derive_seed, make_rng, run_ensemble
from .model import ModelParams

DATASET_MAGIC = b"TRMC0001"


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    """``inputs`` is (count, W, N) and ``targets`` is (count, N), both uint8 0/1."""

    inputs: np.ndarray
    targets: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        inputs = np.ascontiguousarray(self.inputs, dtype=np.uint8)
        targets = np.ascontiguousarray(self.targets, dtype=np.uint8)
        if inputs.ndim != 3 or targets.ndim != 2:
            raise DatasetError("inputs must be (count, W, N) and targets (count, N)")
        if inputs.shape[0] != targets.shape[0] or inputs.shape[2] != targets.shape[1]:
            raise DatasetError(f"inconsistent shapes {inputs.shape} and {targets.shape}")
        inputs.setflags(write=False)
        targets.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "targets", targets)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def n_sites(self) -> int:
        return self.inputs.shape[2]

    @property
    def window(self) -> int:
        return self.inputs.shape[1]

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        prov = dict(self.provenance, indices=indices.tolist())
        return Dataset(self.inputs[indices], self.targets[indices], prov)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            np.array_equal(self.inputs, other.inputs)
            and np.array_equal(self.targets, other.targets)
            and self.provenance == other.provenance
        )

    __hash__ = None


@dataclass(frozen=True)
class SplitDataset:
    train: Dataset
    test: Dataset
    ratio: float


def generate_dataset(
    n_runs: int,
    n_sites: int,
    window: int,
    params: ModelParams,
    base_seed: int,
    delta_mode: DeltaMode = DeltaMode.EXCHANGE_DELTA,
    workers: int = 1,
    revisit_moved: bool = False,
) -> Dataset:
    """One sample per trajectory: rows ``0..W-1`` are the input, row ``W`` the target."""
    if window < 1:
        raise DatasetError(f"window must be >= 1, got {window}")
    cfg = SimulationConfig(params, n_sites, window, 0, DeltaMode(delta_mode), revisit_moved)
    runs = run_ensemble(cfg, n_runs, base_seed, workers=workers)
    states = np.stack([r.states for r in runs])
    provenance = {
        "params": params.to_dict(),
        "base_seed": int(base_seed),
        "n_runs": int(n_runs),
        "delta_mode": DeltaMode(delta_mode).value,
        "revisit_moved": bool(revisit_moved),
        "generator": f"ringtraffic {__version__}",
    }
    return Dataset(states[:, :window], states[:, window], provenance)


def regenerate(dataset: Dataset, workers: int = 1) -> Dataset:
    """Rebuild a generated dataset (or a subset of one) from its provenance."""
    prov = dataset.provenance
    full = generate_dataset(
        prov["n_runs"],
        dataset.n_sites,
        dataset.window,
        ModelParams(**prov["params"]),
        prov["base_seed"],
        prov["delta_mode"],
        workers=workers,
        revisit_moved=prov.get("revisit_moved", False),
    )
    if "indices" in prov:
        full = full.subset(prov["indices"])
    return full


def trajectory_seed(dataset: Dataset, index: int) -> int:
    """Simulation seed of sample ``index`` of a generated dataset."""
    prov = dataset.provenance
    run = prov["indices"][index] if "indices" in prov else index
    return derive_seed(prov["base_seed"], run)


def split(dataset: Dataset, ratio: float, seed: int) -> SplitDataset:
    """Uniform random partition; the test side gets ``round(ratio * count)`` samples."""
    if not 0 < ratio < 1:
        raise DatasetError(f"split ratio must lie in (0, 1), got {ratio}")
    n = len(dataset)
    perm = make_rng(seed).permutation(n)
    n_test = int(round(ratio * n))
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return SplitDataset(dataset.subset(train_idx), dataset.subset(test_idx), ratio)


def save_dataset(dataset: Dataset, path) -> None:
    """Bit-packed rows, each row of N sites padded to whole bytes (MSB first)."""
    header = {
        "n_sites": dataset.n_sites,
        "window": dataset.window,
        "count": len(dataset),
        "provenance": dataset.provenance,
        "bit_order": "big",
        "row_bytes": _row_bytes(dataset.n_sites),
        "endianness": "payload is bit-packed bytes; byte order does not apply",
    }
    rows = np.concatenate([dataset.inputs, dataset.targets[:, None, :]], axis=1)
    payload = np.packbits(rows, axis=-1, bitorder="big").tobytes()
    write_container(path, DATASET_MAGIC, header, payload)


def load_dataset(path) -> Dataset:
    header, payload = read_container(path, DATASET_MAGIC)
    n, w, count = header["n_sites"], header["window"], header["count"]
    row_bytes = _row_bytes(n)
    if len(payload) != count * (w + 1) * row_bytes:
        raise LengthMismatchError(
            f"{path}: payload is {len(payload)} bytes, header implies {count * (w + 1) * row_bytes}"
        )
    packed = np.frombuffer(payload, dtype=np.uint8).reshape(count, w + 1, row_bytes)
    rows = np.unpackbits(packed, axis=-1, count=n, bitorder="big")
    return Dataset(rows[:, :w], rows[:, w], header["provenance"])


def _row_bytes(n_sites: int) -> int:
    return (n_sites + 7) // 8


def export_csv(dataset: Dataset, path) -> None:
    """One line per row: sample, row (W = target), then the N site states."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample", "row"] + [f"s{j}" for j in range(dataset.n_sites)])
        for k in range(len(dataset)):
            for t in range(dataset.window):
                writer.writerow([k, t, *dataset.inputs[k, t].tolist()])
            writer.writerow([k, dataset.window, *dataset.targets[k].tolist()])


def check_conservation(dataset: Dataset) -> bool:
    counts = dataset.inputs.sum(axis=2, dtype=np.int64)
    return bool(
        (counts == counts[:, :1]).all() and (dataset.targets.sum(axis=1) == counts[:, 0]).all()
    )

