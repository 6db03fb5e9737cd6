"""Interaction-energy distributions across ring sizes."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .metropolis import make_rng, random_initial
from .model import ModelParams, interaction_energies


class EnergyAnalysisError(ValueError):
    pass


class Normalization(str, enum.Enum):
    PER_SITE = "per-site"
    ZSCORE = "zscore"
    PER_SITE_ZSCORE = "per-site-zscore"


@dataclass(frozen=True)
class EnergySample:
    n_sites: int
    density: float
    energies: np.ndarray


@dataclass(frozen=True)
class NormalizedDistribution:
    values: np.ndarray
    bin_edges: np.ndarray
    bin_counts: np.ndarray
    normalization: Normalization
    n_sites: int = 0

    @property
    def bin_density(self) -> np.ndarray:
        widths = np.diff(self.bin_edges)
        return self.bin_counts / (self.bin_counts.sum() * widths)


@dataclass(frozen=True)
class Divergence:
    ks: float
    l1: float


def sample_energies(
    n_sites: int, density: float, n_samples: int, params: ModelParams, seed: int
) -> EnergySample:
    """Interaction energy of ``n_samples`` independent random configurations."""
    if n_samples < 1:
        raise EnergyAnalysisError(f"n_samples must be >= 1, got {n_samples}")
    params.check_ring(n_sites)
    rng = make_rng(seed)
    configs = np.stack([random_initial(n_sites, density, rng) for _ in range(n_samples)])
    return EnergySample(n_sites, density, interaction_energies(configs, params))


def normalized_values(sample: EnergySample, mode: Normalization) -> np.ndarray:
    mode = Normalization(mode)
    e = np.asarray(sample.energies, dtype=np.float64)
    if e.size == 0:
        raise EnergyAnalysisError("cannot normalize an empty sample")
    if mode in (Normalization.PER_SITE, Normalization.PER_SITE_ZSCORE):
        e = e / sample.n_sites
    if mode in (Normalization.ZSCORE, Normalization.PER_SITE_ZSCORE):
        std = e.std()
        if not std > 1e-12 * max(1.0, np.abs(e).max()):
            raise EnergyAnalysisError(
                f"energy sample for N={sample.n_sites} has zero variance; cannot z-score"
            )
        e = (e - e.mean()) / std
    return e


def shared_bin_edges(value_sets) -> np.ndarray:
    """Freedman-Diaconis edges computed on the pooled values."""
    pooled = np.concatenate([np.asarray(v, dtype=np.float64) for v in value_sets])
    if np.ptp(pooled) == 0:
        c = pooled[0]
        return np.array([c - 0.5, c + 0.5])
    return np.histogram_bin_edges(pooled, bins="fd")


def normalize(sample: EnergySample, mode: Normalization, bin_edges=None) -> NormalizedDistribution:
    mode = Normalization(mode)
    values = normalized_values(sample, mode)
    edges = shared_bin_edges([values]) if bin_edges is None else np.asarray(bin_edges)
    counts, _ = np.histogram(values, bins=edges)
    if counts.sum() != values.size:
        raise EnergyAnalysisError("bin edges do not cover every value")
    return NormalizedDistribution(values, edges, counts, mode, sample.n_sites)


def normalize_all(samples, mode: Normalization) -> list[NormalizedDistribution]:
    """Normalize several samples onto one shared set of bin edges."""
    values = [normalized_values(s, mode) for s in samples]
    edges = shared_bin_edges(values)
    return [normalize(s, mode, edges) for s in samples]


def ks_statistic(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic: sup |F_a - F_b|."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def compare_distributions(a: NormalizedDistribution, b: NormalizedDistribution) -> Divergence:
    if a.normalization != b.normalization:
        raise EnergyAnalysisError(
            f"normalization mismatch: {a.normalization.value} vs {b.normalization.value}"
        )
    ks = ks_statistic(a.values, b.values)
    if np.array_equal(a.bin_edges, b.bin_edges):
        l1 = float(np.abs(a.bin_counts / a.bin_counts.sum() - b.bin_counts / b.bin_counts.sum()).sum())
    else:
        edges = shared_bin_edges([a.values, b.values])
        ca = np.histogram(a.values, bins=edges)[0] / a.values.size
        cb = np.histogram(b.values, bins=edges)[0] / b.values.size
        l1 = float(np.abs(ca - cb).sum())
    return Divergence(ks, l1)


def divergence_matrix(dists) -> tuple[np.ndarray, np.ndarray]:
    n = len(dists)
    ks = np.zeros((n, n))
    l1 = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = compare_distributions(dists[i], dists[j])
            ks[i, j] = ks[j, i] = d.ks
            l1[i, j] = l1[j, i] = d.l1
    return ks, l1


def export_histogram(dist: NormalizedDistribution, path) -> None:
    if not str(path):
        raise EnergyAnalysisError("empty output path")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "count", "density"])
        for left, right, count, dens in zip(
            dist.bin_edges[:-1], dist.bin_edges[1:], dist.bin_counts, dist.bin_density
        ):
            writer.writerow([repr(float(left)), repr(float(right)), int(count), repr(float(dens))])


def read_histogram(path) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of ``export_histogram``: ``(bin_edges, counts)``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return np.array([]), np.array([], dtype=np.int64)
    edges = [float(r["bin_left"]) for r in rows] + [float(rows[-1]["bin_right"])]
    return np.array(edges), np.array([int(r["count"]) for r in rows])


def write_divergence_matrix(sizes, ks, l1, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_sites_a", "n_sites_b", "ks", "l1"])
        for i, a in enumerate(sizes):
            for j, b in enumerate(sizes):
                writer.writerow([a, b, repr(float(ks[i, j])), repr(float(l1[i, j]))])


def analyze(sizes, n_samples, density, params: ModelParams, mode, seed, out_dir=None):
    """Sample, normalize on shared bins and compare every pair of ring sizes."""
    samples = [
        sample_energies(n, density, n_samples, params, seed + k) for k, n in enumerate(sizes)
    ]
    dists = normalize_all(samples, mode)
    ks, l1 = divergence_matrix(dists)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for n, dist in zip(sizes, dists):
            export_histogram(dist, out / f"energy_hist_N{n}.csv")
        write_divergence_matrix(sizes, ks, l1, out / "divergence.csv")
    return dists, ks, l1
