"""Ising-type energy model of single-lane traffic on a periodic ring.

A configuration is a 1-D array of 0/1 site occupancies. Vehicles travel in
the direction of increasing index, wrapping modulo ``N``. Each occupied site
interacts with the occupied sites strictly ahead of it at ring distance
``1 .. look_ahead - 1`` with strength ``k0 / d**2``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np


class ModelError(ValueError):
    """Invalid parameters or configuration for the energy model."""


@dataclass(frozen=True)
class ModelParams:
    k0: float = 1.0
    b: float = 1.0
    look_ahead: int = 5
    beta: float = 1.0
    a0: float = 1.0
    density: float = 0.5

    def __post_init__(self):
        if int(self.look_ahead) != self.look_ahead or self.look_ahead < 1:
            raise ModelError(f"look_ahead must be an integer >= 1, got {self.look_ahead}")
        if not self.beta >= 0:
            raise ModelError(f"beta must be >= 0, got {self.beta}")
        if not 0 < self.a0 <= 1:
            raise ModelError(f"a0 must lie in (0, 1], got {self.a0}")
        if not 0 <= self.density <= 1:
            raise ModelError(f"density must lie in [0, 1], got {self.density}")

    def check_ring(self, n_sites: int) -> None:
        if n_sites < 2:
            raise ModelError(f"ring needs at least 2 sites, got {n_sites}")
        if self.look_ahead >= n_sites:
            raise ModelError(
                f"look_ahead={self.look_ahead} must be smaller than the ring size {n_sites}"
            )

    def to_dict(self) -> dict:
        return asdict(self)


def as_config(sites) -> np.ndarray:
    """Validate and copy a site sequence into a uint8 0/1 array."""
    arr = np.asarray(sites)
    if arr.ndim != 1 or arr.size < 2:
        raise ModelError("a ring configuration is a 1-D sequence of at least 2 sites")
    if not np.isin(arr, (0, 1)).all():
        raise ModelError("site states must be 0 or 1")
    return arr.astype(np.uint8)


def vehicle_count(config) -> int:
    return int(np.asarray(config).sum())


def neighborhood(config, i: int, look_ahead: int) -> list[int]:
    """Indices of the sites ahead of ``i`` at ring distance below ``look_ahead``."""
    n = len(config)
    if not 0 <= i < n:
        raise ModelError(f"site index {i} out of range for ring of {n} sites")
    if look_ahead < 1 or look_ahead >= n:
        raise ModelError(f"look_ahead must satisfy 1 <= d_l < N, got d_l={look_ahead}, N={n}")
    return [(i + k) % n for k in range(1, look_ahead)]


def interaction_coefficient(d: int, k0: float) -> float:
    if d < 1:
        raise ModelError(f"interaction distance must be >= 1, got {d}")
    return k0 / (d * d)


def coefficient_table(params: ModelParams) -> np.ndarray:
    """``K(d)`` for ``d = 1 .. look_ahead - 1``."""
    return np.array(
        [interaction_coefficient(d, params.k0) for d in range(1, params.look_ahead)],
        dtype=np.float64,
    )


def site_hamiltonian(config, i: int, params: ModelParams) -> float:
    s = np.asarray(config)
    params.check_ring(len(s))
    nbrs = neighborhood(s, i, params.look_ahead)
    if s[i] == 0:
        return 0.0
    interaction = sum(
        interaction_coefficient(k, params.k0) * float(s[j]) for k, j in enumerate(nbrs, start=1)
    )
    return -params.b * float(s[i]) - interaction


def total_hamiltonian(config, params: ModelParams) -> float:
    """Site Hamiltonians summed over the ring, external field included."""
    s = np.asarray(config, dtype=np.float64)
    return -params.b * float(s.sum()) + total_interaction_energy(s, params)


def total_interaction_energy(config, params: ModelParams) -> float:
    """Interaction part of the Hamiltonian summed over all sites.

    Each ordered pair (i, j ahead of i) is counted once.
    """
    s = np.asarray(config, dtype=np.float64)
    params.check_ring(s.size)
    energy = 0.0
    for d, coeff in enumerate(coefficient_table(params), start=1):
        energy -= coeff * float(np.dot(s, np.roll(s, -d)))
    return energy


def interaction_energies(configs, params: ModelParams) -> np.ndarray:
    """Vectorised ``total_interaction_energy`` over the rows of a 2-D array."""
    s = np.asarray(configs, dtype=np.float64)
    if s.ndim != 2:
        raise ModelError("expected a 2-D array of configurations")
    params.check_ring(s.shape[1])
    energy = np.zeros(s.shape[0])
    for d, coeff in enumerate(coefficient_table(params), start=1):
        energy -= coeff * np.einsum("ij,ij->i", s, np.roll(s, -d, axis=1))
    return energy


def _net_neighbours(s, i: int, j: int, look_ahead: int) -> list[int]:
    # per distance d: occupied neighbours of i minus occupied neighbours of j,
    # ignoring the two exchanged sites themselves
    n = len(s)
    skip = (i, j)
    net = []
    for d in range(1, look_ahead):
        m = 0
        for p, sign in ((i, 1), (j, -1)):
            for q in ((p + d) % n, (p - d) % n):
                if q not in skip and s[q]:
                    m += sign
        net.append(m)
    return net


def exchange_delta(config, i: int, params: ModelParams) -> float:
    """Energy change of moving the vehicle at ``i`` into the empty site ``i + 1``.

    Only pairs involving the moving vehicle change; the field term is
    invariant because the vehicle count is. The sum of ``m_d / d^2`` is
    formed exactly over the integers, so the result carries at most two
    roundings even when many interaction terms cancel.
    """
    s = np.asarray(config)
    n = len(s)
    params.check_ring(n)
    if not 0 <= i < n:
        raise ModelError(f"site index {i} out of range for ring of {n} sites")
    j = (i + 1) % n
    if s[i] != 1 or s[j] != 0:
        raise ModelError(f"sites ({i}, {j}) are not a legal (1, 0) exchange pair")
    net = _net_neighbours(s, i, j, params.look_ahead)
    common = math.lcm(*range(1, params.look_ahead)) ** 2 if params.look_ahead > 1 else 1
    numerator = sum(m * (common // (d * d)) for d, m in enumerate(net, start=1))
    return params.k0 * (numerator / common)
