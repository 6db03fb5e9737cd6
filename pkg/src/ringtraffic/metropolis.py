"""Spin-exchange Metropolis dynamics on the ring.

Randomness comes from numpy's PCG64 bit generator. Each sweep draws exactly
``N`` uniforms up front, one per scan position, so trajectories are
prefix-consistent: simulating more steps with the same seed reproduces the
earlier rows bit for bit.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .model import ModelError, ModelParams, as_config, coefficient_table, site_hamiltonian

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


class DeltaMode(str, enum.Enum):
    """Which energy enters the acceptance test."""

    EXCHANGE_DELTA = "exchange-delta"
    LITERAL_SITE_H = "literal-site-h"


def splitmix64(x: int) -> int:
    z = (x + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_seed(base_seed: int, index: int) -> int:
    """Seed of ensemble member ``index``: ``splitmix64(base_seed + index * gamma)``."""
    return splitmix64((int(base_seed) + int(index) * GOLDEN_GAMMA) & MASK64)


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed) & MASK64))


@dataclass(frozen=True)
class SimulationConfig:
    model: ModelParams = field(default_factory=ModelParams)
    n_sites: int = 100
    n_steps: int = 200
    seed: int = 0
    delta_mode: DeltaMode = DeltaMode.EXCHANGE_DELTA
    revisit_moved: bool = False

    def __post_init__(self):
        if self.n_steps < 1:
            raise ModelError(f"n_steps must be >= 1, got {self.n_steps}")
        self.model.check_ring(self.n_sites)
        object.__setattr__(self, "delta_mode", DeltaMode(self.delta_mode))


@dataclass(frozen=True)
class TimeSpaceDiagram:
    """Row ``t`` is the ring configuration after ``t`` sweeps."""

    states: np.ndarray

    def __post_init__(self):
        states = np.ascontiguousarray(self.states, dtype=np.uint8)
        if states.ndim != 2:
            raise ModelError("a time-space diagram is a 2-D array")
        states.setflags(write=False)
        object.__setattr__(self, "states", states)

    @property
    def n_sites(self) -> int:
        return self.states.shape[1]

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1

    def vehicle_counts(self) -> np.ndarray:
        return self.states.sum(axis=1, dtype=np.int64)

    def __eq__(self, other):
        if not isinstance(other, TimeSpaceDiagram):
            return NotImplemented
        return np.array_equal(self.states, other.states)

    __hash__ = None


def random_initial(n_sites: int, density: float, rng: np.random.Generator) -> np.ndarray:
    """Place ``round(density * n_sites)`` vehicles uniformly without replacement."""
    if not 0 <= density <= 1:
        raise ModelError(f"density must lie in [0, 1], got {density}")
    n_vehicles = int(round(density * n_sites))
    config = np.zeros(n_sites, dtype=np.uint8)
    config[rng.choice(n_sites, size=n_vehicles, replace=False)] = 1
    return config


def acceptance_probability(delta_h: float, params: ModelParams) -> float:
    """``min(a0 * exp(-beta * delta_h), 1)``."""
    exponent = 0.0 if params.beta == 0 else -params.beta * delta_h
    if exponent >= -math.log(params.a0):
        return 1.0
    return params.a0 * math.exp(exponent)


def sweep(
    config,
    params: ModelParams,
    mode: DeltaMode,
    rng: np.random.Generator,
    revisit_moved: bool = False,
) -> np.ndarray:
    """One scan over ``i = 0 .. N-1`` with in-place exchanges.

    By default a vehicle that has just moved from ``i`` to ``i + 1`` is not
    examined again at ``i + 1`` in the same sweep, so each vehicle advances at
    most one site per sweep. With ``revisit_moved`` the scan simply continues
    at ``i + 1``, and a vehicle may keep advancing until the scan ends. The
    input is not modified.
    """
    s = as_config(config)
    n = s.size
    params.check_ring(n)
    mode = DeltaMode(mode)
    u = rng.random(n)
    sites = s.tolist()
    coeffs = coefficient_table(params).tolist()
    offsets = list(enumerate(coeffs, start=1))
    literal = mode is DeltaMode.LITERAL_SITE_H
    i = 0
    while i < n:
        j = i + 1 if i + 1 < n else 0
        if sites[i] == 1 and sites[j] == 0:
            if literal:
                energy = site_hamiltonian(np.array(sites, dtype=np.uint8), i, params)
            else:
                # field felt at i minus field felt at j; j - 1 is the mover itself
                energy = 0.0
                for d, c in offsets:
                    if sites[(i + d) % n]:
                        energy += c
                    if sites[i - d]:
                        energy += c
                    if sites[(j + d) % n]:
                        energy -= c
                    if d != 1 and sites[j - d]:
                        energy -= c
            if u[i] < acceptance_probability(energy, params):
                sites[i] = 0
                sites[j] = 1
                i += 1 if revisit_moved else 2
                continue
        i += 1
    return np.array(sites, dtype=np.uint8)


def simulate(cfg: SimulationConfig, initial=None) -> TimeSpaceDiagram:
    """Run ``cfg.n_steps`` sweeps from a random (or given) initial configuration."""
    rng = make_rng(cfg.seed)
    if initial is None:
        state = random_initial(cfg.n_sites, cfg.model.density, rng)
    else:
        state = as_config(initial)
        if state.size != cfg.n_sites:
            raise ModelError(f"initial configuration has {state.size} sites, expected {cfg.n_sites}")
    rows = np.empty((cfg.n_steps + 1, cfg.n_sites), dtype=np.uint8)
    rows[0] = state
    for t in range(cfg.n_steps):
        state = sweep(state, cfg.model, cfg.delta_mode, rng, cfg.revisit_moved)
        rows[t + 1] = state
    return TimeSpaceDiagram(rows)


def _simulate_member(args):
    cfg, base_seed, k = args
    return simulate(_with_seed(cfg, derive_seed(base_seed, k))).states


def _with_seed(cfg: SimulationConfig, seed: int) -> SimulationConfig:
    return replace(cfg, seed=seed)


def run_ensemble(
    cfg: SimulationConfig, n_runs: int, base_seed: int, workers: int = 1
) -> list[TimeSpaceDiagram]:
    """``n_runs`` independent trajectories; run ``k`` uses ``derive_seed(base_seed, k)``."""
    if n_runs < 1:
        raise ModelError(f"n_runs must be >= 1, got {n_runs}")
    jobs = [(cfg, base_seed, k) for k in range(n_runs)]
    if workers <= 1 or n_runs == 1:
        results = [_simulate_member(job) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_simulate_member, jobs, chunksize=max(1, n_runs // (4 * workers))))
    return [TimeSpaceDiagram(states) for states in results]
