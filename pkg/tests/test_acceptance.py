"""End-to-end acceptance checks, one test per criterion.

Each test records a single ``ACCEPTANCE <n> PASS|FAIL: ...`` line before
asserting; the lines are printed in an "acceptance criteria" section at the
end of the pytest run (and immediately with ``pytest -s``). Tolerances are
pinned here and nowhere else.

Generated images go to ``$RINGTRAFFIC_ARTIFACTS`` when set, otherwise to a
pytest temporary directory whose path is printed.
"""

import math
import os
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from ringtraffic.dataset import generate_dataset, load_dataset, save_dataset, split, trajectory_seed
from ringtraffic.diagram_io import diagram_pixels, side_by_side, write_pgm
from ringtraffic.energy import Normalization, analyze
from ringtraffic.formats import BadMagicError, LengthMismatchError, TruncatedFileError
from ringtraffic.metropolis import DeltaMode, SimulationConfig, make_rng, simulate, sweep
from ringtraffic.model import ModelParams, exchange_delta
from ringtraffic.predictor import (
    PredictorConfig,
    PredictorModel,
    load_checkpoint,
    rollout,
    rollout_report,
    save_checkpoint,
)
from ringtraffic.training import train

from conftest import (
    ACCEPTANCE_LINES,
    brute_force_hamiltonian,
    exact_hamiltonian,
    relative_gradient_errors,
    vehicles_advance_at_most_one,
)

# criterion 2
ACCEPTANCE_TRIALS = 100_000
ACCEPTANCE_SIGMAS = 3.0
DELTA_RTOL = 1e-12
# criterion 3: calibrated on seeds 0..4, where the max pairwise KS was 0.030-0.036
KS_THRESHOLD = 0.06
ENERGY_SIZES = (30, 60, 120, 240, 600)
ENERGY_SAMPLES = 3200
# criterion 4
GRAD_RTOL = 1e-4
# criterion 5
TRAIN_ACC_MIN = 0.99
TEST_ACC_MIN = 0.90
TRAIN_EPOCHS = 25
# criterion 6
COUNT_TOL = 0.10
ROLLOUT_ACC_FLOOR = 0.5


def report(n, ok, detail):
    line = f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    return ok


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory):
    env = os.environ.get("RINGTRAFFIC_ARTIFACTS")
    path = Path(env) if env else tmp_path_factory.mktemp("acceptance")
    path.mkdir(parents=True, exist_ok=True)
    return path


def test_1_conservation_and_forward_motion():
    rng = np.random.default_rng(2024)
    failures = []
    for run in range(100):
        n = int(rng.choice([30, 50, 100]))
        density = float(rng.choice([0.2, 0.5, 0.8]))
        cfg = SimulationConfig(ModelParams(density=density), n_sites=n, n_steps=200, seed=run)
        states = simulate(cfg).states
        counts = states.sum(axis=1)
        if not (counts == counts[0]).all():
            failures.append((run, "count"))
            continue
        if not all(vehicles_advance_at_most_one(a, b) for a, b in zip(states, states[1:])):
            failures.append((run, "motion"))
    ok = report(1, not failures, f"100 trajectories, T=200, failures={failures}")
    assert ok


def _jam(n, length):
    cfg = np.zeros(n, dtype=np.uint8)
    cfg[:length] = 1
    return cfg


def test_2_metropolis_acceptance_oracle():
    cases = [(2, 1.0, 1.0), (5, 1.0, 1.0), (3, 0.5, 1.0), (1, 1.0, 0.5), (4, 2.0, 0.8)]
    worst_z = 0.0
    for length, beta, a0 in cases:
        params = ModelParams(beta=beta, a0=a0, look_ahead=5)
        cfg = _jam(12, length)
        delta = exchange_delta(cfg, length - 1, params)
        prob = min(1.0, a0 * math.exp(-beta * delta))
        rng = make_rng(1000 + length)
        hits = sum(
            int(sweep(cfg, params, DeltaMode.EXCHANGE_DELTA, rng)[length])
            for _ in range(ACCEPTANCE_TRIALS)
        )
        sigma = math.sqrt(ACCEPTANCE_TRIALS * prob * (1 - prob))
        worst_z = max(worst_z, abs(hits - ACCEPTANCE_TRIALS * prob) / sigma)

    rng = np.random.default_rng(7)
    worst_rel = 0.0
    checked = 0
    while checked < 1000:
        n = int(rng.integers(6, 60))
        p = ModelParams(
            k0=float(rng.uniform(0.1, 3)),
            b=float(rng.uniform(-2, 2)),
            look_ahead=int(rng.integers(1, n)),
        )
        cfg = rng.integers(0, 2, size=n)
        legal = [i for i in range(n) if cfg[i] == 1 and cfg[(i + 1) % n] == 0]
        if not legal:
            continue
        i = int(rng.choice(legal))
        moved = cfg.copy()
        moved[i], moved[(i + 1) % n] = 0, 1
        exact = exact_hamiltonian(moved, p.k0, p.b, p.look_ahead) - exact_hamiltonian(
            cfg, p.k0, p.b, p.look_ahead
        )
        # the float brute force agrees with the exact value only to ~1e-14 absolute
        assert abs(brute_force_hamiltonian(moved, p.k0, p.b, p.look_ahead)
                   - brute_force_hamiltonian(cfg, p.k0, p.b, p.look_ahead) - float(exact)) < 1e-11
        local = Fraction(exchange_delta(cfg, i, p))
        rel = abs(local - exact) / abs(exact) if exact != 0 else abs(local)
        worst_rel = max(worst_rel, float(rel))
        checked += 1
    ok = worst_z <= ACCEPTANCE_SIGMAS and worst_rel <= DELTA_RTOL
    report(
        2, ok,
        f"worst |z|={worst_z:.2f} (<= {ACCEPTANCE_SIGMAS}), "
        f"worst dH rel err vs exact recompute={worst_rel:.2e} (<= {DELTA_RTOL})",
    )  # fmt: skip
    assert ok


def test_3_scale_invariance(artifacts):
    _, ks, l1 = analyze(
        ENERGY_SIZES, ENERGY_SAMPLES, 0.5, ModelParams(), Normalization.PER_SITE_ZSCORE, 0,
        artifacts / "energy",
    )  # fmt: skip
    ok = ks.max() < KS_THRESHOLD
    report(3, ok, f"max pairwise KS={ks.max():.4f} (< {KS_THRESHOLD}), max L1={l1.max():.4f}")
    assert ok


def test_4_gradient_check():
    cfg = PredictorConfig(
        n_sites=8, window=4, kernel_width=3, conv_channels=(3, 2), dense_in=6,
        lstm_hidden=5, alpha=0.3, dropout_rate=0.25, init_seed=11,
    )  # fmt: skip
    rng = np.random.default_rng(3)
    x = rng.integers(0, 2, size=(3, 4, 8)).astype(np.uint8)
    y = rng.integers(0, 2, size=(3, 8)).astype(np.float64)
    errors = relative_gradient_errors(PredictorModel.init(cfg), x, y)
    worst = max(errors, key=errors.get)
    ok = all(e <= GRAD_RTOL for e in errors.values())
    report(4, ok, f"worst tensor {worst} rel err={errors[worst]:.2e} (<= {GRAD_RTOL})")
    assert ok


@pytest.fixture(scope="module")
def trained():
    data = generate_dataset(1000, 50, 30, ModelParams(density=0.5), base_seed=2024)
    parts = split(data, 0.2, seed=1)
    cfg = PredictorConfig(n_sites=50, window=30, epochs=TRAIN_EPOCHS, init_seed=0)
    model, history = train(PredictorModel.init(cfg), parts)
    return data, parts, model, history


@pytest.mark.slow
def test_5_training_convergence(trained):
    _, parts, _, history = trained
    tr, te = history.train_accuracy[-1], history.test_accuracy[-1]
    ok = tr >= TRAIN_ACC_MIN and te >= TEST_ACC_MIN
    report(
        5, ok,
        f"{len(parts.train)}/{len(parts.test)} split, {len(history)} epochs: "
        f"train acc={tr:.4f} (>= {TRAIN_ACC_MIN}), held-out acc={te:.4f} (>= {TEST_ACC_MIN})",
    )  # fmt: skip
    assert ok


@pytest.mark.slow
def test_6_rollout(trained, artifacts):
    _, parts, model, _ = trained
    w = model.config.window
    seed = trajectory_seed(parts.test, 0)
    truth = simulate(SimulationConfig(ModelParams(density=0.5), 50, 2 * w - 1, seed)).states
    rolled = rollout(model, truth[:w], w).states
    stats = rollout_report(rolled, truth)[w:]
    count_err = np.abs(stats[:, 2] - stats[:, 1]) / stats[:, 1]
    image = artifacts / "rollout_compare.pgm"
    write_pgm(side_by_side(truth, rolled, scale=4), image)
    ok = (
        rolled.shape == (60, 50)
        and (count_err <= COUNT_TOL).all()
        and (stats[:, 3] > ROLLOUT_ACC_FLOOR).all()
    )
    report(
        6, ok,
        f"diagram {rolled.shape}, max count error={count_err.max():.3f} (<= {COUNT_TOL}), "
        f"min row accuracy={stats[:, 3].min():.3f} (> {ROLLOUT_ACC_FLOOR}), image {image}",
    )  # fmt: skip
    assert ok


def test_7_determinism_and_formats(tmp_path):
    def build(tag):
        d = tmp_path / tag
        d.mkdir()
        data = generate_dataset(30, 16, 6, ModelParams(), base_seed=5)
        save_dataset(data, d / "data.trmc")
        cfg = PredictorConfig(
            n_sites=16, window=6, kernel_width=3, conv_channels=(4, 4), dense_in=3,
            lstm_hidden=4, epochs=2, batch_size=8,
        )  # fmt: skip
        model, _ = train(PredictorModel.init(cfg), split(data, 0.2, 0))
        save_checkpoint(model, d / "model.trnn")
        diagram = simulate(SimulationConfig(n_sites=40, n_steps=30, seed=9))
        write_pgm(diagram_pixels(diagram.states, 2), d / "diagram.pgm")
        return d, data, model

    (a, data, model), (b, _, _) = build("a"), build("b")
    identical = all(
        (a / f).read_bytes() == (b / f).read_bytes() for f in ("data.trmc", "model.trnn", "diagram.pgm")
    )
    back = load_checkpoint(a / "model.trnn")
    round_trip = load_dataset(a / "data.trmc") == data and all(
        np.array_equal(back.params[k], model.params[k]) for k in model.params
    )
    blob = (a / "data.trmc").read_bytes()
    raised = []
    for name, content, expected in [
        ("magic", b"XXXXXXXX" + blob[8:], BadMagicError),
        ("short", blob[:-3], TruncatedFileError),
        ("long", blob + b"\0", LengthMismatchError),
    ]:
        (tmp_path / name).write_bytes(content)
        try:
            load_dataset(tmp_path / name)
            raised.append(None)
        except (BadMagicError, TruncatedFileError, LengthMismatchError) as exc:
            raised.append(type(exc) if type(exc) is expected else None)
    distinct = None not in raised and len(set(raised)) == 3
    ok = identical and round_trip and distinct
    report(7, ok, f"byte-identical={identical}, round-trip={round_trip}, distinct errors={distinct}")
    assert ok
