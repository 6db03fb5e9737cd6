"""Command-line entry point: ``ringtraffic <subcommand> [flags]``.

Effective settings are resolved as built-in defaults, then the ``--config``
JSON file (a ``"model"`` section shared by every subcommand plus one section
per subcommand, keyed by flag name with dashes turned into underscores), then
explicit command-line flags. The resolved settings are echoed to stderr as
JSON. Data goes to files only; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import secrets
import sys
from pathlib import Path

import numpy as np

from . import CHECKPOINT_FORMAT, DATASET_FORMAT, __version__
from . import dataset as ds
from . import diagram_io, energy, predictor, training
from .formats import FormatError
from .metropolis import DeltaMode, SimulationConfig, simulate
from .model import ModelError, ModelParams

log = logging.getLogger("ringtraffic")

DEFAULT_SIZES = (30, 60, 120, 240, 600)

MODEL_DEFAULTS = {
    "k0": 1.0,
    "b": 1.0,
    "beta": 1.0,
    "a0": 1.0,
    "look_ahead": 5,
    "density": 0.5,
    "delta_mode": DeltaMode.EXCHANGE_DELTA.value,
    "revisit_moved": False,
}

_P = predictor.PredictorConfig()
TRAIN_DEFAULTS = {
    "split_seed": 0,
    "ratio": 0.2,
    "epochs": _P.epochs,
    "alpha": _P.alpha,
    "learning_rate": _P.learning_rate,
    "optimizer": _P.optimizer,
    "momentum": _P.momentum,
    "batch_size": _P.batch_size,
    "dense_in": _P.dense_in,
    "conv_channels": ",".join(str(c) for c in _P.conv_channels),
    "kernel_width": _P.kernel_width,
    "lstm_hidden": _P.lstm_hidden,
    "dropout": _P.dropout_rate,
    "clip_norm": _P.clip_norm,
    "init_seed": _P.init_seed,
}

DEFAULTS = {
    "simulate": {"sites": 100, "steps": 200, "seed": None, "scale": 1, **MODEL_DEFAULTS},
    "analyze-energy": {
        "sizes": ",".join(str(n) for n in DEFAULT_SIZES),
        "samples": 3200,
        "normalization": energy.Normalization.PER_SITE_ZSCORE.value,
        "seed": None,
        **MODEL_DEFAULTS,
    },
    "gen-dataset": {
        "runs": 1000,
        "sites": 50,
        "window": 30,
        "seed": None,
        "csv": None,
        **MODEL_DEFAULTS,
    },
    "split": {"ratio": 0.2, "seed": None},
    "train": dict(TRAIN_DEFAULTS),
    "predict": {"horizon": 30, "truth": None, "compare_out": None, "report": None, "scale": 1},
    "reproduce": {
        "seed": None,
        "runs": 1000,
        "samples": 3200,
        **MODEL_DEFAULTS,
        **{k: v for k, v in TRAIN_DEFAULTS.items() if k != "ratio"},
    },
}


class UsageError(Exception):
    """Invalid settings detected before any work starts (exit code 2)."""


def _add_model_flags(p):
    g = p.add_argument_group("model parameters")
    g.add_argument("--k0", type=float, help="base interaction strength (default 1.0)")
    g.add_argument("--b", type=float, help="external field coefficient (default 1.0)")
    g.add_argument("--beta", type=float, help="inverse-temperature-like constant (default 1.0)")
    g.add_argument("--a0", type=float, help="pre-exponential factor in (0, 1] (default 1.0)")
    g.add_argument("--look-ahead", type=int, help="interaction range in sites (default 5)")
    g.add_argument("--density", type=float, help="vehicle density in [0, 1] (default 0.5)")
    g.add_argument(
        "--delta-mode",
        choices=[m.value for m in DeltaMode],
        help="energy entering the acceptance test (default exchange-delta)",
    )
    g.add_argument(
        "--revisit-moved",
        action="store_true",
        default=None,
        help="let a vehicle that just moved be examined again later in the same sweep",
    )


def _add_train_flags(p):
    g = p.add_argument_group("predictor and training")
    g.add_argument("--epochs", type=int)
    g.add_argument("--alpha", type=float, help="vehicle-count penalty weight")
    g.add_argument("--learning-rate", "--lr", type=float, dest="learning_rate")
    g.add_argument("--optimizer", choices=["momentum", "adam"])
    g.add_argument("--momentum", type=float, help="momentum coefficient for --optimizer momentum")
    g.add_argument("--batch-size", type=int)
    g.add_argument("--dense-in", type=int, help="width of the per-site dense embedding")
    g.add_argument("--conv-channels", help="channels of the two convolutions, e.g. 16,16")
    g.add_argument("--kernel-width", type=int, help="odd convolution width in sites")
    g.add_argument("--lstm-hidden", type=int, help="LSTM hidden width per site")
    g.add_argument("--dropout", type=float, help="dropout rate in [0, 1)")
    g.add_argument("--clip-norm", type=float, help="global gradient-norm clip (0 disables)")
    g.add_argument("--init-seed", type=int, help="seed for weights, dropout and batch order")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ringtraffic",
        description="Ring-road traffic model, Metropolis simulator and CNN-LSTM forecaster.",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"ringtraffic {__version__} (dataset {DATASET_FORMAT}, checkpoint {CHECKPOINT_FORMAT})",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON settings file; flags override it")
    common.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("simulate", parents=[common], help="simulate one trajectory")
    p.add_argument("--sites", type=int, help="ring size N (default 100)")
    p.add_argument("--steps", type=int, help="number of sweeps T (default 200)")
    p.add_argument("--seed", type=int, help="RNG seed (drawn from entropy if omitted)")
    p.add_argument("--scale", type=int, help="pixel magnification for graymap output")
    p.add_argument("--out", required=True, type=Path, help="output .pgm or .csv")
    _add_model_flags(p)

    p = sub.add_parser(
        "analyze-energy", parents=[common], help="interaction-energy distributions across sizes"
    )
    p.add_argument("--sizes", help="comma-separated ring sizes (default 30,60,120,240,600)")
    p.add_argument("--samples", type=int, help="configurations per size (default 3200)")
    p.add_argument("--normalization", choices=[m.value for m in energy.Normalization])
    p.add_argument("--seed", type=int, help="RNG seed (drawn from entropy if omitted)")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    _add_model_flags(p)

    p = sub.add_parser("gen-dataset", parents=[common], help="generate a training dataset")
    p.add_argument("--runs", type=int, help="number of simulations (default 1000)")
    p.add_argument("--sites", type=int, help="ring size N (default 50)")
    p.add_argument("--window", type=int, help="input window W (default 30)")
    p.add_argument("--seed", type=int, help="base seed (drawn from entropy if omitted)")
    p.add_argument("--csv", type=Path, help="also export the samples as CSV")
    p.add_argument("--out", required=True, type=Path, help="output .trmc file")
    _add_model_flags(p)

    p = sub.add_parser("split", parents=[common], help="split a dataset into train and test")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--ratio", type=float, help="test fraction (default 0.2)")
    p.add_argument("--seed", type=int, help="split seed (drawn from entropy if omitted)")
    p.add_argument("--train-out", required=True, type=Path)
    p.add_argument("--test-out", required=True, type=Path)

    p = sub.add_parser("train", parents=[common], help="train the predictor")
    p.add_argument("--data", required=True, type=Path, help="dataset .trmc file")
    p.add_argument("--split-seed", type=int, help="seed of the train/test split (default 0)")
    p.add_argument("--ratio", type=float, help="test fraction (default 0.2)")
    p.add_argument("--out", required=True, type=Path, help="output checkpoint .trnn")
    p.add_argument("--history", type=Path, help="per-epoch metrics CSV")
    _add_train_flags(p)

    p = sub.add_parser("predict", parents=[common], help="recursive rollout from a seed window")
    p.add_argument("--model", required=True, type=Path, help="checkpoint .trnn")
    p.add_argument("--input", required=True, type=Path, help="CSV whose first W rows seed the rollout")
    p.add_argument("--horizon", type=int, help="steps to predict (default 30)")
    p.add_argument("--out", required=True, type=Path, help="rollout diagram, .pgm or .csv")
    p.add_argument("--truth", type=Path, help="CSV of the true diagram for comparison")
    p.add_argument("--compare-out", type=Path, help="side-by-side graymap (needs --truth)")
    p.add_argument("--report", type=Path, help="per-row count/accuracy CSV (needs --truth)")
    p.add_argument("--scale", type=int, help="pixel magnification for graymap output")

    p = sub.add_parser("reproduce", parents=[common], help="regenerate the figure artifacts")
    p.add_argument("target", choices=["fig1", "fig2", "fig4", "fig5", "all"])
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--seed", type=int, help="master seed (drawn from entropy if omitted)")
    p.add_argument("--runs", type=int, help="simulations in the training dataset (default 1000)")
    p.add_argument("--samples", type=int, help="energy samples per size (default 3200)")
    p.add_argument("--model", type=Path, help="existing checkpoint to use for fig5")
    _add_model_flags(p)
    _add_train_flags(p)
    return parser


def resolve(args) -> dict:
    """Defaults, then config file, then explicit flags."""
    settings = dict(DEFAULTS[args.command])
    if args.config is not None:
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from None
        if not isinstance(file_cfg, dict):
            raise UsageError("config file must hold a JSON object")
        for section in ("model", args.command):
            values = file_cfg.get(section, {})
            unknown = set(values) - set(settings)
            if unknown:
                raise UsageError(f"unknown keys in config section {section!r}: {sorted(unknown)}")
            settings.update(values)
    for key, value in vars(args).items():
        if key in ("command", "config", "verbose") or value is None:
            continue
        settings[key] = str(value) if isinstance(value, Path) else value
    if "seed" in settings and settings["seed"] is None:
        settings["seed"] = secrets.randbits(63)
        print(f"seed drawn from entropy: {settings['seed']}", file=sys.stderr)
    return settings


def _model_params(s) -> ModelParams:
    return ModelParams(
        k0=s["k0"], b=s["b"], look_ahead=s["look_ahead"], beta=s["beta"], a0=s["a0"], density=s["density"]
    )


def _int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from None


def _predictor_config(s, n_sites, window) -> predictor.PredictorConfig:
    return predictor.PredictorConfig(
        n_sites=n_sites,
        window=window,
        kernel_width=s["kernel_width"],
        conv_channels=tuple(_int_list(s["conv_channels"])),
        dense_in=s["dense_in"],
        dropout_rate=s["dropout"],
        lstm_hidden=s["lstm_hidden"],
        alpha=s["alpha"],
        learning_rate=s["learning_rate"],
        momentum=s["momentum"],
        optimizer=s["optimizer"],
        epochs=s["epochs"],
        batch_size=s["batch_size"],
        clip_norm=s["clip_norm"],
        init_seed=s["init_seed"],
    )


def _progress(epoch, history):
    log.info(
        "epoch %d  train loss %.4f acc %.4f  test loss %.4f acc %.4f",
        epoch,
        history.train_loss[-1],
        history.train_accuracy[-1],
        history.test_loss[-1],
        history.test_accuracy[-1],
    )


def cmd_simulate(s) -> None:
    cfg = SimulationConfig(
        _model_params(s), s["sites"], s["steps"], s["seed"], s["delta_mode"], s["revisit_moved"]
    )
    diagram = simulate(cfg)
    diagram_io.write_diagram(diagram, s["out"], scale=s["scale"])
    log.info("wrote %d x %d diagram to %s", diagram.states.shape[0], diagram.n_sites, s["out"])


def cmd_analyze_energy(s) -> None:
    sizes = _int_list(s["sizes"])
    if not sizes:
        raise UsageError("--sizes must name at least one ring size")
    _, ks, _ = energy.analyze(
        sizes, s["samples"], s["density"], _model_params(s), s["normalization"], s["seed"], s["out"]
    )
    log.info("max pairwise KS statistic %.4f", ks.max())


def cmd_gen_dataset(s) -> None:
    data = ds.generate_dataset(
        s["runs"], s["sites"], s["window"], _model_params(s), s["seed"], s["delta_mode"],
        s["threads"], s["revisit_moved"],
    )  # fmt: skip
    ds.save_dataset(data, s["out"])
    if s["csv"]:
        ds.export_csv(data, s["csv"])
    log.info("wrote %d samples to %s", len(data), s["out"])


def cmd_split(s) -> None:
    parts = ds.split(ds.load_dataset(s["data"]), s["ratio"], s["seed"])
    ds.save_dataset(parts.train, s["train_out"])
    ds.save_dataset(parts.test, s["test_out"])
    log.info("split into %d train / %d test samples", len(parts.train), len(parts.test))


def cmd_train(s) -> None:
    data = ds.load_dataset(s["data"])
    cfg = _predictor_config(s, data.n_sites, data.window)
    parts = ds.split(data, s["ratio"], s["split_seed"])
    model, history = training.train(predictor.PredictorModel.init(cfg), parts, progress=_progress)
    predictor.save_checkpoint(model, s["out"])
    if s.get("history"):
        history.write_csv(s["history"])


def cmd_predict(s) -> None:
    if not s["truth"] and (s.get("compare_out") or s.get("report")):
        raise UsageError("--compare-out and --report need --truth")
    model = predictor.load_checkpoint(s["model"])
    window = model.config.window
    rows = diagram_io.read_csv(s["input"])
    if rows.shape[0] < window:
        raise UsageError(f"--input has {rows.shape[0]} rows, the model needs {window}")
    rolled = predictor.rollout(model, rows[:window], s["horizon"])
    diagram_io.write_diagram(rolled, s["out"], scale=s["scale"])
    if s["truth"]:
        truth = diagram_io.read_csv(s["truth"])
        _write_comparison(rolled, truth, window, s.get("compare_out"), s.get("report"), s["scale"])


def _write_comparison(rolled, truth, window, compare_out, report, scale=1) -> np.ndarray:
    rows = min(len(rolled.states), len(truth))
    if compare_out:
        diagram_io.write_pgm(
            diagram_io.side_by_side(truth[:rows], rolled.states[:rows], scale=scale), compare_out
        )
    stats = predictor.rollout_report(rolled.states[:rows], truth[:rows])
    if report:
        with open(report, "w") as fh:
            fh.write("row,true_count,predicted_count,accuracy\n")
            for row in stats:
                fh.write(f"{int(row[0])},{int(row[1])},{int(row[2])},{row[3]!r}\n")
    return stats


def cmd_reproduce(s) -> None:
    out = Path(s["out"])
    out.mkdir(parents=True, exist_ok=True)
    target = s["target"]
    params = _model_params(s)
    seed = s["seed"]
    if target in ("fig1", "all"):
        diagram = simulate(SimulationConfig(params, 100, 200, seed, s["delta_mode"], s["revisit_moved"]))
        diagram_io.write_pgm(diagram_io.diagram_pixels(diagram.states, 2), out / "fig1_time_space.pgm")
        diagram_io.write_csv(diagram, out / "fig1_time_space.csv")
    if target in ("fig2", "all"):
        _, ks, _ = energy.analyze(
            DEFAULT_SIZES, s["samples"], params.density, params,
            energy.Normalization.PER_SITE_ZSCORE, seed, out / "fig2",
        )  # fmt: skip
        log.info("fig2: max pairwise KS %.4f", ks.max())
    model = None
    data = None
    if target in ("fig4", "all") or (target == "fig5" and not s.get("model")):
        data = ds.generate_dataset(
            s["runs"], 50, 30, params, seed, s["delta_mode"], s["threads"], s["revisit_moved"]
        )
        ds.save_dataset(data, out / "fig4_dataset.trmc")
        parts = ds.split(data, 0.2, s["split_seed"])
        cfg = _predictor_config(s, 50, 30)
        model, history = training.train(
            predictor.PredictorModel.init(cfg), parts, progress=_progress
        )
        predictor.save_checkpoint(model, out / "fig4_model.trnn")
        history.write_csv(out / "fig4_history.csv")
    if target in ("fig5", "all"):
        if model is None:
            model = predictor.load_checkpoint(s["model"])
        w = model.config.window
        if data is None:
            sim_seed = seed
        else:
            test = ds.split(data, 0.2, s["split_seed"]).test
            sim_seed = ds.trajectory_seed(test, 0)
        truth = simulate(
            SimulationConfig(
                params, model.config.n_sites, 2 * w - 1, sim_seed, s["delta_mode"], s["revisit_moved"]
            )
        )
        rolled = predictor.rollout(model, truth.states[:w], w)
        diagram_io.write_pgm(diagram_io.diagram_pixels(truth.states, 4), out / "fig5_truth.pgm")
        diagram_io.write_pgm(diagram_io.diagram_pixels(rolled.states, 4), out / "fig5_predicted.pgm")
        stats = _write_comparison(
            rolled, truth.states, w, out / "fig5_compare.pgm", out / "fig5_rollout.csv", scale=4
        )
        log.info("fig5: min rollout accuracy %.3f", stats[w:, 3].min())


COMMANDS = {
    "simulate": cmd_simulate,
    "analyze-energy": cmd_analyze_energy,
    "gen-dataset": cmd_gen_dataset,
    "split": cmd_split,
    "train": cmd_train,
    "predict": cmd_predict,
    "reproduce": cmd_reproduce,
}

_SETTING_ERRORS = (ModelError, predictor.PredictorError, ds.DatasetError, energy.EnergyAnalysisError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        settings = resolve(args)
        settings["command"] = args.command
        print(json.dumps({"effective_config": settings}, sort_keys=True), file=sys.stderr)
        COMMANDS[args.command](settings)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ringtraffic: error: {exc}", file=sys.stderr)
        return 2
    except _SETTING_ERRORS as exc:
        print(f"ringtraffic: invalid settings: {exc}", file=sys.stderr)
        return 2
    except (OSError, FormatError, training.TrainingError, ValueError) as exc:
        print(f"ringtraffic: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
