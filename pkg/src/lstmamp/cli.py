"""Command line driver.

Numeric results go to stdout as ``key=value`` lines (or CSV); progress and
prose go to stderr. Exit codes: 0 ok, 2 usage, 3 I/O, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import hypersearch as hs
from .dataset import Dataset, build_dataset, generate_excitation, split_dataset
from .model import ModelConfig, ModelFileError, load_model, save_model
from .realtime import MODES, ThroughputReport, benchmark_throughput, process_signal
from .surrogate import GAIN_RANGE
from .tensor import Rng
from .training import (INIT_SCHEMES, OPTIMIZERS, NumericError, TrainConfig, evaluate,
                       init_params, relative_rmse_percent, train)
from .wav import SUPPORTED_RATES, AudioSignal, WavError, read_wav, write_wav

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

log = logging.getLogger("lstmamp")


class UsageError(Exception):
    pass


def _gain_list(text: str) -> list[float]:
    try:
        gains = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad gain list {text!r}") from None
    lo, hi = GAIN_RANGE
    if not gains or any(not lo <= g <= hi for g in gains):
        raise argparse.ArgumentTypeError(f"gains must lie in [{lo}, {hi}]")
    return gains


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return value


def _int_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo,hi integers, got {text!r}") from None
    if not 1 <= lo <= hi:
        raise argparse.ArgumentTypeError(f"need 1 <= lo <= hi, got {text!r}")
    return lo, hi


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--sample-rate", type=int, default=16000, choices=SUPPORTED_RATES)
    common.add_argument("--precision", choices=("f32", "f64"), default="f64")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="lstmamp", description="LSTM amplifier emulation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="synthesise excitation and surrogate targets")
    p.add_argument("--out", required=True, type=Path, help="output directory")
    p.add_argument("--duration", type=_positive_float, default=10.0, help="seconds per gain pass")
    p.add_argument("--gains", type=_gain_list, default=[5.0], help="comma separated gain knobs")

    p = sub.add_parser("train", parents=[common], help="train an LSTM on a generated dataset")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--model", required=True, type=Path, help="output model file")
    p.add_argument("--history", type=Path, help="output history CSV")
    p.add_argument("--num-step", type=int, default=32)
    p.add_argument("--num-hidden", type=int, default=24)
    p.add_argument("--num-layer", type=int, default=1, choices=(1, 2))
    p.add_argument("--gain-feature", action="store_true", help="feed the gain as a second feature")
    p.add_argument("--batch-size", type=int, default=512)
    p.add_argument("--optimizer", choices=OPTIMIZERS, default="adam")
    p.add_argument("--init", choices=INIT_SCHEMES, default="xavier")
    p.add_argument("--lr", type=_positive_float, default=1e-3)
    p.add_argument("--keep-prob", type=float, default=1.0)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--time-budget", type=_positive_float)

    p = sub.add_parser("eval", parents=[common], help="validation relative RMSE")
    p.add_argument("--data", type=Path)
    p.add_argument("--model", type=Path)
    p.add_argument("--split", choices=("train", "test", "validation"), default="validation")
    p.add_argument("--per-gain", action="store_true", help="also print one line per gain pass")
    p.add_argument("--pred", type=Path, help="compare a prediction WAV ...")
    p.add_argument("--target", type=Path, help="... against a target WAV")

    p = sub.add_parser("stream", parents=[common], help="process a WAV file block by block")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--block", type=int, default=512)
    p.add_argument("--mode", choices=MODES, default="windowed")
    p.add_argument("--gain", type=float, help="gain knob for two-feature models")

    p = sub.add_parser("bench", parents=[common], help="measure streaming throughput")
    p.add_argument("--model", type=Path, help="model file; random weights if omitted")
    p.add_argument("--num-step", type=int, default=100)
    p.add_argument("--num-hidden", type=int, default=24)
    p.add_argument("--num-layer", type=int, default=1, choices=(1, 2))
    p.add_argument("--mode", choices=(*MODES, "both"), default="both")
    p.add_argument("--block", type=int, default=1024)
    p.add_argument("--duration", type=_positive_float, default=2.0)
    p.add_argument("--out", type=Path, help="CSV file (default stdout)")

    p = sub.add_parser("hpsearch", parents=[common], help="random hyperparameter search")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--trials", type=int, default=12)
    p.add_argument("--budget", type=_positive_float, default=180.0, help="seconds per trial")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--lr", type=_positive_float, default=1e-3)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--batch-range", type=_int_range, help="lo,hi (default 64,2048)")
    p.add_argument("--step-range", type=_int_range, help="lo,hi (default 25,400)")
    p.add_argument("--hidden-range", type=_int_range, help="lo,hi (default 8,256)")
    p.add_argument("--layer-range", type=_int_range, help="lo,hi (default 1,2)")
    p.add_argument("--out", type=Path, help="CSV file (default stdout)")

    p = sub.add_parser("plot-data", parents=[common], help="reshape hpsearch CSV for 3-D plots")
    p.add_argument("--in", dest="input", required=True, type=Path)
    p.add_argument("--out", type=Path)
    return parser


def _emit(text: str, path: Path | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text)


def _load(path: Path, precision: str):
    config, params = load_model(path)
    if precision == "f32":
        params = params.astype(np.float32)
    return config, params


def cmd_generate(args) -> None:
    exc = generate_excitation(args.duration, args.sample_rate, Rng(args.seed))
    ds = build_dataset(exc, args.gains)
    ds.save(args.out)
    print(f"samples={len(ds)}")
    print(f"passes={len(ds.passes)}")


def _load_split(path: Path, num_step: int) -> Dataset:
    return split_dataset(Dataset.load(path), num_step=num_step)


def cmd_train(args) -> None:
    if args.epochs < 1:
        raise UsageError("--epochs must be at least 1")
    try:
        tc = TrainConfig(batch_size=args.batch_size, learning_rate=args.lr, optimizer=args.optimizer,
                         init_scheme=args.init, dropout_keep_prob=args.keep_prob,
                         max_epochs=args.epochs, patience=args.patience, seed=args.seed,
                         stride=args.stride, time_budget_s=args.time_budget)
        ds = _load_split(args.data, args.num_step)
        config = ModelConfig(num_step=args.num_step, num_hidden=args.num_hidden,
                             num_layer=args.num_layer, num_feature=2 if args.gain_feature else 1,
                             sample_rate=ds.sample_rate)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    params, history = train(config, tc, ds)
    save_model(config, params, args.model)
    if args.history:
        args.history.write_text(history.to_csv())
    rmse, _ = evaluate(config, params, ds, "validation")
    print(f"epochs={len(history)}")
    print(f"best_epoch={history.best_epoch}")
    print(f"rmse_percent={rmse:.6f}")


def cmd_eval(args) -> None:
    if args.pred is not None or args.target is not None:
        if args.pred is None or args.target is None:
            raise UsageError("--pred and --target go together")
        pred, target = read_wav(args.pred).samples, read_wav(args.target).samples
        if len(pred) != len(target):
            raise UsageError("prediction and target lengths differ")
        print(f"rmse_percent={relative_rmse_percent(pred, target):.6f}")
        return
    if args.data is None or args.model is None:
        raise UsageError("eval needs --data and --model (or --pred and --target)")
    config, params = _load(args.model, args.precision)
    ds = _load_split(args.data, config.num_step)
    if config.num_feature == 1 and len(ds.passes) > 1:
        log.warning("single-feature model evaluated on a multi-gain dataset")
    rmse, per_gain = evaluate(config, params.astype(np.float64), ds, args.split)
    print(f"rmse_percent={rmse:.6f}")
    if args.per_gain:
        for gain, value in per_gain.items():
            print(f"rmse_percent_gain_{gain:g}={value:.6f}")


def cmd_stream(args) -> None:
    if args.block < 1:
        raise UsageError("--block must be >= 1")
    config, params = _load(args.model, args.precision)
    sig = read_wav(args.input)
    if config.num_feature == 2 and args.gain is None:
        raise UsageError("this model needs --gain")
    out = process_signal(config, params, sig.samples, args.block, args.mode, args.gain)
    if not np.isfinite(out).all():
        raise NumericError("stream produced non-finite samples")
    write_wav(args.out, AudioSignal(out, sig.sample_rate))
    print(f"samples={len(out)}")


def cmd_bench(args) -> None:
    if args.block < 1:
        raise UsageError("--block must be >= 1")
    if args.model is not None:
        config, params = _load(args.model, args.precision)
        config = ModelConfig(config.num_step, config.num_hidden, config.num_layer,
                             config.num_feature, args.sample_rate)
    else:
        config = ModelConfig(num_step=args.num_step, num_hidden=args.num_hidden,
                             num_layer=args.num_layer, sample_rate=args.sample_rate)
        params = init_params(config, "xavier", Rng(args.seed))
        if args.precision == "f32":
            params = params.astype(np.float32)
    modes = MODES if args.mode == "both" else (args.mode,)
    lines = [ThroughputReport.CSV_HEADER]
    for mode in modes:
        report = benchmark_throughput(config, params, mode, args.block, args.duration, args.seed)
        lines.append(report.csv_row(mode, config.num_hidden, config.num_step, args.block))
    _emit("\n".join(lines) + "\n", args.out)


def cmd_hpsearch(args) -> None:
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    ranges = {"batch_size": args.batch_range, "num_step": args.step_range,
              "num_hidden": args.hidden_range, "num_layer": args.layer_range}
    if args.layer_range is not None and args.layer_range[1] > 2:
        raise UsageError("--layer-range must stay within 1,2")
    try:
        space = hs.SearchSpace(**{k: v for k, v in ranges.items() if v is not None})
        defaults = TrainConfig(learning_rate=args.lr, max_epochs=args.epochs,
                               patience=args.patience, stride=args.stride)
        ds = split_dataset(Dataset.load(args.data), num_step=space.num_step[1])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    results = hs.search(space, ds, args.trials, args.budget, args.workers,
                        base_seed=args.seed, train_defaults=defaults)
    _emit(hs.results_to_csv(results), args.out)
    print(hs.summary_line(results), file=sys.stderr if args.out is None else sys.stdout)


def cmd_plot_data(args) -> None:
    results = hs.results_from_csv(args.input.read_text())
    _emit(hs.plot_data(results), args.out)


COMMANDS = {
    "generate": cmd_generate, "train": cmd_train, "eval": cmd_eval, "stream": cmd_stream,
    "bench": cmd_bench, "hpsearch": cmd_hpsearch, "plot-data": cmd_plot_data,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"lstmamp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, WavError, ModelFileError) as exc:
        print(f"lstmamp {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericError, FloatingPointError) as exc:
        print(f"lstmamp {args.command}: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
