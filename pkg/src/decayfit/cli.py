"""Command-line interface: ``decayfit {generate,train,fit,evaluate,benchmark}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import evalbench, synth
from .bayes import SearchSpace
from .edf import OCTAVE_CENTERS, read_edf_csv
from .errors import DecayFitError
from .report import ENGINES

DEFAULT_SEED = 0
WEIGHTS_ENV = "DECAYFIT_WEIGHTS"
WAV_SUFFIXES = (".wav", ".wave")

log = logging.getLogger("decayfit")


class UsageError(Exception):
    """Invalid arguments detected after parsing."""


# -- helpers ----------------------------------------------------------------

def _seeds(seed: int, label: str) -> int:
    """Derive a subsystem seed from the master seed by a fixed label."""
    return int(np.random.SeedSequence([seed, *label.encode()]).generate_state(1)[0])


def _write_json(doc, path=None):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _weights(args):
    from .net.io import load_weights

    path = args.weights or os.environ.get(WEIGHTS_ENV)
    if not path:
        raise UsageError(f"the net engine needs --weights or ${WEIGHTS_ENV}")
    if not Path(path).is_file():
        raise UsageError(f"weights file not found: {path}")
    return load_weights(path)


def _engine(name: str, args) -> evalbench.Engine:
    weights = _weights(args) if name == "net" else None
    space = SearchSpace(iterations=args.sweeps) if name == "bayes" else None
    return evalbench.Engine(name, weights=weights, seed=args.seed, space=space)


def _engine_names(text: str) -> list:
    names = list(ENGINES) if text == "all" else [s.strip() for s in text.split(",") if s.strip()]
    unknown = [n for n in names if n not in ENGINES]
    if unknown or not names:
        raise UsageError(f"unknown engine(s) {unknown}; choose from all, {', '.join(ENGINES)}")
    return names


def _require_file(path, what: str):
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")


def _wav_files(directory) -> list:
    d = Path(directory)
    if not d.is_dir():
        raise UsageError(f"not a directory: {directory}")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in WAV_SUFFIXES)
    if not files:
        raise UsageError(f"no WAV files in {directory}")
    return files


def _collect_inputs(args):
    """EDFs, source ids and bands from --synth, --rir-dir or generated synthetic data."""
    if getattr(args, "synth", None):
        _require_file(args.synth, "dataset")
        data = synth.load_dataset(args.synth)
        n = len(data) if not args.n else min(args.n, len(data))
        return [data.edf(i) for i in range(n)], [f"record-{i:06d}" for i in range(n)], None
    if getattr(args, "rir_dir", None):
        edfs, sources, bands = [], [], []
        centers = [args.band] if args.band else list(OCTAVE_CENTERS)
        for path in _wav_files(args.rir_dir):
            rir, fs = evalbench.load_rir(path, args.trim_end)
            for fc, edf in zip(centers, evalbench.band_edfs(rir, fs, centers)):
                edfs.append(edf)
                sources.append(f"{path.name}@{fc}")
                bands.append(fc)
        return edfs, sources, bands
    if not args.n:
        raise UsageError("give --synth, --rir-dir or --n for generated synthetic EDFs")
    cfg = synth.GeneratorConfig(count=3, sample_rate=args.fs, seed=_seeds(args.seed, "evaluation"))
    items = synth.make_edf_set(args.n, cfg, label="synthetic")
    return [it.edf for it in items], [it.source for it in items], None


# -- subcommands ------------------------------------------------------------

def cmd_generate(args) -> int:
    if args.count <= 0 or args.count % synth.MAX_ORDER:
        raise UsageError(f"--count must be a positive multiple of {synth.MAX_ORDER}")
    cfg = synth.GeneratorConfig(count=args.count, t_edf=args.t_edf, sample_rate=args.fs, seed=args.seed)
    try:
        cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    summary = synth.generate_dataset(cfg, args.out, workers=args.threads)
    summary.pop("elapsed", None)
    summary_path = args.summary or f"{args.out}.json"
    _write_json(summary, summary_path)
    log.info("wrote %d records to %s", summary["record_count"], args.out)
    return 0


def cmd_train(args) -> int:
    from .net.io import save_weights
    from .net.train import TrainingConfig, train, write_training_log

    _require_file(args.data, "dataset")
    config = TrainingConfig(epochs=args.epochs, learning_rate=args.lr, weight_decay=args.wd,
                            restart_period=args.restart, batch_size=args.batch_size,
                            seed=_seeds(args.seed, "train"))
    try:
        config.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    def progress(row):
        log.info("epoch %d: train %.4f val %.4f acc %.3f", row["epoch"], row["train_loss"], row["val_loss"],
                 row["order_accuracy"])

    params, rows = train(args.data, config, progress=progress)
    save_weights(params, args.out)
    write_training_log(rows, args.log or f"{args.out}.log.csv")
    return 0


def cmd_fit(args) -> int:
    if bool(args.rir) == bool(args.edf):
        raise UsageError("give exactly one of --rir or --edf")
    engine = _engine(args.engine, args)
    if args.edf:
        _require_file(args.edf, "EDF file")
        items = [(read_edf_csv(args.edf), Path(args.edf).name, None)]
    else:
        _require_file(args.rir, "RIR file")
        rir, fs = evalbench.load_rir(args.rir, args.trim_end)
        centers = [args.band] if args.band else list(OCTAVE_CENTERS)
        edfs = evalbench.band_edfs(rir, fs, centers)
        items = [(e, f"{Path(args.rir).name}@{fc}", fc) for e, fc in zip(edfs, centers)]
    docs = []
    for i, (edf, source, band) in enumerate(items):
        report = engine.fit_one(edf, i, source)
        report.band = band
        docs.append(report.to_dict(include_timing=args.timing))
    _write_json(docs[0] if len(docs) == 1 else docs, args.out)
    return 0


def cmd_evaluate(args) -> int:
    names = _engine_names(args.engine)
    engines = [_engine(n, args) for n in names]
    edfs, sources, bands = _collect_inputs(args)
    summary = evalbench.evaluate(engines, edfs, sources, bands, workers=args.threads,
                                 exclude_flagged=args.exclude_flagged)
    out = args.out or "report.csv"
    if out.endswith(".json"):
        evalbench.write_summary_json(summary, out)
    else:
        evalbench.write_summary_csv(summary, out)
    if args.json:
        evalbench.write_summary_json(summary, args.json)
    if args.plot_csv:
        evalbench.write_plot_csv(summary, args.plot_csv)
    for row in summary.rows():
        if row["band"] == "all":
            log.info("%s: n=%d median %.4g dB^2, q99 %.4g dB^2, flagged %d", row["engine"], row["n"],
                     row["median_db2"], row["q99_db2"], row["flagged_count"])
    return 0


def cmd_benchmark(args) -> int:
    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    names = _engine_names(args.engines)
    engines = [_engine(n, args) for n in names]
    edfs, _, _ = _collect_inputs(args)
    rows = evalbench.benchmark(engines, edfs, repeats=args.repeats)
    evalbench.write_timing_csv(rows, args.out or "timing.csv")
    for row in rows:
        log.info("%s: %.3f s for %d EDFs (%.1f us each)", row["engine"], row["mean_s"], row["n_edfs"],
                 row["per_edf_us"])
    return 0


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED,
                        help=f"master seed for all randomness (default {DEFAULT_SEED})")
    common.add_argument("--threads", type=int, default=1, help="worker processes (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    engine_opts = argparse.ArgumentParser(add_help=False)
    engine_opts.add_argument("--weights", help=f"network weights file (default ${WEIGHTS_ENV})")
    engine_opts.add_argument("--sweeps", type=int, default=50, help="slice-sampling sweeps for bayes (default 50)")

    inputs = argparse.ArgumentParser(add_help=False)
    inputs.add_argument("--synth", help="synthetic dataset file")
    inputs.add_argument("--rir-dir", help="directory of WAV room impulse responses")
    inputs.add_argument("--n", type=int, default=0, help="number of EDFs (limits --synth; generates if alone)")
    inputs.add_argument("--fs", type=float, default=48000.0, help="sample rate of generated EDFs")
    inputs.add_argument("--band", type=int, choices=OCTAVE_CENTERS, help="octave band for RIR inputs")
    inputs.add_argument("--trim-end", type=float, default=0.0, help="seconds cut from the end of each RIR")

    p = argparse.ArgumentParser(prog="decayfit", description="Multi-exponential energy decay analysis.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="generate a synthetic training dataset")
    g.add_argument("--count", type=int, required=True, help="total records (multiple of 3, split evenly by order)")
    g.add_argument("--out", required=True)
    g.add_argument("--summary", help="summary JSON path (default <out>.json)")
    g.add_argument("--fs", type=float, default=48000.0)
    g.add_argument("--t-edf", type=float, default=10.0)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", parents=[common], help="train the network")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--log", help="training log CSV (default <out>.log.csv)")
    t.add_argument("--epochs", type=int, default=200)
    t.add_argument("--restart", type=int, default=40, help="cosine restart period in epochs")
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--wd", type=float, default=3e-4)
    t.add_argument("--batch-size", type=int, default=128)
    t.set_defaults(func=cmd_train)

    f = sub.add_parser("fit", parents=[common, engine_opts], help="fit one RIR or EDF file")
    f.add_argument("--engine", choices=ENGINES, required=True)
    f.add_argument("--rir", help="WAV file")
    f.add_argument("--edf", help="EDF CSV file")
    f.add_argument("--band", type=int, choices=OCTAVE_CENTERS, help="octave band (default: all six)")
    f.add_argument("--trim-end", type=float, default=0.0)
    f.add_argument("--out", help="write JSON here instead of stdout")
    f.add_argument("--timing", action="store_true", help="include elapsed time (not reproducible)")
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("evaluate", parents=[common, engine_opts, inputs], help="fit-quality statistics")
    e.add_argument("--engine", default="all", help="engine name, comma list or 'all'")
    e.add_argument("--out", help="summary CSV, or JSON if the name ends in .json (default report.csv)")
    e.add_argument("--json", help="additional JSON summary")
    e.add_argument("--plot-csv", help="per-item (edf_id, engine, mse_db) CSV")
    e.add_argument("--exclude-flagged", action="store_true",
                   help="drop EDFs above 50 dB^2 under every engine from the aggregates")
    e.set_defaults(func=cmd_evaluate)

    b = sub.add_parser("benchmark", parents=[common, engine_opts, inputs], help="runtime comparison")
    b.add_argument("--engines", default="net,bayes")
    b.add_argument("--repeats", type=int, default=1)
    b.add_argument("--out", help="timing CSV (default timing.csv)")
    b.set_defaults(func=cmd_benchmark)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"decayfit {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DecayFitError, OSError, ValueError) as exc:
        print(f"decayfit {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
