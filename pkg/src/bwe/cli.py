"""Command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Every command that writes files also writes ``run.json`` (arguments, seed,
resolved configuration, library versions) into its output directory. The
``BWE_OUTPUT_DIR`` environment variable replaces the output directory of
commands that have one unless ``--output-dir`` is given.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .audio import WavError, load_wav, save_wav
from .autograd.checkpoint import CheckpointError
from .config import ConfigFileError, ExperimentConfig, build_config, load_config
from .data import DataError, DatasetManifest, Split, SyntheticSpec, generate_synthetic_dataset
from .evaluation import EvaluationError, diff_spectrogram, evaluate_split, spectrogram
from .filters import (
    FilterSpec,
    apply_filter,
    design_lowpass,
    magnitude_response,
    seen_test_filter,
    unseen_filter,
)
from .training import Regularization, Trainer, TrainingError, load_network, write_log

log = logging.getLogger("bwe")

ENV_OUTPUT_DIR = "BWE_OUTPUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _output_dir(args, default="."):
    if getattr(args, "output_dir", None):
        return Path(args.output_dir)
    if os.environ.get(ENV_OUTPUT_DIR):
        return Path(os.environ[ENV_OUTPUT_DIR])
    return Path(default)


def write_provenance(out_dir, command, argv, config=None, seed=None):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "argv": list(argv),
        "seed": seed,
        "config": config or {},
        "versions": {"bwe": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    (out_dir / "run.json").write_text(json.dumps(record, indent=2, sort_keys=True, default=str) + "\n")


def _filter_spec(args) -> FilterSpec:
    kw = {}
    if args.ripple is not None:
        kw["passband_ripple_db"] = args.ripple
    if args.stopband is not None:
        kw["stopband_atten_db"] = args.stopband
    if getattr(args, "bessel_norm", None):
        kw["bessel_norm"] = args.bessel_norm
    return FilterSpec.make(args.family, args.order, args.cutoff, args.fs, **kw)


def _add_filter_flags(p):
    p.add_argument("--family", required=True, help="butterworth | chebyshev1 | bessel | elliptic")
    p.add_argument("--order", type=int, required=True)
    p.add_argument("--cutoff", type=float, default=11025.0, help="cut-off in Hz")
    p.add_argument("--fs", type=float, default=44100.0, help="sample rate in Hz")
    p.add_argument("--ripple", type=float, default=None, help="passband ripple in dB")
    p.add_argument("--stopband", type=float, default=None, help="stopband attenuation in dB")
    p.add_argument("--bessel-norm", choices=["phase", "mag"], default=None)


# -- subcommands --

def cmd_design_filter(args, argv):
    spec = _filter_spec(args)
    cascade = design_lowpass(spec)
    freqs = np.linspace(0.0, spec.sample_rate_hz / 2, args.points)
    db = magnitude_response(cascade, freqs, spec.sample_rate_hz)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        fh.write("freq_hz,magnitude_db\n")
        for f, v in zip(freqs, db):
            fh.write(f"{float(f)!r},{float(v)!r}\n")
    sos_out = Path(args.sos_out) if args.sos_out else out.with_name(out.stem + "_sos.csv")
    np.savetxt(sos_out, np.asarray(cascade.sections), delimiter=",", fmt="%.17g",
               header="b0,b1,b2,a0,a1,a2", comments="")
    write_provenance(out.parent, "design-filter", argv, {"filter": spec.label, "points": args.points})
    log.info("%s: %d sections, written to %s", spec.label, len(cascade), out)


def cmd_filter(args, argv):
    spec = _filter_spec(args)
    clip = load_wav(args.input)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_wav(apply_filter(design_lowpass(spec), clip), out, args.encoding)
    write_provenance(out.parent, "filter", argv, {"filter": spec.label, "input": args.input})


def cmd_gen_synth(args, argv):
    out = _output_dir(args, args.out or "data")
    spec = SyntheticSpec(train_clips=args.train, validation_clips=args.validation,
                         test_clips=args.test, clip_seconds=args.clip_seconds)
    manifest = generate_synthetic_dataset(out, spec, seed=args.seed)
    write_provenance(out, "gen-synth", argv, vars(spec), args.seed)
    log.info("wrote %d clips and %s", len(manifest), out / "manifest.tsv")


def _experiment_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else build_config({})
    overrides = {"arch": args.arch, "seed": args.seed}
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    if args.regularization is not None:
        cfg.regularization = Regularization.parse(args.regularization)
    if args.manifest is not None:
        cfg.manifest = Path(args.manifest)
    out = _output_dir(args, None) if (args.output_dir or os.environ.get(ENV_OUTPUT_DIR)) else None
    if out is not None:
        cfg.output_dir = out
    train = cfg.train.to_dict()
    for key in ("max_iterations", "record_interval", "batch_size"):
        value = getattr(args, key)
        if value is not None:
            train[key] = value
    train["seed"], train["regularization"] = cfg.seed, cfg.regularization
    try:
        cfg.train = type(cfg.train)(**train)
    except ValueError as exc:
        raise ConfigFileError(str(exc), "train") from None
    if cfg.manifest is None:
        raise ConfigFileError("no dataset manifest given (set it here or pass --manifest)", "data", "manifest")
    if not cfg.manifest.is_file():
        raise ConfigFileError(f"manifest file not found: {cfg.manifest}", "data", "manifest")
    return cfg


def cmd_train(args, argv):
    from .experiments import validation_for
    from .models import build_network

    cfg = _experiment_config(args)
    manifest = DatasetManifest.read(cfg.manifest)
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    write_provenance(out, "train", argv, cfg.to_dict(), cfg.seed)
    ckpt_path, log_path = out / "checkpoint.bin", out / "train_log.csv"
    train_split = manifest.split(Split.TRAIN)
    if args.resume:
        trainer = Trainer.load(args.resume, train_split, max_iterations=cfg.train.max_iterations)
    else:
        net = build_network(cfg.arch, cfg.arch_config, seed=cfg.seed)
        trainer = Trainer(net, train_split, cfg.train)
    trainer.validation = validation_for(manifest, trainer.policy, cfg.validation_start_s,
                                        cfg.validation_length_s)
    trainer.run(checkpoint_path=ckpt_path, log_path=log_path)
    trainer.save(ckpt_path)
    write_log(trainer.state.rows, log_path)
    log.info("finished at iteration %d; checkpoint %s", trainer.state.iteration, ckpt_path)


def cmd_evaluate(args, argv):
    net, _ = load_network(args.checkpoint)
    manifest = DatasetManifest.read(args.manifest).split(args.split)
    out = _output_dir(args, "eval")
    out.mkdir(parents=True, exist_ok=True)
    conditions = {"seen": seen_test_filter(), "unseen": unseen_filter()}
    chosen = list(conditions) if args.condition == "both" else [args.condition]
    for name in chosen:
        report = evaluate_split(net, manifest, conditions[name], name, args.chunk_len)
        path = out / f"{Split.parse(args.split).value}_{name}.csv"
        report.write_csv(path)
        print(f"{name}: input {report.mean_input_snr_db:.2f} dB  output {report.mean_output_snr_db:.2f} dB  "
              f"delta {report.mean_delta_snr_db:+.2f} dB  ({len(report.rows)} songs) -> {path}")
    write_provenance(out, "evaluate", argv, {"checkpoint": args.checkpoint, "split": args.split,
                                              "conditions": chosen})


def cmd_spectrogram(args, argv):
    out = _output_dir(args, "spectrograms")
    out.mkdir(parents=True, exist_ok=True)
    clip = load_wav(args.input)
    name = args.name or Path(args.input).stem
    written = [(f"{name}_{args.which}", spectrogram(clip))]
    if args.reference:
        written.append((f"{name}_diff", diff_spectrogram(clip, load_wav(args.reference))))
    for stem, spec in written:
        spec.write_csv(out / f"{stem}.csv")
        spec.write_pgm(out / f"{stem}.pgm")
    write_provenance(out, "spectrogram", argv, {"input": args.input, "reference": args.reference})


def cmd_reproduce_desk(args, argv):
    from .experiments import default_arch_config, gap_reduction, run_condition, write_table
    from .training import TrainConfig

    out = _output_dir(args, "desk")
    out.mkdir(parents=True, exist_ok=True)
    if args.manifest:
        manifest = DatasetManifest.read(args.manifest)
    else:
        manifest = generate_synthetic_dataset(out / "data", SyntheticSpec(), seed=args.seed)
    tc = TrainConfig(max_iterations=args.max_iterations, record_interval=args.record_interval,
                     seed=args.seed)
    write_provenance(out, "reproduce-desk", argv, {"archs": args.arch, "train": tc.to_dict()}, args.seed)
    results = []
    for arch in args.arch:
        for reg in (Regularization.NONE, Regularization.DATA_AUGMENTATION,
                    Regularization.BATCH_NORM, Regularization.DROPOUT):
            log.info("training %s with regularization %s", arch, reg.value)
            results.append(run_condition(manifest, arch, reg, default_arch_config(arch), tc,
                                         out / f"{arch}_{reg.value}"))
    write_table(results, out / "table.csv")
    for arch in args.arch:
        pair = [r for r in results if r.arch == arch]
        single, multi = pair[0], pair[1]
        log.info("%s: gap reduction with augmentation %.0f%%", arch, 100 * gap_reduction(single, multi))
    print((out / "table.csv").read_text(), end="")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bwe", description="Bandwidth-extension filter-generalization toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--verbose", action="store_true", help="debug logging (per-draw filter audit)")
    parser.add_argument("--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    p = sub.add_parser("design-filter", help="design a low-pass filter and write its magnitude response")
    _add_filter_flags(p)
    p.add_argument("--points", type=int, default=4097, help="frequency grid size over [0, fs/2]")
    p.add_argument("--out", required=True, help="CSV path (freq_hz, magnitude_db)")
    p.add_argument("--sos-out", default=None, help="CSV of second-order sections (default: <out>_sos.csv)")
    p.set_defaults(func=cmd_design_filter)

    p = sub.add_parser("filter", help="low-pass filter a WAV file")
    _add_filter_flags(p)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--encoding", choices=["pcm16", "float32"], default="pcm16")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("gen-synth", help="write a seeded synthetic corpus and its manifest")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output directory (default: data)")
    p.add_argument("--output-dir", default=None, help=argparse.SUPPRESS)
    p.add_argument("--train", type=int, default=100)
    p.add_argument("--validation", type=int, default=8)
    p.add_argument("--test", type=int, default=20)
    p.add_argument("--clip-seconds", type=float, default=3.0)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("train", help="train a network from an experiment config")
    p.add_argument("--config", default=None, help="experiment config file")
    p.add_argument("--manifest", default=None)
    p.add_argument("--arch", choices=["unet", "resnet"], default=None)
    p.add_argument("--regularization", default=None, help="none | bn | do | da")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--max-iterations", type=int, default=None)
    p.add_argument("--record-interval", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--output-dir", default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="per-song SNR report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "validation", "test"])
    p.add_argument("--condition", default="both", choices=["seen", "unseen", "both"])
    p.add_argument("--chunk-len", type=int, default=8192)
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("spectrogram", help="Hann-1024 spectrogram (and difference) as CSV and PGM")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--reference", default=None, help="target WAV for a difference spectrogram")
    p.add_argument("--name", default=None, help="song name used in output file names")
    p.add_argument("--which", default="output", help="label for the analysed clip (input/output/target)")
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_spectrogram)

    p = sub.add_parser("reproduce-desk", help="train and test baseline/DA/BN/DO on the synthetic corpus")
    p.add_argument("--arch", nargs="+", choices=["unet", "resnet"], default=["resnet"])
    p.add_argument("--manifest", default=None, help="existing corpus (default: generate one)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iterations", type=int, default=5000)
    p.add_argument("--record-interval", type=int, default=2500)
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=cmd_reproduce_desk)
    return parser


def _configure_logging(args):
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr, force=True)


_RUNTIME_ERRORS = (WavError, DataError, CheckpointError, EvaluationError, TrainingError,
                   OSError, RuntimeError)


def run_command(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    _configure_logging(args)
    try:
        args.func(args, argv)
    except _RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (UsageError, ValueError) as exc:
        # config, filter and architecture validation errors all derive from ValueError
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def main():
    sys.exit(run_command())


__all__ = ["build_parser", "main", "run_command", "write_provenance"]
