"""``deepchannel`` command line: train, ode, data and verify.

Exit codes: 0 success, 1 runtime failure (divergence, failed acceptance
checks), 2 usage, schema or missing-file errors.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .core_math import ConfigError, DomainError, derive_seed
from .datasets import (
    BianchiniSpec,
    DataFormatError,
    gen_bianchini,
    gen_linear_stats,
    mnist_desk_subset,
    save_delimited,
    write_idx,
)
from .trainer import DivergenceError

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _config_text(arg: str) -> tuple[str, str]:
    """Text and stem of a config given as a path or as a bundled config name."""
    path = Path(arg)
    if path.is_file():
        return path.read_text(), path.stem
    from .acceptance import bundled_config

    bundled = bundled_config(arg.removesuffix(".ini"))
    if bundled.is_file():
        return bundled.read_text(), arg.removesuffix(".ini")
    raise UsageError(f"config file not found: {arg}")


def _out_dir(args, stem: str) -> Path:
    out = Path(args.out) if args.out else Path("runs") / stem
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seeds(base: int, sweep: int | None) -> list[tuple[int, str | None]]:
    if not sweep:
        return [(base, None)]
    return [(derive_seed(base, i), f"seed-{i:03d}") for i in range(sweep)]


def cmd_train(args) -> int:
    from .experiment import load_experiment, run_experiment

    text, stem = _config_text(args.config)
    exp = load_experiment(text, is_text=True)
    if args.seed is not None:
        exp = exp.with_seed(args.seed)
    out = _out_dir(args, stem)
    say = (lambda *a: None) if args.quiet else print
    say(exp.resolved_text().rstrip())
    for seed, sub in _seeds(exp.seed, args.sweep):
        run = exp.with_seed(seed)
        dest = out / sub if sub else out

        def echo(rec, seed=seed):
            extra = f" val_acc={rec.val_accuracy:.4f}" if rec.val_accuracy is not None else ""
            say(f"seed {seed} epoch {rec.epoch:3d} train_acc={rec.train_accuracy:.4f} "
                f"train_loss={rec.train_loss:.4f}{extra}")

        _, summary = run_experiment(run, dest, echo=echo)
        say(f"seed {seed}: {summary['epochs_completed']} epochs, results in {dest}")
    return EXIT_OK


def cmd_ode(args) -> int:
    from .ode.runner import load_ode_run, run_ode, sweep

    text, stem = _config_text(args.config)
    run = load_ode_run(text, is_text=True)
    if args.seed is not None:
        run = run.with_seed(args.seed)
    out = _out_dir(args, stem)
    say = (lambda *a: None) if args.quiet else print
    results = sweep(run, args.sweep, out) if args.sweep else [run_ode(run, out)]
    for r in results:
        rep = r.report
        drift = max(rep.drifts.values(), default=0.0)
        say(f"{rep.system} [{rep.theorem}] verdict={rep.verdict} residual={rep.residual:.3e} "
            f"max_drift={drift:.3e} t_end={rep.t_end:.6g}"
            + (f" root={rep.classification}" if rep.classification else ""))
        for note in rep.annotations:
            say(f"  note: {note}")
    say(f"results in {out}")
    return EXIT_OK


def cmd_data(args) -> int:
    out = Path(args.out)
    if args.kind == "mnist-idx":
        data = mnist_desk_subset(args.n, seed=args.seed)
        out.mkdir(parents=True, exist_ok=True)
        images = (data.features * 255).round().astype("uint8").reshape(len(data), 28, 28)
        labels = data.targets.argmax(axis=1).astype("uint8")
        write_idx(images, labels, out / "train-images-idx3-ubyte", out / "train-labels-idx1-ubyte")
    else:
        if args.kind == "bianchini":
            data = gen_bianchini(BianchiniSpec(args.k, args.n, args.seed))
        else:
            data, _ = gen_linear_stats(args.n, "normal", args.gain, args.noise, args.seed)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_delimited(data, out)
    if not args.quiet:
        print(f"wrote {args.n} {args.kind} examples to {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    from .acceptance import CRITERIA, run_all

    numbers = None
    if args.only:
        try:
            numbers = [int(v) for v in args.only.split(",")]
        except ValueError:
            raise UsageError(f"--only expects comma-separated criterion numbers, got {args.only!r}") from None
        unknown = [n for n in numbers if n not in CRITERIA]
        if unknown:
            raise UsageError(f"unknown criteria {unknown}")
    say = (lambda *a: None) if args.quiet else print
    results = run_all(numbers, echo=lambda r: say(r.line()))
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} criteria passed")
    return EXIT_OK if n_pass == len(results) else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--quiet", action="store_true", help="only print errors and the final line")

    run_opts = argparse.ArgumentParser(add_help=False)
    run_opts.add_argument("--config", required=True, help="INI file or bundled config name")
    run_opts.add_argument("--out", help="output directory (default runs/<config name>)")
    run_opts.add_argument("--seed", type=int, help="override the config seed")
    run_opts.add_argument("--sweep", type=int, help="repeat over N seeds derived from the base seed")

    p = argparse.ArgumentParser(prog="deepchannel", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common, run_opts], help="train a network from a config").set_defaults(
        fn=cmd_train)
    sub.add_parser("ode", parents=[common, run_opts], help="integrate and analyze a learning ODE").set_defaults(
        fn=cmd_ode)

    d = sub.add_parser("data", parents=[common], help="generate or export datasets")
    d.add_argument("kind", choices=("bianchini", "linear", "mnist-idx"))
    d.add_argument("--out", required=True, help="CSV file, or a directory for mnist-idx")
    d.add_argument("--n", type=int, default=1000)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--k", type=int, default=0, help="Bianchini fold count")
    d.add_argument("--gain", type=float, default=1.0, help="linear target gain")
    d.add_argument("--noise", type=float, default=0.0, help="linear target noise std")
    d.set_defaults(fn=cmd_data)

    v = sub.add_parser("verify", parents=[common], help="run the acceptance battery")
    v.add_argument("--only", help="comma-separated criterion numbers")
    v.set_defaults(fn=cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "sweep", None) is not None and args.sweep < 1:
            raise UsageError("--sweep must be >= 1")
        return args.fn(args)
    except (UsageError, ConfigError, DataFormatError, FileNotFoundError) as exc:
        print(f"deepchannel: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"deepchannel: {exc} (partial metrics kept)", file=sys.stderr)
        return EXIT_RUNTIME
    except (DomainError, RuntimeError, FloatingPointError) as exc:
        print(f"deepchannel: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
