"""Command-line experiment runner.

Artifacts land under an output root (``--out``, else ``$DEFORMSEQ_OUT``,
else ``./runs``) in fixed subdirectories::

    dataset/  models/  studies/  audits/

Exit status: 0 success, 1 bad input (missing files, invalid flags or
config), 2 numeric failure (divergence).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import statistics
import sys
from pathlib import Path

from . import dataset as ds
from .audit import AuditConfig, architecture_causality_matrix, format_matrix, prefix_consistency_audit
from .errors import DeformSeqError, DivergenceError, StudyError
from .hpo import DEFAULT_SPACES, Study, run_study
from .models import build_model, dump_json, load_checkpoint, save_checkpoint
from .training import TrainConfig, train

ENV_OUT = "DEFORMSEQ_OUT"
SUBDIRS = ("dataset", "models", "studies", "audits")
ARCH_CHOICES = ("encdec_gru", "conv", "transformer", "gru")

log = logging.getLogger("deformseq")


class InputError(Exception):
    """Bad user input; exit status 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _fractions(text):
    try:
        vals = tuple(float(t) for t in str(text).split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad fraction list {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty fraction list")
    return vals


def _add_data_args(p):
    p.add_argument("--data", help="dataset CSV")
    p.add_argument("--synthetic-paths", type=_positive_int, help="synthesize this many paths instead of --data")
    p.add_argument("--synthetic-steps", type=_positive_int, default=100)
    p.add_argument("--synthetic-seed", type=int, default=42)


def _add_model_args(p):
    p.add_argument("--hidden", type=_positive_int, default=64)
    p.add_argument("--filters", type=_positive_int, default=32)
    p.add_argument("--kernel", type=_positive_int, default=3)
    p.add_argument("--padding", choices=("causal", "symmetric"), default="causal")
    p.add_argument("--d-model", type=_positive_int, default=32)
    p.add_argument("--heads", type=_positive_int, default=2)
    p.add_argument("--d-ff", type=_positive_int, default=64)
    p.add_argument("--mask", choices=("causal", "none"), default="none")
    p.add_argument("--positional", choices=("none", "sinusoidal"), default="none")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deformseq", description=__doc__.splitlines()[0])
    parser.add_argument("--out", help=f"output root (default ${ENV_OUT} or ./runs)")
    parser.add_argument("--config", help="JSON file of option values; flags take precedence")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="synthesize a bilinear path dataset")
    p.add_argument("--paths", type=_positive_int, default=500)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--output", help="CSV path (default <out>/dataset/synthetic.csv)")

    p = sub.add_parser("train", help="train one architecture")
    _add_data_args(p)
    p.add_argument("--arch", choices=ARCH_CHOICES, default="encdec_gru")
    _add_model_args(p)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=_positive_int, default=32)
    p.add_argument("--epochs", type=_positive_int, default=100)
    p.add_argument("--patience", type=_positive_int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fraction", type=float, default=0.8)
    p.add_argument("--split-seed", type=int, default=42)
    p.add_argument("--name", help="checkpoint name (default: the architecture)")

    p = sub.add_parser("tune", help="Bayesian hyperparameter study")
    _add_data_args(p)
    p.add_argument("--arch", choices=ARCH_CHOICES, default="encdec_gru")
    p.add_argument("--trials", type=_positive_int, default=20)
    p.add_argument("--epochs", type=_positive_int, default=100)
    p.add_argument("--patience", type=_positive_int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fraction", type=float, default=0.8)
    p.add_argument("--split-seed", type=int, default=42)
    p.add_argument("--padding", choices=("causal", "symmetric"), default="causal")
    p.add_argument("--mask", choices=("causal", "none"), default="none")
    p.add_argument("--positional", choices=("none", "sinusoidal"), default="none")
    p.add_argument("--name", help="study name (default: the architecture)")

    p = sub.add_parser("audit", help="prefix-consistency audit of a checkpoint")
    _add_data_args(p)
    p.add_argument("--model", help="checkpoint JSON")
    p.add_argument("--fractions", type=_fractions, default=(0.25, 0.5, 0.75, 0.9))
    p.add_argument("--paths", type=_positive_int, default=100)
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.add_argument("--threshold", type=float, default=1.0)
    p.add_argument("--name", help="report name (default: checkpoint file stem)")

    p = sub.add_parser("compare", help="tabulate best train/test MSE of several studies")
    p.add_argument("--studies", nargs="+", help="study JSON files")
    p.add_argument("--output", help="CSV path (default <out>/studies/comparison.csv)")

    p = sub.add_parser("matrix", help="train briefly and audit every architecture/mode cell")
    _add_data_args(p)
    p.add_argument("--paths", type=_positive_int, default=100)
    p.add_argument("--epochs", type=_positive_int, default=5)
    p.add_argument("--fractions", type=_fractions, default=(0.25, 0.5, 0.75, 0.9))
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.add_argument("--seed", type=int, default=0)
    return parser


# ---------------------------------------------------------------------------


def _out_root(args) -> Path:
    root = Path(args.out or os.environ.get(ENV_OUT) or "runs")
    for d in SUBDIRS:
        (root / d).mkdir(parents=True, exist_ok=True)
    return root


def _load_data(args):
    if bool(args.data) == bool(args.synthetic_paths):
        raise InputError("give exactly one dataset source: --data FILE or --synthetic-paths N")
    if args.data:
        path = Path(args.data)
        if not path.is_file():
            raise InputError(f"dataset file not found: {path}")
        return ds.load_csv(path)
    return ds.synthesize(args.synthetic_paths, args.synthetic_steps, args.synthetic_seed)


def _hyper(args) -> dict:
    if args.arch in ("encdec_gru", "gru"):
        return {"hidden": args.hidden}
    if args.arch == "conv":
        return {"filters": args.filters, "kernel": args.kernel, "padding": args.padding}
    return {"d_model": args.d_model, "heads": args.heads, "d_ff": args.d_ff,
            "mask": args.mask, "positional": args.positional}


def cmd_generate(args) -> int:
    if args.steps < 2:
        raise InputError("--steps must be at least 2")
    root = _out_root(args)
    out = Path(args.output) if args.output else root / "dataset" / "synthetic.csv"
    data = ds.synthesize(args.paths, args.steps, args.seed)
    ds.save_csv(data, out)
    dmax = max(float(p.damage.max()) for p in data)
    dmin = min(float(p.damage.min()) for p in data)
    print(f"wrote {out}: {len(data)} paths x {data.n_steps} steps, D in [{dmin:.4f}, {dmax:.4f}]")
    return 0


def cmd_train(args) -> int:
    root = _out_root(args)
    data = _load_data(args)
    split = ds.split(data, args.fraction, args.split_seed)
    model = build_model(args.arch, seed=args.seed, **_hyper(args))
    cfg = TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, max_epochs=args.epochs,
                      patience=args.patience, seed=args.seed)
    name = args.name or args.arch
    hist_path = root / "models" / f"{name}.history.json"
    try:
        trained, hist = train(model, split, cfg)
    except DivergenceError as exc:
        if exc.history is not None:
            dump_json(exc.history.to_dict(), hist_path)
        print(f"training diverged: {exc}", file=sys.stderr)
        return 2
    ckpt = root / "models" / f"{name}.json"
    save_checkpoint(trained, ckpt)
    dump_json(hist.to_dict(), hist_path)
    print(f"{args.arch}: {trained.n_params} parameters, stopped at epoch {hist.stopped_epoch} "
          f"(best {hist.best_epoch}), train MSE {hist.best_train_mse:.4e}, test MSE {hist.best_val_mse:.4e}, "
          f"{hist.wall_time:.1f}s")
    print(f"wrote {ckpt}")
    return 0


def cmd_tune(args) -> int:
    root = _out_root(args)
    data = _load_data(args)
    split = ds.split(data, args.fraction, args.split_seed)
    fixed = {}
    if args.arch == "conv":
        fixed = {"padding": args.padding}
    elif args.arch == "transformer":
        fixed = {"mask": args.mask, "positional": args.positional}
    space = DEFAULT_SPACES[args.arch]
    print("search space:")
    for d in space.dimensions:
        print(f"  {d.name:<14} {d.kind:<9} [{d.low:g}, {d.high:g}]")

    def progress(t):
        mse = "diverged" if t.status != "ok" else f"train {t.train_mse:.4e} test {t.test_mse:.4e}"
        print(f"trial {t.index:2d} {json.dumps(t.config)} {mse}", flush=True)

    try:
        study = run_study(args.arch, split, space, n_trials=args.trials, seed=args.seed, fixed=fixed,
                          max_epochs=args.epochs, patience=args.patience, progress=progress)
    except StudyError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    name = args.name or args.arch
    study.save(root / "studies" / f"{name}.json", root / "studies" / f"{name}.csv")
    b = study.best
    print(f"best trial {b.index}: test MSE {b.test_mse:.4e} {json.dumps(b.config)}")
    return 0


def cmd_audit(args) -> int:
    root = _out_root(args)
    if not args.model:
        raise InputError("--model is required")
    mpath = Path(args.model)
    if not mpath.is_file():
        raise InputError(f"checkpoint not found: {mpath}")
    model = load_checkpoint(mpath)
    data = _load_data(args)
    cfg = AuditConfig(fractions=args.fractions, tolerance=args.tolerance, threshold=args.threshold,
                      paths=args.paths)
    report = prefix_consistency_audit(model, data, cfg)
    name = args.name or mpath.stem
    report.save(root / "audits" / f"{name}.json", root / "audits" / f"{name}.csv")
    print(f"{report.arch} {report.mode}: {report.verdict}; max deviation {report.max_deviation:.3e}, "
          f"consistent paths {report.consistent_fraction:.2%}, localization shifts {report.localization_shifts}")
    return 0


def cmd_compare(args) -> int:
    root = _out_root(args)
    if not args.studies:
        raise InputError("--studies needs at least one study file")
    rows = []
    for f in args.studies:
        if not Path(f).is_file():
            raise InputError(f"study file not found: {f}")
        st = Study.load(f)
        ok = [t for t in st.trials if t.status == "ok"]
        b = st.best
        rows.append({"arch": st.arch, "trials": len(st.trials), "ok_trials": len(ok),
                     "best_train_mse": b.train_mse, "best_test_mse": b.test_mse,
                     "median_test_mse": statistics.median(t.test_mse for t in ok)})
    out = Path(args.output) if args.output else root / "studies" / "comparison.csv"
    cols = list(rows[0])
    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in r.values()))
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"{'arch':<12} {'trials':>6} {'best train':>12} {'best test':>12} {'median test':>12}")
    for r in sorted(rows, key=lambda r: r["best_test_mse"]):
        print(f"{r['arch']:<12} {r['trials']:>6} {r['best_train_mse']:12.4e} {r['best_test_mse']:12.4e} "
              f"{r['median_test_mse']:12.4e}")
    print(f"wrote {out}")
    return 0


def cmd_matrix(args) -> int:
    root = _out_root(args)
    data = _load_data(args)
    cfg = AuditConfig(fractions=args.fractions, tolerance=args.tolerance, paths=args.paths)
    tc = TrainConfig(learning_rate=3e-3, batch_size=32, max_epochs=args.epochs, seed=args.seed)
    rows = architecture_causality_matrix(data, cfg, tc, seed=args.seed)
    dump_json([r.to_dict() for r in rows], root / "audits" / "matrix.json")
    print(format_matrix(rows))
    return 0


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "tune": cmd_tune, "audit": cmd_audit,
            "compare": cmd_compare, "matrix": cmd_matrix}


def _apply_config(parser, argv):
    """Load ``--config`` and install its values as subcommand defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return
    cfg_path = Path(known.config)
    if not cfg_path.is_file():
        raise InputError(f"config file not found: {cfg_path}")
    try:
        cfg = json.loads(cfg_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"config file {cfg_path} is not valid JSON: {exc}") from None
    command = next((a for a in rest if a in COMMANDS), None)
    if command is None:
        return
    section = cfg.get(command, {}) if any(k in COMMANDS for k in cfg) else cfg
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    sub = subparsers.choices[command]
    dests = {a.dest for a in sub._actions} - {"help"}
    unknown = sorted(k for k in section if k.replace("-", "_") not in dests)
    if unknown:
        raise InputError(f"unknown config keys for {command}: {unknown}")
    sub.set_defaults(**{k.replace("-", "_"): v for k, v in section.items()})


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DivergenceError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except (DeformSeqError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
