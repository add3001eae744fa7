"""Command line front end: ``vibrec <subcommand> ...``.

Exit codes: 0 success, 2 usage or input error, 3 runtime/training error,
4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__, checkpoint, data, eval as ev, verify
from .vibdml import KL_SCOPES, EVAL_DISTANCES, TrainConfig, TrainingError

log = logging.getLogger("vibrec")

EXIT_USAGE = 2
EXIT_RUNTIME = 3
EXIT_VERIFY = 4

MODEL_CHOICES = ("vibdml", "biassvd", "pmf", "metricf")


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _csv(cast):
    def parse(text: str):
        try:
            return [cast(tok) for tok in text.split(",") if tok.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid list {text!r}") from None
    return parse


def read_config_file(path) -> dict:
    """Flat ``key=value`` file; blank lines and ``#`` comments are skipped."""
    out = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _default_seed() -> int:
    raw = os.environ.get("VIBREC_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"VIBREC_SEED must be an integer, got {raw!r}") from None


def _add_data(p, required=True):
    p.add_argument("--data", required=required, help="ratings file")
    p.add_argument("--format", default="canonical", choices=sorted(data.LOADERS), help="format of --data")


def _add_train(p, model=True):
    if model:
        p.add_argument("--model", default="vibdml", choices=MODEL_CHOICES)
    d = TrainConfig()
    p.add_argument("--k", type=int, default=d.k, help="latent dimension")
    p.add_argument("--beta", type=float, default=None, help=f"KL weight, VIB-DML only (default {d.beta})")
    p.add_argument("--lr", type=float, default=d.learning_rate)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--batch", type=int, default=d.batch_size)
    p.add_argument("--l2", type=float, default=d.l2, help="L2 weight for biassvd/pmf")
    p.add_argument("--init-sd", type=float, default=d.init_sd)
    p.add_argument("--kl-scope", default=d.kl_scope, choices=KL_SCOPES)
    p.add_argument("--eval-distance", default=d.eval_distance, choices=EVAL_DISTANCES)
    p.add_argument("--seed", type=int, default=None, help="model seed (default $VIBREC_SEED or 0)")
    p.add_argument("--config", help="key=value file; command-line flags take precedence")


def _add_protocol(p):
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--ratio", type=float, default=0.9)
    p.add_argument("--split-seed", type=int, default=None, help="base split seed (default: --seed)")
    p.add_argument("--jobs", type=int, default=1, help="parallel fits")


def build_parser() -> argparse.ArgumentParser:
    parser = ArgumentParser(prog="vibrec", description="Gaussian-embedding metric learning for rating prediction")
    parser.add_argument("--version", action="version", version=f"vibrec {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    p = sub.add_parser("prepare", help="convert a raw dataset to the canonical format")
    p.add_argument("--format", required=True, choices=sorted(data.LOADERS))
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="fit one model on a whole file")
    _add_data(p)
    _add_train(p)
    p.add_argument("--out", required=True, help="checkpoint path")

    p = sub.add_parser("evaluate", help="repeated hold-out RMSE")
    _add_data(p)
    _add_train(p)
    _add_protocol(p)
    p.add_argument("--report", required=True)

    p = sub.add_parser("sweep", help="hold-out RMSE over a grid of k or beta")
    _add_data(p)
    _add_train(p)
    _add_protocol(p)
    p.add_argument("--axis", required=True, choices=ev.SWEEP_AXES)
    p.add_argument("--grid", required=True, type=_csv(float))
    p.add_argument("--report", required=True)

    p = sub.add_parser("robustness", help="best-k versus high-k RMSE")
    _add_data(p)
    _add_train(p, model=False)
    _add_protocol(p)
    p.add_argument("--models", type=_csv(str), default=["biassvd", "metricf", "vibdml"])
    p.add_argument("--best-k", type=_csv(int), required=True, help="one k per --models entry")
    p.add_argument("--high-k", type=int, default=500)
    p.add_argument("--report", required=True)

    p = sub.add_parser("analyze", help="distance versus rating geometry of a trained model")
    p.add_argument("--checkpoint", required=True)
    _add_data(p)
    p.add_argument("--probes", type=_csv(int), default=None, help="user indices (default: 50 random users)")
    p.add_argument("--min-ratings", type=int, default=20)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--export", help="also write latent embeddings here")
    p.add_argument("--report", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference check of every model's gradients")
    p.add_argument("--trials", type=int, default=100, help="random instances per model")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--atol", type=float, default=1e-7)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--models", type=_csv(str), default=list(verify.KINDS))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--report", help="optional JSON report")
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            overrides = read_config_file(args.config)
        except UsageError as exc:
            parser.exit(EXIT_USAGE, f"vibrec: error: {exc}\n")
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(overrides) - known
        if unknown:
            parser.exit(EXIT_USAGE, f"vibrec: error: unknown config keys {sorted(unknown)}\n")
        sub.set_defaults(**overrides)
        args = parser.parse_args(argv)
    return args


def train_config(args) -> TrainConfig:
    model = getattr(args, "model", None)
    if args.beta is not None and model is not None and model != "vibdml":
        log.warning("--beta applies to vibdml only; ignored for %s", model)
    cfg = TrainConfig(
        epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch,
        beta=TrainConfig.beta if args.beta is None else args.beta,
        k=args.k, seed=args.seed, init_sd=args.init_sd, l2=args.l2,
        kl_scope=args.kl_scope, eval_distance=args.eval_distance,
    )
    try:
        return cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def manifest(args, outputs: list[str], seeds, cfg: TrainConfig | None = None) -> dict:
    resolved = {k: v for k, v in vars(args).items() if k != "verbose"}
    if cfg is not None:
        resolved["train_config"] = cfg.to_dict()
    inputs = [v for k, v in vars(args).items() if k in ("data", "inp", "checkpoint") and v]
    return {
        "subcommand": args.command,
        "config": resolved,
        "inputs": inputs,
        "outputs": outputs,
        "seeds": list(seeds),
        "version": __version__,
    }


def write_manifest(args, out_path, seeds, cfg: TrainConfig | None = None) -> None:
    path = f"{out_path}.manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest(args, [str(out_path)], seeds, cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load(args) -> data.Dataset:
    ds = data.load(args.data, args.format)
    if args.format == "canonical":
        ds = replace_name(ds, Path(args.data).stem)
    return ds


def replace_name(ds: data.Dataset, name: str) -> data.Dataset:
    if ds.name == name:
        return ds
    return data.Dataset(ds.users, ds.items, ds.ratings, ds.user_ids, ds.item_ids, ds.r_min, ds.r_max,
                        name=name, duplicates=ds.duplicates)


# -- subcommands --------------------------------------------------------------

def cmd_prepare(args) -> int:
    ds = data.load(args.inp, args.format)
    data.write_canonical(ds, args.out)
    s = ds.stats()
    print(f"n_users={s['n_users']} n_items={s['n_items']} n_ratings={s['n_ratings']}")
    if ds.duplicates:
        print(f"duplicates={ds.duplicates} (last occurrence kept)")
    write_manifest(args, args.out, [])
    return 0


def cmd_train(args) -> int:
    cfg = train_config(args)
    ds = _load(args)

    def progress(epoch, loss):
        print(f"epoch {epoch + 1:3d}  loss {loss:.6f}", flush=True)

    model, _ = ev.fit_model(args.model, ds, cfg, progress)
    checkpoint.save_model(model, args.out)
    write_manifest(args, args.out, [cfg.seed], cfg)
    return 0


def _split_seed(args, cfg):
    return cfg.seed if args.split_seed is None else args.split_seed


def cmd_evaluate(args) -> int:
    cfg = train_config(args)
    ds = _load(args)
    base = _split_seed(args, cfg)
    report = ev.run_holdout_protocol(ds, args.model, cfg, args.repeats, base, args.ratio, args.jobs)
    ev.write_json(report, args.report)
    print(f"{args.model} rmse_mean={report.rmse_mean:.6f} splits={[round(x, 6) for x in report.rmse_splits]}")
    write_manifest(args, args.report, report.config["seeds"], cfg)
    return 0


def cmd_sweep(args) -> int:
    cfg = train_config(args)
    ds = _load(args)
    base = _split_seed(args, cfg)
    report = ev.sweep(ds, args.model, cfg, args.axis, args.grid, args.repeats, base, args.ratio, args.jobs)
    ev.write_json(report, args.report)
    for value, point in zip(report.grid, report.points):
        print(f"{args.axis}={value}  rmse_mean={point.rmse_mean:.6f}")
    print(f"argmin {args.axis}={report.argmin}")
    write_manifest(args, args.report, [base + j for j in range(args.repeats)], cfg)
    return 0


def cmd_robustness(args) -> int:
    cfg = train_config(args)
    if len(args.best_k) != len(args.models):
        raise UsageError("--best-k needs one value per --models entry")
    unknown = set(args.models) - set(MODEL_CHOICES)
    if unknown:
        raise UsageError(f"unknown models {sorted(unknown)}")
    ds = _load(args)
    base = _split_seed(args, cfg)
    report = ev.robustness_experiment(ds, args.models, cfg, dict(zip(args.models, args.best_k)), args.high_k,
                                      args.repeats, base, args.ratio, args.jobs)
    ev.write_json(report, args.report)
    for m, e in report.entries.items():
        print(f"{m}: k={e.best_k} rmse={e.rmse_best:.6f}  k={args.high_k} rmse={e.rmse_high:.6f}  "
              f"increase={e.percent_increase:.2f}%")
    write_manifest(args, args.report, [base + j for j in range(args.repeats)], cfg)
    return 0


def cmd_analyze(args) -> int:
    try:
        model = checkpoint.load_model(args.checkpoint)
    except (OSError, checkpoint.CheckpointError) as exc:
        raise UsageError(str(exc)) from None
    if model.kind not in ev.DISTANCE_MODELS:
        raise UsageError(f"analyze needs a distance model (vibdml or metricf), got {model.kind}")
    ds = _load(args)
    seed = _default_seed() if args.seed is None else args.seed
    probes = args.probes or ev.select_probe_users(ds, 50, args.min_ratings, seed, model=model)
    try:
        report = ev.neighbor_consistency(model, ds, probes)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    ev.write_json(report, args.report)
    print(f"probes={len(probes)} top_closer_fraction={report.top_closer_fraction:.3f} mean_rho={report.mean_rho:.3f}")
    if args.export:
        ev.export_embeddings(model, args.export, ds)
    write_manifest(args, args.report, [seed])
    return 0


def cmd_gradcheck(args) -> int:
    unknown = set(args.models) - set(verify.KINDS)
    if unknown:
        raise UsageError(f"unknown models {sorted(unknown)}")
    if not args.h > 0 or not args.tol > 0:
        raise UsageError("--h and --tol must be positive")
    seed = _default_seed() if args.seed is None else args.seed
    trials = verify.run_trials(args.models, args.trials, args.tol, args.h, args.atol, seed)
    failed = [t for t in trials if not t.report.passed]
    for kind in args.models:
        mine = [t for t in trials if t.kind == kind]
        worst = max(t.report.max_rel_error for t in mine) if mine else 0.0
        bad = sum(not t.report.passed for t in mine)
        print(f"{kind:8s} trials={len(mine)} failed={bad} max_rel_error={worst:.3e}")
    for t in failed[:10]:
        print(f"FAIL {t.kind} trial {t.index}: coordinate {t.report.failing}", file=sys.stderr)
    if args.report:
        ev.write_json({
            "tol": args.tol, "atol": args.atol, "h": args.h, "seed": seed,
            "trials": [{"model": t.kind, "index": t.index, "passed": t.report.passed,
                        "max_rel_error": t.report.max_rel_error,
                        "failing": None if t.report.failing is None else [t.report.failing[0], list(t.report.failing[1])]}
                       for t in trials],
        }, args.report)
        write_manifest(args, args.report, [seed])
    return EXIT_VERIFY if failed else 0


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "robustness": cmd_robustness,
    "analyze": cmd_analyze,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        if hasattr(args, "seed") and args.seed is None:
            args.seed = _default_seed()
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"vibrec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except data.DatasetError as exc:
        print(f"vibrec: input error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"vibrec: training failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, OSError) as exc:
        print(f"vibrec: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
