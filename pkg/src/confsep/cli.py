"""Train, attack, defend and evaluate small classifiers from the shell.

Exit codes: 0 success, 2 validation error, 3 IO error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import attacks, defense, nn_core
from .attacks import AttackBudget
from .harness import experiments, report
from .harness.config import ConfigError, ExperimentConfig, load_config
from .harness.data import GENERATORS, load_csv, make_synthetic
from .losses import LossKind
from .training import Dataset, TrainConfig, accuracy, adversarial_inner_budget, train

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 2, 3

log = logging.getLogger("confsep")


class CliError(ValueError):
    pass


# -- argument groups -----------------------------------------------------------

def _floats(text: str) -> list:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers, got {text!r}") from None


def _ints(text: str) -> list:
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None


def _add_globals(p: argparse.ArgumentParser, suppress: bool) -> None:
    kw = {"default": argparse.SUPPRESS} if suppress else {}
    p.add_argument("--seed", type=int, help="seed for training init and attacks (default 0)",
                   **(kw or {"default": 0}))
    p.add_argument("--threads", type=int, help="worker threads for per-sample fan-out (default 1)",
                   **(kw or {"default": 1}))
    p.add_argument("--config", help="section.key = value file supplying defaults", **kw)


def _add_data(p):
    g = p.add_argument_group("data")
    g.add_argument("--data", "--csv", dest="csv", help="CSV with header label,f0,f1,...")
    g.add_argument("--generator", choices=GENERATORS, default="two_moons")
    g.add_argument("--n", type=int, default=200)
    g.add_argument("--noise", type=float, default=0.05)
    g.add_argument("--data-seed", type=int, default=0)


def _add_attack(p, radius=0.1):
    """``radius=None`` leaves the radius to a command-specific flag."""
    g = p.add_argument_group("attack budget")
    g.add_argument("--norm", choices=attacks.NORMS, default="linf")
    if radius is not None:
        g.add_argument("--radius", type=float, default=radius)
    g.add_argument("--iterations", "--iters", dest="iterations", type=int, default=100)
    g.add_argument("--restarts", type=int, default=10)
    g.add_argument("--step-size", type=float, default=None)
    g.add_argument("--schedule", choices=attacks.SCHEDULES, default="geometric")


def _add_embed(p):
    g = p.add_argument_group("embedding")
    g.add_argument("--xi", type=float, default=0.05)
    g.add_argument("--lam", "--lambda", dest="lam", type=float, default=0.0)
    g.add_argument("--mode", choices=defense.MODES, default="max_prob")
    g.add_argument("--renyi-alpha", type=float, default=2.0)
    g.add_argument("--search-norm", choices=attacks.NORMS, default="linf")
    g.add_argument("--dist-norm", choices=attacks.NORMS, default="l2")
    g.add_argument("--embed-iterations", type=int, default=100)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="confsep", description=__doc__.splitlines()[0])
    _add_globals(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="natural or adversarial training")
    _add_globals(p, suppress=True)
    _add_data(p)
    p.add_argument("--arch", type=_ints, help="layer sizes, e.g. 2,32,32,2 (default d,32,32,k)")
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--loss", default="cross_entropy", help="cross_entropy | squared | entreg:<w> | cw:<k>")
    p.add_argument("--activation", choices=nn_core.ACTIVATIONS, default="tanh")
    p.add_argument("--init-scale", type=float, default=1.0)
    p.add_argument("--adv-radius", type=float, default=0.0, help="inner-max radius; 0 = natural")
    p.add_argument("--adv-norm", choices=attacks.NORMS, default="linf")
    p.add_argument("--adv-iterations", type=int, default=10)
    p.add_argument("--adv-restarts", type=int, default=1)
    p.add_argument("--out", required=True, help="model file to write")
    p.add_argument("--log", help="per-epoch JSONL log")

    p = sub.add_parser("attack", help="most confident wrong-label attack per point")
    _add_globals(p, suppress=True)
    p.add_argument("--model", required=True)
    _add_data(p)
    _add_attack(p)
    p.add_argument("--target", type=int, help="fixed target label instead of the best wrong one")
    p.add_argument("--out", help="JSONL output (default stdout)")

    p = sub.add_parser("defend", help="embed points and predict with the defended model")
    _add_globals(p, suppress=True)
    p.add_argument("--model", required=True)
    _add_data(p)
    p.add_argument("--points", help="attack JSONL whose 'point' fields are defended instead of the data")
    _add_embed(p)
    p.add_argument("--variant", choices=("mcn", "hcnn"), default="mcn")
    p.add_argument("--out", help="JSONL output (default stdout)")

    p = sub.add_parser("reject-eval", help="AWPR and recall under confidence rejection")
    _add_globals(p, suppress=True)
    p.add_argument("--model", required=True, action="append", help="repeatable")
    _add_data(p)
    _add_attack(p)
    p.add_argument("--eta", type=_floats, default=[0.1], help="attack radii, e.g. 0.05,0.1")
    p.add_argument("--thresholds", type=_floats, default=[0.9, 0.95, 0.99])
    p.add_argument("--out", help="JSONL output (default stdout)")

    p = sub.add_parser("mcn-eval", help="top-2 taxonomy of MCN-embedded targeted attacks")
    _add_globals(p, suppress=True)
    p.add_argument("--model", required=True, action="append", help="repeatable")
    _add_data(p)
    _add_attack(p, radius=None)
    _add_embed(p)
    p.add_argument("--eta", type=float, default=0.05, help="attack radius")
    p.add_argument("--delta", type=float, default=0.1, help="separation radius; warns if < eta + xi")
    p.add_argument("--out", help="JSONL output (default stdout)")

    p = sub.add_parser("separation", help="bad-event frequency and its Chebyshev interval")
    _add_globals(p, suppress=True)
    p.add_argument("--model", required=True)
    _add_data(p)
    _add_attack(p)
    p.add_argument("--p", type=float, default=0.9)
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--out", help="JSON output (default stdout)")

    p = sub.add_parser("report", help="tables, JSONL and CSV from saved result files")
    _add_globals(p, suppress=True)
    p.add_argument("--results", nargs="+", required=True)
    p.add_argument("--out-dir", required=True)
    return parser


# -- config ------------------------------------------------------------------

_DATA_KEYS = {"generator": "generator", "n": "n", "noise": "noise", "seed": "data_seed", "path": "csv"}


def _config_defaults(sections: dict, command: str, subparser: argparse.ArgumentParser) -> dict:
    known = {a.dest for a in subparser._actions}
    out = {}
    for key, value in sections.get("data", {}).items():
        if key in _DATA_KEYS and _DATA_KEYS[key] in known:
            out[_DATA_KEYS[key]] = value
    for key, value in sections.get("global", {}).items():
        if key not in ("seed", "threads"):
            raise ConfigError(f"unknown key global.{key}")
        out[key] = value
    for key, value in sections.get(command.replace("-", "_"), {}).items():
        if key not in known:
            raise ConfigError(f"unknown key {command.replace('-', '_')}.{key}")
        out[key] = value
    return out


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg_path = getattr(args, "config", None)
    if not cfg_path:
        return args
    try:
        sections = load_config(cfg_path)
    except OSError as exc:
        raise OSError(f"{cfg_path}: {exc.strerror or exc}") from exc
    ExperimentConfig.from_sections(sections)
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    defaults = _config_defaults(sections, args.command, subparser)
    top_defaults = {k: defaults.pop(k) for k in ("seed", "threads") if k in defaults}
    subparser.set_defaults(**defaults)
    parser.set_defaults(**top_defaults)
    # explicit command-line flags still win over config values
    return parser.parse_args(argv)


# -- helpers -----------------------------------------------------------------

def _dataset(args) -> Dataset:
    if args.csv:
        return load_csv(args.csv)
    return make_synthetic(args.generator, args.n, args.noise, seed=args.data_seed)


def _budget(args, radius=None) -> AttackBudget:
    return AttackBudget(norm=args.norm, radius=args.radius if radius is None else radius,
                        iterations=args.iterations, restarts=args.restarts, step_size=args.step_size,
                        seed=args.seed, schedule=args.schedule)


def _embed_cfg(args) -> defense.EmbedConfig:
    return defense.EmbedConfig(xi=args.xi, lam=args.lam, search_norm=args.search_norm,
                               dist_norm=args.dist_norm, iterations=args.embed_iterations,
                               mode=args.mode, alpha=args.renyi_alpha, seed=args.seed)


def _write_lines(lines, out) -> None:
    text = "".join(line + "\n" for line in lines)
    if out is None:
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise OSError(f"{out}: {exc.strerror or exc}") from exc


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True)


def _floatlist(a) -> list:
    return [float(v) for v in np.asarray(a, dtype=np.float64).reshape(-1)]


def _model_name(path: str) -> str:
    return Path(path).stem


def _check_classes(params, data: Dataset) -> None:
    if params.input_dim != data.dim:
        raise CliError(f"model expects {params.input_dim} features, data has {data.dim}")
    if params.n_classes < data.n_classes:
        raise CliError(f"model has {params.n_classes} outputs but labels reach {data.n_classes - 1}")


# -- subcommands -------------------------------------------------------------

def cmd_train(args) -> int:
    data = _dataset(args)
    arch = args.arch or [data.dim, 32, 32, data.n_classes]
    inner = None
    if args.adv_radius > 0:
        inner = adversarial_inner_budget(args.adv_radius, args.adv_norm, args.adv_iterations,
                                         args.adv_restarts, seed=args.seed)
    cfg = TrainConfig(loss=LossKind.parse(args.loss), epochs=args.epochs, batch_size=args.batch_size,
                      learning_rate=args.lr, inner_budget=inner, seed=args.seed,
                      activation=args.activation, init_scale=args.init_scale)
    rows = []
    params = train(data, arch, cfg, on_epoch=rows.append if args.log else None)
    nn_core.save_model(params, args.out)
    if args.log:
        _write_lines((_dumps(r) for r in rows), args.log)
    _write_lines([_dumps({"model": str(args.out), "train_accuracy": accuracy(params, data),
                          "arch": arch, "adv_radius": args.adv_radius})], None)
    return EXIT_OK


def cmd_attack(args) -> int:
    params = nn_core.load_model(args.model)
    data = _dataset(args)
    _check_classes(params, data)
    budget = _budget(args)
    if args.target is not None and not 0 <= args.target < params.n_classes:
        raise CliError(f"target {args.target} outside 0..{params.n_classes - 1}")

    def one(i):
        x, y = data.X[i], int(data.y[i])
        b = attacks.for_sample(budget, i)
        if args.target is None:
            res = attacks.best_wrong_attack(params, x, y, b)
        else:
            res = attacks.targeted_confidence_attack(params, x, args.target, b)
        if res is None:
            return {"index": i, "success": False, "target": None,
                    "confidence": float(nn_core.confidence(nn_core.probs(params, x))),
                    "linf_dist": 0.0, "point": _floatlist(x)}
        return {"index": i, "success": bool(res.achieved_label != y), "target": int(res.target),
                "confidence": float(res.achieved_confidence),
                "linf_dist": attacks.distance(x, res.point, "linf"), "point": _floatlist(res.point)}

    rows = experiments.fan_out(one, range(len(data)), args.threads)
    _write_lines((_dumps(r) for r in rows), args.out)
    return EXIT_OK


def _read_points(path, dim: int):
    p = Path(path)
    try:
        lines = p.read_text().splitlines()
    except OSError as exc:
        raise OSError(f"{p}: {exc.strerror or exc}") from exc
    rows = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            rows.append((int(rec["index"]), np.asarray(rec["point"], dtype=np.float64)))
        except (ValueError, KeyError, TypeError) as exc:
            raise CliError(f"{p}:{lineno}: bad attack record ({exc})") from None
        if rows[-1][1].shape != (dim,):
            raise CliError(f"{p}:{lineno}: point has wrong dimension")
    return rows


def cmd_defend(args) -> int:
    params = nn_core.load_model(args.model)
    cfg = _embed_cfg(args)
    if args.points is None and args.csv and args.csv.endswith(".jsonl"):
        args.points, args.csv = args.csv, None
    if args.points:
        items = _read_points(args.points, params.input_dim)
    else:
        data = _dataset(args)
        _check_classes(params, data)
        items = [(i, data.X[i]) for i in range(len(data))]

    def one(item):
        i, x = item
        before, p_before = nn_core.predict(params, x)
        res = defense.embed(params, x, cfg, args.variant)
        after, p_after = nn_core.predict(params, res.point)
        return {"index": i, "label_before": int(before), "label_after": int(after),
                "conf_before": float(nn_core.confidence(p_before)),
                "conf_after": float(nn_core.confidence(p_after)),
                "chosen_label": int(res.chosen_label),
                "dist": attacks.distance(x, res.point, cfg.search_norm)}

    rows = experiments.fan_out(one, items, args.threads)
    _write_lines((_dumps(r) for r in rows), args.out)
    return EXIT_OK


def cmd_reject_eval(args) -> int:
    data = _dataset(args)
    budget = _budget(args)
    lines = []
    for path in args.model:
        params = nn_core.load_model(path)
        _check_classes(params, data)
        for eta in args.eta:
            for r in experiments.rejection_experiment(params, data, eta, args.thresholds, budget,
                                                      args.threads, _model_name(path)):
                lines.append(_dumps(report.to_record(r)))
    _write_lines(lines, args.out)
    return EXIT_OK


def cmd_mcn_eval(args) -> int:
    data = _dataset(args)
    budget = _budget(args, radius=args.eta)
    cfg = _embed_cfg(args)
    defense.ParameterBudgetTriple(args.delta, args.eta, args.xi).check()
    lines = []
    for path in args.model:
        params = nn_core.load_model(path)
        _check_classes(params, data)
        tax, _ = experiments.mcn_experiment(params, data, args.eta, args.xi, cfg, budget,
                                            args.threads, _model_name(path))
        lines.append(_dumps(report.to_record(tax)))
    _write_lines(lines, args.out)
    return EXIT_OK


def cmd_separation(args) -> int:
    params = nn_core.load_model(args.model)
    data = _dataset(args)
    _check_classes(params, data)
    rec = experiments.separation_experiment(params, data, args.p, args.delta, args.epsilon,
                                            _budget(args), _model_name(args.model))
    _write_lines([_dumps(report.to_record(rec))], args.out)
    return EXIT_OK


def cmd_report(args) -> int:
    records = [r for path in args.results for r in report.load_jsonl(path)]
    paths = report.emit_report(records, args.out_dir)
    _write_lines([_dumps({k: str(v) for k, v in paths.items()})], None)
    return EXIT_OK


COMMANDS = {
    "train": cmd_train, "attack": cmd_attack, "defend": cmd_defend, "reject-eval": cmd_reject_eval,
    "mcn-eval": cmd_mcn_eval, "separation": cmd_separation, "report": cmd_report,
}


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse usage errors already exit 2
        return int(exc.code or 0)
    except OSError as exc:
        print(f"confsep: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"confsep: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("confsep: error: --threads must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return COMMANDS[args.command](args)
    except OSError as exc:
        print(f"confsep: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"confsep: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
