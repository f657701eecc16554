"""Command-line front end: quantize -> split -> train -> evaluate/ppc/predict.

Every subcommand is deterministic given its effective configuration, which
is resolved as command-line flags over config-file entries over defaults
and echoed into each output's metadata.  Config files are flat key=value
text; keys match the long flag names with dashes or underscores.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .baselines import BinarizationRule, binarize, make_bepof_config, make_pf_config
from .data import (OrdinalMatrix, QuantizationScheme, load_triplets,
                   matrix_from_classes, quantize_counts, train_test_split,
                   write_index_map)
from .errors import ConfigError, OrdnmfError
from .evaluation import (evaluate_ranking, log_lik_nonzeros, ppc_histogram,
                         ppc_report_text, ranking_report_text)
from .inference import FitConfig, fit, load_state, predict_scores, save_state

SCHEMA_VERSION = 1


def _read_config_file(path):
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _harvest_options(subparser):
    """Record each option's default and type, then make argparse emit only
    user-supplied values so precedence can be resolved explicitly."""
    options = {}
    for action in subparser._actions:
        if action.dest in ("help", "func"):
            continue
        is_flag = isinstance(action, argparse._StoreTrueAction)
        options[action.dest] = (action.default, action.type, is_flag)
        action.default = argparse.SUPPRESS
    return options


def _effective_config(args, options):
    """flags > config file > defaults; returns a plain dict."""
    effective = {dest: default for dest, (default, _, _) in options.items()}
    supplied = {k: v for k, v in vars(args).items()
                if k not in ("func", "subcommand")}
    config_path = supplied.pop("config", None)
    if config_path:
        for key, raw in _read_config_file(config_path).items():
            if key not in options:
                raise ConfigError(f"unknown config key {key!r}")
            _, typ, is_flag = options[key]
            if is_flag:
                effective[key] = raw.lower() in ("1", "true", "yes", "on")
            elif typ is not None:
                effective[key] = typ(raw)
            else:
                effective[key] = raw
    effective.update(supplied)
    effective.pop("config", None)
    return effective


def _metadata(cfg):
    return {"schema_version": SCHEMA_VERSION, "version": __version__,
            "config": {k: v for k, v in cfg.items()}}


def _write_report(path, text, cfg):
    with open(path, "w") as fh:
        fh.write(f"# ordnmf schema-version={SCHEMA_VERSION}\n")
        fh.write(f"# config: {json.dumps(_metadata(cfg)['config'], sort_keys=True)}\n")
        fh.write(text)


def _parse_int_list(text):
    return [int(t) for t in str(text).split(",") if t != ""]


def cmd_quantize(cfg):
    triplets = load_triplets(cfg["input"], delimiter=cfg["delimiter"] or None,
                             skip_header=cfg["header"])
    if cfg["boundaries"]:
        scheme = QuantizationScheme(_parse_int_list(cfg["boundaries"]))
        matrix = quantize_counts(triplets, scheme)
    else:
        n_classes = int(triplets.counts.max()) if triplets.counts.size else 1
        matrix = matrix_from_classes(triplets, n_classes)
    matrix.save(cfg["output"])
    write_index_map(cfg["output"] + ".users", triplets.user_ids)
    write_index_map(cfg["output"] + ".items", triplets.item_ids)
    with open(cfg["output"] + ".meta.json", "w") as fh:
        json.dump(_metadata(cfg), fh, indent=2)
    print(f"wrote {cfg['output']}: {matrix.n_users} users x "
          f"{matrix.n_items} items, V={matrix.n_classes}, nnz={matrix.nnz}")
    return 0


def cmd_split(cfg):
    matrix = OrdinalMatrix.load(cfg["input"])
    train, test = train_test_split(matrix, cfg["test_fraction"], cfg["seed"])
    train.save(cfg["train_output"])
    test.save(cfg["test_output"])
    for path in (cfg["train_output"], cfg["test_output"]):
        with open(path + ".meta.json", "w") as fh:
            json.dump(_metadata(cfg), fh, indent=2)
    print(f"split nnz={matrix.nnz} into train={train.nnz} test={test.nnz}")
    return 0


def _fit_config_from(cfg, seed):
    base = FitConfig(
        n_components=cfg["k"], alpha_w=cfg["alpha_w"], alpha_h=cfg["alpha_h"],
        tol=cfg["tol"], max_iter=cfg["max_iter"], seed=seed,
        learn_thresholds=not cfg["no_threshold_learning"],
        update_rates=not cfg["no_rate_updates"],
        delta_floor=cfg["delta_floor"])
    if cfg["pf"]:
        return make_pf_config(base)
    if cfg["bepof"]:
        return make_bepof_config(base)
    return base


def cmd_train(cfg):
    matrix = OrdinalMatrix.load(cfg["input"])
    if cfg["binarize_at"]:
        matrix = binarize(matrix, BinarizationRule(cfg["binarize_at"]))
    if (cfg["bepof"] or cfg["pf"]) and matrix.n_classes != 1:
        raise ConfigError("--bepof/--pf need binary data; pass --binarize-at")
    best = None
    for r in range(cfg["restarts"]):
        seed = cfg["seed"] + r
        result = fit(matrix, _fit_config_from(cfg, seed))
        trace_path = f"{cfg['output']}.trace.{seed}.txt"
        np.savetxt(trace_path, result.elbo_trace)
        final = result.elbo_trace[-1]
        print(f"restart seed={seed}: elbo={final:.6f} "
              f"iterations={result.iterations} converged={result.converged}")
        if best is None or final > best[0]:
            best = (final, result, seed)
    _, result, seed = best
    meta = _metadata(cfg)
    meta.update(best_seed=seed, elbo=float(best[0]),
                iterations=result.iterations, converged=result.converged)
    save_state(cfg["output"], result.state, metadata=meta)
    print(f"wrote {cfg['output']} (best seed {seed})")
    return 0


def cmd_evaluate(cfg):
    state, _ = load_state(cfg["model"])
    train = OrdinalMatrix.load(cfg["train"])
    test = OrdinalMatrix.load(cfg["test"])
    if cfg["binarize_at"]:
        train = binarize(train, BinarizationRule(cfg["binarize_at"]))
    if (state.n_users, state.n_items) != (train.n_users, train.n_items):
        raise ConfigError("model and train matrix dimensions differ")
    if (test.n_users, test.n_items) != (train.n_users, train.n_items):
        raise ConfigError("train and test matrix dimensions differ")
    if test.nnz == 0:
        raise ConfigError("test matrix is empty")
    thresholds = _parse_int_list(cfg["ndcg_thresholds"])
    reports = evaluate_ranking(state, train, test, thresholds,
                               list_length=cfg["list_length"],
                               exclude_train=not cfg["no_train_exclusion"])
    text = ranking_report_text(reports)
    if state.n_classes > 1:
        text += f"log_lik_nonzeros\t{log_lik_nonzeros(test, state):.6f}\n"
    else:
        text += "log_lik_nonzeros\tN/A\n"
    _write_report(cfg["output"], text, cfg)
    sys.stdout.write(text)
    return 0


def cmd_ppc(cfg):
    state, _ = load_state(cfg["model"])
    train = OrdinalMatrix.load(cfg["train"])
    rng = np.random.default_rng(cfg["seed"])
    report = ppc_histogram(state, train, rng, n_cells=cfg["budget"])
    text = ppc_report_text(report)
    _write_report(cfg["output"], text, cfg)
    sys.stdout.write(text)
    return 0


def cmd_predict(cfg):
    state, _ = load_state(cfg["model"])
    train = OrdinalMatrix.load(cfg["train"]) if cfg["train"] else None
    users = (_parse_int_list(cfg["users"]) if cfg["users"]
             else list(range(state.n_users)))
    m = cfg["list_length"]
    lines = ["user\trank\titem\tscore"]
    for u in users:
        row = predict_scores(state, [u])[0]
        if train is not None:
            row = row.copy()
            row[train.cols[train.indptr[u]:train.indptr[u + 1]]] = -np.inf
        idx = np.arange(row.size)
        order = idx[np.lexsort((idx, -row))][:m]
        for rank, item in enumerate(order, start=1):
            lines.append(f"{u}\t{rank}\t{item}\t{row[item]:.8g}")
    _write_report(cfg["output"], "\n".join(lines) + "\n", cfg)
    print(f"wrote {cfg['output']}")
    return 0


def _add_common(p):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS/OpenMP threads (best effort)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ordnmf",
        description="Ordinal NMF: quantize, split, train, evaluate, ppc, predict")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("quantize", help="triplet text file -> ordinal matrix")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--boundaries", default=None,
                   help="comma-separated count boundaries; omit to treat "
                        "values as classes")
    p.add_argument("--delimiter", default=None)
    p.add_argument("--header", action="store_true")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("split", help="partition non-zeros into train/test")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--train-output", required=True)
    p.add_argument("--test-output", required=True)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="fit the model by coordinate ascent")
    _add_common(p)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--k", type=int, default=50)
    p.add_argument("--alpha-w", type=float, default=0.3)
    p.add_argument("--alpha-h", type=float, default=0.3)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--bepof", action="store_true")
    p.add_argument("--pf", action="store_true")
    p.add_argument("--binarize-at", type=int, default=None)
    p.add_argument("--no-threshold-learning", action="store_true")
    p.add_argument("--no-rate-updates", action="store_true")
    p.add_argument("--delta-floor", type=float, default=1e-10)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="ranking metrics and held-out likelihood")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--ndcg-thresholds", default="1")
    p.add_argument("--list-length", type=int, default=100)
    p.add_argument("--binarize-at", type=int, default=None,
                   help="binarize the train matrix for exclusion bookkeeping")
    p.add_argument("--no-train-exclusion", action="store_true")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ppc", help="posterior predictive class histogram")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--train", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=int, default=10_000_000)
    p.set_defaults(func=cmd_ppc)

    p = sub.add_parser("predict", help="top-m item lists per user")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--train", default=None,
                   help="train matrix for excluding known items")
    p.add_argument("--output", required=True)
    p.add_argument("--users", default=None,
                   help="comma-separated user indices; default all")
    p.add_argument("--list-length", type=int, default=100)
    p.set_defaults(func=cmd_predict)

    return parser


def main(argv=None):
    parser = build_parser()
    harvested = {name: _harvest_options(sp)
                 for name, sp in _subparsers(parser).items()}
    args = parser.parse_args(argv)
    try:
        cfg = _effective_config(args, harvested[args.subcommand])
        if cfg.get("threads"):
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                        "MKL_NUM_THREADS"):
                os.environ[var] = str(cfg["threads"])
        return args.func(cfg)
    except (OrdnmfError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _subparsers(parser):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices
    raise AssertionError("no subparsers registered")


if __name__ == "__main__":
    sys.exit(main())
