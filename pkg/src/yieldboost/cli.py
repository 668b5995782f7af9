"""Command-line entry point: ``yieldboost <command> ...``.

Exit status is 0 on success, 2 for invalid input or arguments and 3 for
file-system errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np

from . import __version__
from .explain import aggregate_importances, default_grouping, save_svg, shap_values, write_attributions, write_importances
from .features import build_table, read_feature_table, write_feature_table
from .gbrt import TrainParams, load_model, save_model, train
from .harness import DEFAULT_EVAL_PARAMS, N_REPEATS, parse_years, walk_forward
from .raster import find_cube_dirs, load_cube, load_mask
from .synth import WorldConfig, generate_world, read_counties, read_yields, write_world
from .tuner import DEFAULT_SPACE, load_space, tune, write_trial_log

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 2, 3
logger = logging.getLogger("yieldboost")


def _read_params(path: str | None) -> TrainParams | None:
    if path is None:
        return None
    with open(path, encoding="utf-8") as fh:
        return TrainParams.from_dict(json.load(fh))


def cmd_generate(args) -> None:
    config = WorldConfig.from_json(args.config) if args.config else WorldConfig()
    if args.seed is not None:
        config.seed = args.seed
    world = generate_world(config)
    write_world(world, args.out)
    print(f"wrote {len(world.county_ids)} counties x {len(world.years)} years to {args.out}")


def cmd_featurize(args) -> None:
    dirs = find_cube_dirs(args.cubes)
    if not dirs:
        raise FileNotFoundError(f"no cube directories under {args.cubes}")
    pairs = ((load_cube(d), load_mask(d)) for d in dirs)
    table = build_table(pairs, read_yields(args.yields), read_counties(args.counties), args.mode, args.repr)
    write_feature_table(table, args.out)
    print(f"wrote {len(table)} rows x {table.n_features} features to {args.out}")


def cmd_train(args) -> None:
    table = read_feature_table(args.features)
    params = _read_params(args.params) or DEFAULT_EVAL_PARAMS
    if args.seed is not None:
        params = params.replace(seed=args.seed)
    model, hist = train(table.X, table.labels, params, n_jobs=args.jobs)
    save_model(model, args.out)
    print(f"trained {len(model.trees)} trees, train rmse {hist.train_rmse[-1]:.4f}")


def cmd_tune(args) -> None:
    table = read_feature_table(args.features)
    space = load_space(args.space) if args.space else DEFAULT_SPACE
    result = tune(table.X, table.labels, space, args.trials, args.seed, sampler=args.sampler, n_jobs=args.jobs)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(result.params.to_dict(), fh, indent=1)
        fh.write("\n")
    if args.log:
        write_trial_log(args.log, result.trials)
    print(f"best params written to {args.out}")


def cmd_predict(args) -> None:
    model = load_model(args.model)
    table = read_feature_table(args.features)
    pred = model.predict(table.X)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["county_id", "year", "prediction", "label"])
        for cid, year, p, y in zip(table.county_ids, table.years, pred, table.labels):
            w.writerow([cid, int(year), repr(float(p)), "" if np.isnan(y) else repr(float(y))])


def cmd_explain(args) -> None:
    model = load_model(args.model)
    table = read_feature_table(args.features)
    phi, base = shap_values(model, table.X)
    write_attributions(args.out, table.county_ids, table.years, phi, base, model.predict(table.X))
    groups = aggregate_importances(phi, default_grouping(model.n_features))
    if args.groups:
        write_importances(args.groups, groups)
    if args.svg:
        save_svg(args.svg, groups)
    for g in groups[:5]:
        print(f"{g.importance:10.4f}  {g.group}")


def cmd_evaluate(args) -> None:
    table = read_feature_table(args.features)
    report = walk_forward(
        table,
        parse_years(args.test_years),
        mode=args.mode,
        tuning=args.tune,
        seed=args.seed,
        params=_read_params(args.params),
        n_repeats=args.repeats,
        n_trials=args.trials,
        n_jobs=args.jobs,
    )
    if args.report:
        report.write(args.report)
    print(report.table())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="yieldboost", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic world")
    g.add_argument("--config", help="WorldConfig JSON; defaults when omitted")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    f = sub.add_parser("featurize", help="cubes + yields -> feature table CSV")
    f.add_argument("--cubes", required=True)
    f.add_argument("--yields", required=True)
    f.add_argument("--counties", required=True)
    f.add_argument("--mode", choices=("inyear", "endofyear"), default="endofyear")
    f.add_argument("--repr", choices=("triples", "histograms"), default="triples")
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_featurize)

    t = sub.add_parser("train", help="fit a booster on a feature table")
    t.add_argument("--features", required=True)
    t.add_argument("--params")
    t.add_argument("--seed", type=int)
    t.add_argument("--jobs", type=int, default=1)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    u = sub.add_parser("tune", help="TPE search over booster parameters")
    u.add_argument("--features", required=True)
    u.add_argument("--space")
    u.add_argument("--trials", type=int, default=50)
    u.add_argument("--seed", type=int, default=0)
    u.add_argument("--sampler", choices=("tpe", "random"), default="tpe")
    u.add_argument("--jobs", type=int, default=1)
    u.add_argument("--out", required=True)
    u.add_argument("--log")
    u.set_defaults(func=cmd_tune)

    r = sub.add_parser("predict", help="score a feature table")
    r.add_argument("--model", required=True)
    r.add_argument("--features", required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_predict)

    e = sub.add_parser("explain", help="TreeSHAP attributions and grouped importances")
    e.add_argument("--model", required=True)
    e.add_argument("--features", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--groups")
    e.add_argument("--svg")
    e.set_defaults(func=cmd_explain)

    v = sub.add_parser("evaluate", help="walk-forward evaluation")
    v.add_argument("--features", required=True)
    v.add_argument("--test-years", default="2017:2021")
    v.add_argument("--mode", choices=("inyear", "endofyear"), default="endofyear")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--tune", action="store_true")
    v.add_argument("--trials", type=int, default=50)
    v.add_argument("--params")
    v.add_argument("--repeats", type=int, default=N_REPEATS)
    v.add_argument("--jobs", type=int, default=1)
    v.add_argument("--report")
    v.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, json.JSONDecodeError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
