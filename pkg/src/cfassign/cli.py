"""Command-line interface.

Subcommands: gen-data, train, eval, baseline, compare, viz.  Every output
directory receives the resolved config and tool version so a run can be
reproduced from the directory alone.  Exit codes: 0 success, 1 usage
error, 2 runtime or numerics error.

Seed layout: train split = master seed, test split = master seed + 1,
random-baseline draws = master seed + 2.
"""

import argparse
import dataclasses
import hashlib
import os
import sys

import numpy as np

from . import __version__
from . import baselines as bl
from . import config as cf
from . import gnn
from . import scenario as sc
from . import training as tr
from .errors import CfassignError

RANDOM_BASELINE_SEED_OFFSET = 2
COMPARISON_COLUMNS = ("method", "scenario", "n_samples", "mean_sum_rate",
                      "feasibility_rate", "available")
VIZ_COLUMNS = ("figure", "series", "iteration", "value")
_VIZ_FIGURES = (
    ("sum_rate", "train_f", "test_f"),
    ("connection_penalty", "conn_pen", "test_conn_pen"),
    ("discreteness_penalty", "disc_pen", "test_disc_pen"),
)


class _UsageError(Exception):
    pass


def _load_config(args):
    try:
        return cf.load(scenario=args.scenario, config_path=args.config,
                       seed=args.seed)
    except (CfassignError, ValueError, OSError) as exc:
        raise _UsageError(str(exc))


def _write_provenance(out_dir, cfg):
    with open(os.path.join(out_dir, "config.ini"), "w",
              encoding="utf-8") as fh:
        fh.write(cf.to_ini(cfg))
    with open(os.path.join(out_dir, "VERSION"), "w", encoding="utf-8") as fh:
        fh.write(__version__ + "\n")


def _sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def _load_or_generate(cfg, data_dir, split):
    """split is 'train' or 'test'; data_dir may hold saved datasets."""
    if data_dir is not None:
        return sc.load_dataset(os.path.join(data_dir, split + ".txt"))
    seed_train, seed_test = cf.split_seeds(cfg)
    if split == "train":
        return sc.generate_dataset(cfg.scenario, cfg.train_samples,
                                   seed=seed_train, split_tag="train")
    return sc.generate_dataset(cfg.scenario, cfg.test_samples,
                               seed=seed_test, split_tag="test")


def _topology_for(cfg, scenario, meta=None):
    rule = cfg.train_config.topology_rule
    k = cfg.train_config.topology_k
    if meta:
        rule = meta.get("topology_rule", rule)
        k = int(meta.get("topology_k", k))
    return gnn.build_graph(scenario, rule, k)


def cmd_gen_data(args):
    cfg = _load_config(args)
    out = args.out or f"data-{cfg.scenario_name}"
    os.makedirs(out, exist_ok=True)
    names = []
    for split in ("train", "test"):
        ds = _load_or_generate(cfg, None, split)
        path = os.path.join(out, split + ".txt")
        sc.save_dataset(ds, path)
        names.append((split + ".txt", path, len(ds.samples)))
    with open(os.path.join(out, "manifest.txt"), "w",
              encoding="utf-8") as fh:
        fh.write(f"seed {cfg.seed}\n")
        for name, path, count in names:
            fh.write(f"{name} sha256 {_sha256(path)} samples {count}\n")
    _write_provenance(out, cfg)
    print(f"wrote {out}/train.txt {out}/test.txt (seed {cfg.seed})")
    return 0


def cmd_train(args):
    cfg = _load_config(args)
    out = args.out or f"run-{cfg.scenario_name}"
    os.makedirs(out, exist_ok=True)
    _write_provenance(out, cfg)
    train_ds = _load_or_generate(cfg, args.data, "train")
    test_ds = _load_or_generate(cfg, args.data, "test")
    model, metrics = tr.train(train_ds, test_ds, cfg.train_config,
                              checkpoint_dir=out, resume=args.resume)
    metrics.to_csv(os.path.join(out, "metrics.csv"))
    gnn.save_model(
        os.path.join(out, "model.txt"), model,
        extra_meta={"topology_rule": cfg.train_config.topology_rule,
                    "topology_k": cfg.train_config.topology_k})
    last = metrics.records[-1] if metrics.records else None
    if last is not None:
        print(f"finished at iteration {last.iteration} "
              f"(test sum-rate {last.test_f:.4f})")
    else:
        print("nothing to do (resumed from a completed run)")
    print(f"wrote {out}/metrics.csv and {out}/model.txt")
    return 0


def cmd_eval(args):
    cfg = _load_config(args)
    model, _, meta = gnn.load_model(args.model)
    test_ds = _load_or_generate(cfg, args.data, "test")
    topo = _topology_for(cfg, test_ds.scenario, meta)
    summary = tr.evaluate(model, test_ds, topo,
                          chunk=cfg.train_config.eval_chunk)
    lines = [f"{key}={value!r}" if isinstance(value, float)
             else f"{key}={value}"
             for key, value in dataclasses.asdict(summary).items()]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "eval.txt"), "w",
                  encoding="utf-8") as fh:
            fh.write(text)
        _write_provenance(args.out, cfg)
    return 0


def _comparison_rows(cfg, test_ds, budget, methods):
    scen = test_ds.scenario
    gains = test_ds.gains_array()
    u_cap, l_min = scen.max_served_users, scen.min_serving_aps
    sigma2 = scen.noise_power
    n = len(test_ds.samples)
    rows = []
    if "exhaustive" in methods:
        probe = bl.exhaustive(gains[0], u_cap, l_min, sigma2, budget=budget)
        if not probe.available:
            rows.append(("exhaustive", cfg.scenario_name, n, float("nan"),
                         float("nan"), "no"))
        else:
            rates, feas = [], []
            for i in range(n):
                res = bl.exhaustive(gains[i], u_cap, l_min, sigma2,
                                    budget=budget)
                rates.append(res.sum_rate)
                feas.append(1.0 if res.feasible else 0.0)
            rows.append(("exhaustive", cfg.scenario_name, n,
                         float(np.mean(rates)), float(np.mean(feas)), "yes"))
    if "random" in methods:
        rng = np.random.default_rng(cfg.seed + RANDOM_BASELINE_SEED_OFFSET)
        rates, feas = [], []
        for i in range(n):
            draws = [bl.random_assignment(gains[i], u_cap, l_min, rng,
                                          sigma2=sigma2)
                     for _ in range(cfg.random_draws)]
            rates.append(np.mean([d.sum_rate for d in draws]))
            feas.append(np.mean([1.0 if d.feasible else 0.0
                                 for d in draws]))
        rows.append(("random", cfg.scenario_name, n, float(np.mean(rates)),
                     float(np.mean(feas)), "yes"))
    if "gsd" in methods:
        rates, feas = [], []
        for i in range(n):
            res = bl.gsd(gains[i], u_cap, l_min, sigma2=sigma2)
            rates.append(res.sum_rate)
            feas.append(1.0 if res.feasible else 0.0)
        rows.append(("gsd", cfg.scenario_name, n, float(np.mean(rates)),
                     float(np.mean(feas)), "yes"))
    return rows


def _write_comparison(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(COMPARISON_COLUMNS) + "\n")
        for method, scen_name, n, rate, feas, avail in rows:
            fh.write(f"{method},{scen_name},{n},{repr(rate)},{repr(feas)},"
                     f"{avail}\n")


def cmd_baseline(args):
    cfg = _load_config(args)
    out = args.out or f"baseline-{cfg.scenario_name}"
    os.makedirs(out, exist_ok=True)
    test_ds = _load_or_generate(cfg, args.data, "test")
    budget = args.budget if args.budget is not None else \
        cfg.enumeration_budget
    rows = _comparison_rows(cfg, test_ds, budget,
                            ("exhaustive", "random", "gsd"))
    path = os.path.join(out, "baselines.csv")
    _write_comparison(path, rows)
    _write_provenance(out, cfg)
    for row in rows:
        print(",".join(str(x) for x in row))
    print(f"wrote {path}")
    return 0


def cmd_compare(args):
    cfg = _load_config(args)
    out = args.out or f"compare-{cfg.scenario_name}"
    os.makedirs(out, exist_ok=True)
    model, _, meta = gnn.load_model(args.model)
    test_ds = _load_or_generate(cfg, args.data, "test")
    topo = _topology_for(cfg, test_ds.scenario, meta)
    summary = tr.evaluate(model, test_ds, topo,
                          chunk=cfg.train_config.eval_chunk)
    budget = args.budget if args.budget is not None else \
        cfg.enumeration_budget
    rows = [("proposed", cfg.scenario_name, summary.n_samples,
             summary.mean_binary_sum_rate, summary.feasible_fraction, "yes")]
    rows += _comparison_rows(cfg, test_ds, budget,
                             ("exhaustive", "random", "gsd"))
    path = os.path.join(out, "comparison.csv")
    _write_comparison(path, rows)
    _write_provenance(out, cfg)
    for row in rows:
        print(",".join(str(x) for x in row))
    print(f"wrote {path}")
    return 0


def cmd_viz(args):
    metrics = tr.Metrics.from_csv(args.metrics)
    out = args.out or "viz.csv"
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(",".join(VIZ_COLUMNS) + "\n")
        for figure, train_col, test_col in _VIZ_FIGURES:
            for record in metrics.records:
                fh.write(f"{figure},train,{record.iteration},"
                         f"{repr(getattr(record, train_col))}\n")
            for record in metrics.records:
                fh.write(f"{figure},test,{record.iteration},"
                         f"{repr(getattr(record, test_col))}\n")
    print(f"wrote {out}")
    return 0


def _add_common(sub):
    sub.add_argument("--config", default=None, help="INI overrides")
    sub.add_argument("--seed", type=int, default=None,
                     help="master seed (overrides config)")
    sub.add_argument("--scenario", choices=cf.PRESETS, default="small")
    sub.add_argument("--out", default=None, help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="cfassign",
        description="Learned AP-user assignment for cell-free networks.")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-data", help="generate train/test datasets")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = subs.add_parser("train", help="run the staged training loop")
    _add_common(p)
    p.add_argument("--data", default=None,
                   help="directory with saved train.txt/test.txt")
    p.add_argument("--resume", default=None,
                   help="checkpoint file to continue from")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("eval", help="evaluate a trained model")
    _add_common(p)
    p.add_argument("--model", required=True, help="model checkpoint file")
    p.add_argument("--data", default=None)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("baseline", help="run reference baselines")
    _add_common(p)
    p.add_argument("--data", default=None)
    p.add_argument("--budget", type=int, default=None,
                   help="enumeration budget for exhaustive search")
    p.set_defaults(func=cmd_baseline)

    p = subs.add_parser("compare", help="model vs baselines table")
    _add_common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--budget", type=int, default=None)
    p.set_defaults(func=cmd_compare)

    p = subs.add_parser("viz", help="plot-ready long-format CSV")
    p.add_argument("--metrics", required=True, help="metrics CSV from train")
    p.add_argument("--out", default=None, help="output CSV path")
    p.set_defaults(func=cmd_viz)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (CfassignError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
