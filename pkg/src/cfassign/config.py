"""Experiment configuration: INI presets, file overrides, typed resolution.

A config is carried as plain section->key->string dicts so it can round
trip through configparser untouched; resolve() turns it into scenario,
model, and training objects.  The master seed fixes both dataset splits
(train = seed, test = seed + 1) and the training run itself.
"""

import configparser
import dataclasses
import io

from . import baselines
from . import gnn
from . import scenario as sc
from . import training as tr
from .errors import SchemaError

TRAIN_SPLIT_OFFSET = 0
TEST_SPLIT_OFFSET = 1

_SMALL = {
    "experiment": {"seed": "0", "scenario": "small"},
    "scenario": {
        "n_aps": "5", "grid_cols": "3", "grid_rows": "2",
        "n_users": "4", "area_side": "100.0",
        "min_serving_aps": "2", "max_served_users": "2",
        "noise_power": "1.0", "gain_scale": "25.0",
        "rician_variance": "0.01",
        "train_samples": "4096", "test_samples": "1024",
    },
    "model": {
        "n_layers": "2", "hidden_width": "16", "message_width": "8",
        "topology_rule": "full", "topology_k": "0",
    },
    "training": {
        "learning_rate": "0.002", "batch_size": "64",
        "max_inner_iters": "4000", "convergence_window": "200",
        "convergence_tol": "0.0001", "delta_nu": "0.1",
        "violation_tol": "1e-06", "entropy_tol": "0.001",
        "heldin_size": "512", "eval_every": "1", "eval_chunk": "256",
        "max_outer_rounds": "60",
    },
    "baselines": {
        "enumeration_budget": "10000000", "random_draws": "100",
        "gsd_variant": baselines.GSD_VARIANT,
    },
    "output": {"directory": "runs"},
}

_LARGE_OVERRIDES = {
    "experiment": {"scenario": "large"},
    "scenario": {
        "n_aps": "20", "grid_cols": "5", "grid_rows": "4",
        "n_users": "15", "area_side": "1000.0", "gain_scale": "100.0",
    },
    "model": {"topology_rule": "k_nearest", "topology_k": "4"},
    "training": {
        "batch_size": "32", "eval_every": "10", "eval_chunk": "128",
        "heldin_size": "256",
    },
}

PRESETS = ("small", "large", "custom")


def _deep_merge(base, overrides):
    out = {sec: dict(keys) for sec, keys in base.items()}
    for sec, keys in overrides.items():
        out.setdefault(sec, {}).update(keys)
    return out


def preset_sections(name):
    if name == "small" or name == "custom":
        return _deep_merge(_SMALL, {})
    if name == "large":
        return _deep_merge(_SMALL, _LARGE_OVERRIDES)
    raise ValueError(f"unknown scenario preset {name!r}")


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    sections: dict
    scenario_name: str
    seed: int
    scenario: sc.Scenario
    train_samples: int
    test_samples: int
    train_config: tr.TrainConfig
    enumeration_budget: int
    random_draws: int
    output_directory: str


def _get(sections, sec, key, cast):
    try:
        raw = sections[sec][key]
    except KeyError:
        raise SchemaError(f"missing config key [{sec}] {key}")
    try:
        return cast(raw)
    except ValueError:
        raise SchemaError(f"bad value for [{sec}] {key}: {raw!r}")


def resolve(sections):
    """Typed ExperimentConfig from merged section dicts."""
    g = _get
    seed = g(sections, "experiment", "seed", int)
    name = g(sections, "experiment", "scenario", str)
    side = g(sections, "scenario", "area_side", float)
    area = (side, side)
    n_aps = g(sections, "scenario", "n_aps", int)
    grid = (g(sections, "scenario", "grid_cols", int),
            g(sections, "scenario", "grid_rows", int))
    scen = sc.Scenario(
        n_aps=n_aps,
        n_users=g(sections, "scenario", "n_users", int),
        area=area,
        ap_positions=sc.place_aps(grid, n_aps, area),
        min_serving_aps=g(sections, "scenario", "min_serving_aps", int),
        max_served_users=g(sections, "scenario", "max_served_users", int),
        noise_power=g(sections, "scenario", "noise_power", float),
        gain_scale=g(sections, "scenario", "gain_scale", float),
        rician_variance=g(sections, "scenario", "rician_variance", float))
    model = gnn.ModelConfig(
        n_layers=g(sections, "model", "n_layers", int),
        hidden_width=g(sections, "model", "hidden_width", int),
        message_width=g(sections, "model", "message_width", int))
    train_cfg = tr.TrainConfig(
        model=model,
        learning_rate=g(sections, "training", "learning_rate", float),
        batch_size=g(sections, "training", "batch_size", int),
        max_inner_iters=g(sections, "training", "max_inner_iters", int),
        convergence_window=g(sections, "training", "convergence_window", int),
        convergence_tol=g(sections, "training", "convergence_tol", float),
        delta_nu=g(sections, "training", "delta_nu", float),
        violation_tol=g(sections, "training", "violation_tol", float),
        entropy_tol=g(sections, "training", "entropy_tol", float),
        seed=seed,
        topology_rule=g(sections, "model", "topology_rule", str),
        topology_k=g(sections, "model", "topology_k", int),
        heldin_size=g(sections, "training", "heldin_size", int),
        eval_every=g(sections, "training", "eval_every", int),
        eval_chunk=g(sections, "training", "eval_chunk", int),
        max_outer_rounds=g(sections, "training", "max_outer_rounds", int))
    variant = g(sections, "baselines", "gsd_variant", str)
    if variant != baselines.GSD_VARIANT:
        raise SchemaError(f"unknown gsd variant {variant!r}")
    return ExperimentConfig(
        sections=sections,
        scenario_name=name,
        seed=seed,
        scenario=scen,
        train_samples=g(sections, "scenario", "train_samples", int),
        test_samples=g(sections, "scenario", "test_samples", int),
        train_config=train_cfg,
        enumeration_budget=g(sections, "baselines", "enumeration_budget",
                             int),
        random_draws=g(sections, "baselines", "random_draws", int),
        output_directory=g(sections, "output", "directory", str))


def read_ini(path):
    parser = configparser.ConfigParser()
    with open(path, "r", encoding="utf-8") as fh:
        try:
            parser.read_file(fh)
        except configparser.Error as exc:
            raise SchemaError(f"malformed config file: {exc}")
    return {sec: dict(parser[sec]) for sec in parser.sections()}


def load(scenario="small", config_path=None, seed=None):
    """Preset merged with an optional INI file and a seed override."""
    sections = preset_sections(scenario)
    if config_path is not None:
        sections = _deep_merge(sections, read_ini(config_path))
    if seed is not None:
        sections["experiment"]["seed"] = str(int(seed))
    sections["experiment"]["scenario"] = scenario
    return resolve(sections)


def to_ini(config):
    parser = configparser.ConfigParser()
    for sec, keys in config.sections.items():
        parser[sec] = dict(keys)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()


def split_seeds(config):
    return (config.seed + TRAIN_SPLIT_OFFSET, config.seed + TEST_SPLIT_OFFSET)
