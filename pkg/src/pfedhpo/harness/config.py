"""Experiment configuration: a YAML tree with one section per pipeline module.

Every field has a default except the ``space`` section. Validation errors
name the offending field path, e.g. ``data.cluster.feature_scale[1]``.

Defaults::

    seed: 0
    output_dir: runs/default
    data:
      generator: cluster            # cluster | dirichlet | csv
      cluster: {num_clusters: 2, clients_per_cluster: 4, feature_scale: [0.1, 10],
                num_features: 5, num_classes: 3, examples_per_client: 100,
                split_ratio: [0.6, 0.2, 0.2], separation: 3.0}
      dirichlet: {n: 10, alpha: 1.0, min_per_client: 32, num_classes: 5,
                  num_features: 5, num_examples: 2000, separation: 3.0,
                  split_ratio: [0.6, 0.2, 0.2]}
      csv: {path: null, n: 2, layout: round_robin, num_classes: null,
            split_ratio: [0.6, 0.2, 0.2]}
    model: {kind: logistic_regression, hidden: []}
    local: {learning_rate: 0.01, weight_decay: 0.0, local_steps: 1, dropout: 0.0, batch_size: 16}
    space: {dims: [...]}            # required
    encoding: {dim: 128, phase: false}
    rst: {T: 50, T_s: 1, budget: 600, reward_metric: neg_loss_gain, default: {}}
    trainer: {policy_lr: 0.01, baseline: ema, ema_decay: 0.9, entropy_coef: 0.0,
              trials_per_update: 1, hidden: [64, 64], input_norm: standardize}
    baselines: [{method: rs_global, num_candidates: 6},
                {method: rs_personalized, subsample_size: 100}]
    eval_rounds: 50

``rst.default`` overrides fields of ``local`` for the pretraining course.
Baseline ``rounds_per_candidate`` defaults to an even split of ``rst.budget``.
"""

from __future__ import annotations

import copy
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from pfedhpo.baselines import RS_GLOBAL, RS_PERSONALIZED, BaselineConfig
from pfedhpo.datagen import DEFAULT_SEPARATION, DEFAULT_SPLIT, ClusterSpec, PartitionSpec
from pfedhpo.fl import FEEDFORWARD, LOGISTIC, LocalTrainConfig
from pfedhpo.fl.engine import FIELD_ALIASES
from pfedhpo.policy import TrainerConfig
from pfedhpo.rst import RstConfig
from pfedhpo.space import SearchSpace, SpaceError

GENERATORS = ("cluster", "dirichlet", "csv")

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "output_dir": "runs/default",
    "data": {
        "generator": "cluster",
        "cluster": {"num_clusters": 2, "clients_per_cluster": 4, "feature_scale": [0.1, 10.0],
                    "num_features": 5, "num_classes": 3, "examples_per_client": 100,
                    "split_ratio": list(DEFAULT_SPLIT), "separation": DEFAULT_SEPARATION},
        "dirichlet": {"n": 10, "alpha": 1.0, "min_per_client": 32, "num_classes": 5,
                      "num_features": 5, "num_examples": 2000, "separation": DEFAULT_SEPARATION,
                      "split_ratio": list(DEFAULT_SPLIT)},
        "csv": {"path": None, "n": 2, "layout": "round_robin", "num_classes": None,
                "split_ratio": list(DEFAULT_SPLIT)},
    },
    "model": {"kind": LOGISTIC, "hidden": []},
    "local": {"learning_rate": 0.01, "weight_decay": 0.0, "local_steps": 1, "dropout": 0.0,
              "batch_size": 16},
    "encoding": {"dim": 128, "phase": False},
    "rst": {"T": 50, "T_s": 1, "budget": 600, "reward_metric": "neg_loss_gain", "default": {}},
    "trainer": {"policy_lr": 0.01, "baseline": "ema", "ema_decay": 0.9, "entropy_coef": 0.0,
                "trials_per_update": 1, "hidden": [64, 64], "input_norm": "standardize"},
    "baselines": [{"method": RS_GLOBAL, "num_candidates": 6},
                  {"method": RS_PERSONALIZED, "subsample_size": 100}],
    "eval_rounds": 50,
}

# Fields excluded from the stored config (and therefore from its hash), so
# that runs of one experiment under different seeds share a config hash.
RUN_FIELDS = ("seed", "output_dir")


class ConfigError(ValueError):
    pass


def _merge(defaults: Any, given: Any, path: str) -> Any:
    if isinstance(defaults, dict) and defaults:
        if given is None:
            return copy.deepcopy(defaults)
        if not isinstance(given, dict):
            raise ConfigError(f"{path}: expected a mapping")
        unknown = sorted(set(given) - set(defaults))
        if unknown:
            raise ConfigError(f"{_join(path, unknown[0])}: unknown field")
        return {k: _merge(v, given.get(k), _join(path, k)) for k, v in defaults.items()}
    return copy.deepcopy(defaults) if given is None else given


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else str(key)


def _num(value: Any, path: str, kind=float, lo=None, lo_open=False) -> Any:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    if kind is int and value != int(value):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    value = kind(value)
    if lo is not None and (value <= lo if lo_open else value < lo):
        raise ConfigError(f"{path}: must be {'>' if lo_open else '>='} {lo}, got {value}")
    return value


def _ratio(value: Any, path: str) -> tuple[float, float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 3:
        raise ConfigError(f"{path}: expected three fractions")
    r = tuple(_num(v, f"{path}[{i}]", lo=0.0) for i, v in enumerate(value))
    if abs(sum(r) - 1.0) > 1e-9:
        raise ConfigError(f"{path}: fractions must sum to 1")
    return r


def _ints(value: Any, path: str) -> tuple[int, ...]:
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{path}: expected a list")
    return tuple(_num(v, f"{path}[{i}]", int, lo=1) for i, v in enumerate(value))


@dataclass(frozen=True)
class DataConfig:
    generator: str
    cluster: ClusterSpec | None = None
    dirichlet: PartitionSpec | None = None
    dirichlet_base: dict = field(default_factory=dict)
    csv: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    output_dir: str
    data: DataConfig
    model_kind: str
    model_hidden: tuple[int, ...]
    local: LocalTrainConfig
    space: SearchSpace
    encoding_dim: int
    encoding_phase: bool
    rst: RstConfig
    trainer: TrainerConfig
    baselines: tuple[BaselineConfig, ...]
    eval_rounds: int
    tree: dict = field(repr=False, default_factory=dict)

    def baseline(self, method: str) -> BaselineConfig:
        for b in self.baselines:
            if b.method == method:
                return b
        raise ConfigError(f"baselines: no entry for method {method!r}")

    def stored_text(self) -> str:
        """Canonical YAML of the config minus run fields; its sha256 is the config hash."""
        tree = {k: v for k, v in self.tree.items() if k not in RUN_FIELDS}
        return yaml.safe_dump(tree, sort_keys=True, default_flow_style=False)

    def config_hash(self) -> str:
        return hashlib.sha256(self.stored_text().encode()).hexdigest()


def _build_data(d: dict, seed: int) -> DataConfig:
    gen = d["generator"]
    if gen not in GENERATORS:
        raise ConfigError(f"data.generator: must be one of {GENERATORS}, got {gen!r}")
    if gen == "cluster":
        c, p = d["cluster"], "data.cluster"
        k = _num(c["num_clusters"], f"{p}.num_clusters", int, lo=1)
        scales = c["feature_scale"]
        if not isinstance(scales, (list, tuple)) or len(scales) != k:
            raise ConfigError(f"{p}.feature_scale: expected {k} values")
        scales = tuple(_num(s, f"{p}.feature_scale[{i}]", lo=0.0, lo_open=True)
                       for i, s in enumerate(scales))
        spec = ClusterSpec(
            num_clusters=k,
            clients_per_cluster=_num(c["clients_per_cluster"], f"{p}.clients_per_cluster", int, lo=1),
            feature_scale=scales,
            num_features=_num(c["num_features"], f"{p}.num_features", int, lo=1),
            num_classes=_num(c["num_classes"], f"{p}.num_classes", int, lo=1),
            examples_per_client=_num(c["examples_per_client"], f"{p}.examples_per_client", int, lo=1),
            split_ratio=_ratio(c["split_ratio"], f"{p}.split_ratio"),
            seed=seed,
            separation=_num(c["separation"], f"{p}.separation", lo=0.0, lo_open=True),
        )
        return DataConfig(gen, cluster=spec)
    if gen == "dirichlet":
        c, p = d["dirichlet"], "data.dirichlet"
        spec = PartitionSpec(
            n=_num(c["n"], f"{p}.n", int, lo=1),
            alpha=_num(c["alpha"], f"{p}.alpha", lo=0.0, lo_open=True),
            min_per_client=_num(c["min_per_client"], f"{p}.min_per_client", int, lo=0),
            seed=seed,
        )
        base = {
            "num_classes": _num(c["num_classes"], f"{p}.num_classes", int, lo=1),
            "num_features": _num(c["num_features"], f"{p}.num_features", int, lo=1),
            "num_examples": _num(c["num_examples"], f"{p}.num_examples", int, lo=1),
            "separation": _num(c["separation"], f"{p}.separation", lo=0.0, lo_open=True),
            "split_ratio": _ratio(c["split_ratio"], f"{p}.split_ratio"),
        }
        return DataConfig(gen, dirichlet=spec, dirichlet_base=base)
    c, p = d["csv"], "data.csv"
    if not c["path"]:
        raise ConfigError(f"{p}.path: missing field")
    if c["layout"] not in ("round_robin", "column"):
        raise ConfigError(f"{p}.layout: must be round_robin or column")
    csv = {"path": str(c["path"]), "n": _num(c["n"], f"{p}.n", int, lo=1), "layout": c["layout"],
           "split_ratio": _ratio(c["split_ratio"], f"{p}.split_ratio"),
           "num_classes": None if c["num_classes"] is None
           else _num(c["num_classes"], f"{p}.num_classes", int, lo=1)}
    return DataConfig(gen, csv=csv)


def _build_local(d: dict, path: str, base: LocalTrainConfig | None = None) -> LocalTrainConfig:
    try:
        if base is not None:
            return base.with_overrides(d)
        return LocalTrainConfig(
            learning_rate=_num(d["learning_rate"], f"{path}.learning_rate", lo=0.0, lo_open=True),
            weight_decay=_num(d["weight_decay"], f"{path}.weight_decay", lo=0.0),
            local_steps=_num(d["local_steps"], f"{path}.local_steps", int, lo=1),
            dropout=_num(d["dropout"], f"{path}.dropout", lo=0.0),
            batch_size=_num(d["batch_size"], f"{path}.batch_size", int, lo=1),
        )
    except (KeyError, ValueError, TypeError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"{path}: {e}") from None


def _build_baselines(items: Any, budget: int, seed: int) -> tuple[BaselineConfig, ...]:
    if not isinstance(items, list):
        raise ConfigError("baselines: expected a list")
    out = []
    for i, item in enumerate(items):
        p = f"baselines[{i}]"
        if not isinstance(item, dict):
            raise ConfigError(f"{p}: expected a mapping")
        allowed = {"method", "num_candidates", "subsample_size", "rounds_per_candidate", "distinct"}
        unknown = sorted(set(item) - allowed)
        if unknown:
            raise ConfigError(f"{p}.{unknown[0]}: unknown field")
        if "method" not in item:
            raise ConfigError(f"{p}.method: missing field")
        method = item["method"]
        if method not in (RS_GLOBAL, RS_PERSONALIZED):
            raise ConfigError(f"{p}.method: must be {RS_GLOBAL} or {RS_PERSONALIZED}")
        k = _num(item.get("num_candidates", 6), f"{p}.num_candidates", int, lo=1)
        sub = _num(item.get("subsample_size", 100), f"{p}.subsample_size", int, lo=1)
        distinct = bool(item.get("distinct", False))
        if "rounds_per_candidate" in item:
            rpc = _num(item["rounds_per_candidate"], f"{p}.rounds_per_candidate", int, lo=1)
            cfg = BaselineConfig(method, k, rpc, sub, seed, distinct)
        else:
            try:
                cfg = BaselineConfig.for_budget(method, budget, k, sub, seed, distinct)
            except ValueError as e:
                raise ConfigError(f"{p}: {e}") from None
        if cfg.rounds_needed > budget:
            raise ConfigError(f"{p}: needs {cfg.rounds_needed} rounds, budget is {budget}")
        out.append(cfg)
    return tuple(out)


def build_config(raw: Any, seed: int | None = None) -> ExperimentConfig:
    """Validate a parsed YAML tree (``seed`` overrides the tree's seed)."""
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a mapping at the top level")
    if "space" not in raw:
        raise ConfigError("space: missing field")
    given = dict(raw)
    space_raw = given.pop("space")
    baselines_raw = given.pop("baselines", None)
    tree = _merge({k: v for k, v in DEFAULTS.items() if k != "baselines"}, given, "")
    tree["baselines"] = copy.deepcopy(DEFAULTS["baselines"]) if baselines_raw is None else baselines_raw
    tree["space"] = space_raw
    if seed is not None:
        tree["seed"] = seed
    seed = _num(tree["seed"], "seed", int, lo=0)
    tree["seed"] = seed

    try:
        space = SearchSpace.from_dict(space_raw)
    except (SpaceError, KeyError, TypeError, ValueError) as e:
        msg = str(e)
        raise ConfigError(msg if msg.startswith("space") else f"space: {msg}") from None
    for i, dim in enumerate(space.dims):
        if dim.name not in FIELD_ALIASES:
            raise ConfigError(f"space.dims[{i}].name: {dim.name!r} is not a local training field")

    m = tree["model"]
    if m["kind"] not in (LOGISTIC, FEEDFORWARD):
        raise ConfigError(f"model.kind: must be {LOGISTIC} or {FEEDFORWARD}, got {m['kind']!r}")
    hidden = _ints(m["hidden"], "model.hidden")
    if m["kind"] == FEEDFORWARD and not hidden:
        raise ConfigError("model.hidden: feedforward needs at least one hidden width")

    local = _build_local(tree["local"], "local")
    r = tree["rst"]
    if not isinstance(r["default"], dict):
        raise ConfigError("rst.default: expected a mapping")
    default_cfg = _build_local(r["default"], "rst.default", local)
    try:
        rst = RstConfig(T=_num(r["T"], "rst.T", int, lo=1), T_s=_num(r["T_s"], "rst.T_s", int, lo=1),
                        budget=_num(r["budget"], "rst.budget", int, lo=0), default_config=default_cfg,
                        reward_metric=r["reward_metric"], seed=seed)
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"rst: {e}") from None

    t = tree["trainer"]
    try:
        trainer = TrainerConfig(
            policy_lr=_num(t["policy_lr"], "trainer.policy_lr", lo=0.0, lo_open=True),
            baseline=t["baseline"], ema_decay=_num(t["ema_decay"], "trainer.ema_decay", lo=0.0),
            entropy_coef=_num(t["entropy_coef"], "trainer.entropy_coef", lo=0.0),
            trials_per_update=_num(t["trials_per_update"], "trainer.trials_per_update", int, lo=1),
            hidden=_ints(t["hidden"], "trainer.hidden"), seed=seed, input_norm=t["input_norm"])
    except ValueError as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(f"trainer: {e}") from None

    enc = tree["encoding"]
    return ExperimentConfig(
        seed=seed,
        output_dir=str(tree["output_dir"]),
        data=_build_data(tree["data"], seed),
        model_kind=m["kind"],
        model_hidden=hidden,
        local=local,
        space=space,
        encoding_dim=_num(enc["dim"], "encoding.dim", int, lo=1),
        encoding_phase=bool(enc["phase"]),
        rst=rst,
        trainer=trainer,
        baselines=_build_baselines(tree["baselines"], rst.budget, seed),
        eval_rounds=_num(tree["eval_rounds"], "eval_rounds", int, lo=1),
        tree=tree,
    )


def parse_config(text: str, seed: int | None = None) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ConfigError(f"config: not valid YAML ({e})") from None
    return build_config(raw, seed)


def load_config(path: str | Path, seed: int | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config: file not found: {path}")
    return parse_config(path.read_text(), seed)
