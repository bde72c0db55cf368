"""Pipeline stages over a run directory.

Layout of a run directory::

    config.yaml            canonical config (without seed and output_dir)
    manifest.json          config hash, seed, versions, per-stage artifacts
    federation/            client_XXX/{train,valid,test}.csv + federation.json
    encodings.json         per-client RFF encodings
    pretrain/              checkpoints/ + metrics.csv
    <method>/              trials.csv, timing.csv, summary.json, ...
                           report.json and eval_history.csv after evaluate

``<method>`` is one of ``hpn``, ``rs_global``, ``rs_personalized``. Each
stage refuses to overwrite its own output unless ``force`` is set, and reads
earlier stages only through these files.
"""

from __future__ import annotations

import shutil
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from pfedhpo.baselines import RS_GLOBAL, RS_PERSONALIZED, rs_global, rs_personalized
from pfedhpo.datagen import (
    bundle_clients,
    dirichlet_partition,
    load_csv_federation,
    make_base_dataset,
    make_cluster_federation,
    read_federation_dir,
    write_federation_dir,
)
from pfedhpo.datasets import Federation
from pfedhpo.encoding import draw_projection, encode_federation, encodings_to_json
from pfedhpo.fl import CheckpointStore, ModelSpec
from pfedhpo.harness.artifacts import (
    CONFIG,
    MANIFEST,
    Manifest,
    MissingArtifact,
    read_csv,
    read_json,
    write_argmax_trace,
    write_csv,
    write_history,
    write_json,
    write_timing,
    write_trial_log,
)
from pfedhpo.harness.config import ConfigError, ExperimentConfig, load_config, parse_config
from pfedhpo.policy import load_policy, save_policy
from pfedhpo.problem import Problem, RoundBudget, evaluate_assignment
from pfedhpo.rst import deploy_and_evaluate, rst_pretrain, train_hpn
from pfedhpo.space import ConfigSample, PersonalizedAssignment

HPN = "hpn"
METHODS = {"hpn": HPN, "rs": RS_GLOBAL, "prs": RS_PERSONALIZED}
REPORT_KEYS = ("method", "per_client_accuracies", "rounds_consumed", "seed", "weighted_test_accuracy")


def method_name(method: str) -> str:
    if method in METHODS.values():
        return method
    if method not in METHODS:
        raise ConfigError(f"--method: must be one of {sorted(METHODS)}, got {method!r}")
    return METHODS[method]


@dataclass
class Run:
    run_dir: Path
    cfg: ExperimentConfig
    manifest: Manifest

    @property
    def seed(self) -> int:
        return self.manifest.seed

    def path(self, *parts: str) -> Path:
        return self.run_dir.joinpath(*parts)


def open_run(out: str | Path | None, config_path: str | Path | None = None,
             seed: int | None = None) -> Run:
    """Open an existing run directory, checking any given config or seed against it."""
    if out is None:
        if config_path is None:
            raise ConfigError("--out: missing field (or pass --config)")
        out = load_config(config_path, seed).output_dir
    run_dir = Path(out)
    if not (run_dir / MANIFEST).exists() or not (run_dir / CONFIG).exists():
        raise MissingArtifact(f"missing artifact: {run_dir / MANIFEST} (run partition first)")
    manifest = Manifest.load(run_dir)
    if seed is not None and seed != manifest.seed:
        raise ConfigError(f"--seed: run directory was created with seed {manifest.seed}, got {seed}")
    cfg = parse_config((run_dir / CONFIG).read_text(), manifest.seed)
    if cfg.config_hash() != manifest.config_hash:
        raise ConfigError(f"{run_dir / CONFIG}: does not match the manifest's config hash")
    if config_path is not None and load_config(config_path, manifest.seed).config_hash() != manifest.config_hash:
        raise ConfigError(f"--config: differs from the config stored in {run_dir}")
    return Run(run_dir, cfg, manifest)


def _claim(path: Path, force: bool) -> None:
    if path.exists():
        if not force:
            raise ConfigError(f"{path}: already exists; use a new --out or --force")
        shutil.rmtree(path) if path.is_dir() else path.unlink()


@contextmanager
def _executor(threads: int) -> Iterator:
    if threads <= 1:
        yield None
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        yield pool


def build_federation(cfg: ExperimentConfig) -> tuple[Federation, dict]:
    """The configured federation plus generator metadata for ``federation.json``."""
    d = cfg.data
    extra = {"seed": cfg.seed, "generator": d.generator}
    if d.generator == "cluster":
        fed, cluster_of = make_cluster_federation(d.cluster)
        extra["cluster_of"] = cluster_of
        extra["feature_scale"] = list(d.cluster.feature_scale)
    elif d.generator == "dirichlet":
        b = d.dirichlet_base
        base = make_base_dataset(b["num_classes"], b["num_features"], b["num_examples"], cfg.seed,
                                 b["separation"])
        fed = bundle_clients(dirichlet_partition(base, d.dirichlet), b["split_ratio"], cfg.seed)
        extra["alpha"] = d.dirichlet.alpha
    else:
        c = d.csv
        fed = load_csv_federation(c["path"], c["n"], c["layout"], c["split_ratio"], cfg.seed,
                                  c["num_classes"])
    return fed, extra


def encode(cfg: ExperimentConfig, fed: Federation):
    proj = draw_projection(fed.num_features, cfg.encoding_dim, cfg.seed, cfg.encoding_phase)
    return encode_federation(fed, proj), proj


def problem_from_config(cfg: ExperimentConfig, executor=None) -> tuple[Problem, dict]:
    """In-memory equivalent of ``partition`` followed by :func:`load_problem`."""
    fed, extra = build_federation(cfg)
    fed, _ = encode(cfg, fed)
    model = ModelSpec(cfg.model_kind, fed.num_features, fed.num_classes, cfg.model_hidden)
    return Problem(model, fed, cfg.space, cfg.local, executor), extra


def load_problem(run: Run, executor=None) -> tuple[Problem, dict]:
    fed, meta = read_federation_dir(run.path("federation"))
    enc = read_json(run.path("encodings.json"))
    fed = fed.with_encodings([np.asarray(z, dtype=np.float64) for z in enc["encodings"]])
    model = ModelSpec(run.cfg.model_kind, fed.num_features, fed.num_classes, run.cfg.model_hidden)
    return Problem(model, fed, run.cfg.space, run.cfg.local, executor), meta


def cmd_partition(config_path: str | Path, out: str | Path | None = None, seed: int | None = None,
                  force: bool = False) -> Run:
    cfg = load_config(config_path, seed)
    run_dir = Path(out if out is not None else cfg.output_dir)
    if (run_dir / MANIFEST).exists():
        old = Manifest.load(run_dir)
        if not force:
            if old.config_hash != cfg.config_hash() or old.seed != cfg.seed:
                raise ConfigError(f"{run_dir}: holds a run with a different config or seed; "
                                  "use a new --out or --force")
            raise ConfigError(f"{run_dir / 'federation'}: already exists; use a new --out or --force")
        shutil.rmtree(run_dir)
    elif run_dir.exists() and any(run_dir.iterdir()) and not force:
        raise ConfigError(f"{run_dir}: not empty and not a run directory; use a new --out or --force")
    t0 = time.perf_counter()
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(run_dir, cfg.config_hash(), cfg.seed)
    (run_dir / CONFIG).write_text(cfg.stored_text(), encoding="utf-8")
    fed, extra = build_federation(cfg)
    paths = write_federation_dir(fed, run_dir / "federation", extra)
    fed, proj = encode(cfg, fed)
    enc_path = run_dir / "encodings.json"
    enc_path.write_text(encodings_to_json(fed, proj), encoding="utf-8")
    manifest.record("partition", [run_dir / CONFIG, *paths, enc_path], time.perf_counter() - t0)
    manifest.save()
    return Run(run_dir, cfg, manifest)


def cmd_pretrain(run: Run, force: bool = False, threads: int = 1) -> Path:
    out = run.path("pretrain")
    _claim(out, force)
    run.manifest.drop("pretrain")
    t0 = time.perf_counter()
    with _executor(threads) as pool:
        problem, _ = load_problem(run, pool)
        store, history = rst_pretrain(problem, run.cfg.rst)
    ckpt = store.save(out / "checkpoints")
    paths = sorted(ckpt.iterdir())
    paths.append(write_history(out / "metrics.csv", history))
    run.manifest.record("pretrain", paths, time.perf_counter() - t0)
    run.manifest.save()
    return out


def cmd_tune(run: Run, method: str, paper_faithful: bool = False, force: bool = False,
             threads: int = 1) -> Path:
    method = method_name(method)
    out = run.path(method)
    _claim(out, force)
    run.manifest.drop(f"tune:{method}")
    run.manifest.drop(f"evaluate:{method}")
    t0 = time.perf_counter()
    cfg, seed = run.cfg, run.seed
    with _executor(threads) as pool:
        problem, _ = load_problem(run, pool)
        if method == HPN:
            trainer = cfg.trainer.paper_faithful() if paper_faithful else cfg.trainer
            cfg.rst.check_budget()
            ckpt = run.path("pretrain", "checkpoints")
            if not (ckpt / "index.json").exists():
                raise MissingArtifact(f"missing artifact: {ckpt / 'index.json'} (run pretrain first)")
            res = train_hpn(problem, cfg.rst, trainer, store=CheckpointStore.load(ckpt))
            trials = res.trials
            paths = save_policy(out / "policy", res.theta, res.policy_spec, seed)
            paths.append(write_argmax_trace(out / "argmax_trace.csv", seed, cfg.space, res.trace))
            summary = {"method": method, "seed": seed, "rounds_consumed": res.rounds_consumed,
                       "pretrain_rounds": res.pretrain_rounds, "trials": len(trials),
                       "updates": res.updates, "rejected_updates": res.rejected_updates,
                       "paper_faithful": paper_faithful, "trainer": trainer.to_dict()}
        else:
            search = rs_global if method == RS_GLOBAL else rs_personalized
            bcfg = cfg.baseline(method)
            res = search(problem, bcfg, RoundBudget(cfg.rst.budget))
            trials = res.trials
            winner = {"method": method, "seed": seed, "winner_index": res.winner_index,
                      "assignment": [s.to_dict() for s in res.winner.per_client],
                      "decoded": problem.decoded(res.winner)}
            paths = [write_json(out / "winner.json", winner)]
            summary = {"method": method, "seed": seed, "rounds_consumed": res.rounds_consumed,
                       "trials": len(trials), "candidates": bcfg.candidates,
                       "rounds_per_candidate": bcfg.rounds_per_candidate}
    paths.append(write_trial_log(out / "trials.csv", method, seed, trials))
    paths.append(write_timing(out / "timing.csv", trials))
    paths.append(write_json(out / "summary.json", summary))
    run.manifest.record(f"tune:{method}", paths, time.perf_counter() - t0)
    run.manifest.save()
    return out


def cmd_evaluate(run: Run, method: str, force: bool = False, threads: int = 1) -> dict:
    method = method_name(method)
    out = run.path(method)
    summary = read_json(out / "summary.json")
    for name in ("report.json", "eval_history.csv", "deployed.json"):
        if (out / name).exists() and not force:
            raise ConfigError(f"{out / name}: already exists; use --force")
    run.manifest.drop(f"evaluate:{method}")
    t0 = time.perf_counter()
    with _executor(threads) as pool:
        problem, _ = load_problem(run, pool)
        if method == HPN:
            theta, spec, _ = load_policy(out / "policy")
            rep = deploy_and_evaluate(problem, theta, spec, run.cfg.eval_rounds, run.seed)
        else:
            winner = read_json(out / "winner.json")
            assignment = PersonalizedAssignment(tuple(ConfigSample.from_dict(s) for s in winner["assignment"]))
            rep = evaluate_assignment(problem, assignment, run.cfg.eval_rounds, run.seed)
    report = {
        "method": method,
        "weighted_test_accuracy": rep.weighted_test_accuracy,
        "per_client_accuracies": rep.per_client_accuracies,
        "rounds_consumed": int(summary["rounds_consumed"]),
        "seed": run.seed,
    }
    paths = [
        write_json(out / "report.json", report),
        write_history(out / "eval_history.csv", rep.history),
        write_json(out / "deployed.json", {"decoded": rep.decoded, "best_round": rep.best_round,
                                           "eval_rounds": rep.rounds}),
    ]
    run.manifest.record(f"evaluate:{method}", paths, time.perf_counter() - t0)
    run.manifest.save()
    return report


def cmd_report(run_dirs: Sequence[str | Path], out: str | Path, force: bool = False) -> list[Path]:
    """Comparison table (method by seed, with mean and std) and a pooled argmax trace."""
    if not run_dirs:
        raise ConfigError("report: need at least one run directory")
    hashes, results, traces = set(), {}, []
    for rd in run_dirs:
        rd = Path(rd)
        manifest = Manifest.load(rd)
        hashes.add(manifest.config_hash)
        for method in (HPN, RS_GLOBAL, RS_PERSONALIZED):
            rp = rd / method / "report.json"
            if not rp.exists():
                continue
            rep = read_json(rp)
            key = (method, int(rep["seed"]))
            if key in results:
                raise ConfigError(f"report: two runs for {method} with seed {key[1]}")
            results[key] = rep
            if method == HPN and (rd / HPN / "argmax_trace.csv").exists():
                traces.extend(read_csv(rd / HPN / "argmax_trace.csv"))
    if len(hashes) > 1:
        raise ConfigError(f"report: runs come from different configs ({len(hashes)} config hashes)")
    if not results:
        raise MissingArtifact("missing artifact: no report.json found in the given runs")
    out = Path(out)
    for name in ("comparison.csv", "runs.csv", "argmax_trace.csv"):
        _claim(out / name, force)
    seeds = sorted({s for _, s in results})
    methods = [m for m in (HPN, RS_GLOBAL, RS_PERSONALIZED) if any(k[0] == m for k in results)]
    rows = []
    for m in methods:
        accs = {s: results[(m, s)]["weighted_test_accuracy"] for s in seeds if (m, s) in results}
        vals = list(accs.values())
        std = statistics.stdev(vals) if len(vals) > 1 else 0.0
        rows.append([m, len(vals), *(accs.get(s, "") for s in seeds), statistics.fmean(vals), std])
    paths = [write_csv(out / "comparison.csv", ["method", "n", *(f"seed_{s}" for s in seeds), "mean", "std"], rows)]
    paths.append(write_csv(out / "runs.csv", ["method", "seed", "weighted_test_accuracy", "rounds_consumed"],
                           [[m, s, results[(m, s)]["weighted_test_accuracy"], results[(m, s)]["rounds_consumed"]]
                            for m in methods for s in seeds if (m, s) in results]))
    traces.sort(key=lambda r: (int(r["seed"]), int(r["update"]), int(r["client"]), r["head"]))
    cols = ["seed", "update", "client", "head", "argmax", "value"]
    paths.append(write_csv(out / "argmax_trace.csv", cols, [[r[c] for c in cols] for r in traces]))
    return paths
