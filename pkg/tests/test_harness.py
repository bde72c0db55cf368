import csv
import json
import statistics
from pathlib import Path

import numpy as np
import pytest
import yaml

from pfedhpo.datagen import make_base_dataset, read_federation_dir
from pfedhpo.harness import pipeline
from pfedhpo.harness.artifacts import Manifest, fmt, read_csv
from pfedhpo.harness.cli import EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC, EXIT_OK, run
from pfedhpo.harness.config import ConfigError, parse_config

TINY = {
    "seed": 1,
    "data": {"generator": "cluster",
             "cluster": {"num_clusters": 2, "clients_per_cluster": 2, "feature_scale": [0.1, 10.0],
                         "num_features": 3, "num_classes": 3, "examples_per_client": 60, "separation": 5.0}},
    "local": {"learning_rate": 0.1, "local_steps": 2},
    "space": {"dims": [{"name": "lr", "kind": "discrete", "candidates": [0.01, 0.1, 1.0]}]},
    "encoding": {"dim": 16},
    "rst": {"T": 5, "T_s": 1, "budget": 20},
    "trainer": {"hidden": [8]},
    "baselines": [{"method": "rs_global", "num_candidates": 3},
                  {"method": "rs_personalized", "subsample_size": 10}],
    "eval_rounds": 5,
}


def write_config(tmp_path, tree=None, name="cfg.yaml"):
    path = Path(tmp_path) / name
    path.write_text(yaml.safe_dump(tree or TINY))
    return path


def full_pipeline(cfg_path, out, seed=None):
    seed_args = [] if seed is None else ["--seed", str(seed)]
    assert run(["partition", "--config", str(cfg_path), "--out", str(out), *seed_args]) == EXIT_OK
    assert run(["pretrain", "--out", str(out)]) == EXIT_OK
    for m in ("hpn", "rs", "prs"):
        assert run(["tune", "--out", str(out), "--method", m]) == EXIT_OK
        assert run(["evaluate", "--out", str(out), "--method", m]) == EXIT_OK


@pytest.fixture(scope="module")
def finished(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    cfg = write_config(root)
    full_pipeline(cfg, root / "a")
    return root, cfg


# --- config ---------------------------------------------------------------


def test_defaults_fill_missing_sections():
    cfg = parse_config(yaml.safe_dump({"space": TINY["space"]}))
    assert cfg.rst.T == 50 and cfg.trainer.policy_lr == 0.01 and cfg.encoding_dim == 128
    assert cfg.baseline("rs_global").rounds_per_candidate == 100


@pytest.mark.parametrize("patch,where", [
    ({"rst": {"T": 0}}, "rst.T"),
    ({"rst": {"T_s": "one"}}, "rst.T_s"),
    ({"local": {"learning_rate": -1}}, "local.learning_rate"),
    ({"local": {"momentum": 0.9}}, "local.momentum"),
    ({"data": {"generator": "images"}}, "data.generator"),
    ({"data": {"cluster": {"feature_scale": [1.0]}}}, "data.cluster.feature_scale"),
    ({"data": {"cluster": {"split_ratio": [0.5, 0.5, 0.5]}}}, "data.cluster.split_ratio"),
    ({"trainer": {"baseline": "mean"}}, "trainer"),
    ({"model": {"kind": "cnn"}}, "model.kind"),
    ({"baselines": [{"num_candidates": 3}]}, "baselines[0].method"),
    ({"space": {"dims": [{"name": "lr"}]}}, "space.dims[0]"),
    ({"space": {"dims": [{"name": "momentum", "candidates": [0.9]}]}}, "space.dims[0].name"),
])
def test_config_errors_name_the_field(patch, where):
    tree = json.loads(json.dumps(TINY))
    for k, v in patch.items():
        if isinstance(v, dict) and isinstance(tree.get(k), dict) and k != "space":
            for kk, vv in v.items():
                if isinstance(vv, dict):
                    tree[k].setdefault(kk, {}).update(vv)
                else:
                    tree[k][kk] = vv
        else:
            tree[k] = v
    with pytest.raises(ConfigError, match=f"^{__import__('re').escape(where)}"):
        parse_config(yaml.safe_dump(tree))


def test_missing_space_is_named():
    tree = {k: v for k, v in TINY.items() if k != "space"}
    with pytest.raises(ConfigError, match="^space: missing field"):
        parse_config(yaml.safe_dump(tree))


def test_hash_ignores_seed_and_output_dir():
    a = parse_config(yaml.safe_dump(TINY), seed=1)
    b = parse_config(yaml.safe_dump({**TINY, "output_dir": "elsewhere"}), seed=9)
    assert a.config_hash() == b.config_hash() and b.seed == 9
    c = parse_config(yaml.safe_dump({**TINY, "eval_rounds": 6}))
    assert c.config_hash() != a.config_hash()
    # The stored text re-parses to the same hash.
    assert parse_config(a.stored_text(), 1).config_hash() == a.config_hash()


def test_shipped_configs_parse():
    root = Path(__file__).resolve().parents[1] / "configs"
    for name in ("two_cluster.yaml", "dirichlet.yaml"):
        cfg = parse_config((root / name).read_text())
        assert cfg.rst.budget == 600


# --- artifacts ------------------------------------------------------------


def test_fmt_uses_17_significant_digits():
    assert fmt(0.1) == "0.10000000000000001"
    assert float(fmt(1 / 3)) == 1 / 3
    assert fmt(True) == "1" and fmt(7) == "7"


# --- stages ---------------------------------------------------------------


def test_partition_dirichlet_multiset(tmp_path):
    tree = {**TINY, "data": {"generator": "dirichlet",
                             "dirichlet": {"n": 10, "alpha": 0.1, "min_per_client": 5, "num_classes": 3,
                                           "num_features": 3, "num_examples": 2000}}}
    cfg = write_config(tmp_path, tree)
    assert run(["partition", "--config", str(cfg), "--out", str(tmp_path / "r")]) == EXIT_OK
    dirs = sorted(p.name for p in (tmp_path / "r" / "federation").iterdir() if p.is_dir())
    assert dirs == [f"client_{i:03d}" for i in range(10)]
    fed, meta = read_federation_dir(tmp_path / "r" / "federation")
    base = make_base_dataset(3, 3, 2000, 1, 3.0)
    got = sorted(map(tuple, np.concatenate([np.column_stack([c.split(s).features, c.split(s).labels])
                                            for c in fed for s in ("train", "valid", "test")]).tolist()))
    want = sorted(map(tuple, np.column_stack([base.features, base.labels]).tolist()))
    assert got == want and meta["alpha"] == 0.1 and meta["seed"] == 1


def test_partition_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path)
    for out in ("a", "b"):
        assert run(["partition", "--config", str(cfg), "--out", str(tmp_path / out)]) == EXIT_OK
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*")
                   if p.is_file() and p.name != "manifest.json")
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_partition_refuses_overwrite(tmp_path):
    cfg = write_config(tmp_path)
    out = str(tmp_path / "r")
    assert run(["partition", "--config", str(cfg), "--out", out]) == EXIT_OK
    assert run(["partition", "--config", str(cfg), "--out", out]) == EXIT_CONFIG
    assert run(["partition", "--config", str(cfg), "--out", out, "--force"]) == EXIT_OK


def test_manifest_lists_every_file(finished):
    root, _ = finished
    rd = root / "a"
    manifest = Manifest.load(rd)
    on_disk = sorted(str(p.relative_to(rd)) for p in rd.rglob("*") if p.is_file() and p.name != "manifest.json")
    assert manifest.artifacts() == on_disk
    stored = parse_config((rd / "config.yaml").read_text(), manifest.seed)
    assert stored.config_hash() == manifest.config_hash


def test_seed_recorded_everywhere(finished):
    root, _ = finished
    rd = root / "a"
    assert Manifest.load(rd).seed == 1
    for m in ("hpn", "rs_global", "rs_personalized"):
        assert json.loads((rd / m / "report.json").read_text())["seed"] == 1
        assert {r["seed"] for r in read_csv(rd / m / "trials.csv")} == {"1"}
    assert json.loads((rd / "federation" / "federation.json").read_text())["seed"] == 1
    assert json.loads((rd / "pretrain" / "checkpoints" / "index.json").read_text())["metadata"]["seed"] == 1


def test_report_schema_and_weighted_accuracy(finished):
    root, _ = finished
    rd = root / "a"
    fed, _ = read_federation_dir(rd / "federation")
    sizes = np.array([len(c.test) for c in fed])
    for m in ("hpn", "rs_global", "rs_personalized"):
        rep = json.loads((rd / m / "report.json").read_text())
        assert tuple(sorted(rep)) == pipeline.REPORT_KEYS
        assert rep["method"] == m
        accs = np.array(rep["per_client_accuracies"])
        assert np.all((accs >= 0) & (accs <= 1))
        assert rep["weighted_test_accuracy"] == pytest.approx(float(sizes @ accs / sizes.sum()), abs=1e-12)


def test_budget_parity(finished):
    root, _ = finished
    consumed = [json.loads((root / "a" / m / "report.json").read_text())["rounds_consumed"]
                for m in ("hpn", "rs_global", "rs_personalized")]
    # RS uses 3 x 6 = 18 rounds of the 20: within T_s of HPN only when the split is exact.
    assert consumed[0] == 20 and consumed[2] == 20
    assert 20 - consumed[1] <= 20 % 3


def test_trial_log_columns(finished):
    root, _ = finished
    with open(root / "a" / "hpn" / "trials.csv", newline="") as f:
        reader = csv.reader(f)
        header = next(reader)
        rows = list(reader)
    assert header[:4] == ["method", "seed", "trial_id", "start_round"] and "configs" in header
    assert len(rows) == 15
    cfgs = json.loads(rows[0][header.index("configs")])
    assert len(cfgs) == 4 and set(cfgs[0]) == {"lr"}
    trace = read_csv(root / "a" / "hpn" / "argmax_trace.csv")
    assert len(trace) == 15 * 4


def test_end_to_end_determinism(finished, tmp_path):
    root, cfg = finished
    full_pipeline(cfg, tmp_path / "b")
    for m in ("hpn", "rs_global", "rs_personalized"):
        for name in ("trials.csv", "report.json"):
            assert (root / "a" / m / name).read_bytes() == (tmp_path / "b" / m / name).read_bytes()


def test_threads_do_not_change_results(finished, tmp_path):
    root, cfg = finished
    out = str(tmp_path / "t")
    assert run(["partition", "--config", str(cfg), "--out", out]) == EXIT_OK
    assert run(["pretrain", "--out", out, "--threads", "3"]) == EXIT_OK
    assert run(["tune", "--out", out, "--method", "hpn", "--threads", "3"]) == EXIT_OK
    assert (root / "a" / "hpn" / "trials.csv").read_bytes() == (tmp_path / "t" / "hpn" / "trials.csv").read_bytes()


def test_paper_faithful_flag(finished, tmp_path):
    _, cfg = finished
    out = str(tmp_path / "p")
    assert run(["partition", "--config", str(cfg), "--out", out]) == EXIT_OK
    assert run(["pretrain", "--out", out]) == EXIT_OK
    assert run(["tune", "--out", out, "--method", "hpn", "--paper-faithful"]) == EXIT_OK
    summary = json.loads((tmp_path / "p" / "hpn" / "summary.json").read_text())
    assert summary["paper_faithful"] is True
    assert summary["trainer"]["baseline"] == "none" and summary["trainer"]["entropy_coef"] == 0.0


def test_budget_infeasible(tmp_path, capsys):
    tree = {**TINY, "rst": {"T": 5, "T_s": 1, "budget": 5},
            "baselines": [{"method": "rs_global", "num_candidates": 1}]}
    cfg = write_config(tmp_path, tree)
    out = str(tmp_path / "r")
    assert run(["partition", "--config", str(cfg), "--out", out]) == EXIT_OK
    assert run(["pretrain", "--out", out]) == EXIT_OK
    assert run(["tune", "--out", out, "--method", "hpn"]) == EXIT_CONFIG
    assert "budget infeasible" in capsys.readouterr().err


def test_missing_artifacts_exit_4(tmp_path):
    assert run(["pretrain", "--out", str(tmp_path / "nothing")]) == EXIT_MISSING
    cfg = write_config(tmp_path)
    out = str(tmp_path / "r")
    assert run(["partition", "--config", str(cfg), "--out", out]) == EXIT_OK
    assert run(["tune", "--out", out, "--method", "hpn"]) == EXIT_MISSING
    assert run(["evaluate", "--out", out, "--method", "rs"]) == EXIT_MISSING


def test_config_error_exit_2(tmp_path):
    bad = write_config(tmp_path, {**TINY, "rst": {"T": -1}})
    assert run(["partition", "--config", str(bad), "--out", str(tmp_path / "r")]) == EXIT_CONFIG
    assert run(["partition", "--out", str(tmp_path / "r")]) == EXIT_CONFIG
    assert run(["partition", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "r")]) == EXIT_CONFIG


def test_numeric_failure_exit_3(tmp_path):
    tree = {**TINY, "local": {"learning_rate": 1.7e308, "local_steps": 3}}
    cfg = write_config(tmp_path, tree)
    out = str(tmp_path / "r")
    assert run(["partition", "--config", str(cfg), "--out", out]) == EXIT_OK
    assert run(["pretrain", "--out", out]) == EXIT_NUMERIC


def test_seed_mismatch_rejected(finished):
    root, _ = finished
    assert run(["tune", "--out", str(root / "a"), "--method", "hpn", "--seed", "2"]) == EXIT_CONFIG


def test_stage_refuses_overwrite(finished):
    root, _ = finished
    assert run(["tune", "--out", str(root / "a"), "--method", "rs"]) == EXIT_CONFIG
    assert run(["evaluate", "--out", str(root / "a"), "--method", "rs"]) == EXIT_CONFIG


def test_report_single_and_multi_seed(finished, tmp_path):
    root, cfg = finished
    assert run(["report", str(root / "a"), "--out", str(tmp_path / "one")]) == EXIT_OK
    rows = read_csv(tmp_path / "one" / "comparison.csv")
    assert [r["method"] for r in rows] == ["hpn", "rs_global", "rs_personalized"]
    assert all(r["n"] == "1" and float(r["std"]) == 0.0 for r in rows)

    runs = [root / "a"]
    for seed in (2, 3):
        full_pipeline(cfg, tmp_path / f"s{seed}", seed)
        runs.append(tmp_path / f"s{seed}")
    assert run(["report", *map(str, runs), "--out", str(tmp_path / "many")]) == EXIT_OK
    for row in read_csv(tmp_path / "many" / "comparison.csv"):
        accs = [json.loads((r / row["method"] / "report.json").read_text())["weighted_test_accuracy"] for r in runs]
        assert [float(row[f"seed_{s}"]) for s in (1, 2, 3)] == accs
        assert float(row["mean"]) == pytest.approx(statistics.fmean(accs), abs=1e-15)
        assert float(row["std"]) == pytest.approx(statistics.stdev(accs), abs=1e-15)
    trace = read_csv(tmp_path / "many" / "argmax_trace.csv")
    assert {r["seed"] for r in trace} == {"1", "2", "3"}


def test_report_rejects_mixed_configs(finished, tmp_path):
    root, _ = finished
    other = write_config(tmp_path, {**TINY, "eval_rounds": 4})
    full_pipeline(other, tmp_path / "o", seed=5)
    assert run(["report", str(root / "a"), str(tmp_path / "o"), "--out", str(tmp_path / "rep")]) == EXIT_CONFIG


def test_report_rejects_duplicate_seed(finished, tmp_path):
    root, _ = finished
    assert run(["report", str(root / "a"), str(root / "a"), "--out", str(tmp_path / "rep")]) == EXIT_CONFIG
