"""On-disk artifacts of a run directory: CSV tables, JSON documents, the manifest."""

from __future__ import annotations

import csv
import json
import platform
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import yaml

import pfedhpo
from pfedhpo.rst import TrialRecord
from pfedhpo.space import SearchSpace

MANIFEST = "manifest.json"
CONFIG = "config.yaml"

TRIAL_COLUMNS = ("method", "seed", "trial_id", "start_round", "reference_round", "configs",
                 "reward", "rounds_consumed", "failed", "valid_before", "valid_after")


class MissingArtifact(FileNotFoundError):
    pass


def fmt(value: Any) -> str:
    """CSV cell text; floats get 17 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_csv(path: str | Path) -> list[dict[str, str]]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"missing artifact: {path}")
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def write_json(path: str | Path, doc: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_json(path: str | Path) -> Any:
    path = Path(path)
    if not path.exists():
        raise MissingArtifact(f"missing artifact: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def _cell(values: Any) -> str:
    return json.dumps(values, separators=(",", ":"))


def write_trial_log(path: str | Path, method: str, seed: int, trials: Sequence[TrialRecord]) -> Path:
    """One row per trial; wall times live in a separate timing file so this one is deterministic."""
    rows = [(method, seed, t.trial_id, t.start_round, t.reference_round,
             _cell([{k: float(v) for k, v in d.items()} for d in t.decoded]),
             t.reward, t.rounds_consumed, t.failed, _cell(t.valid_before), _cell(t.valid_after))
            for t in trials]
    return write_csv(path, TRIAL_COLUMNS, rows)


def write_timing(path: str | Path, trials: Sequence[TrialRecord]) -> Path:
    return write_csv(path, ("trial_id", "wall_time"), [(t.trial_id, t.wall_time) for t in trials])


def write_argmax_trace(path: str | Path, seed: int, space: SearchSpace,
                       trace: Sequence[tuple[int, int, str, float]]) -> Path:
    """Tidy trace: the argmax index (discrete) or mapped mean (continuous) and its decoded value."""
    dims = {d.name: d for d in space.dims}
    rows = []
    for update, client, head, value in trace:
        dim = dims[head]
        decoded = dim.candidates[int(value)] if dim.is_discrete else value
        rows.append((seed, update, client, head, int(value) if dim.is_discrete else value, decoded))
    return write_csv(path, ("seed", "update", "client", "head", "argmax", "value"), rows)


def write_history(path: str | Path, history: Sequence[dict]) -> Path:
    keys = [k for k in history[0] if k != "round"] if history else []
    return write_csv(path, ["round", *keys], [[h["round"], *(h[k] for k in keys)] for h in history])


def versions() -> dict[str, str]:
    return {"pfedhpo": pfedhpo.__version__, "numpy": np.__version__, "pyyaml": yaml.__version__,
            "python": platform.python_version()}


class Manifest:
    """``manifest.json``: config hash, seed, versions, and per-stage artifacts and wall time."""

    def __init__(self, run_dir: str | Path, config_hash: str, seed: int, stages: dict | None = None):
        self.run_dir = Path(run_dir)
        self.config_hash = config_hash
        self.seed = seed
        self.stages: dict[str, dict] = dict(stages or {})

    @classmethod
    def load(cls, run_dir: str | Path) -> "Manifest":
        doc = read_json(Path(run_dir) / MANIFEST)
        return cls(run_dir, doc["config_hash"], int(doc["seed"]), doc.get("stages", {}))

    def record(self, stage: str, paths: Iterable[Path], wall_time: float) -> None:
        rel = sorted(str(Path(p).relative_to(self.run_dir)) for p in paths)
        self.stages[stage] = {"artifacts": rel, "wall_time": wall_time}

    def drop(self, prefix: str) -> None:
        for name in [s for s in self.stages if s == prefix or s.startswith(prefix + ":")]:
            del self.stages[name]

    def artifacts(self) -> list[str]:
        return sorted(p for s in self.stages.values() for p in s["artifacts"])

    def save(self) -> Path:
        return write_json(self.run_dir / MANIFEST, {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "versions": versions(),
            "stages": self.stages,
        })
