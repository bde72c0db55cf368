"""Round-indexed snapshots of the global model.

On disk a store is a directory holding one binary parameter file per round
(see :mod:`pfedhpo.params`) and an ``index.json`` mapping round numbers to
file names together with the model id and free-form metadata.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterator

from pfedhpo.fl.models import ModelSpec
from pfedhpo.params import ParamVector, read_param_file, write_param_file

INDEX_FILE = "index.json"


class CheckpointStore:
    def __init__(self, spec: ModelSpec, metadata: dict | None = None):
        self.spec = spec
        self.metadata = dict(metadata or {})
        self._snapshots: dict[int, ParamVector] = {}

    def put(self, round_index: int, w: ParamVector) -> None:
        if round_index != len(self._snapshots) + 1:
            raise ValueError(f"rounds must be written in order; expected {len(self._snapshots) + 1}")
        self._snapshots[round_index] = w

    def __getitem__(self, round_index: int) -> ParamVector:
        try:
            return self._snapshots[round_index]
        except KeyError:
            raise KeyError(f"no checkpoint for round {round_index} (have 1..{len(self)})") from None

    def __len__(self) -> int:
        return len(self._snapshots)

    def __iter__(self) -> Iterator[int]:
        return iter(sorted(self._snapshots))

    @property
    def last_round(self) -> int:
        return len(self._snapshots)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CheckpointStore):
            return NotImplemented
        return (self.spec == other.spec and list(self) == list(other)
                and all(self[r] == other[r] for r in self))

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        rounds = {}
        for r in self:
            name = f"round_{r:05d}.bin"
            write_param_file(directory / name, self[r].values)
            rounds[str(r)] = name
        index = {"model": self.spec.to_dict(), "model_id": self.spec.model_id,
                 "metadata": self.metadata, "rounds": rounds}
        (directory / INDEX_FILE).write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "CheckpointStore":
        directory = Path(directory)
        index_path = directory / INDEX_FILE
        if not index_path.exists():
            raise FileNotFoundError(f"checkpoint index not found: {index_path}")
        index = json.loads(index_path.read_text())
        spec = ModelSpec.from_dict(index["model"])
        store = cls(spec, index.get("metadata"))
        layout = spec.layout()
        for r in sorted(int(k) for k in index["rounds"]):
            values = read_param_file(directory / index["rounds"][str(r)])
            store.put(r, ParamVector(values, layout))
        return store
