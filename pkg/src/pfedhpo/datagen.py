"""Synthetic heterogeneous federations and CSV ingestion.

Two generators are provided:

* :func:`make_dirichlet_federation` splits one Gaussian-blob dataset across
  clients with per-class Dirichlet proportions (label skew).
* :func:`make_cluster_federation` gives each client its own blob draw, with
  features multiplied by a per-cluster scale, so the best local learning
  rate differs between clusters.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from pfedhpo.datasets import ClientBundle, DataSet, Federation
from pfedhpo.seeding import derive_int, derive_rng

DEFAULT_SPLIT = (0.6, 0.2, 0.2)
SPLITS = ("train", "valid", "test")
# Class-mean distance; 3 puts the two-class Bayes accuracy near 93%.
DEFAULT_SEPARATION = 3.0


class PartitionError(RuntimeError):
    pass


class CsvFormatError(ValueError):
    pass


@dataclass(frozen=True)
class PartitionSpec:
    n: int
    alpha: float
    min_per_client: int = 32
    seed: int = 0
    max_retries: int = 200

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not self.alpha > 0:
            raise ValueError("alpha must be > 0")
        if self.min_per_client < 0:
            raise ValueError("min_per_client must be >= 0")


@dataclass(frozen=True)
class ClusterSpec:
    num_clusters: int = 2
    clients_per_cluster: int = 4
    feature_scale: tuple[float, ...] = (0.1, 10.0)
    num_features: int = 5
    num_classes: int = 3
    examples_per_client: int = 100
    split_ratio: tuple[float, float, float] = DEFAULT_SPLIT
    seed: int = 0
    separation: float = DEFAULT_SEPARATION

    def __post_init__(self) -> None:
        object.__setattr__(self, "feature_scale", tuple(float(s) for s in self.feature_scale))
        object.__setattr__(self, "split_ratio", tuple(float(s) for s in self.split_ratio))
        if self.num_clusters < 1 or self.clients_per_cluster < 1:
            raise ValueError("need at least one cluster and one client per cluster")
        if len(self.feature_scale) != self.num_clusters:
            raise ValueError("one feature_scale per cluster required")
        if any(not s > 0 for s in self.feature_scale):
            raise ValueError("feature scales must be positive")
        _check_ratio(self.split_ratio)


def _check_ratio(ratio: Sequence[float]) -> None:
    if len(ratio) != 3 or any(r < 0 for r in ratio) or not math.isclose(sum(ratio), 1.0, abs_tol=1e-9):
        raise ValueError(f"split ratio must be three non-negative parts summing to 1, got {ratio}")


def simplex_means(num_classes: int, num_features: int, separation: float = DEFAULT_SEPARATION) -> np.ndarray:
    """Class means at the vertices of a centred regular simplex.

    Every pair of means is exactly ``separation`` apart. Needs
    ``num_features >= num_classes - 1``.
    """
    if num_classes == 1:
        return np.zeros((1, num_features))
    if num_features < num_classes - 1:
        raise ValueError(f"{num_classes} classes need at least {num_classes - 1} features")
    k = num_classes
    centred = (np.eye(k) - 1.0 / k) * (separation / math.sqrt(2.0))
    u, s, _ = np.linalg.svd(centred)
    coords = u[:, :k - 1] * s[:k - 1]
    out = np.zeros((k, num_features))
    out[:, :k - 1] = coords
    return out


def make_base_dataset(num_classes: int, num_features: int, num_examples: int, seed: int,
                      separation: float = DEFAULT_SEPARATION) -> DataSet:
    """Balanced Gaussian blobs: class c examples ~ N(mu_c, I)."""
    if min(num_classes, num_features, num_examples) < 1:
        raise ValueError("counts must be >= 1")
    rng = derive_rng(seed, "base-dataset")
    labels = rng.permutation(np.arange(num_examples) % num_classes)
    means = simplex_means(num_classes, num_features, separation)
    x = means[labels] + rng.standard_normal((num_examples, num_features))
    return DataSet(x, labels, num_classes)


def dirichlet_partition(base: DataSet, spec: PartitionSpec) -> list[DataSet]:
    """Split ``base`` across ``spec.n`` clients with Dir(alpha) class proportions.

    Every example goes to exactly one client. Draws leaving a client with
    fewer than ``min_per_client`` examples are rejected and redrawn.
    """
    if len(base) < spec.n * spec.min_per_client:
        raise PartitionError(f"{len(base)} examples cannot give {spec.n} clients "
                             f"{spec.min_per_client} each")
    rng = derive_rng(spec.seed, "dirichlet")
    by_class = [np.flatnonzero(base.labels == c) for c in range(base.num_classes)]
    for _ in range(spec.max_retries):
        parts: list[list[np.ndarray]] = [[] for _ in range(spec.n)]
        ok = True
        for idx in by_class:
            if idx.size == 0:
                continue
            idx = rng.permutation(idx)
            g = rng.gamma(spec.alpha, size=spec.n)
            total = g.sum()
            if not total > 0:
                ok = False
                break
            cuts = np.round(np.cumsum(g / total) * idx.size).astype(np.int64)
            cuts[-1] = idx.size
            for i, chunk in enumerate(np.split(idx, cuts[:-1])):
                parts[i].append(chunk)
        if not ok:
            continue
        members = [np.sort(np.concatenate(p)) if p else np.zeros(0, np.int64) for p in parts]
        if min(m.size for m in members) >= spec.min_per_client:
            return [base.subset(m) for m in members]
    raise PartitionError(f"no partition with >= {spec.min_per_client} examples per client "
                         f"after {spec.max_retries} draws (alpha={spec.alpha}, n={spec.n})")


def split_counts(n: int, ratio: Sequence[float]) -> tuple[int, int, int]:
    if n < 2:
        raise ValueError(f"a client needs at least 2 examples to split, got {n}")
    n_valid = max(1, int(round(ratio[1] * n)))
    n_test = max(1, int(round(ratio[2] * n))) if ratio[2] > 0 and n >= 3 else 0
    n_train = n - n_valid - n_test
    if n_train < 1:
        n_train, n_valid = 1, n - 1 - n_test
    return n_train, n_valid, n_test


def stratified_split(data: DataSet, ratio: Sequence[float],
                     rng: np.random.Generator) -> tuple[DataSet, DataSet, DataSet]:
    """Split into train/valid/test with each label spread proportionally.

    Examples are shuffled, grouped by label, then dealt to whichever split is
    furthest behind its target count, which interleaves the splits through
    every label group.
    """
    _check_ratio(ratio)
    n = len(data)
    counts = split_counts(n, ratio)
    order = rng.permutation(n)
    order = order[np.argsort(data.labels[order], kind="stable")]
    taken = [0, 0, 0]
    buckets: list[list[int]] = [[], [], []]
    for j, ex in enumerate(order):
        deficits = [counts[s] * (j + 1) / n - taken[s] if taken[s] < counts[s] else -math.inf
                    for s in range(3)]
        s = int(np.argmax(deficits))
        taken[s] += 1
        buckets[s].append(int(ex))
    return tuple(data.subset(np.sort(np.array(b, dtype=np.int64))) for b in buckets)


def bundle_clients(parts: Sequence[DataSet], ratio: Sequence[float], seed: int) -> Federation:
    clients = []
    for i, data in enumerate(parts):
        train, valid, test = stratified_split(data, ratio, derive_rng(seed, "split", i))
        clients.append(ClientBundle(i, train, valid, test))
    return Federation(tuple(clients))


def make_dirichlet_federation(num_classes: int, num_features: int, num_examples: int,
                              spec: PartitionSpec, split_ratio: Sequence[float] = DEFAULT_SPLIT,
                              separation: float = DEFAULT_SEPARATION) -> Federation:
    base = make_base_dataset(num_classes, num_features, num_examples, spec.seed, separation)
    return bundle_clients(dirichlet_partition(base, spec), split_ratio, spec.seed)


def make_cluster_federation(spec: ClusterSpec) -> tuple[Federation, list[int]]:
    """Per-client blob draws scaled by their cluster's feature scale.

    Returns the federation and the cluster id of every client.
    """
    parts, cluster_of = [], []
    for k in range(spec.num_clusters):
        for _ in range(spec.clients_per_cluster):
            i = len(parts)
            data = make_base_dataset(spec.num_classes, spec.num_features, spec.examples_per_client,
                                     derive_int(spec.seed, "cluster-client", i), spec.separation)
            parts.append(data.scaled(spec.feature_scale[k]))
            cluster_of.append(k)
    return bundle_clients(parts, spec.split_ratio, spec.seed), cluster_of


# --- CSV ---------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def export_federation_csv(fed: Federation, path: str | Path) -> None:
    """One file, one row per example, with ``client`` and ``split`` columns."""
    f = fed.num_features
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["client", "split", "label", *[f"x{j}" for j in range(f)]])
        for client in fed:
            for split in SPLITS:
                data = client.split(split)
                for row, label in zip(data.features, data.labels):
                    writer.writerow([client.id, split, int(label), *map(_fmt, row)])


def write_dataset_csv(data: DataSet, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label", *[f"x{j}" for j in range(data.num_features)]])
        for row, label in zip(data.features, data.labels):
            writer.writerow([int(label), *map(_fmt, row)])


def _read_rows(path: str | Path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise CsvFormatError(f"{path}: missing header row") from None
        rows = [(reader.line_num, row) for row in reader if row]
    if "label" not in header:
        raise CsvFormatError(f"{path}: header has no 'label' column")
    return header, rows


def _parse_rows(path, header, rows, skip=()):
    label_col = header.index("label")
    feat_cols = [j for j, h in enumerate(header) if h not in ("label", *skip)]
    x, y = [], []
    for line, row in rows:
        if len(row) != len(header):
            raise CsvFormatError(f"{path}:{line}: expected {len(header)} fields, got {len(row)}")
        try:
            y.append(int(row[label_col]))
            x.append([float(row[j]) for j in feat_cols])
        except ValueError as exc:
            raise CsvFormatError(f"{path}:{line}: {exc}") from None
        if y[-1] < 0:
            raise CsvFormatError(f"{path}:{line}: negative label {y[-1]}")
    return np.array(x, dtype=np.float64).reshape(len(y), len(feat_cols)), np.array(y, dtype=np.int64)


def read_dataset_csv(path: str | Path, num_classes: int | None = None) -> DataSet:
    header, rows = _read_rows(path)
    x, y = _parse_rows(path, header, rows)
    k = num_classes if num_classes is not None else (int(y.max()) + 1 if y.size else 1)
    return DataSet(x, y, k)


def load_csv_federation(path: str | Path, n: int, layout: str = "round_robin",
                        split_ratio: Sequence[float] = DEFAULT_SPLIT, seed: int = 0,
                        num_classes: int | None = None) -> Federation:
    """Build a federation from one CSV file.

    ``layout`` is ``"round_robin"`` (row r goes to client r mod n) or
    ``"column"`` (the ``client`` column names the owner). An optional
    ``split`` column fixes train/valid/test membership; otherwise each
    client is split by ``split_ratio``.
    """
    header, rows = _read_rows(path)
    if not rows:
        raise CsvFormatError(f"{path}: empty dataset")
    if layout not in ("round_robin", "column"):
        raise ValueError(f"unknown layout {layout!r}")
    if layout == "column" and "client" not in header:
        raise CsvFormatError(f"{path}: layout 'column' needs a 'client' column")
    has_split = "split" in header
    meta = [c for c in ("client", "split") if c in header]
    x, y = _parse_rows(path, header, rows, skip=meta)
    k = num_classes if num_classes is not None else int(y.max()) + 1

    owner = np.arange(len(rows)) % n
    if layout == "column":
        col = header.index("client")
        try:
            owner = np.array([int(row[col]) for _, row in rows])
        except ValueError as exc:
            raise CsvFormatError(f"{path}: bad client id: {exc}") from None
        if owner.min() < 0 or owner.max() >= n:
            raise CsvFormatError(f"{path}: client ids must lie in [0, {n})")
    split_of = None
    if has_split:
        col = header.index("split")
        split_of = np.array([row[col].strip() for _, row in rows])
        bad = [line for (line, _), s in zip(rows, split_of) if s not in SPLITS]
        if bad:
            raise CsvFormatError(f"{path}:{bad[0]}: split must be one of {SPLITS}")

    clients = []
    for i in range(n):
        mine = np.flatnonzero(owner == i)
        if mine.size == 0:
            raise CsvFormatError(f"{path}: client {i} has no rows")
        data = DataSet(x[mine], y[mine], k)
        if split_of is None:
            parts = stratified_split(data, split_ratio, derive_rng(seed, "split", i))
        else:
            parts = tuple(data.subset(np.flatnonzero(split_of[mine] == s)) for s in SPLITS)
        clients.append(ClientBundle(i, *parts))
    return Federation(tuple(clients))


def write_federation_dir(fed: Federation, directory: str | Path, extra: dict | None = None) -> list[Path]:
    """Write ``client_XXX/{train,valid,test}.csv`` plus ``federation.json``."""
    directory = Path(directory)
    written = []
    for client in fed:
        cdir = directory / f"client_{client.id:03d}"
        cdir.mkdir(parents=True, exist_ok=True)
        for split in SPLITS:
            p = cdir / f"{split}.csv"
            write_dataset_csv(client.split(split), p)
            written.append(p)
    meta = {"num_clients": len(fed), "num_classes": fed.num_classes,
            "num_features": fed.num_features, **(extra or {})}
    p = directory / "federation.json"
    p.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    written.append(p)
    return written


def read_federation_dir(directory: str | Path) -> tuple[Federation, dict]:
    directory = Path(directory)
    meta_path = directory / "federation.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"federation not found: {meta_path}")
    meta = json.loads(meta_path.read_text())
    k = int(meta["num_classes"])
    clients = []
    for i in range(int(meta["num_clients"])):
        cdir = directory / f"client_{i:03d}"
        parts = [read_dataset_csv(cdir / f"{s}.csv", k) for s in SPLITS]
        for s, p in zip(SPLITS, parts):
            if p.features.shape[1] != meta["num_features"] and len(p):
                raise CsvFormatError(f"{cdir / s}.csv: wrong feature count")
        clients.append(ClientBundle(i, *parts))
    return Federation(tuple(clients)), meta
