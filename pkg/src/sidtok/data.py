"""Feature and pair files, synthetic clustered data, and batch iteration.

Feature file: one JSON header line ``{"count", "dim", "ids"}`` terminated by
``\\n``, then ``count * dim`` little-endian float32 values, row-major.

Pair file: one ``trigger_id<TAB>target_id`` per line.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, DataError
from .numeric import f32_grid, make_rng

FEATURE_FORMAT = "sidtok-features/1"


@dataclass
class ItemFeatureTable:
    ids: list[str]
    rows: np.ndarray
    labels: np.ndarray | None = None  # cluster labels, synthetic data only

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2 or self.rows.shape[0] != len(self.ids):
            raise DataError(f"feature rows {self.rows.shape} do not match {len(self.ids)} ids")
        if not np.all(np.isfinite(self.rows)):
            raise DataError("feature table contains non-finite values")
        if len(set(self.ids)) != len(self.ids):
            seen, dup = set(), None
            for i in self.ids:
                if i in seen:
                    dup = i
                    break
                seen.add(i)
            raise DataError(f"duplicate item id {dup!r}")
        self._pos = {item: k for k, item in enumerate(self.ids)}

    @property
    def count(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def position(self, item_id: str) -> int:
        try:
            return self._pos[item_id]
        except KeyError:
            raise DataError(f"unknown item id {item_id!r}") from None


@dataclass
class PairList:
    pairs: list[tuple[str, str]]
    index: np.ndarray = field(repr=False)  # (P, 2) row positions in the feature table

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass
class PairBatch:
    """``triggers[b]`` and ``targets[b]`` are table rows of the ``b``-th pair.

    In the stacked batch, trigger ``b`` is row ``b`` and its target is row ``B + b``.
    """

    triggers: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return len(self.triggers)

    @property
    def item_rows(self) -> np.ndarray:
        return np.concatenate([self.triggers, self.targets])

    @property
    def positives(self) -> list[tuple[int, int]]:
        b = len(self)
        return [(k, b + k) for k in range(b)]


@dataclass
class SynthConfig:
    n_items: int = 2000
    n_clusters: int = 20
    dim: int = 32
    cluster_spread: float = 0.1
    pair_within_cluster_prob: float = 0.8
    pairs_per_item: int = 2
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.n_clusters <= self.n_items:
            raise ConfigError("need 1 <= n_clusters <= n_items")
        if self.cluster_spread <= 0:
            raise ConfigError("cluster_spread must be > 0")
        if not 0 <= self.pair_within_cluster_prob <= 1:
            raise ConfigError("pair_within_cluster_prob must lie in [0, 1]")
        if self.dim < 1 or self.pairs_per_item < 0:
            raise ConfigError("dim must be >= 1 and pairs_per_item >= 0")


def save_features(table: ItemFeatureTable, path) -> None:
    header = {"format": FEATURE_FORMAT, "count": table.count, "dim": table.dim,
              "ids": list(table.ids)}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        fh.write(table.rows.astype("<f4").tobytes())


def load_features(path) -> ItemFeatureTable:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise DataError(f"feature file not found: {path}") from None
    nl = blob.find(b"\n")
    if nl < 0:
        raise DataError(f"{path}: missing header line")
    try:
        header = json.loads(blob[:nl])
        count, dim, ids = int(header["count"]), int(header["dim"]), header["ids"]
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: malformed header ({exc})") from None
    if len(ids) != count:
        raise DataError(f"{path}: header declares {count} items but lists {len(ids)} ids")
    body = blob[nl + 1:]
    expected = count * dim * 4
    if len(body) != expected:
        rows = len(body) // (4 * dim) if dim else 0
        raise DataError(f"{path}: declared {count} rows of dim {dim} but found {rows} "
                        f"({len(body)} bytes, expected {expected})")
    rows = np.frombuffer(body, dtype="<f4").reshape(count, dim).astype(np.float64)
    return ItemFeatureTable([str(i) for i in ids], rows)


def save_pairs(pairs: PairList, path) -> None:
    with open(path, "w") as fh:
        for a, b in pairs.pairs:
            fh.write(f"{a}\t{b}\n")


def make_pair_list(pairs, table: ItemFeatureTable) -> PairList:
    out, index = [], []
    for a, b in pairs:
        if a == b:
            raise DataError(f"self-pair ({a!r}, {b!r})")
        index.append((table.position(a), table.position(b)))
        out.append((a, b))
    return PairList(out, np.asarray(index, dtype=np.int64).reshape(-1, 2))


def load_pairs(path, table: ItemFeatureTable) -> PairList:
    pairs = []
    try:
        lines = Path(path).read_text().splitlines()
    except FileNotFoundError:
        raise DataError(f"pair file not found: {path}") from None
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: expected 'trigger<TAB>target'")
        pairs.append((parts[0].strip(), parts[1].strip()))
    return make_pair_list(pairs, table)


def gen_synthetic(config: SynthConfig) -> tuple[ItemFeatureTable, PairList]:
    """Gaussian blobs around random unit-norm centers, plus co-engagement-style pairs.

    Cluster labels are kept on the returned table as ``labels``.
    """
    rng = make_rng(config.seed)
    centers = rng.standard_normal((config.n_clusters, config.dim))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    labels = rng.permutation(np.arange(config.n_items) % config.n_clusters)
    rows = centers[labels] + config.cluster_spread * rng.standard_normal((config.n_items, config.dim))
    ids = [f"item{i:06d}" for i in range(config.n_items)]
    table = ItemFeatureTable(ids, f32_grid(rows), labels=labels)

    members = [np.flatnonzero(labels == c) for c in range(config.n_clusters)]
    outsiders = [np.flatnonzero(labels != c) for c in range(config.n_clusters)]
    pairs = []
    for i in range(config.n_items if config.n_items > 1 else 0):
        own, others = members[labels[i]], outsiders[labels[i]]
        for _ in range(config.pairs_per_item):
            within = rng.random() < config.pair_within_cluster_prob
            if (within and own.size > 1) or others.size == 0:
                j = i
                while j == i:
                    j = int(own[rng.integers(own.size)])
            else:
                j = int(others[rng.integers(others.size)])
            pairs.append((ids[i], ids[j]))
    return table, make_pair_list(pairs, table)


def batch_iter(pairs: PairList, batch_size: int, seed: int, epoch: int) -> Iterator[PairBatch]:
    """Seeded shuffle of the pair list for ``epoch``; a final batch of < 2 pairs is dropped."""
    if batch_size < 2:
        raise ConfigError("batch_size must be >= 2")
    order = make_rng(seed, 1, epoch).permutation(len(pairs))
    for start in range(0, len(order), batch_size):
        chunk = order[start:start + batch_size]
        if len(chunk) < 2:
            break
        sel = pairs.index[chunk]
        yield PairBatch(sel[:, 0].copy(), sel[:, 1].copy())
