"""Codebook-usage statistics over a table of SIDs.

All entropies are in nats with plug-in (unsmoothed) estimates.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DataError

LANDSCAPE_COLUMNS = ["name", "sid_entropy", "avg_ppl", "min_ppl", "mean_top1",
                     "inv_norm_top1", "norm_min_ppl"]


@dataclass
class DiagnosticsReport:
    sid_entropy: float
    layer_perplexities: list[float]
    avg_perplexity: float
    min_perplexity: float
    mean_top1_load: float
    corpus_size: int

    def to_dict(self) -> dict:
        return asdict(self)


def _as_table(sid_table) -> np.ndarray:
    table = np.asarray(sid_table)
    if table.ndim != 2 or table.shape[0] == 0:
        raise DataError("SID table is empty")
    return table


def _entropy(counts) -> float:
    p = np.asarray(counts, dtype=np.float64)
    p = p[p > 0] / p.sum()
    return float(-np.sum(p * np.log(p)))


def _layer_column(table: np.ndarray, layer: int) -> np.ndarray:
    if not 1 <= layer <= table.shape[1]:
        raise ValueError(f"layer {layer} outside 1..{table.shape[1]}")
    return table[:, layer - 1]


def sid_entropy(sid_table) -> float:
    table = _as_table(sid_table)
    return _entropy(list(Counter(map(tuple, table.tolist())).values()))


def layer_perplexity(sid_table, layer: int, K: int | None = None) -> float:
    """``exp`` of the code-usage entropy at ``layer`` (1-based)."""
    col = _layer_column(_as_table(sid_table), layer)
    if K is not None and (col.min() < 0 or col.max() >= K):
        raise DataError(f"layer {layer} has code indices outside 0..{K - 1}")
    _, counts = np.unique(col, return_counts=True)
    return float(np.exp(_entropy(counts)))


def top1_load(sid_table, layer: int) -> float:
    col = _layer_column(_as_table(sid_table), layer)
    _, counts = np.unique(col, return_counts=True)
    return float(counts.max() / col.size)


def codebook_report(sid_table, K: int | None = None) -> DiagnosticsReport:
    table = _as_table(sid_table)
    n_layers = table.shape[1]
    ppl = [layer_perplexity(table, l, K) for l in range(1, n_layers + 1)]
    loads = [top1_load(table, l) for l in range(1, n_layers + 1)]
    return DiagnosticsReport(
        sid_entropy=sid_entropy(table),
        layer_perplexities=ppl,
        avg_perplexity=float(np.mean(ppl)),
        min_perplexity=float(min(ppl)),
        mean_top1_load=float(np.mean(loads)),
        corpus_size=int(table.shape[0]),
    )


def _minmax(values: list[float]) -> list[float]:
    lo, hi = min(values), max(values)
    if hi == lo:
        return [1.0] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


def landscape_rows(reports: list[tuple[str, DiagnosticsReport]]) -> list[dict]:
    """Raw statistics plus the two min-max normalized plot axes.

    x axis is ``1 - minmax(top-1 load)``, y axis is ``minmax(min perplexity)``;
    a set with no spread (including a singleton) normalizes to 1.0.
    """
    if not reports:
        raise DataError("landscape needs at least one report")
    norm_top1 = _minmax([r.mean_top1_load for _, r in reports])
    if len({r.mean_top1_load for _, r in reports}) > 1:
        inv_top1 = [1.0 - v for v in norm_top1]
    else:
        inv_top1 = norm_top1
    norm_min = _minmax([r.min_perplexity for _, r in reports])
    rows = []
    for (name, r), x, y in zip(reports, inv_top1, norm_min):
        rows.append({"name": name, "sid_entropy": r.sid_entropy, "avg_ppl": r.avg_perplexity,
                     "min_ppl": r.min_perplexity, "mean_top1": r.mean_top1_load,
                     "inv_norm_top1": x, "norm_min_ppl": y})
    return rows


def export_landscape(reports: list[tuple[str, DiagnosticsReport]], path) -> Path:
    rows = landscape_rows(reports)
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=LANDSCAPE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return path
