"""In-batch SID overlap regulation.

Pairs of batch rows whose SIDs agree on at least one position are collected,
then each pair gets

* a relaxation gate: 1 when the rows are already similar enough in latent
  space for their overlap depth (depth-indexed thresholds),
* a load scale: how many collected pairs share the same layer-wise overlap
  pattern, mapped through a bounded power curve,
* a cosine-distance hinge whose margin grows with overlap depth.

The collision loss is ``sum(scale * (1 - gate) * hinge)``. Gates and scales
are constants of the step: gradients flow only through the hinge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, NumericError


@dataclass
class RegulationConfig:
    eta: list[float] = field(default_factory=lambda: [0.18, 0.24, 0.30])
    f_max: float = 2.0
    d_max: int = 8
    alpha: float = 1.0
    m_base: float = 1.0
    exclude_positive_pairs: bool = True

    def __post_init__(self):
        self.eta = [float(e) for e in self.eta]
        if any(b < a for a, b in zip(self.eta, self.eta[1:])):
            raise ConfigError(f"eta must be nondecreasing, got {self.eta}")
        if self.f_max < 1:
            raise ConfigError("f_max must be >= 1")
        if self.d_max < 1:
            raise ConfigError("d_max must be a positive count")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if not 0 < self.m_base <= 1:
            raise ConfigError("m_base must lie in (0, 1]")


@dataclass
class OverlapRecord:
    i: int
    j: int
    depth: int
    signature: tuple[int, ...]
    load: int = 0
    scale: float = 1.0
    similarity: float = 0.0
    gate: int = 0
    margin: float = 0.0
    penalty: float = 0.0


# -- scalar primitives -------------------------------------------------------

def _check_same_length(s_i, s_j):
    if len(s_i) != len(s_j):
        raise DimensionError(f"SID lengths differ: {len(s_i)} vs {len(s_j)}")


def overlap_depth(s_i, s_j) -> int:
    _check_same_length(s_i, s_j)
    return sum(int(a == b) for a, b in zip(s_i, s_j))


def collision_signature(s_i, s_j) -> tuple[int, ...]:
    _check_same_length(s_i, s_j)
    return tuple(int(a == b) for a, b in zip(s_i, s_j))


def semantic_similarity(z_i, z_j) -> float:
    z_i, z_j = np.asarray(z_i, dtype=np.float64), np.asarray(z_j, dtype=np.float64)
    ni, nj = np.linalg.norm(z_i), np.linalg.norm(z_j)
    if ni == 0 or nj == 0:
        raise NumericError("cosine similarity of a zero-norm vector")
    return float(np.dot(z_i, z_j) / (ni * nj))


def relaxation_gate(similarity: float, depth: int, eta) -> int:
    if not 1 <= depth <= len(eta):
        raise ValueError(f"depth {depth} outside 1..{len(eta)}")
    return int(similarity >= eta[depth - 1])


def load_scale(load, f_max: float, d_max: int, alpha: float):
    """``1 + (f_max - 1) * (min(load, d_max) / d_max) ** alpha``; works on arrays."""
    frac = np.minimum(np.asarray(load, dtype=np.float64), d_max) / d_max
    out = 1.0 + (f_max - 1.0) * frac ** alpha
    return float(out) if np.ndim(out) == 0 else out


def margin(depth, m_base: float, n_layers: int):
    """Hinge margin ``m_base * depth / L``; works on arrays."""
    depth_arr = np.asarray(depth)
    if np.any(depth_arr < 1) or np.any(depth_arr > n_layers):
        raise ValueError(f"depth outside 1..{n_layers}")
    out = m_base * (depth_arr / n_layers)
    return float(out) if np.ndim(out) == 0 else out


def collision_loads(records: list[OverlapRecord]) -> list[OverlapRecord]:
    counts: dict[tuple[int, ...], int] = {}
    for r in records:
        counts[r.signature] = counts.get(r.signature, 0) + 1
    for r in records:
        r.load = counts[r.signature]
    return records


# -- batched path used in training --------------------------------------------

@dataclass
class OverlapSet:
    """All candidate pairs of one batch, as parallel arrays."""

    i: np.ndarray
    j: np.ndarray
    depth: np.ndarray
    signature: np.ndarray   # (P, L) int8
    load: np.ndarray
    scale: np.ndarray
    similarity: np.ndarray
    gate: np.ndarray
    margin: np.ndarray

    def __len__(self) -> int:
        return len(self.i)

    def records(self, penalties: np.ndarray | None = None) -> list[OverlapRecord]:
        out = []
        for p in range(len(self)):
            out.append(OverlapRecord(
                int(self.i[p]), int(self.j[p]), int(self.depth[p]),
                tuple(int(b) for b in self.signature[p]), int(self.load[p]),
                float(self.scale[p]), float(self.similarity[p]), int(self.gate[p]),
                float(self.margin[p]),
                0.0 if penalties is None else float(penalties[p])))
        return out


def pair_signatures(indices: np.ndarray, positives=None, exclude_positive_pairs: bool = True):
    """Unordered pairs ``i < j`` with nonzero overlap and their signature bits."""
    indices = np.asarray(indices)
    n = indices.shape[0]
    eq = indices[:, None, :] == indices[None, :, :]
    depth = eq.sum(axis=2)
    keep = np.triu(depth > 0, k=1)
    if exclude_positive_pairs and positives is not None:
        for a, b in positives:
            keep[min(a, b), max(a, b)] = False
    ii, jj = np.nonzero(keep)
    return ii, jj, depth[ii, jj], eq[ii, jj].astype(np.int8), n


def collect_overlap_pairs(indices: np.ndarray, positives=None,
                          config: RegulationConfig | None = None) -> list[OverlapRecord]:
    """Record stubs (depth and signature filled) for every overlapping pair."""
    exclude = True if config is None else config.exclude_positive_pairs
    ii, jj, depth, sig, _ = pair_signatures(indices, positives, exclude)
    return [OverlapRecord(int(a), int(b), int(d), tuple(int(x) for x in s))
            for a, b, d, s in zip(ii, jj, depth, sig)]


def _unit_rows(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0):
        raise NumericError("zero-norm latent in collision term")
    return z / norms[:, None], norms


def build_overlap_set(indices: np.ndarray, z: np.ndarray, config: RegulationConfig,
                      positives=None, enable_sear: bool = True,
                      enable_las: bool = True) -> OverlapSet:
    """Collect pairs and fill loads, scales, similarities, gates and margins.

    With ``enable_sear`` off every gate is 0; with ``enable_las`` off every
    scale is 1.
    """
    n_layers = indices.shape[1]
    if len(config.eta) != n_layers:
        raise ConfigError(f"eta has {len(config.eta)} entries but SIDs have {n_layers} layers")
    ii, jj, depth, sig, _ = pair_signatures(indices, positives, config.exclude_positive_pairs)
    codes = sig.astype(np.int64) @ (1 << np.arange(n_layers, dtype=np.int64))
    _, inverse, counts = np.unique(codes, return_inverse=True, return_counts=True)
    load = counts[inverse] if len(codes) else np.zeros(0, dtype=np.int64)
    if enable_las:
        scale = load_scale(load, config.f_max, config.d_max, config.alpha)
        scale = np.atleast_1d(scale) if len(codes) else np.zeros(0)
    else:
        scale = np.ones(len(codes))
    if len(codes):
        u, _ = _unit_rows(z)
        sim = np.einsum("pd,pd->p", u[ii], u[jj])
    else:
        sim = np.zeros(0)
    if enable_sear:
        eta = np.asarray(config.eta)
        gate = (sim >= eta[depth - 1]).astype(np.int64) if len(codes) else np.zeros(0, np.int64)
    else:
        gate = np.zeros(len(codes), dtype=np.int64)
    m = config.m_base * (depth / n_layers)
    return OverlapSet(ii, jj, depth, sig, load, scale, sim, gate, np.asarray(m, dtype=np.float64))


def adaptive_collision_loss(z: np.ndarray, pairs: OverlapSet,
                            gates: np.ndarray | None = None) -> tuple[float, np.ndarray]:
    """Collision loss and its gradient w.r.t. ``z``.

    Similarities are recomputed from ``z``; gates, scales and margins come
    from ``pairs``. ``gates`` overrides the stored gates.
    """
    z = np.asarray(z, dtype=np.float64)
    grad = np.zeros_like(z)
    if len(pairs) == 0:
        return 0.0, grad
    g = pairs.gate if gates is None else np.asarray(gates)
    u, norms = _unit_rows(z)
    ui, uj = u[pairs.i], u[pairs.j]
    cos = np.einsum("pd,pd->p", ui, uj)
    hinge = np.maximum(0.0, pairs.margin - (1.0 - cos))
    weight = pairs.scale * (1.0 - g)
    terms = weight * hinge
    loss = float(np.sum(terms))
    # d hinge / d cos = 1 where the hinge is open
    w = np.where(hinge > 0, weight, 0.0)
    gi = w[:, None] * (uj - cos[:, None] * ui) / norms[pairs.i, None]
    gj = w[:, None] * (ui - cos[:, None] * uj) / norms[pairs.j, None]
    np.add.at(grad, pairs.i, gi)
    np.add.at(grad, pairs.j, gj)
    return loss, grad


def collision_penalties(z: np.ndarray, pairs: OverlapSet) -> np.ndarray:
    """Per-pair base hinge ``max(0, m - d_cos)`` (before gate and scale)."""
    if len(pairs) == 0:
        return np.zeros(0)
    u, _ = _unit_rows(np.asarray(z, dtype=np.float64))
    cos = np.einsum("pd,pd->p", u[pairs.i], u[pairs.j])
    return np.maximum(0.0, pairs.margin - (1.0 - cos))
