"""Encoder, residual quantizer and decoder.

The quantizer is a straight-through lookup: the forward value is the sum of
the chosen codewords, and the gradient w.r.t. the quantized embedding is
handed back to the encoder output unchanged. Codewords are only trained by
the residual-quantization loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, InsufficientDataError, NumericError
from .numeric import Mlp, Parameter, Tape, check_finite, f32_grid


@dataclass
class TokenizerConfig:
    d_in: int = 32
    d: int = 16
    L: int = 3
    K: int = 16
    beta_commit: float = 0.25
    # reinitialize a code unused for this many steps; 0 disables
    dead_code_steps: int = 0
    kmeans_iters: int = 10

    def __post_init__(self):
        if self.L < 1 or self.K < 2 or self.d < 1 or self.d_in < 1:
            raise ConfigError(f"invalid tokenizer shape: d_in={self.d_in} d={self.d} "
                              f"L={self.L} K={self.K}")
        if self.beta_commit < 0:
            raise ConfigError("beta_commit must be >= 0")
        if self.dead_code_steps < 0:
            raise ConfigError("dead_code_steps must be >= 0")


@dataclass
class SemanticId:
    indices: tuple[int, ...]
    quantized: np.ndarray
    residuals: np.ndarray  # (L+1, d): r^(0) .. r^(L)


@dataclass
class QuantizedBatch:
    """Quantizer output for a batch of B latents.

    ``codewords[l]`` holds the codeword picked at layer ``l`` for every row and
    ``residuals[l]`` the residual *entering* layer ``l`` (``residuals[0] = z``).
    """

    indices: np.ndarray     # (B, L) int64
    quantized: np.ndarray   # (B, d)
    residuals: np.ndarray   # (L+1, B, d)
    codewords: np.ndarray   # (L, B, d)

    def __len__(self) -> int:
        return self.indices.shape[0]

    def __getitem__(self, i: int) -> SemanticId:
        return SemanticId(tuple(int(k) for k in self.indices[i]),
                          self.quantized[i], self.residuals[:, i])


class TokenizerModel:
    """Parameters of the tokenizer: encoder, decoder and ``L`` codebooks."""

    def __init__(self, config: TokenizerConfig, rng: np.random.Generator):
        self.config = config
        d = config.d
        self.encoder = Mlp("encoder", config.d_in, 2 * d, d, rng)
        self.decoder = Mlp("decoder", d, 2 * d, config.d_in, rng)
        self.codebooks = [Parameter(f"codebook.{l}", np.zeros((config.K, d)))
                          for l in range(config.L)]
        self.codebooks_ready = False

    def parameters(self) -> list[Parameter]:
        return self.encoder.parameters() + self.decoder.parameters() + self.codebooks

    def codebook_arrays(self) -> list[np.ndarray]:
        return [c.value for c in self.codebooks]

    def set_codebooks(self, arrays) -> None:
        for p, a in zip(self.codebooks, arrays, strict=True):
            a = np.asarray(a, dtype=np.float64)
            if a.shape != p.shape:
                raise DimensionError(f"{p.name}: expected {p.shape}, got {a.shape}")
            p.value = f32_grid(a)
        self.codebooks_ready = True


def encode(features: np.ndarray, model: TokenizerModel, tape: Tape | None = None) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.config.d_in:
        raise DimensionError(f"features have shape {features.shape}, "
                             f"expected (B, {model.config.d_in})")
    return model.encoder(features, tape)


def decode(quantized: np.ndarray, model: TokenizerModel, tape: Tape | None = None) -> np.ndarray:
    quantized = np.asarray(quantized, dtype=np.float64)
    if quantized.ndim != 2 or quantized.shape[1] != model.config.d:
        raise DimensionError(f"quantized has shape {quantized.shape}, "
                             f"expected (B, {model.config.d})")
    return model.decoder(quantized, tape)


def nearest_codeword(residual: np.ndarray, codebook: np.ndarray) -> np.ndarray:
    """Index of the closest codeword per row (squared Euclidean; lowest index on ties)."""
    diff = residual[:, None, :] - codebook[None, :, :]
    return np.argmin(np.einsum("bkd,bkd->bk", diff, diff), axis=1)


def quantize(z: np.ndarray, codebooks) -> QuantizedBatch:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2:
        raise DimensionError(f"latents must be 2-D, got {z.shape}")
    books = [np.asarray(c, dtype=np.float64) for c in codebooks]
    if not books or any(c.shape[0] == 0 for c in books):
        raise ConfigError("empty codebook")
    for c in books:
        if c.ndim != 2 or c.shape[1] != z.shape[1]:
            raise DimensionError(f"codebook shape {c.shape} does not match latent width {z.shape[1]}")
    n_layers = len(books)
    residuals = np.empty((n_layers + 1,) + z.shape)
    codewords = np.empty((n_layers,) + z.shape)
    indices = np.empty((z.shape[0], n_layers), dtype=np.int64)
    residuals[0] = z
    r = z
    for l, c in enumerate(books):
        if not np.all(np.isfinite(r)):
            raise NumericError(f"non-finite residual entering layer {l}")
        idx = nearest_codeword(r, c)
        indices[:, l] = idx
        codewords[l] = c[idx]
        r = r - codewords[l]
        residuals[l + 1] = r
    return QuantizedBatch(indices, codewords.sum(axis=0), residuals, codewords)


def reconstruction_loss(x: np.ndarray, x_rec: np.ndarray) -> float:
    x, x_rec = np.asarray(x, dtype=np.float64), np.asarray(x_rec, dtype=np.float64)
    if x.shape != x_rec.shape:
        raise DimensionError(f"shape mismatch {x.shape} vs {x_rec.shape}")
    return float(np.mean((x - x_rec) ** 2))


def reconstruction_grad(x: np.ndarray, x_rec: np.ndarray) -> np.ndarray:
    """d(MSE)/d(x_rec)."""
    return 2.0 * (x_rec - x) / x.size


def _commit_residuals(qb: QuantizedBatch, z: np.ndarray | None) -> np.ndarray:
    # residual entering each layer as a function of z, earlier codewords held fixed
    if z is None:
        return qb.residuals[:-1]
    prefix = np.concatenate([np.zeros((1,) + z.shape), np.cumsum(qb.codewords[:-1], axis=0)])
    return z[None] - prefix


def rq_loss(qb: QuantizedBatch, codebooks, beta_commit: float,
            z: np.ndarray | None = None) -> float:
    """Residual-quantization objective, summed over layers and averaged over rows.

    Codeword term ``|sg(r) - c|^2`` reads the *current* ``codebooks`` at the
    recorded indices; commitment term ``beta |r - sg(q)|^2`` is evaluated at
    ``z`` if given (otherwise at the recorded residuals). This makes the value
    a smooth surrogate whose derivative is exactly :func:`rq_loss_grads`.
    """
    n = len(qb)
    total = 0.0
    r_commit = _commit_residuals(qb, z)
    for l, c in enumerate(codebooks):
        q_now = np.asarray(c, dtype=np.float64)[qb.indices[:, l]]
        total += np.sum((qb.residuals[l] - q_now) ** 2)
        total += beta_commit * np.sum((r_commit[l] - qb.codewords[l]) ** 2)
    return float(total / n)


def rq_loss_grads(qb: QuantizedBatch, codebooks, beta_commit: float,
                  z: np.ndarray | None = None) -> tuple[np.ndarray, list[np.ndarray]]:
    """Gradients of :func:`rq_loss` w.r.t. the latents and each codebook."""
    n = len(qb)
    r_commit = _commit_residuals(qb, z)
    grad_z = np.zeros(qb.quantized.shape)
    grad_books = []
    for l, c in enumerate(codebooks):
        c = np.asarray(c, dtype=np.float64)
        idx = qb.indices[:, l]
        grad_z += (2.0 * beta_commit / n) * (r_commit[l] - qb.codewords[l])
        g_rows = (-2.0 / n) * (qb.residuals[l] - c[idx])
        g = np.zeros_like(c)
        np.add.at(g, idx, g_rows)
        grad_books.append(g)
    return grad_z, grad_books


def _kmeans(points: np.ndarray, k: int, iters: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, points.shape[1]))
    chosen: list[np.ndarray] = []
    for i in rng.permutation(n):
        if len(chosen) == k:
            break
        if not any(np.array_equal(points[i], c) for c in chosen):
            chosen.append(points[i])
    while len(chosen) < k:
        chosen.append(points[rng.integers(n)])
    centers[:] = chosen

    for _ in range(iters):
        assign = nearest_codeword(points, centers)
        counts = np.bincount(assign, minlength=k)
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, points)
        nonempty = counts > 0
        centers[nonempty] = sums[nonempty] / counts[nonempty, None]
        empty = np.flatnonzero(~nonempty)
        if empty.size:
            d2 = np.min(((points[:, None, :] - centers[None, nonempty, :]) ** 2).sum(-1), axis=1)
            for e in empty:
                # prefer points not already sitting on a center
                pool = np.flatnonzero(d2 > 0)
                pick = points[rng.choice(pool) if pool.size else rng.integers(n)]
                centers[e] = pick
                d2 = np.minimum(d2, ((points - pick) ** 2).sum(-1))
    return centers


def init_codebooks(latents: np.ndarray, config: TokenizerConfig,
                   rng: np.random.Generator) -> list[np.ndarray]:
    """Layer-wise k-means: layer 1 on the latents, deeper layers on the residuals."""
    latents = np.asarray(latents, dtype=np.float64)
    if latents.ndim != 2 or latents.shape[1] != config.d:
        raise DimensionError(f"latents have shape {latents.shape}, expected (N, {config.d})")
    if latents.shape[0] < config.K:
        raise InsufficientDataError(
            f"need at least K={config.K} latents to initialize codebooks, got {latents.shape[0]}")
    check_finite(latents, "codebook init latents")
    books = []
    r = latents
    for _ in range(config.L):
        c = f32_grid(_kmeans(r, config.K, config.kmeans_iters, rng))
        books.append(c)
        r = r - c[nearest_codeword(r, c)]
    return books
