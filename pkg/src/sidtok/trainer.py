"""Training objective, training loop and corpus encoding.

Per step, triggers and targets are stacked into one ``2B``-row batch, encoded,
quantized, decoded, and scored with

    total = rec + rq + lambda_col * col_ada + lambda_cf * cf

where ``col_ada`` is the gated, load-scaled collision term over overlapping
rows and ``cf`` the trigger/target InfoNCE over quantized embeddings.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .collaborative import infonce_loss
from .config import TrainConfig
from .data import ItemFeatureTable, PairBatch, PairList, batch_iter
from .errors import DimensionError, NumericError
from .numeric import Tape, adam_step, f32_grid, make_rng
from .overlap import OverlapSet, adaptive_collision_loss, build_overlap_set
from .schedule import objective_weights, progress
from .tokenizer import (QuantizedBatch, TokenizerModel, decode, encode, init_codebooks,
                        quantize, reconstruction_grad, reconstruction_loss, rq_loss,
                        rq_loss_grads)

log = logging.getLogger(__name__)


@dataclass
class LossBreakdown:
    step: int
    rec: float
    rq: float
    col_ada: float
    cf: float
    lambda_col: float
    lambda_cf: float
    total: float
    active_pairs: int   # candidate overlap pairs in the batch
    gated_pairs: int    # of which relaxed by the semantic gate
    max_scale: float    # largest load scale applied (1.0 when no pairs)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self))

    @classmethod
    def from_json(cls, line: str) -> "LossBreakdown":
        return cls(**json.loads(line))


@dataclass
class FrozenStep:
    """Everything the objective treats as a constant within one step."""

    quant: QuantizedBatch
    overlaps: OverlapSet
    ste_offset: np.ndarray  # quantized - z, added to z so gradients pass straight through


class ModelState:
    """Tokenizer parameters plus training position and RNG."""

    def __init__(self, config: TrainConfig, model: TokenizerModel,
                 rng: np.random.Generator, step: int = 0):
        self.config = config
        self.model = model
        self.rng = rng
        self.step = step
        tc = config.tokenizer
        self.last_used = np.zeros((tc.L, tc.K), dtype=np.int64)

    def parameters(self):
        return self.model.parameters()


def initialize(config: TrainConfig, table: ItemFeatureTable) -> ModelState:
    """Fresh parameters; codebooks seeded by k-means on encoder outputs."""
    if table.dim != config.tokenizer.d_in:
        raise DimensionError(f"features have dim {table.dim}, config expects "
                             f"d_in={config.tokenizer.d_in}")
    rng = make_rng(config.seed)
    model = TokenizerModel(config.tokenizer, rng)
    n = table.count
    rows = np.sort(rng.choice(n, size=min(n, config.init_sample), replace=False))
    latents = encode(table.rows[rows], model)
    model.set_codebooks(init_codebooks(latents, config.tokenizer, rng))
    return ModelState(config, model, rng)


def step_weights(t: int, config: TrainConfig) -> tuple[float, float, float]:
    tau = progress(t, config.schedule) if config.enable_par else config.static_tau
    lambda_col, lambda_cf = objective_weights(tau, config.schedule)
    return tau, lambda_col, lambda_cf


def weighted_total(rec: float, rq: float, col_ada: float, cf: float,
                   lambda_col: float, lambda_cf: float) -> float:
    return rec + rq + lambda_col * col_ada + lambda_cf * cf


def objective(model: TokenizerModel, x: np.ndarray, n_pairs: int, t: int,
              config: TrainConfig, frozen: FrozenStep | None = None,
              backward: bool = False) -> tuple[LossBreakdown, FrozenStep]:
    """Evaluate the training objective on a stacked ``2B``-row batch.

    With ``frozen`` given, quantization indices, gates, scales and every
    stop-gradient quantity are taken from it, so the returned value is a
    smooth function of the parameters whose gradient is exactly what
    ``backward=True`` accumulates.
    """
    tc = config.tokenizer
    enc_tape = Tape() if backward else None
    z = encode(x, model, enc_tape)
    if frozen is None:
        qb = quantize(z, model.codebook_arrays())
        positives = [(k, n_pairs + k) for k in range(n_pairs)]
        ov = build_overlap_set(qb.indices, z, config.regulation, positives,
                               config.enable_sear, config.enable_las)
        frozen = FrozenStep(qb, ov, qb.quantized - z)
    qb, ov = frozen.quant, frozen.overlaps

    z_q = z + frozen.ste_offset
    dec_tape = Tape() if backward else None
    x_rec = decode(z_q, model, dec_tape)
    rec = reconstruction_loss(x, x_rec)
    rq = rq_loss(qb, model.codebook_arrays(), tc.beta_commit, z=z)
    col, g_col = adaptive_collision_loss(z, ov)
    _, lambda_col, lambda_cf = step_weights(t, config)
    cf_out = infonce_loss(z_q[:n_pairs], z_q[n_pairs:], config.temperature, with_grad=backward)
    cf = cf_out[0] if backward else cf_out
    total = weighted_total(rec, rq, col, cf, lambda_col, lambda_cf)

    if backward:
        g_zq = dec_tape.backward(reconstruction_grad(x, x_rec))
        g_zq[:n_pairs] += lambda_cf * cf_out[1]
        g_zq[n_pairs:] += lambda_cf * cf_out[2]
        g_z_rq, g_books = rq_loss_grads(qb, model.codebook_arrays(), tc.beta_commit, z=z)
        enc_tape.backward(g_zq + g_z_rq + lambda_col * g_col)
        for p, g in zip(model.codebooks, g_books):
            p.grad += g

    breakdown = LossBreakdown(
        step=t, rec=rec, rq=rq, col_ada=col, cf=cf, lambda_col=lambda_col,
        lambda_cf=lambda_cf, total=total, active_pairs=len(ov),
        gated_pairs=int(ov.gate.sum()),
        max_scale=float(ov.scale.max()) if len(ov) else 1.0)
    return breakdown, frozen


def _refresh_dead_codes(state: ModelState, frozen: FrozenStep) -> None:
    limit = state.config.tokenizer.dead_code_steps
    t = state.step
    qb = frozen.quant
    for l, book in enumerate(state.model.codebooks):
        state.last_used[l, np.unique(qb.indices[:, l])] = t
        dead = np.flatnonzero(t - state.last_used[l] >= limit)
        for k in dead:
            row = int(state.rng.integers(len(qb)))
            book.value[k] = f32_grid(qb.residuals[l, row])
            state.last_used[l, k] = t


def train_step(state: ModelState, batch: PairBatch, table: ItemFeatureTable) -> LossBreakdown:
    """Forward, backward and one Adam update on ``batch``; advances ``state.step``."""
    t = state.step
    cfg = state.config
    x = table.rows[batch.item_rows]
    try:
        breakdown, frozen = objective(state.model, x, len(batch), t, cfg, backward=True)
        opt = cfg.optim
        adam_step(state.parameters(), opt.lr, (opt.beta1, opt.beta2), opt.eps, step=t + 1)
    except NumericError as exc:
        raise NumericError(f"step {t}: {exc}") from exc
    if cfg.tokenizer.dead_code_steps:
        _refresh_dead_codes(state, frozen)
    state.step = t + 1
    return breakdown


def batches_per_epoch(n_pairs: int, batch_size: int) -> int:
    return n_pairs // batch_size + (n_pairs % batch_size >= 2)


class _EpochCache:
    def __init__(self, pairs: PairList, config: TrainConfig):
        self.pairs, self.config = pairs, config
        self.epoch, self.batches = None, []

    def get(self, t: int) -> PairBatch:
        cfg = self.config
        per_epoch = batches_per_epoch(len(self.pairs), cfg.batch_size)
        if per_epoch == 0:
            raise DimensionError(f"need at least 2 pairs to form a batch, got {len(self.pairs)}")
        epoch, k = divmod(t, per_epoch)
        if epoch != self.epoch:
            self.epoch = epoch
            self.batches = list(batch_iter(self.pairs, cfg.batch_size, cfg.seed, epoch))
        return self.batches[k]


def train(config: TrainConfig, table: ItemFeatureTable, pairs: PairList,
          log_sink: Callable[[LossBreakdown], None] | None = None,
          state: ModelState | None = None) -> ModelState:
    """Run until ``state.step == config.total_steps``; each step's breakdown goes to ``log_sink``."""
    if state is None:
        state = initialize(config, table)
    cache = _EpochCache(pairs, config)
    while state.step < config.total_steps:
        breakdown = train_step(state, cache.get(state.step), table)
        if log_sink is not None:
            log_sink(breakdown)
        if state.step % 1000 == 0:
            log.info("step %d total=%.4f rec=%.4f col=%.4f cf=%.4f", state.step,
                     breakdown.total, breakdown.rec, breakdown.col_ada, breakdown.cf)
    return state


def encode_corpus(state: ModelState, table: ItemFeatureTable, chunk: int = 4096) -> np.ndarray:
    """SID indices (N, L) for every item; the model is not modified."""
    if table.dim != state.config.tokenizer.d_in:
        raise DimensionError(f"features have dim {table.dim}, checkpoint expects "
                             f"d_in={state.config.tokenizer.d_in}")
    books = state.model.codebook_arrays()
    out = np.empty((table.count, state.config.tokenizer.L), dtype=np.int64)
    for start in range(0, table.count, chunk):
        z = encode(table.rows[start:start + chunk], state.model)
        out[start:start + chunk] = quantize(z, books).indices
    return out
