"""Training loop: minibatch AdamW with plateau scheduling and early stop.

Validation loss drives everything.  A strictly lower value snapshots the
parameters and resets both staleness counters; the scheduler halves the
learning rate (down to a floor) after its patience is exhausted, and
training stops after the early-stop patience.
"""

import json
from dataclasses import dataclass

import numpy as np

from .._rng import derive_rng, derive_seed_sequence
from ..errors import ConfigError, DivergenceError, LengthMismatch, SchemaViolation
from .model import ModelConfig, backward, forward, init_params, masked_mse
from .optim import AdamWConfig, adamw_step, init_adamw

EVAL_CHUNK = 64


@dataclass
class TrainConfig:
    """Optimization hyperparameters for one training run."""

    lr: float = 1e-4
    batch_size: int = 16
    max_epochs: int = 100
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    min_lr: float = 1e-6
    early_stop_patience: int = 15
    seed: int = 0
    shuffle: bool = True

    def validate(self) -> None:
        if self.batch_size <= 0 or self.max_epochs <= 0:
            raise ConfigError("batch size and epoch budget must be positive")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ConfigError(f"plateau factor must be in (0, 1), got {self.plateau_factor}")
        if self.plateau_patience < 0 or self.early_stop_patience <= 0:
            raise ConfigError("patience values must be positive")
        if self.min_lr <= 0 or self.min_lr > self.lr:
            raise ConfigError("min_lr must be positive and not exceed lr")
        AdamWConfig(
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            weight_decay=self.weight_decay,
        ).validate()


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    lr: float


@dataclass
class TrainResult:
    params: dict
    history: list
    best_epoch: int
    best_val_loss: float


def evaluate_loss(params: dict, cfg: ModelConfig, x, mask, target) -> float:
    """Masked MSE over a whole set, evaluated in chunks without dropout."""
    total = 0.0
    count = 0
    n = x.shape[0]
    if n == 0:
        raise LengthMismatch("cannot evaluate an empty set")
    for lo in range(0, n, EVAL_CHUNK):
        hi = min(lo + EVAL_CHUNK, n)
        y = forward(params, cfg, x[lo:hi], mask[lo:hi], train=False)
        loss, _, cnt = masked_mse(y, target[lo:hi], mask[lo:hi])
        total += loss * max(cnt, 1)
        count += cnt
    return total / max(count, 1)


def _epoch_seed(seed: int, *path) -> int:
    return int(derive_seed_sequence(seed, *path).generate_state(1)[0])


def train_model(
    model_cfg: ModelConfig,
    train_x,
    train_mask,
    train_y,
    val_x,
    val_mask,
    val_y,
    cfg: TrainConfig,
    on_improve=None,
) -> TrainResult:
    """Train from scratch and return the best-validation parameters.

    Fits the model's input standardization buffers on the valid training
    positions before optimization.  ``on_improve(params, stats)`` fires
    on every new validation minimum, e.g. to write a checkpoint.
    """
    model_cfg.validate()
    cfg.validate()
    n = train_x.shape[0]
    if n == 0:
        raise LengthMismatch("empty training set")
    params = init_params(model_cfg, seed=_epoch_seed(cfg.seed, "init"))
    rows = np.asarray(train_x)[np.asarray(train_mask, dtype=bool)]
    if rows.shape[0]:
        dt = model_cfg.np_dtype
        params["input_mu"] = rows.mean(axis=0).astype(dt)
        params["input_sd"] = np.maximum(rows.std(axis=0), 1e-3).astype(dt)
    opt_cfg = AdamWConfig(
        lr=cfg.lr,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.eps,
        weight_decay=cfg.weight_decay,
    )
    state = init_adamw(params)
    shuffle_rng = derive_rng(cfg.seed, "shuffle")

    lr = cfg.lr
    best_val = np.inf
    best_epoch = 0
    best_params = {k: p.copy() for k, p in params.items()}
    stale_stop = 0
    stale_sched = 0
    history = []

    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(n) if cfg.shuffle else np.arange(n)
        sq_sum = 0.0
        sq_count = 0
        for b_idx, lo in enumerate(range(0, n, cfg.batch_size)):
            rows = order[lo : lo + cfg.batch_size]
            rng = np.random.default_rng(_epoch_seed(cfg.seed, "dropout", epoch, b_idx))
            y, cache = forward(
                params, model_cfg, train_x[rows], train_mask[rows],
                train=True, dropout_rng=rng, want_cache=True,
            )
            loss, dpred, cnt = masked_mse(y, train_y[rows], train_mask[rows])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            grads = backward(params, model_cfg, cache, dpred)
            adamw_step(params, grads, state, opt_cfg, lr=lr)
            sq_sum += loss * max(cnt, 1)
            sq_count += cnt
        train_loss = sq_sum / max(sq_count, 1)
        val_loss = evaluate_loss(params, model_cfg, val_x, val_mask, val_y)
        if not np.isfinite(val_loss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        stats = EpochStats(epoch=epoch, train_loss=train_loss, val_loss=val_loss, lr=lr)
        history.append(stats)

        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = {k: p.copy() for k, p in params.items()}
            stale_stop = 0
            stale_sched = 0
            if on_improve is not None:
                on_improve(best_params, stats)
        else:
            stale_stop += 1
            stale_sched += 1
            if stale_sched > cfg.plateau_patience and lr > cfg.min_lr:
                lr = max(lr * cfg.plateau_factor, cfg.min_lr)
                stale_sched = 0
            if stale_stop >= cfg.early_stop_patience:
                break

    return TrainResult(
        params=best_params,
        history=history,
        best_epoch=best_epoch,
        best_val_loss=float(best_val),
    )


# -- history CSV -------------------------------------------------------------

HISTORY_COLUMNS = "epoch,train_loss,val_loss,lr"


def save_history(path, history: list, header: dict) -> None:
    """Write per-epoch losses with one canonical-JSON provenance comment."""
    meta = dict(header)
    meta.setdefault("kind", "train_history")
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# " + blob + "\n")
        fh.write(HISTORY_COLUMNS + "\n")
        for st in history:
            fh.write(
                f"{st.epoch},{repr(float(st.train_loss))},"
                f"{repr(float(st.val_loss))},{repr(float(st.lr))}\n"
            )


def load_history(path) -> tuple:
    """Read a history CSV, returning (header dict, list of EpochStats)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if len(lines) < 2 or not lines[0].startswith("# "):
        raise SchemaViolation(f"{path}: missing provenance comment")
    header = json.loads(lines[0][2:])
    if lines[1] != HISTORY_COLUMNS:
        raise SchemaViolation(f"{path}: unexpected columns {lines[1]!r}")
    history = []
    for ln in lines[2:]:
        parts = ln.split(",")
        if len(parts) != 4:
            raise SchemaViolation(f"{path}: bad history row {ln!r}")
        history.append(
            EpochStats(
                epoch=int(parts[0]),
                train_loss=float(parts[1]),
                val_loss=float(parts[2]),
                lr=float(parts[3]),
            )
        )
    return header, history
