"""Mini-batch training with adaptive-moment updates."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .network import (
    ModelConfig,
    ModelError,
    ModelParams,
    init_params,
    loss_and_grads,
    predict_logits,
    recalibrate_batchnorm,
)

log = logging.getLogger(__name__)


class TrainingDivergedError(ModelError, ArithmeticError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 50
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("lr >= 0, batch_size >= 1 and epochs >= 0 required")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "OptimizerConfig":
        return cls(**d)


class Adam:
    def __init__(self, params: dict[str, np.ndarray], cfg: OptimizerConfig):
        self.cfg = cfg
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        c = self.cfg
        if c.lr == 0:
            return
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            if c.weight_decay:
                g = g + c.weight_decay * p
            m = self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            v = self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            params[k] = p - c.lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


@dataclass
class TrainingCurves:
    epoch: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)

    COLUMNS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for row in zip(*(getattr(self, c) for c in self.COLUMNS)):
            w.writerow([row[0]] + [format(v, ".17g") for v in row[1:]])
        return buf.getvalue()


def evaluate(params: ModelParams, X: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    if len(y) == 0:
        return float("nan"), float("nan")
    logits = predict_logits(params, X)
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(len(y)), y].mean())
    acc = float(np.mean(np.argmax(logits, axis=1) == y))
    return loss, acc


def train(model_cfg: ModelConfig, train_ds, val_ds=None,
          optimizer_cfg: OptimizerConfig = OptimizerConfig(),
          params: ModelParams | None = None) -> tuple[ModelParams, TrainingCurves]:
    """Fit from a fresh initialization (or a copy of ``params``).

    Batches are reshuffled every epoch from a stream seeded by
    ``optimizer_cfg.seed``; training curves record the epoch-mean batch loss
    and accuracy on the training set and a full infer-mode pass on ``val_ds``.
    After the last update the batch-norm running statistics are replaced by
    exact training-set statistics, before the final validation pass.
    """
    X, y = _xy(train_ds)
    if X.shape[1] != model_cfg.input_length:
        raise ModelError(
            f"training spectra have {X.shape[1]} points, model expects {model_cfg.input_length}"
        )
    Xv, yv = _xy(val_ds) if val_ds is not None else (np.zeros((0, X.shape[1])), np.zeros(0, int))
    params = init_params(model_cfg) if params is None else params.copy()
    opt = Adam(params.tensors, optimizer_cfg)
    rng = np.random.default_rng(np.random.SeedSequence([optimizer_cfg.seed, 0x7EA1]))
    curves = TrainingCurves()
    n = X.shape[0]
    bs = optimizer_cfg.batch_size
    for epoch in range(1, optimizer_cfg.epochs + 1):
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        seen = 0
        for i in range(0, n, bs):
            idx = order[i:i + bs]
            if idx.size < 2:
                # batch statistics need at least two rows
                continue
            loss, grads, logits = loss_and_grads(params, X[idx], y[idx], update_running_stats=True)
            if not np.isfinite(loss):
                raise TrainingDivergedError(f"loss became non-finite in epoch {epoch}")
            opt.step(params.tensors, grads)
            total_loss += loss * idx.size
            correct += int(np.sum(np.argmax(logits, axis=1) == y[idx]))
            seen += idx.size
        if epoch == optimizer_cfg.epochs:
            recalibrate_batchnorm(params, X)
        vl, va = evaluate(params, Xv, yv)
        curves.epoch.append(epoch)
        curves.train_loss.append(total_loss / max(seen, 1))
        curves.train_acc.append(correct / max(seen, 1))
        curves.val_loss.append(vl)
        curves.val_acc.append(va)
        log.debug("epoch %d train_loss=%.4f val_acc=%.4f", epoch, curves.train_loss[-1], va)
    params.check()
    return params, curves


def _xy(ds):
    if ds is None:
        return None, None
    if hasattr(ds, "spectra"):
        return ds.X, ds.y
    X, y = ds
    return np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.int64)
