"""RoPE sparse-attention transformer for 1-D spectra.

Layer stack: strided conv token embedding -> encoder blocks (pre-norm,
rotary multi-head attention under a block/global/random mask, feed-forward)
-> conv + batch norm + ReLU head -> flatten -> FC + ReLU -> FC logits.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .autodiff import Tape, Tensor


class ModelError(ValueError):
    pass


class ShapeError(ModelError):
    pass


class NonFiniteError(ModelError, ArithmeticError):
    def __init__(self, layer: str):
        self.layer = layer
        super().__init__(f"non-finite activation in layer {layer!r}")


@dataclass(frozen=True)
class SparseConfig:
    block_size: int = 8
    num_global_tokens: int = 1
    num_random_keys: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.block_size < 1:
            raise ModelError("block_size must be >= 1")
        if self.num_global_tokens < 0 or self.num_random_keys < 0:
            raise ModelError("num_global_tokens and num_random_keys must be >= 0")


@dataclass(frozen=True)
class ModelConfig:
    num_classes: int = 3
    input_length: int = 217
    embed_kernel: int = 4
    embed_stride: int = 4
    embed_dim: int = 64
    num_heads: int = 4
    num_encoder_blocks: int = 2
    ffn_expansion: int = 2
    rope_base: float = 10000.0
    sparse: SparseConfig = field(default_factory=SparseConfig)
    head_conv_channels: int = 32
    head_conv_kernel: int = 3
    fc_hidden: int = 64
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.sparse, dict):
            object.__setattr__(self, "sparse", SparseConfig(**self.sparse))
        if self.embed_dim % self.num_heads:
            raise ModelError("embed_dim must be divisible by num_heads")
        if self.head_dim % 2:
            raise ModelError("head dimension must be even for rotary embedding")
        if self.head_conv_kernel % 2 == 0:
            raise ModelError("head_conv_kernel must be odd to keep the token count")
        if self.num_classes < 2:
            raise ModelError("need at least 2 classes")
        if self.num_tokens < 4:
            raise ModelError(f"token count {self.num_tokens} < 4")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def num_tokens(self) -> int:
        return (self.input_length - self.embed_kernel) // self.embed_stride + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if isinstance(d.get("sparse"), dict):
            d["sparse"] = SparseConfig(**d["sparse"])
        return cls(**d)


def build_sparse_mask(T: int, cfg: SparseConfig) -> np.ndarray:
    """Boolean ``(T, T)`` mask; ``mask[q, k]`` means query q may attend key k.

    Union of same-block pairs, rows/columns of the leading global tokens, and
    ``num_random_keys`` per-query random keys drawn from those not already
    allowed. The diagonal is always set.
    """
    if T < 1:
        raise ModelError("T must be >= 1")
    idx = np.arange(T)
    block = idx // cfg.block_size
    mask = block[:, None] == block[None, :]
    g = min(cfg.num_global_tokens, T)
    mask[:g, :] = True
    mask[:, :g] = True
    mask[idx, idx] = True
    if cfg.num_random_keys:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, T, 0x5A7]))
        for q in range(T):
            free = np.flatnonzero(~mask[q])
            if free.size == 0:
                continue
            pick = rng.choice(free, size=min(cfg.num_random_keys, free.size), replace=False)
            mask[q, pick] = True
    return mask


def mask_density(mask: np.ndarray) -> float:
    return float(mask.sum()) / mask.size


@dataclass
class ModelParams:
    """Learnable tensors plus batch-norm running statistics."""

    config: ModelConfig
    tensors: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    mask: np.ndarray = None

    def __post_init__(self):
        if self.mask is None:
            self.mask = build_sparse_mask(self.config.num_tokens, self.config.sparse)

    def copy(self) -> "ModelParams":
        return replace(
            self,
            tensors={k: v.copy() for k, v in self.tensors.items()},
            buffers={k: v.copy() for k, v in self.buffers.items()},
            mask=self.mask.copy(),
        )

    def shapes(self) -> dict[str, tuple]:
        return {k: v.shape for k, v in self.tensors.items()}

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))

    def check(self) -> None:
        for k, v in {**self.tensors, **self.buffers}.items():
            if not np.all(np.isfinite(v)):
                raise NonFiniteError(k)
        if np.any(self.buffers["head.bn.running_var"] <= 0):
            raise ModelError("batch-norm running variance must be positive")


def init_params(cfg: ModelConfig) -> ModelParams:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x1417]))
    D, C, H = cfg.embed_dim, cfg.head_conv_channels, cfg.fc_hidden
    F = cfg.ffn_expansion * D
    T = cfg.num_tokens

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    t: dict[str, np.ndarray] = {}
    t["embed.weight"] = uniform((D, 1, cfg.embed_kernel), cfg.embed_kernel)
    t["embed.bias"] = np.zeros(D)
    for i in range(cfg.num_encoder_blocks):
        p = f"blocks.{i}."
        t[p + "ln1.gamma"] = np.ones(D)
        t[p + "ln1.beta"] = np.zeros(D)
        for name in ("wq", "wk", "wv", "wo"):
            t[p + f"attn.{name}"] = uniform((D, D), D)
            t[p + f"attn.b{name[1]}"] = np.zeros(D)
        t[p + "ln2.gamma"] = np.ones(D)
        t[p + "ln2.beta"] = np.zeros(D)
        t[p + "ffn.w1"] = uniform((D, F), D)
        t[p + "ffn.b1"] = np.zeros(F)
        t[p + "ffn.w2"] = uniform((F, D), F)
        t[p + "ffn.b2"] = np.zeros(D)
    t["head.conv.weight"] = uniform((C, D, cfg.head_conv_kernel), D * cfg.head_conv_kernel)
    t["head.conv.bias"] = np.zeros(C)
    t["head.bn.gamma"] = np.ones(C)
    t["head.bn.beta"] = np.zeros(C)
    t["fc1.weight"] = uniform((C * T, H), C * T)
    t["fc1.bias"] = np.zeros(H)
    t["fc2.weight"] = uniform((H, cfg.num_classes), H)
    t["fc2.bias"] = np.zeros(cfg.num_classes)
    buffers = {"head.bn.running_mean": np.zeros(C), "head.bn.running_var": np.ones(C)}
    return ModelParams(cfg, t, buffers)


BN_MOMENTUM = 0.1


def _finite(t: Tensor, layer: str) -> Tensor:
    if not np.all(np.isfinite(t.value)):
        raise NonFiniteError(layer)
    return t


def attention(tape: Tape, x: Tensor, P: dict, prefix: str, cfg: ModelConfig,
              mask: np.ndarray) -> Tensor:
    """Rotary multi-head self-attention of ``x (B, T, D)`` under ``mask``."""
    B, T, D = x.shape
    nh, dh = cfg.num_heads, cfg.head_dim
    pos = np.arange(T)

    def heads(w, b):
        h = tape.apply("add", tape.apply("matmul", x, P[prefix + w]), P[prefix + b])
        h = tape.apply("reshape", h, shape=(B, T, nh, dh))
        return tape.apply("transpose", h, axes=(0, 2, 1, 3))

    q = tape.apply("rope", heads("wq", "bq"), positions=pos, base=cfg.rope_base)
    k = tape.apply("rope", heads("wk", "bk"), positions=pos, base=cfg.rope_base)
    v = heads("wv", "bv")
    kt = tape.apply("transpose", k, axes=(0, 1, 3, 2))
    scores = tape.apply("scale", tape.apply("matmul", q, kt), c=1.0 / np.sqrt(dh))
    weights = tape.apply("softmax_masked", scores, mask=mask)
    tape.mark(prefix + "weights", weights)
    ctx = tape.apply("matmul", weights, v)
    ctx = tape.apply("transpose", ctx, axes=(0, 2, 1, 3))
    ctx = tape.apply("reshape", ctx, shape=(B, T, D))
    return tape.apply("add", tape.apply("matmul", ctx, P[prefix + "wo"]), P[prefix + "bo"])


def forward(params: ModelParams, batch, mode: str = "infer", *, tape: Tape | None = None,
            update_running_stats: bool = False, requires_grad: bool = True):
    """Run the network on ``batch (B, input_length)``.

    Returns ``(logits, tape)`` with logits as a Tensor. Parameter leaves are
    available as ``tape.marks["param:<name>"]`` and the head activation that
    Grad-CAM reads as ``tape.marks["head.activation"]``. In ``train`` mode
    batch norm normalizes with batch statistics; running statistics move only
    when ``update_running_stats`` is set.
    """
    if mode not in ("train", "infer"):
        raise ModelError(f"mode must be 'train' or 'infer', got {mode!r}")
    cfg = params.config
    X = np.asarray(batch, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != cfg.input_length:
        raise ShapeError(f"expected batch of width {cfg.input_length}, got shape {X.shape}")
    B = X.shape[0]
    tape = tape or Tape()
    P = {k: tape.mark("param:" + k, tape.leaf(v, requires_grad)) for k, v in params.tensors.items()}

    x = tape.mark("input", tape.leaf(X[:, None, :], requires_grad))
    h = tape.apply("conv1d", x, P["embed.weight"], P["embed.bias"], stride=cfg.embed_stride)
    h = _finite(tape.apply("transpose", h, axes=(0, 2, 1)), "embed")  # (B, T, D)

    for i in range(cfg.num_encoder_blocks):
        p = f"blocks.{i}."
        n1 = tape.apply("layernorm", h, P[p + "ln1.gamma"], P[p + "ln1.beta"])
        h = tape.apply("add", h, attention(tape, n1, P, p + "attn.", cfg, params.mask))
        h = _finite(h, p + "attn")
        n2 = tape.apply("layernorm", h, P[p + "ln2.gamma"], P[p + "ln2.beta"])
        f = tape.apply("relu", tape.apply("add", tape.apply("matmul", n2, P[p + "ffn.w1"]),
                                          P[p + "ffn.b1"]))
        f = tape.apply("add", tape.apply("matmul", f, P[p + "ffn.w2"]), P[p + "ffn.b2"])
        h = _finite(tape.apply("add", h, f), p + "ffn")

    h = tape.apply("transpose", h, axes=(0, 2, 1))  # (B, D, T)
    c = tape.apply("conv1d", h, P["head.conv.weight"], P["head.conv.bias"],
                   padding=cfg.head_conv_kernel // 2)
    stats = None
    if mode == "infer":
        stats = (params.buffers["head.bn.running_mean"], params.buffers["head.bn.running_var"])
    c = tape.apply("batchnorm", c, P["head.bn.gamma"], P["head.bn.beta"], stats=stats)
    if mode == "train" and update_running_stats:
        _, _, mu, var = tape.nodes[-1].ctx
        n = B * c.shape[2]
        unbiased = var * n / max(n - 1, 1)
        rm, rv = params.buffers["head.bn.running_mean"], params.buffers["head.bn.running_var"]
        params.buffers["head.bn.running_mean"] = (1 - BN_MOMENTUM) * rm + BN_MOMENTUM * mu
        params.buffers["head.bn.running_var"] = (1 - BN_MOMENTUM) * rv + BN_MOMENTUM * unbiased
    a = tape.mark("head.activation", _finite(tape.apply("relu", c), "head"))

    z = tape.apply("reshape", a, shape=(B, -1))
    z = tape.apply("relu", tape.apply("add", tape.apply("matmul", z, P["fc1.weight"]),
                                      P["fc1.bias"]))
    logits = tape.apply("add", tape.apply("matmul", z, P["fc2.weight"]), P["fc2.bias"])
    tape.mark("logits", _finite(logits, "classifier"))
    return logits, tape


def recalibrate_batchnorm(params: ModelParams, X, batch_size: int = 256) -> None:
    """Set the batch-norm running statistics to the exact population mean and
    unbiased variance of the head activations over ``X``.

    The moving averages lag the weights; after the last update they can sit
    far from the statistics the final weights produce, which shifts every
    infer-mode prediction. The head input does not depend on batch norm, so
    chunks can be pooled.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        return
    C = params.buffers["head.bn.running_mean"].shape[0]
    total, s1, s2 = 0, np.zeros(C), np.zeros(C)
    for i in range(0, X.shape[0], batch_size):
        chunk = X[i:i + batch_size]
        _, tape = forward(params, chunk, "train", requires_grad=False)
        node = next(n for n in reversed(tape.nodes) if n.op == "batchnorm")
        _, _, mu, var = node.ctx
        n = chunk.shape[0] * node.output.shape[2]
        total += n
        s1 += n * mu
        s2 += n * (var + mu * mu)
    mean = s1 / total
    var = np.maximum(s2 / total - mean * mean, 0.0) * total / max(total - 1, 1)
    params.buffers["head.bn.running_mean"] = mean
    params.buffers["head.bn.running_var"] = var


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grads(params: ModelParams, batch, labels, *, mode: str = "train",
                   update_running_stats: bool = False):
    """Mean cross-entropy and its gradient for every learnable tensor."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.ndim != 1 or labels.shape[0] != np.atleast_2d(batch).shape[0]:
        raise ShapeError("labels must be one class index per batch row")
    if labels.size and (labels.min() < 0 or labels.max() >= params.config.num_classes):
        raise ModelError("label index out of range")
    logits, tape = forward(params, batch, mode, update_running_stats=update_running_stats)
    loss = tape.apply("cross_entropy", logits, labels=labels)
    tape.backward(loss)
    grads = {}
    for k in params.tensors:
        g = tape.marks["param:" + k].grad
        grads[k] = np.zeros_like(params.tensors[k]) if g is None else g
    return float(loss.value), grads, logits.value


def predict_logits(params: ModelParams, X, batch_size: int = 256) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0:
        return np.zeros((0, params.config.num_classes))
    out = []
    for i in range(0, X.shape[0], batch_size):
        logits, _ = forward(params, X[i:i + batch_size], "infer", requires_grad=False)
        out.append(logits.value)
    return np.concatenate(out)


def predict_proba(params: ModelParams, data, batch_size: int = 256) -> np.ndarray:
    """Class probabilities per row; ``data`` is a matrix or a Dataset."""
    X = data.X if hasattr(data, "spectra") else data
    return softmax(predict_logits(params, X, batch_size))


predict = predict_proba
