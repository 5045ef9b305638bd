"""The convolutional classifier, its forward-pass attention and masking."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np

from attngen import autodiff as ad
from attngen.autodiff import Parameter, Tensor
from attngen.errors import ConfigError, ShapeError
from attngen.rng import Xoshiro256pp
from attngen.dataio import STREAM_INIT


@dataclass
class AttnGenConfig:
    length: int = 200
    vocab: int = 5
    embed_dim: int = 128
    kernel_size: int = 8
    channels: tuple = (32, 16, 4)
    pool_width: int = 2
    pool_stride: int = 2
    dropout_p: float = 0.3
    fc_hidden: int = 64
    classes: int = 2
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)

    def block_lengths(self):
        """Sequence length entering each block and after the last pool."""
        lengths = [self.length]
        for _ in self.channels:
            lengths.append((lengths[-1] - self.pool_width) // self.pool_stride + 1)
        return lengths

    @property
    def flatten_dim(self):
        return self.channels[-1] * self.block_lengths()[-1]

    def validate(self):
        if self.length < 1 or self.embed_dim < 1 or self.vocab < 1:
            raise ConfigError("length, embed_dim and vocab must be positive")
        if len(self.channels) < 1:
            raise ConfigError("at least one convolutional block is required")
        if not 0 <= self.dropout_p < 1:
            raise ConfigError("dropout_p must lie in [0, 1)")
        for i, n in enumerate(self.block_lengths()[:-1]):
            if n < self.pool_width:
                raise ConfigError(f"block {i + 1} input length {n} is shorter than the pool width")
        return self

    def to_dict(self):
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d


@dataclass
class AttentionMap:
    scores: np.ndarray   # (B, L) feature-mean of the embeddings
    weights: np.ndarray  # (B, L) softmax over positions


@dataclass
class MaskPlan:
    alpha: float
    k: int
    indices: np.ndarray  # (B, k), each row sorted ascending


def mask_count(alpha: float, length: int) -> int:
    # floor(alpha * L) with a guard against 0.1 * 200 = 19.999...
    return int(math.floor(alpha * length + 1e-9))


def attention_scores(embeddings: Tensor) -> Tensor:
    """Mean over the feature axis of a (B, L, d) embedding tensor."""
    if embeddings.shape[-1] < 1:
        raise ShapeError("embedding width must be at least 1")
    return ad.mean_last(embeddings)


def attention_weights(scores) -> AttentionMap:
    s = scores.data if isinstance(scores, Tensor) else np.asarray(scores, dtype=np.float64)
    w = ad.softmax(Tensor(s, dtype=s.dtype), axis=-1).data
    return AttentionMap(scores=s, weights=w)


def select_mask_indices(attention, alpha: float) -> MaskPlan:
    """The k = floor(alpha * L) lowest-weight positions of every row.

    Ties go to the lower position (stable sort).
    """
    if not 0 <= alpha <= 1:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    weights = attention.weights if isinstance(attention, AttentionMap) else np.asarray(attention)
    weights = np.atleast_2d(weights)
    k = mask_count(alpha, weights.shape[1])
    order = np.argsort(weights, axis=1, kind="stable")[:, :k]
    return MaskPlan(alpha=alpha, k=k, indices=np.sort(order, axis=1))


def random_mask_indices(batch: int, length: int, alpha: float, rng) -> MaskPlan:
    """Uniform size-k subsets drawn without replacement, one per row."""
    k = mask_count(alpha, length)
    rows = [np.sort(rng.choice_without_replacement(length, k)) for _ in range(batch)]
    indices = np.array(rows, dtype=np.int64).reshape(batch, k)
    return MaskPlan(alpha=alpha, k=k, indices=indices)


def apply_mask(tokens, plan: MaskPlan):
    out = np.array(tokens, copy=True)
    if plan.k:
        np.put_along_axis(out, plan.indices, 0, axis=1)
    return out


class AttnGenModel:
    """Embedding, three conv/BN/ReLU/pool blocks and a two-layer head.

    ``params`` maps names such as ``"conv1.weight"`` to Parameters; BN
    running statistics live in ``buffers``.
    """

    def __init__(self, config: AttnGenConfig, params, buffers):
        self.config = config
        self.params = params
        self.buffers = buffers

    def parameters(self):
        return list(self.params.values())

    def zero_grad(self):
        ad.zero_grad(self.parameters())

    def _check_tokens(self, tokens):
        tokens = np.asarray(tokens)
        if tokens.ndim != 2 or tokens.shape[1] != self.config.length:
            raise ShapeError(f"expected tokens of shape (B, {self.config.length}), got {tokens.shape}")
        return tokens

    def embed(self, tokens) -> Tensor:
        return ad.embedding_lookup(self.params["embedding.weight"], self._check_tokens(tokens))

    def head(self, embeddings: Tensor = None, mode="eval", rng=None, update_running=True,
             tokens=None) -> Tensor:
        """Logits from either an embedding tensor (B, L, d) or raw ``tokens``.

        The token route fuses the lookup into the first convolution; the
        embedding route is what saliency gradients differentiate through.
        """
        cfg = self.config
        p = self.params
        pad = ad.same_padding(cfg.kernel_size)
        for i in range(1, len(cfg.channels) + 1):
            if i == 1 and tokens is not None:
                h = ad.embedding_conv1d(p["embedding.weight"], self._check_tokens(tokens),
                                        p["conv1.weight"], p["conv1.bias"], padding=pad)
            else:
                if i == 1:
                    h = embeddings.transpose(0, 2, 1)
                h = ad.conv1d(h, p[f"conv{i}.weight"], p[f"conv{i}.bias"], padding=pad)
            h = ad.batchnorm1d(
                h, p[f"bn{i}.gamma"], p[f"bn{i}.beta"],
                self.buffers[f"bn{i}.running_mean"], self.buffers[f"bn{i}.running_var"],
                mode=mode, momentum=cfg.bn_momentum, eps=cfg.bn_eps,
                update_running=update_running,
            )
            h = ad.relu(h)
            h = ad.maxpool1d(h, cfg.pool_width, cfg.pool_stride)
        h = h.reshape(h.shape[0], -1)
        h = ad.relu(ad.linear(h, p["fc1.weight"], p["fc1.bias"]))
        h = ad.dropout(h, cfg.dropout_p, mode=mode, rng=rng)
        return ad.linear(h, p["fc2.weight"], p["fc2.bias"])

    def forward(self, tokens, mode="eval", rng=None, update_running=True):
        """Logits (B, classes) and the attention map from the same pass."""
        tokens = self._check_tokens(tokens)
        emb = self.embed(tokens)
        attention = attention_weights(attention_scores(emb))
        logits = self.head(mode=mode, rng=rng, update_running=update_running, tokens=tokens)
        return logits, attention

    def predict_logits(self, tokens, batch_size=256):
        tokens = self._check_tokens(tokens)
        chunks = [self.forward(tokens[i:i + batch_size])[0].data for i in range(0, len(tokens), batch_size)]
        if not chunks:
            return np.zeros((0, self.config.classes), dtype=ad.get_dtype())
        return np.concatenate(chunks)

    # state access for checkpoints
    def state_arrays(self):
        arrays = OrderedDict((name, p.data) for name, p in self.params.items())
        arrays.update(self.buffers)
        return arrays


def _expected_shapes(cfg: AttnGenConfig):
    shapes = OrderedDict()
    shapes["embedding.weight"] = (cfg.vocab, cfg.embed_dim)
    c_in = cfg.embed_dim
    for i, c_out in enumerate(cfg.channels, start=1):
        shapes[f"conv{i}.weight"] = (c_out, c_in, cfg.kernel_size)
        shapes[f"conv{i}.bias"] = (c_out,)
        shapes[f"bn{i}.gamma"] = (c_out,)
        shapes[f"bn{i}.beta"] = (c_out,)
        c_in = c_out
    shapes["fc1.weight"] = (cfg.fc_hidden, cfg.flatten_dim)
    shapes["fc1.bias"] = (cfg.fc_hidden,)
    shapes["fc2.weight"] = (cfg.classes, cfg.fc_hidden)
    shapes["fc2.bias"] = (cfg.classes,)
    return shapes


def buffer_shapes(cfg: AttnGenConfig):
    shapes = OrderedDict()
    for i, c in enumerate(cfg.channels, start=1):
        shapes[f"bn{i}.running_mean"] = (c,)
        shapes[f"bn{i}.running_var"] = (c,)
    return shapes


def init_model(config: AttnGenConfig = None, seed: int = 42) -> AttnGenModel:
    """Deterministic initialisation.

    Conv and linear weights are uniform in +-sqrt(6 / fan_in), biases zero,
    embedding rows uniform in [-0.1, 0.1], BN gamma 1 and beta 0. Draws are
    made in parameter-name order from one derived stream.
    """
    cfg = (config or AttnGenConfig()).validate()
    rng = Xoshiro256pp.from_keys(seed, STREAM_INIT)
    dtype = ad.get_dtype()
    params = OrderedDict()
    for name, shape in _expected_shapes(cfg).items():
        n = int(np.prod(shape))
        if name == "embedding.weight":
            values = rng.uniform(-0.1, 0.1, n)
        elif name.endswith(".weight"):
            fan_in = int(np.prod(shape[1:]))
            bound = math.sqrt(6.0 / fan_in)
            values = rng.uniform(-bound, bound, n)
        elif name.endswith(".gamma"):
            values = np.ones(n)
        else:
            values = np.zeros(n)
        decay = name.endswith(".weight")
        params[name] = Parameter(name, values.reshape(shape).astype(dtype), decay=decay)
    buffers = OrderedDict()
    for name, shape in buffer_shapes(cfg).items():
        fill = np.ones if name.endswith("running_var") else np.zeros
        buffers[name] = fill(shape, dtype=dtype)
    return AttnGenModel(cfg, params, buffers)


@dataclass
class LossResult:
    loss: Tensor
    ce: float
    kl: float
    plan: MaskPlan
    logits: np.ndarray = field(repr=False)


def attngen_loss(model: AttnGenModel, tokens, labels, alpha=0.1, kl_weight=0.1,
                 mode="train", rng=None, mask_mode="attention", mask_rng=None) -> LossResult:
    """Cross-entropy on the clean batch plus ``kl_weight`` times
    KL(f(x) || f(x_masked)).

    The masked pass draws its own dropout mask and normalises with its own
    batch statistics without touching the running averages. With
    ``alpha == 0`` the masked pass is skipped and the KL term is exactly 0.
    """
    if kl_weight < 0:
        raise ValueError("kl_weight must be nonnegative")
    logits, attention = model.forward(tokens, mode=mode, rng=rng)
    ce = ad.cross_entropy(logits, labels)
    if mask_mode == "attention":
        plan = select_mask_indices(attention, alpha)
    elif mask_mode == "random":
        if mask_rng is None:
            raise ValueError("random masking needs mask_rng")
        plan = random_mask_indices(len(tokens), model.config.length, alpha, mask_rng)
    else:
        raise ValueError(f"mask_mode must be 'attention' or 'random', got {mask_mode!r}")

    if plan.k == 0:
        return LossResult(ce, float(ce.item()), 0.0, plan, logits.data)
    masked = apply_mask(tokens, plan)
    masked_logits, _ = model.forward(masked, mode=mode, rng=rng, update_running=False)
    kl = ad.kl_divergence(logits, masked_logits)
    loss = ce + kl * kl_weight if kl_weight else ce
    return LossResult(loss, float(ce.item()), float(kl.item()), plan, logits.data)
