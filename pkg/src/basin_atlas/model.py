"""Small sentence-pair classifier with exact closed-form gradients.

Architecture: token embedding (+ learned positional embedding), a per-position
dense+ReLU layer, masked mean pooling, and a linear classification head. The
per-position nonlinearity before pooling is what lets the model bind token
identity to position; with positional_mode="none" predictions are invariant to
token permutations inside the non-pad region.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, field

import numpy as np

from .params import ParamVector, ShapeManifest

SEP_ID = 0
PAD_ID = 1

BODY_TENSORS = ("token_embedding", "positional_embedding", "dense_weight", "dense_bias")
HEAD_TENSORS = ("head_weight", "head_bias")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 64
    embed_dim: int = 16
    max_len: int = 14
    positional_mode: str = "learned"
    hidden_dim: int = 32
    n_classes: int = 2
    activation: str = "relu"

    def __post_init__(self):
        if min(self.vocab_size, self.embed_dim, self.max_len, self.hidden_dim, self.n_classes) < 1:
            raise ValueError("all model dimensions must be >= 1")
        if self.positional_mode not in ("learned", "none"):
            raise ValueError(f"unknown positional_mode {self.positional_mode!r}")
        if self.activation != "relu":
            raise ValueError("only the rectifier activation is supported")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def manifest_for(config: ModelConfig) -> ShapeManifest:
    """Canonical tensor order: body tensors first, head last."""
    pairs = [("token_embedding", (config.vocab_size, config.embed_dim))]
    if config.positional_mode == "learned":
        pairs.append(("positional_embedding", (config.max_len, config.embed_dim)))
    pairs += [
        ("dense_weight", (config.embed_dim, config.hidden_dim)),
        ("dense_bias", (config.hidden_dim,)),
        ("head_weight", (config.hidden_dim, config.n_classes)),
        ("head_bias", (config.n_classes,)),
    ]
    return ShapeManifest.from_pairs(pairs)


@dataclass(frozen=True)
class PartitionedParams:
    """Body/head split of the manifest; the head is the final linear layer."""

    config: ModelConfig

    @property
    def manifest(self) -> ShapeManifest:
        return manifest_for(self.config)

    @property
    def body_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.manifest.entries if n in BODY_TENSORS)

    @property
    def head_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.manifest.entries if n in HEAD_TENSORS)

    def head_mask(self) -> np.ndarray:
        """Boolean mask over the flat vector selecting head coordinates."""
        mask = np.zeros(self.manifest.total_len, dtype=bool)
        offsets = self.manifest.offsets()
        for name in self.head_names:
            start, end = offsets[name]
            mask[start:end] = True
        return mask


def _glorot(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    fan_in, fan_out = shape[0], shape[-1]
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


def init_body(config: ModelConfig, body_seed: int) -> dict[str, np.ndarray]:
    """Deterministic Glorot-uniform body tensors; biases start at zero."""
    rng = np.random.default_rng(body_seed)
    out = {"token_embedding": _glorot(rng, (config.vocab_size, config.embed_dim))}
    if config.positional_mode == "learned":
        out["positional_embedding"] = _glorot(rng, (config.max_len, config.embed_dim))
    out["dense_weight"] = _glorot(rng, (config.embed_dim, config.hidden_dim))
    out["dense_bias"] = np.zeros(config.hidden_dim)
    return out


def init_head(config: ModelConfig, head_seed: int) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(head_seed)
    return {
        "head_weight": _glorot(rng, (config.hidden_dim, config.n_classes)),
        "head_bias": np.zeros(config.n_classes),
    }


def assemble(config: ModelConfig, tensors: dict[str, np.ndarray]) -> ParamVector:
    """Flatten named tensors into a ParamVector in manifest order."""
    manifest = manifest_for(config)
    parts = [np.asarray(tensors[name], dtype=np.float64).ravel() for name, _ in manifest.entries]
    return ParamVector(manifest, np.concatenate(parts))


def init_params(config: ModelConfig, body_seed: int, head_seed: int) -> ParamVector:
    tensors = init_body(config, body_seed)
    tensors.update(init_head(config, head_seed))
    return assemble(config, tensors)


@dataclass(frozen=True)
class Batch:
    """Token id matrix with pad mask and integer labels."""

    token_ids: np.ndarray
    pad_mask: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "token_ids", np.asarray(self.token_ids, dtype=np.int64))
        object.__setattr__(self, "pad_mask", np.asarray(self.pad_mask, dtype=bool))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if self.token_ids.shape != self.pad_mask.shape:
            raise ValueError("token_ids and pad_mask shapes differ")
        if len(self.labels) != len(self.token_ids):
            raise ValueError("one label per row required")

    def __len__(self) -> int:
        return len(self.token_ids)

    def take(self, idx) -> "Batch":
        return Batch(self.token_ids[idx], self.pad_mask[idx], self.labels[idx])


def _unpack(params: ParamVector, config: ModelConfig):
    E = params.tensor("token_embedding")
    P = params.tensor("positional_embedding") if config.positional_mode == "learned" else None
    W1 = params.tensor("dense_weight")
    b1 = params.tensor("dense_bias")
    W2 = params.tensor("head_weight")
    b2 = params.tensor("head_bias")
    return E, P, W1, b1, W2, b2


def _forward_parts(params: ParamVector, config: ModelConfig, batch: Batch):
    tok = batch.token_ids
    if tok.min() < 0 or tok.max() >= config.vocab_size:
        raise ValueError("token id out of range")
    E, P, W1, b1, W2, b2 = _unpack(params, config)
    x = E[tok]
    if P is not None:
        x = x + P[None, : tok.shape[1], :]
    pre = x @ W1 + b1
    h = np.maximum(pre, 0.0)
    counts = batch.pad_mask.sum(axis=1, keepdims=True).astype(np.float64)
    pooled = (h * batch.pad_mask[:, :, None]).sum(axis=1) / counts
    logits = pooled @ W2 + b2
    return logits, (x, pre, h, pooled, counts)


def forward(params: ParamVector, config: ModelConfig, batch: Batch) -> np.ndarray:
    logits, _ = _forward_parts(params, config, batch)
    return logits


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    return logits - (m + np.log(np.exp(logits - m).sum(axis=1, keepdims=True)))


def loss_acc(logits: np.ndarray, labels: np.ndarray) -> tuple[float, float]:
    """Mean cross-entropy (stable log-sum-exp) and argmax accuracy.

    Ties break toward the lower class index, matching np.argmax.
    """
    labels = np.asarray(labels, dtype=np.int64)
    logp = _log_softmax(np.asarray(logits, dtype=np.float64))
    n = len(labels)
    loss = float(-logp[np.arange(n), labels].mean())
    acc = float((logp.argmax(axis=1) == labels).mean())
    return loss, acc


def loss_and_gradient(params: ParamVector, config: ModelConfig, batch: Batch):
    """Mean cross-entropy and its exact gradient in one backward pass."""
    logits, (x, pre, h, pooled, counts) = _forward_parts(params, config, batch)
    n = len(batch)
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(n), batch.labels].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), batch.labels] -= 1.0
    dlogits /= n

    grads = {
        "head_weight": pooled.T @ dlogits,
        "head_bias": dlogits.sum(axis=0),
    }
    W2 = params.tensor("head_weight")
    dpool = dlogits @ W2.T
    dh = (batch.pad_mask[:, :, None] / counts[:, :, None]) * dpool[:, None, :]
    dpre = dh * (pre > 0)
    grads["dense_weight"] = np.einsum("bld,blh->dh", x, dpre)
    grads["dense_bias"] = dpre.sum(axis=(0, 1))
    W1 = params.tensor("dense_weight")
    dx = dpre @ W1.T
    dE = np.zeros((config.vocab_size, config.embed_dim))
    np.add.at(dE, batch.token_ids, dx)
    grads["token_embedding"] = dE
    if config.positional_mode == "learned":
        dP = np.zeros((config.max_len, config.embed_dim))
        dP[: batch.token_ids.shape[1]] = dx.sum(axis=0)
        grads["positional_embedding"] = dP
    return loss, assemble(config, grads)


def gradient(params: ParamVector, config: ModelConfig, batch: Batch) -> ParamVector:
    """Exact gradient of the mean cross-entropy over the batch."""
    return loss_and_gradient(params, config, batch)[1]


def collapse_logits(logits: np.ndarray, mapping: dict[int, int]) -> np.ndarray:
    """Collapse multi-class logits to binary via max over mapped source classes."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = set(mapping.values())
    if targets != {0, 1}:
        raise ValueError("mapping must cover both binary targets 0 and 1")
    out = np.full((logits.shape[0], 2), -np.inf)
    for src, dst in mapping.items():
        out[:, dst] = np.maximum(out[:, dst], logits[:, src])
    return out
