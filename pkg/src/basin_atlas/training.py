"""Deterministic finetuning of sweeps from one shared pretrained body.

Every run is a pure function of (config, seeds, task bytes): data order is a
seeded permutation per epoch, optimizer state starts from zero, and checkpoint
files round-trip bit-exactly, so reruns reproduce artifacts byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .model import (
    Batch,
    ModelConfig,
    PartitionedParams,
    assemble,
    collapse_logits,
    forward,
    init_body,
    init_head,
    loss_acc,
    loss_and_gradient,
    manifest_for,
)
from .params import Checkpoint, ParamVector, save_checkpoint
from .tasks import DatasetSplit, TaskSpec, encode_batch


class DivergenceError(RuntimeError):
    """Raised when training hits a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adamw"
    base_lr: float = 1e-3
    warmup_fraction: float = 0.10
    weight_decay: float = 0.01
    batch_size: int = 32
    epochs: int = 3
    mode: str = "full"
    lp_head_steps: int = 0
    checkpoint_stages: tuple[float, ...] = (1 / 3, 2 / 3, 1.0)
    eval_sample_size: int = 512
    eval_seed: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if not (0.0 <= self.warmup_fraction < 1.0):
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adamw"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.mode not in ("full", "lp_ft"):
            raise ValueError(f"unknown mode {self.mode!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "checkpoint_stages" in d:
            d["checkpoint_stages"] = tuple(d["checkpoint_stages"])
        return cls(**d)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class RunRecord:
    run_id: str
    body_seed: int
    head_seed: int
    data_seed: int
    config_digest: str
    stage_paths: dict[str, str] = field(default_factory=dict)
    final_metrics: dict = field(default_factory=dict)
    failed: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        return cls(**d)


def lr_at(step: int, total_steps: int, config: TrainConfig) -> float:
    """Linear warmup to base_lr over the first warmup fraction, then linear decay to 0."""
    if not (0 <= step <= total_steps):
        raise ValueError("step out of range")
    warmup = int(config.warmup_fraction * total_steps)
    if warmup > 0 and step <= warmup:
        return config.base_lr * step / warmup
    if total_steps == warmup:
        return config.base_lr if step < total_steps else 0.0
    return config.base_lr * (total_steps - step) / (total_steps - warmup)


# weight decay is applied decoupled, to weight matrices only: biases and
# embedding tables keep their scale (rare features must survive long sweeps)
_DECAYED = ("dense_weight", "head_weight")


def _decay_mask(config: ModelConfig) -> np.ndarray:
    manifest = manifest_for(config)
    mask = np.zeros(manifest.total_len)
    offsets = manifest.offsets()
    for name in _DECAYED:
        start, end = offsets[name]
        mask[start:end] = 1.0
    return mask


class _Optimizer:
    """Flat-vector SGD / AdamW with decoupled weight decay and an update mask."""

    def __init__(self, train_config: TrainConfig, model_config: ModelConfig, update_mask=None):
        self.cfg = train_config
        n = manifest_for(model_config).total_len
        self.update_mask = np.ones(n) if update_mask is None else update_mask.astype(np.float64)
        self.decay_mask = _decay_mask(model_config) * self.update_mask
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0

    def step(self, values: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        g = grad * self.update_mask
        if self.cfg.optimizer == "sgd":
            update = g
        else:
            b1, b2 = self.cfg.adam_beta1, self.cfg.adam_beta2
            self.m = b1 * self.m + (1 - b1) * g
            self.v = b2 * self.v + (1 - b2) * g * g
            mhat = self.m / (1 - b1**self.t)
            vhat = self.v / (1 - b2**self.t)
            update = (mhat / (np.sqrt(vhat) + self.cfg.adam_eps)) * self.update_mask
        return values - lr * update - lr * self.cfg.weight_decay * self.decay_mask * values

    def state_digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.m.tobytes())
        h.update(self.v.tobytes())
        h.update(str(self.t).encode())
        return h.hexdigest()[:16]


def _epoch_order(data_seed: int, epoch: int, n: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([data_seed, epoch]))
    return rng.permutation(n)


def _lp_batch_indices(data_seed: int, step: int, n: int, batch_size: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([data_seed, 1_000_003, step]))
    return rng.integers(0, n, size=batch_size)


def draw_eval_sample(split: DatasetSplit, n_samples: int, eval_seed: int,
                     spec: TaskSpec, config: ModelConfig) -> Batch:
    """The fixed evaluation sample shared by every model under one protocol."""
    if n_samples > len(split):
        raise ValueError(f"n_samples {n_samples} exceeds split size {len(split)}")
    rng = np.random.default_rng(eval_seed)
    idx = rng.choice(len(split), size=n_samples, replace=False)
    return encode_batch([split.examples[i] for i in idx], spec, config)


def evaluate_batch(params: ParamVector, config: ModelConfig, batch: Batch,
                   collapse_mapping: dict[int, int] | None = None) -> tuple[float, float]:
    logits = forward(params, config, batch)
    if collapse_mapping is not None:
        logits = collapse_logits(logits, collapse_mapping)
    return loss_acc(logits, batch.labels)


def evaluate(params: ParamVector, split: DatasetSplit, n_samples: int, eval_seed: int,
             spec: TaskSpec, config: ModelConfig,
             collapse_mapping: dict[int, int] | None = None) -> tuple[float, float]:
    batch = draw_eval_sample(split, n_samples, eval_seed, spec, config)
    return evaluate_batch(params, config, batch, collapse_mapping)


def _train_loop(values: np.ndarray, opt: _Optimizer, config: TrainConfig,
                model_config: ModelConfig, data: Batch, data_seed: int,
                total_steps: int, snapshot_steps=(), manifest=None):
    """Shared epoch loop; returns (final values, {step: snapshot values})."""
    snapshots = {}
    steps_per_epoch = len(data) // config.batch_size
    step = 0
    for epoch in range(config.epochs):
        order = _epoch_order(data_seed, epoch, len(data))
        for b in range(steps_per_epoch):
            idx = order[b * config.batch_size : (b + 1) * config.batch_size]
            batch = data.take(idx)
            params = ParamVector(manifest, values)
            loss, grad = loss_and_gradient(params, model_config, batch)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at step {step}")
            step += 1
            values = opt.step(values, grad.values, lr_at(step, total_steps, config))
            if step in snapshot_steps:
                snapshots[step] = values.copy()
    return values, snapshots


def pretrain_body(config: TrainConfig, model_config: ModelConfig, spec: TaskSpec,
                  pretrain_split: DatasetSplit, body_seed: int) -> Checkpoint:
    """Train one shared body on a held-out sample; reused by every finetune run."""
    manifest = manifest_for(model_config)
    tensors = init_body(model_config, body_seed)
    tensors.update(init_head(model_config, body_seed))
    values = assemble(model_config, tensors).values.copy()
    data = encode_batch(pretrain_split.examples, spec, model_config)
    total = (len(data) // config.batch_size) * config.epochs
    opt = _Optimizer(config, model_config)
    if total > 0:
        values, _ = _train_loop(values, opt, config, model_config, data, body_seed,
                                total, manifest=manifest)
    meta = {
        "run_id": "body",
        "body_seed": body_seed,
        "head_seed": body_seed,
        "data_seed": body_seed,
        "step": total,
        "task_id": pretrain_split.split_id,
        "optimizer_state": opt.state_digest(),
        "model_config": model_config.to_dict(),
    }
    return Checkpoint(ParamVector(manifest, values), meta)


def finetune(body: Checkpoint, head_seed: int, data_seed: int, config: TrainConfig,
             model_config: ModelConfig, spec: TaskSpec, train_split: DatasetSplit,
             eval_splits: dict[str, DatasetSplit] | None = None,
             run_id: str | None = None, out_dir=None) -> tuple[RunRecord, dict[str, Checkpoint]]:
    """One finetuning run; body tensors from the shared checkpoint, fresh head.

    Returns the RunRecord and the emitted checkpoints keyed by stage name
    ("stage1", ..., "final"). When out_dir is given the checkpoints are also
    written there and the record carries their relative paths.
    """
    manifest = manifest_for(model_config)
    if body.params.manifest != manifest:
        raise ValueError("body checkpoint manifest does not match model config")
    run_id = run_id or f"run_h{head_seed}_d{data_seed}"
    partition = PartitionedParams(model_config)
    head_mask = partition.head_mask()

    values = body.params.values.copy()
    head = init_head(model_config, head_seed)
    offsets = manifest.offsets()
    for name, tensor in head.items():
        start, end = offsets[name]
        values[start:end] = np.asarray(tensor, dtype=np.float64).ravel()

    data = encode_batch(train_split.examples, spec, model_config)
    record = RunRecord(run_id, int(body.meta["body_seed"]), head_seed, data_seed, config.digest())

    try:
        # LP stage: head only, body frozen exactly
        lp_steps = config.lp_head_steps if config.mode == "lp_ft" else 0
        if lp_steps > 0:
            opt = _Optimizer(config, model_config, update_mask=head_mask)
            for step in range(1, lp_steps + 1):
                idx = _lp_batch_indices(data_seed, step, len(data), config.batch_size)
                params = ParamVector(manifest, values)
                loss, grad = loss_and_gradient(params, model_config, data.take(idx))
                if not np.isfinite(loss):
                    raise DivergenceError(f"non-finite loss in lp stage step {step}")
                values = opt.step(values, grad.values, lr_at(step, lp_steps, config))

        steps_per_epoch = len(data) // config.batch_size
        total = steps_per_epoch * config.epochs
        stage_steps = sorted(
            {min(total, max(1, round(f * total))) for f in config.checkpoint_stages}
        ) if total > 0 else []
        opt = _Optimizer(config, model_config)
        values, snapshots = _train_loop(values, opt, config, model_config, data,
                                        data_seed, total, snapshot_steps=stage_steps,
                                        manifest=manifest)
    except DivergenceError as exc:
        record.failed = True
        record.final_metrics = {"error": str(exc)}
        return record, {}

    def ckpt_at(step, vals):
        meta = {
            "run_id": run_id,
            "body_seed": int(body.meta["body_seed"]),
            "head_seed": head_seed,
            "data_seed": data_seed,
            "step": step,
            "task_id": train_split.meta.get("strategy", train_split.split_id),
            "optimizer_state": opt.state_digest() if step == total else "",
            "model_config": model_config.to_dict(),
        }
        return Checkpoint(ParamVector(manifest, vals), meta)

    checkpoints = {}
    for i, step in enumerate(stage_steps):
        name = "final" if step == total else f"stage{i + 1}"
        vals = values if step == total else snapshots[step]
        checkpoints[name] = ckpt_at(step, vals)
    if "final" not in checkpoints:
        checkpoints["final"] = ckpt_at(total, values)

    final = checkpoints["final"].params
    if eval_splits:
        metrics = {}
        for split_name, split in eval_splits.items():
            n = min(config.eval_sample_size, len(split))
            loss, acc = evaluate(final, split, n, config.eval_seed, spec, model_config)
            metrics[split_name] = {"loss": loss, "accuracy": acc, "n_samples": n}
        record.final_metrics = metrics

    if out_dir is not None:
        from pathlib import Path

        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, ckpt in checkpoints.items():
            rel = f"{run_id}__{name}.pvc"
            save_checkpoint(ckpt, out_dir / rel)
            record.stage_paths[name] = rel
    return record, checkpoints
