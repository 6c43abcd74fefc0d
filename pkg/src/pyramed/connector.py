"""Trainable two-layer MLP projector with analytic gradients.

Forward pass is y = GELU(x @ W1 + b1) @ W2 + b2 with the exact Gaussian GELU
0.5 * z * (1 + erf(z / sqrt(2))). The training objective is a cosine
alignment surrogate, mean over rows of (1 - cos(pred_i, target_i)), which is
bounded in [0, 2] and invariant to target row rescaling.

Training uses AdamW (beta1 0.9, beta2 0.999, eps 1e-8, decoupled weight
decay) over seeded shuffled mini-batches with a linear-warmup + cosine-decay
learning-rate schedule. All arithmetic is float64; checkpoints persist as
float32 .mstf tensors plus a JSON manifest, which is lossless for float32
parameter values.

Parameter groups for freezing are coarse: the (conceptual, weightless here)
vision encoder, which must stay frozen, and the connector itself. A fully
frozen mask makes train_stage a no-op that returns bit-identical parameters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, NamedTuple

import numpy as np
from scipy.special import erf

from .errors import EmptyDatasetError, ShapeMismatchError, ZeroVectorError
from .tensorio import load_mstf, save_mstf

Stage = Literal["connector_pretrain", "instruct_finetune"]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass
class MlpParams:
    """Two-layer MLP weights: (D, h), (h,), (h, m), (m,). All float64."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def copy(self) -> "MlpParams":
        return MlpParams(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def arrays(self) -> dict[str, np.ndarray]:
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


@dataclass(frozen=True)
class TrainConfig:
    stage: Stage
    learning_rate: float
    global_batch: int
    epochs: int = 1
    warmup_ratio: float = 0.03
    weight_decay: float = 0.0
    schedule: str = "warmup_cosine"
    seed: int = 0

    def __post_init__(self):
        if self.global_batch < 1:
            raise ValueError(f"global_batch must be >= 1, got {self.global_batch}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 <= self.warmup_ratio <= 1.0:
            raise ValueError(f"warmup_ratio must be in [0, 1], got {self.warmup_ratio}")
        if self.schedule != "warmup_cosine":
            raise ValueError(f"unsupported schedule {self.schedule!r}")


def pretrain_config(**overrides) -> TrainConfig:
    """Stage-1 defaults: connector-only alignment pretraining."""
    base = dict(
        stage="connector_pretrain",
        learning_rate=1e-3,
        global_batch=256,
        epochs=1,
        warmup_ratio=0.03,
        weight_decay=0.0,
    )
    base.update(overrides)
    return TrainConfig(**base)


def finetune_config(**overrides) -> TrainConfig:
    """Stage-2 defaults: instruction fine-tuning rates."""
    base = dict(
        stage="instruct_finetune",
        learning_rate=2e-5,
        global_batch=128,
        epochs=1,
        warmup_ratio=0.03,
        weight_decay=0.0,
    )
    base.update(overrides)
    return TrainConfig(**base)


@dataclass(frozen=True)
class FreezeMask:
    """True means frozen. The encoder group is frozen in every stage."""

    encoder_frozen: bool = True
    connector_frozen: bool = False

    def __post_init__(self):
        if not self.encoder_frozen:
            raise ValueError("the encoder group must stay frozen in every stage")


class TraceRow(NamedTuple):
    step: int
    lr: float
    loss: float


@dataclass
class TrainResult:
    params: MlpParams
    trace: list[TraceRow] = field(repr=False)


def init_mlp_params(d_in: int, hidden: int, d_out: int, seed: int = 0) -> MlpParams:
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.Generator(np.random.PCG64(seed))
    s1 = 1.0 / math.sqrt(d_in)
    s2 = 1.0 / math.sqrt(hidden)
    return MlpParams(
        w1=rng.uniform(-s1, s1, size=(d_in, hidden)),
        b1=np.zeros(hidden),
        w2=rng.uniform(-s2, s2, size=(hidden, d_out)),
        b2=np.zeros(d_out),
    )


def gelu(z: np.ndarray) -> np.ndarray:
    return 0.5 * z * (1.0 + erf(z / _SQRT2))


def gelu_grad(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(z / _SQRT2)) + z * np.exp(-0.5 * z * z) * _INV_SQRT_2PI


def _check_forward_shapes(x: np.ndarray, p: MlpParams) -> None:
    if x.ndim != 2:
        raise ShapeMismatchError(f"x must be 2-D (n, D), got shape {x.shape}")
    if x.shape[1] != p.w1.shape[0]:
        raise ShapeMismatchError(
            f"x has {x.shape[1]} columns but w1 expects {p.w1.shape[0]}"
        )
    if p.w1.shape[1] != p.b1.shape[0] or p.w1.shape[1] != p.w2.shape[0]:
        raise ShapeMismatchError("hidden widths of w1, b1, w2 disagree")
    if p.w2.shape[1] != p.b2.shape[0]:
        raise ShapeMismatchError("output widths of w2 and b2 disagree")


def mlp_forward(x: np.ndarray, p: MlpParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _check_forward_shapes(x, p)
    return gelu(x @ p.w1 + p.b1) @ p.w2 + p.b2


def _row_norms(m: np.ndarray, name: str) -> np.ndarray:
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms == 0.0):
        rows = np.flatnonzero(norms == 0.0)[:5].tolist()
        raise ZeroVectorError(f"{name} has zero-norm rows at indices {rows}")
    return norms


def alignment_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean over rows of (1 - cosine similarity). Always in [0, 2]."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"pred {pred.shape} vs target {target.shape}")
    np_ = _row_norms(pred, "pred")
    nt = _row_norms(target, "target")
    cos = np.sum(pred * target, axis=1) / (np_ * nt)
    return float(np.mean(1.0 - cos))


def mlp_backward(
    x: np.ndarray, target: np.ndarray, p: MlpParams
) -> tuple[float, MlpParams]:
    """Loss and analytic gradients of alignment_loss(mlp_forward(x), target).

    Returns (loss, grads) with grads shaped like MlpParams. The x gradient is
    not computed: upstream features come from a frozen encoder.
    """
    x = np.asarray(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_forward_shapes(x, p)

    z1 = x @ p.w1 + p.b1
    a = gelu(z1)
    pred = a @ p.w2 + p.b2
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"pred {pred.shape} vs target {target.shape}")

    n = x.shape[0]
    np_ = _row_norms(pred, "pred")[:, None]
    nt = _row_norms(target, "target")[:, None]
    dot = np.sum(pred * target, axis=1, keepdims=True)
    cos = dot / (np_ * nt)
    loss = float(np.mean(1.0 - cos[:, 0]))

    # d(1 - cos)/dpred = -(target/(|p||t|) - cos * pred/|p|^2), averaged over rows
    g_pred = -(target / (np_ * nt) - cos * pred / (np_ * np_)) / n

    g_w2 = a.T @ g_pred
    g_b2 = g_pred.sum(axis=0)
    g_a = g_pred @ p.w2.T
    g_z1 = g_a * gelu_grad(z1)
    g_w1 = x.T @ g_z1
    g_b1 = g_z1.sum(axis=0)
    return loss, MlpParams(w1=g_w1, b1=g_b1, w2=g_w2, b2=g_b2)


def warmup_steps(total_steps: int, warmup_ratio: float) -> int:
    """round() of ratio * total (ties-to-even), floored at 1."""
    return max(1, round(warmup_ratio * total_steps))


def lr_at(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warmup to the peak rate, then cosine decay to exactly 0.

    Warmup: lr * (step + 1) / warmup_steps for step < warmup_steps.
    Decay:  lr * 0.5 * (1 + cos(pi * (step - warmup) / (total - warmup))).
    The peak equals cfg.learning_rate exactly at step == warmup_steps and the
    value at step == total_steps is exactly 0.
    """
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step must be in [0, {total_steps}], got {step}")
    warm = warmup_steps(total_steps, cfg.warmup_ratio)
    if step < warm:
        return cfg.learning_rate * (step + 1) / warm
    if total_steps == warm:
        return 0.0
    progress = (step - warm) / (total_steps - warm)
    return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * progress))


def train_stage(
    x: np.ndarray,
    targets: np.ndarray,
    cfg: TrainConfig,
    mask: FreezeMask,
    params: MlpParams,
) -> TrainResult:
    """AdamW over seeded shuffled mini-batches for cfg.epochs.

    Frozen groups come back bit-identical. The returned trace holds one
    (step, lr, loss) row per optimizer step; with weight_decay 0 the update
    coincides exactly with plain Adam.
    """
    x = np.asarray(x, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    n = x.shape[0]
    if n == 0:
        raise EmptyDatasetError("training data is empty")
    if targets.shape[0] != n:
        raise ShapeMismatchError(f"{n} feature rows vs {targets.shape[0]} target rows")
    batch = cfg.global_batch
    if batch > n:
        raise ValueError(f"global_batch {batch} exceeds dataset size {n}")

    p = params.copy()
    steps_per_epoch = math.ceil(n / batch)
    total_steps = cfg.epochs * steps_per_epoch
    rng = np.random.Generator(np.random.PCG64(cfg.seed))

    trainable = not mask.connector_frozen
    m_state = {k: np.zeros_like(v) for k, v in p.arrays().items()}
    v_state = {k: np.zeros_like(v) for k, v in p.arrays().items()}

    trace: list[TraceRow] = []
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            loss, grads = mlp_backward(x[idx], targets[idx], p)
            lr = lr_at(step, total_steps, cfg)
            if trainable:
                t = step + 1
                bc1 = 1.0 - ADAM_BETA1 ** t
                bc2 = 1.0 - ADAM_BETA2 ** t
                for key, grad in grads.arrays().items():
                    param = p.arrays()[key]
                    m = m_state[key]
                    v = v_state[key]
                    m *= ADAM_BETA1
                    m += (1.0 - ADAM_BETA1) * grad
                    v *= ADAM_BETA2
                    v += (1.0 - ADAM_BETA2) * grad * grad
                    update = (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
                    if cfg.weight_decay != 0.0:
                        update = update + cfg.weight_decay * param
                    param -= lr * update
            trace.append(TraceRow(step=step, lr=lr, loss=loss))
            step += 1
    return TrainResult(params=p, trace=trace)


def write_loss_trace(path: str | Path, trace: list[TraceRow]) -> None:
    """CSV with columns step, lr, loss."""
    lines = ["step,lr,loss"]
    lines += [f"{row.step},{row.lr!r},{row.loss!r}" for row in trace]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_checkpoint(
    directory: str | Path,
    params: MlpParams,
    *,
    seed: int,
    stage: str,
    step: int,
) -> None:
    """Four float32 .mstf tensors plus manifest.json {shapes, seed, stage, step}."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    shapes = {}
    for key, arr in params.arrays().items():
        save_mstf(directory / f"{key}.mstf", arr.astype(np.float32))
        shapes[key] = list(arr.shape)
    manifest = {"shapes": shapes, "seed": seed, "stage": stage, "step": step}
    (directory / "manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8"
    )


def load_checkpoint(directory: str | Path) -> tuple[MlpParams, dict]:
    """Inverse of save_checkpoint; arrays come back as float64 (lossless)."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    arrays = {}
    for key in ("w1", "b1", "w2", "b2"):
        arr = load_mstf(directory / f"{key}.mstf")
        expected = tuple(manifest["shapes"][key])
        if arr.shape != expected:
            raise ShapeMismatchError(
                f"{key}.mstf has shape {arr.shape}, manifest says {expected}"
            )
        arrays[key] = arr.astype(np.float64)
    return MlpParams(**arrays), manifest
