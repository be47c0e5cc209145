"""Losses, optimizer and training loops for the teacher CNN and the
distilled hybrid student.

The per-batch objective splits the batch by label. For each subset
(fake, then real) it mixes a class-head BCE against the labels with a
distillation-head BCE against the teacher's sigmoid probabilities, weighted
``lam`` and ``1 - lam``; the training loss is the average of the two subset
losses.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .backbone import Teacher, teacher_logit
from .data import Dataset
from .errors import ConfigError, ContractError, NonFiniteError
from .model import HeadOutputs, HybridViT, forward
from .nn import Module
from .rng import stream
from .tensor import Tensor

log = logging.getLogger(__name__)

PROB_EPS = 1e-7


@dataclass
class LossConfig:
    lam: float = 0.5
    eps: float = PROB_EPS

    def validate(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must be in [0, 1], got {self.lam}")
        if not 0.0 < self.eps < 0.5:
            raise ConfigError(f"probability clamp eps must be in (0, 0.5), got {self.eps}")


def bce_terms(logits: Tensor, targets, eps: float = PROB_EPS) -> Tensor:
    """Per-element BCE of sigmoid(logits) against targets in [0, 1]."""
    t = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=np.float64)
    if np.any((t < 0.0) | (t > 1.0)) or not np.all(np.isfinite(t)):
        raise ContractError("BCE targets must lie in [0, 1]")
    t = t.reshape(logits.shape)
    p = T.clamp(T.sigmoid(logits), eps, 1.0 - eps)
    return -(T.log(p) * t + T.log(1.0 - p) * (1.0 - t))


def bce(logits, targets, eps: float = PROB_EPS) -> Tensor:
    """Mean binary cross-entropy; targets may be hard labels or soft probabilities."""
    return bce_terms(T.as_tensor(logits), targets, eps).mean()


@dataclass
class LossBreakdown:
    """Losses for one batch. ``*_class``/``*_distill`` are the unweighted BCE
    means of each head on that subset (``None`` if the subset is empty or the
    head unused); ``class_term``/``distill_term`` are the weighted head
    contributions to ``total``."""
    total: Tensor
    fake: float | None
    real: float | None
    fake_class: float | None = None
    fake_distill: float | None = None
    real_class: float | None = None
    real_distill: float | None = None
    class_term: float = 0.0
    distill_term: float = 0.0
    n_fake: int = 0
    n_real: int = 0

    @property
    def value(self) -> float:
        return self.total.item()


def distillation_loss(cfg: LossConfig, heads: HeadOutputs, labels, teacher_logits=None) -> LossBreakdown:
    """Fake/real-split distillation objective.

    With ``lam == 1`` the distillation term is dropped and the teacher logits
    are ignored (they may be ``None``). When a batch holds a single class, the
    total is that class's loss alone.
    """
    cfg.validate()
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    n = len(y)
    if n == 0:
        raise ContractError("distillation_loss needs a non-empty batch")
    if np.any((y != 0.0) & (y != 1.0)):
        raise ContractError("labels must be 0 or 1")
    if heads.class_logit.shape != (n, 1):
        raise ContractError(f"class logits {heads.class_logit.shape} do not match {n} labels")

    use_distill = cfg.lam < 1.0
    if use_distill:
        if teacher_logits is None or heads.distill_logit is None:
            raise ContractError("lambda < 1 needs both teacher logits and a distillation head")
        zt = np.asarray(teacher_logits.data if isinstance(teacher_logits, Tensor) else teacher_logits,
                        dtype=np.float64).reshape(-1)
        if len(zt) != n:
            raise ContractError(f"{len(zt)} teacher logits for a batch of {n}")
        d_terms = bce_terms(heads.distill_logit, T.stable_sigmoid(zt).reshape(n, 1), cfg.eps)
    c_terms = bce_terms(heads.class_logit, y.reshape(n, 1), cfg.eps)

    lam = cfg.lam
    subsets = {}
    for name, mask in (("fake", y == 1.0), ("real", y == 0.0)):
        count = int(mask.sum())
        if count == 0:
            continue
        weights = Tensor((mask / count).reshape(n, 1))
        c_mean = (c_terms * weights).sum()
        loss = c_mean * lam
        d_mean = None
        if use_distill:
            d_mean = (d_terms * weights).sum()
            loss = loss + d_mean * (1.0 - lam)
        subsets[name] = (loss, c_mean, d_mean, count)

    if len(subsets) == 2:
        total = (subsets["fake"][0] + subsets["real"][0]) * 0.5
        share = 0.5
    else:
        total = next(iter(subsets.values()))[0]
        share = 1.0

    def val(t):
        return None if t is None else t.item()

    out = LossBreakdown(total=total, fake=None, real=None)
    class_term = distill_term = 0.0
    for name, (loss, c_mean, d_mean, count) in subsets.items():
        setattr(out, name, loss.item())
        setattr(out, f"{name}_class", c_mean.item())
        setattr(out, f"{name}_distill", val(d_mean))
        setattr(out, f"n_{name}", count)
        class_term += share * lam * c_mean.item()
        if d_mean is not None:
            distill_term += share * (1.0 - lam) * d_mean.item()
    out.class_term, out.distill_term = class_term, distill_term
    return out


# ------------------------------------------------------------------- optimizer

@dataclass
class OptimizerState:
    """SGD with momentum: ``v = momentum * v + g``; ``p -= lr * v``."""
    lr: float = 0.01
    momentum: float = 0.9
    base_lr: float | None = None
    buffers: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")
        if self.base_lr is None:
            self.base_lr = self.lr


def sgd_step(state: OptimizerState, params: Sequence[Tensor], grads: Sequence[np.ndarray | None] | None = None) -> None:
    """In-place parameter update. Parameters without a gradient are skipped."""
    if grads is None:
        grads = [p.grad for p in params]
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        v = state.buffers.get(i)
        v = g.copy() if v is None else state.momentum * v + g
        state.buffers[i] = v
        p.data -= state.lr * v


@dataclass
class StepDecay:
    """Multiply the base rate by ``factor`` at each boundary fraction of training."""
    epochs: int
    points: tuple[float, ...] = (0.6, 0.85)
    factor: float = 0.1

    @property
    def boundaries(self) -> list[int]:
        # a boundary at epoch 0 would only rescale the base rate; drop it
        return [b for b in (int(math.floor(f * self.epochs)) for f in self.points) if b >= 1]

    def lr_at(self, base_lr: float, epoch: int) -> float:
        """Rate for 0-based ``epoch``."""
        drops = sum(1 for b in self.boundaries if epoch >= b)
        return base_lr * self.factor ** drops


# --------------------------------------------------------------------- training

@dataclass
class TrainRunConfig:
    epochs: int = 30
    batch_size: int = 16
    batches_per_epoch: int = 0         # 0 = one pass over the training split
    lr: float = 0.01
    momentum: float = 0.9
    decay_points: tuple[float, ...] = (0.6, 0.85)
    decay_factor: float = 0.1
    val_every: int = 1
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 2 or self.val_every < 1:
            raise ConfigError("epochs >= 1, batch_size >= 2 and val_every >= 1 are required")
        if self.batches_per_epoch < 0:
            raise ConfigError("batches_per_epoch must be >= 0")
        if self.lr <= 0 or not 0.0 <= self.momentum < 1.0:
            raise ConfigError("lr must be > 0 and momentum in [0, 1)")
        if any(not 0.0 < p <= 1.0 for p in self.decay_points) or not 0.0 < self.decay_factor <= 1.0:
            raise ConfigError("decay points must be in (0, 1] and factor in (0, 1]")


LOG_COLUMNS = ["epoch", "lr",
               "train_L_fake", "train_L_real", "train_L_train",
               "val_L_fake", "val_L_real", "val_L_train",
               "train_class_term", "train_distill_term", "val_class_term", "val_distill_term"]


@dataclass
class TrainResult:
    model: Module
    rows: list[dict]
    best_epoch: int
    best_val: float
    best_state: dict[str, np.ndarray]

    def log_csv(self) -> str:
        return format_log(self.rows)


def format_log(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in LOG_COLUMNS])
    return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def balanced_batches(labels: np.ndarray, batch_size: int, rng: np.random.Generator,
                     num_batches: int = 0) -> list[np.ndarray]:
    """Index batches holding (as near as possible) equal fake and real counts.
    The minority class cycles when exhausted."""
    fake = np.flatnonzero(labels == 1)
    real = np.flatnonzero(labels == 0)
    if len(fake) == 0 or len(real) == 0:
        raise ContractError("balanced batches need both classes in the training split")
    rng.shuffle(fake)
    rng.shuffle(real)
    num_batches = num_batches or max(1, len(labels) // batch_size)
    n_fake = batch_size // 2
    n_real = batch_size - n_fake
    batches = []
    for b in range(num_batches):
        f = np.take(fake, np.arange(b * n_fake, (b + 1) * n_fake), mode="wrap")
        r = np.take(real, np.arange(b * n_real, (b + 1) * n_real), mode="wrap")
        batch = np.concatenate([f, r])
        rng.shuffle(batch)
        batches.append(batch)
    return batches


def state_dict(model: Module) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in model.named_parameters()}


def load_state(model: Module, state: dict[str, np.ndarray]) -> None:
    for name, p in model.named_parameters():
        p.data = state[name].copy()


def check_finite(named: Sequence[tuple[str, np.ndarray | None]]) -> None:
    for name, arr in named:
        if arr is not None and not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"non-finite values first appeared in {name}")


def teacher_logits_for(teacher: Teacher, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Frozen-teacher logits, computed without gradient tracking."""
    out = []
    with T.no_grad():
        for lo in range(0, len(images), batch_size):
            out.append(teacher_logit(teacher, Tensor(images[lo:lo + batch_size])).data[:, 0])
    return np.concatenate(out)


HeadsFn = Callable[[Module, Tensor], HeadOutputs]


def student_heads(model: HybridViT, x: Tensor) -> HeadOutputs:
    return forward(model, x)


def teacher_heads(model: Teacher, x: Tensor) -> HeadOutputs:
    return HeadOutputs(teacher_logit(model, x), None)


def split_loss(model: Module, heads_fn: HeadsFn, ds: Dataset, loss_cfg: LossConfig,
               teacher_logits: np.ndarray | None, batch_size: int = 64) -> LossBreakdown:
    """Whole-split loss (per-class means over every sample), no tracking."""
    cls, dist = [], []
    with T.no_grad():
        for lo in range(0, len(ds), batch_size):
            h = heads_fn(model, Tensor(ds.images[lo:lo + batch_size]))
            cls.append(h.class_logit.data)
            dist.append(None if h.distill_logit is None else h.distill_logit.data)
        heads = HeadOutputs(Tensor(np.concatenate(cls)),
                            None if dist[0] is None else Tensor(np.concatenate(dist)))
        return distillation_loss(loss_cfg, heads, ds.labels, teacher_logits)


def fit(model: Module, heads_fn: HeadsFn, train: Dataset, val: Dataset, run: TrainRunConfig,
        loss_cfg: LossConfig, train_teacher_logits: np.ndarray | None = None,
        val_teacher_logits: np.ndarray | None = None, name: str = "run",
        on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Generic SGD loop; keeps the parameters with the lowest validation loss."""
    run.validate()
    loss_cfg.validate()
    if len(train) == 0 or len(val) == 0:
        raise ContractError("training and validation splits must be non-empty")
    named = list(model.named_parameters())
    params = [p for _, p in named]
    opt = OptimizerState(lr=run.lr, momentum=run.momentum)
    schedule = StepDecay(run.epochs, tuple(run.decay_points), run.decay_factor)
    rows: list[dict] = []
    best_val, best_epoch, best_state = math.inf, -1, state_dict(model)

    for epoch in range(run.epochs):
        opt.lr = schedule.lr_at(opt.base_lr, epoch)
        batches = balanced_batches(train.labels, run.batch_size, stream(run.seed, name, "batches", epoch),
                                   run.batches_per_epoch)
        sums = dict.fromkeys(("fake", "real", "total", "class_term", "distill_term"), 0.0)
        counts = dict.fromkeys(("fake", "real"), 0)
        for idx in batches:
            x = Tensor(train.images[idx])
            zt = None if train_teacher_logits is None else train_teacher_logits[idx]
            for p in params:
                p.grad = None
            with T.Tape() as tape:
                heads = heads_fn(model, x)
                br = distillation_loss(loss_cfg, heads, train.labels[idx], zt)
            check_finite([("loss", br.total.data), ("class logits", heads.class_logit.data)])
            T.backward(br.total, tape)
            check_finite([(f"gradient of {n}", p.grad) for n, p in named])
            sgd_step(opt, params)
            check_finite([(f"parameter {n}", p.data) for n, p in named])
            sums["total"] += br.value
            sums["class_term"] += br.class_term
            sums["distill_term"] += br.distill_term
            for k in ("fake", "real"):
                if getattr(br, k) is not None:
                    sums[k] += getattr(br, k)
                    counts[k] += 1
        nb = len(batches)
        row = {"epoch": epoch + 1, "lr": opt.lr,
               "train_L_fake": sums["fake"] / counts["fake"] if counts["fake"] else None,
               "train_L_real": sums["real"] / counts["real"] if counts["real"] else None,
               "train_L_train": sums["total"] / nb,
               "train_class_term": sums["class_term"] / nb,
               "train_distill_term": sums["distill_term"] / nb}
        if (epoch + 1) % run.val_every == 0 or epoch + 1 == run.epochs:
            vb = split_loss(model, heads_fn, val, loss_cfg, val_teacher_logits)
            row.update({"val_L_fake": vb.fake, "val_L_real": vb.real, "val_L_train": vb.value,
                        "val_class_term": vb.class_term, "val_distill_term": vb.distill_term})
            if vb.value < best_val:
                best_val, best_epoch, best_state = vb.value, epoch + 1, state_dict(model)
        rows.append(row)
        log.info("%s epoch %d lr %.4g train %.4f val %s", name, epoch + 1, opt.lr,
                 row["train_L_train"], row.get("val_L_train"))
        if on_epoch is not None:
            on_epoch(row)

    load_state(model, best_state)
    return TrainResult(model, rows, best_epoch, best_val, best_state)


def train_teacher(train: Dataset, val: Dataset, teacher: Teacher, run: TrainRunConfig,
                  **kwargs) -> TrainResult:
    """Plain BCE on hard labels (the lam = 1 case of the split objective)."""
    if len(train) == 0:
        raise ContractError("cannot train a teacher on an empty dataset")
    return fit(teacher, teacher_heads, train, val, run, LossConfig(lam=1.0), name="teacher", **kwargs)


def train_student(train: Dataset, val: Dataset, teacher: Teacher | None, model: HybridViT,
                  run: TrainRunConfig, loss_cfg: LossConfig, **kwargs) -> TrainResult:
    """Distillation training against a frozen teacher.

    Teacher logits for both splits are computed once up front; the teacher's
    parameters are never touched. ``teacher`` may be ``None`` only when
    ``loss_cfg.lam == 1``.
    """
    if teacher is None and loss_cfg.lam < 1.0:
        raise ContractError("a teacher is required when lambda < 1")
    zt_train = zt_val = None
    if teacher is not None:
        zt_train = teacher_logits_for(teacher, train.images)
        zt_val = teacher_logits_for(teacher, val.images)
    return fit(model, student_heads, train, val, run, loss_cfg, zt_train, zt_val,
               name="student", **kwargs)
