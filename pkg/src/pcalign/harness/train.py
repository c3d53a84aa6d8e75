"""Training loop: Adam, stepped schedules, seeded shuffling, checkpoints."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..alignnet import (
    AlignNetParams,
    LossConfig,
    ModelConfig,
    PairTargets,
    forward_pair,
    staged_loss,
)
from ..autodiff import AdamState, Tape, adam_step
from ..autodiff.optim import zero_grads
from .sampling import augment, sample_points


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr: float = 0.005
    lr_decay: float = 0.5
    decay_every: int = 30  # epochs per learning-rate / batchnorm-decay step
    batch: int = 128
    n_points: int = 512
    aug_sigma: float = 0.01
    aug_clip: float = 0.05
    seed: int = 0
    checkpoint_every: int = 0  # 0: only the final checkpoint
    loss: LossConfig = field(default_factory=LossConfig)
    dataset: str = ""  # training-set path, used by the command line

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.n_points < 1:
            raise ValueError(f"n_points must be >= 1, got {self.n_points}")
        if self.batch < 2:
            raise ValueError(f"batch must be >= 2 for batchnorm, got {self.batch}")
        if self.lr <= 0.0 or not 0.0 < self.lr_decay <= 1.0 or self.decay_every < 1:
            raise ValueError("bad learning-rate schedule")
        if self.aug_sigma < 0.0 or self.aug_clip < 0.0 or self.checkpoint_every < 0:
            raise ValueError("negative augmentation or checkpoint settings")


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    """Stepped decay: lr * decay^(epoch // decay_every), epoch 0-based."""
    return cfg.lr * cfg.lr_decay ** (epoch // cfg.decay_every)


def bn_momentum_at(epoch: int, decay_every: int = 30) -> float:
    """Running-average decay D: starts at 0.5, halves the gap to 1 every
    schedule step, clipped at 0.99."""
    return min(0.99, 1.0 - 0.5 * 0.5 ** (epoch // decay_every))


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, step: int, breakdown: dict):
        terms = ", ".join(f"{k}={v:.6g}" for k, v in breakdown.items())
        super().__init__(
            f"non-finite loss at epoch {epoch} step {step}: {terms}")
        self.epoch = epoch
        self.step = step
        self.breakdown = breakdown


@dataclass
class TrainResult:
    params: AlignNetParams
    losses: list  # one dict per optimizer step
    checkpoints: list  # saved paths, final last
    final_path: Optional[Path]


def _batch_clouds(samples, cfg: TrainConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    c1 = np.empty((len(samples), cfg.n_points, 3))
    c2 = np.empty_like(c1)
    for i, s in enumerate(samples):
        c1[i] = augment(sample_points(s.cloud1, cfg.n_points, rng), rng,
                        cfg.aug_sigma, cfg.aug_clip)
        c2[i] = augment(sample_points(s.cloud2, cfg.n_points, rng), rng,
                        cfg.aug_sigma, cfg.aug_clip)
    return c1, c2


def train(samples, cfg: TrainConfig, out_dir=None,
          params: Optional[AlignNetParams] = None,
          model_config: Optional[ModelConfig] = None,
          log=None) -> TrainResult:
    """Train on pair samples; returns the updated parameters.

    Reproducibility contract: epoch e draws every random decision
    (shuffle, sampling, jitter, dropout) from one stream seeded by
    (cfg.seed, e), so runs with equal configs match bit for bit.
    """
    if not samples:
        raise ValueError("empty training set")
    if params is None:
        params = AlignNetParams(model_config or ModelConfig(),
                                rng=np.random.default_rng(cfg.seed))
    parameters = params.parameters()
    adam = AdamState(lr=cfg.lr)
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    losses: list[dict] = []
    checkpoints: list[Path] = []
    csv_fh = csv_writer = None
    if out_dir is not None:
        csv_fh = open(out_dir / "loss.csv", "w", newline="")
    try:
        step = 0
        for epoch in range(cfg.epochs):
            adam.lr = lr_at(cfg, epoch)
            params.set_bn_momentum(bn_momentum_at(epoch, cfg.decay_every))
            rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, epoch)))
            order = rng.permutation(len(samples))
            for lo in range(0, len(order), cfg.batch):
                chunk = [samples[j] for j in order[lo:lo + cfg.batch]]
                c1, c2 = _batch_clouds(chunk, cfg, rng)
                targets = PairTargets.from_samples(chunk)
                with Tape() as tape:
                    pair = forward_pair(params, c1, c2, mode="train", rng=rng)
                    total, breakdown = staged_loss(pair, targets, cfg.loss)
                if not all(math.isfinite(v) for v in breakdown.values()):
                    raise TrainingDiverged(epoch, step, breakdown)
                zero_grads(parameters)
                tape.backward(total)
                adam_step(parameters, adam)
                row = {"epoch": epoch, "step": step, "lr": adam.lr, **breakdown}
                losses.append(row)
                if csv_fh is not None:
                    if csv_writer is None:
                        csv_writer = csv.DictWriter(csv_fh, fieldnames=list(row))
                        csv_writer.writeheader()
                    csv_writer.writerow(row)
                step += 1
            if log is not None:
                recent = losses[-max(1, math.ceil(len(order) / cfg.batch)):]
                log(f"epoch {epoch}: lr {adam.lr:.6g} mean loss "
                    f"{np.mean([r['total'] for r in recent]):.6g}")
            if (out_dir is not None and cfg.checkpoint_every
                    and (epoch + 1) % cfg.checkpoint_every == 0):
                path = out_dir / f"epoch{epoch:04d}.ckpt"
                params.save(path, extra_config={"train": asdict(cfg)})
                checkpoints.append(path)
    finally:
        if csv_fh is not None:
            csv_fh.close()

    final_path = None
    if out_dir is not None:
        final_path = out_dir / "final.ckpt"
        params.save(final_path, extra_config={"train": asdict(cfg)})
        checkpoints.append(final_path)
    return TrainResult(params=params, losses=losses,
                       checkpoints=checkpoints, final_path=final_path)
