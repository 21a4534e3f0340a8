"""Deterministic training loop: ADAM over the class-balanced loss."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dataio import Sample, augment7, resize_sample
from .network import NetworkConfig, NetworkParams, balanced_bce_loss, init_network_params, predict
from .optim import Adam, LinearSchedule
from .tensor import NumericalError, Tensor, no_grad

__all__ = ["TrainSettings", "TrainResult", "train_model"]


@dataclass
class TrainSettings:
    iterations: int = 2000
    batch_size: int = 8
    lr_initial: float = 5e-5
    lr_final: float = 5e-7
    seed: int = 0
    augment: bool = True
    log_every: int = 100


@dataclass
class TrainResult:
    params: NetworkParams
    config: NetworkConfig
    log: list[tuple[int, float, float]] = field(default_factory=list)  # (iter, loss, lr)


def _batch_loss(
    batch: list[Sample], params: NetworkParams, cfg: NetworkConfig, with_grad: bool
) -> float:
    total = 0.0
    for sample in batch:
        image = Tensor(sample.image)
        pred = predict(image, params, cfg)
        loss = balanced_bce_loss(pred.map, sample.mask)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericalError(f"non-finite loss on sample '{sample.id}'")
        if with_grad:
            loss.backward()
        total += value
    return total / len(batch)


def train_model(
    samples: list[Sample],
    cfg: NetworkConfig,
    settings: TrainSettings,
    log_fn=None,
) -> TrainResult:
    """Train from scratch on the given samples; fully determined by the seed.

    Samples are resized to the configured input size and (optionally)
    expanded with the 7 dihedral variants. Batch composition is drawn up
    front from the seed, and per-batch gradients accumulate in a fixed order,
    so identical invocations produce bit-identical parameters.
    """
    if not samples:
        raise ValueError("no training samples")
    ss = np.random.SeedSequence(settings.seed)
    seed_params, seed_batches = ss.spawn(2)

    pool: list[Sample] = []
    for s in samples:
        variants = augment7(s) if settings.augment else [s]
        pool.extend(resize_sample(v, cfg.input_size) for v in variants)

    params = init_network_params(cfg, np.random.default_rng(seed_params))
    result = TrainResult(params=params, config=cfg)
    iters = settings.iterations
    if iters <= 0:
        return result

    schedule = LinearSchedule(settings.lr_initial, settings.lr_final, iters)
    adam = Adam(dict(params.named_parameters()), schedule)
    batch_rng = np.random.default_rng(seed_batches)
    indices = batch_rng.integers(0, len(pool), size=(iters, settings.batch_size))

    def emit(it: int, loss: float, lr: float) -> None:
        result.log.append((it, loss, lr))
        if log_fn is not None:
            log_fn(it, loss, lr)

    with no_grad():
        loss0 = _batch_loss([pool[j] for j in indices[0]], params, cfg, with_grad=False)
    emit(0, loss0, schedule.lr_at(1))

    for it in range(1, iters + 1):
        batch = [pool[j] for j in indices[it - 1]]
        adam.zero_grad()
        loss = _batch_loss(batch, params, cfg, with_grad=True)
        lr = adam.step(grad_scale=1.0 / len(batch))
        if it % settings.log_every == 0 or it == iters:
            emit(it, loss, lr)
    return result
