"""Gumbel-softmax relaxation of categorical sampling, with temperature annealing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ContractError

# Uniform draws are clamped away from {0, 1} before the double-log transform.
_U_EPS = 1e-12


@dataclass
class AnnealSchedule:
    """Per-epoch exponential temperature decay with a floor."""

    tau0: float = 1.0
    decay: float = 0.5
    floor: float = 0.001

    def __post_init__(self):
        if not (self.tau0 > self.floor > 0.0):
            raise ContractError("anneal schedule needs tau0 > floor > 0")
        if not (0.0 < self.decay < 1.0):
            raise ContractError("anneal decay must be in (0, 1)")


def anneal(epoch: int, schedule: AnnealSchedule) -> float:
    if epoch < 0:
        raise ContractError("epoch must be non-negative")
    return max(schedule.floor, schedule.tau0 * schedule.decay ** epoch)


def sample_gumbel(shape, seed, dtype=np.float64) -> np.ndarray:
    """Seeded Gumbel(0, 1) draws via g = -log(-log(u)).

    ``seed`` may be anything ``np.random.default_rng`` accepts, or an
    existing Generator (consumed in place).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.random(shape)
    u = np.clip(u, _U_EPS, 1.0 - _U_EPS)
    return (-np.log(-np.log(u))).astype(dtype, copy=False)


def gumbel_softmax(logits, tau: float, noise: np.ndarray):
    """softmax((log_softmax(logits) + noise) / tau).

    Accepts either a plain numpy array (pure forward evaluation) or an
    engine Tensor, in which case the result stays on the tape and is
    differentiable in the logits at fixed noise.
    """
    if tau <= 0.0:
        raise ContractError("gumbel_softmax temperature must be positive")
    if isinstance(logits, ad.Tensor):
        if noise.shape != logits.shape:
            raise ContractError("noise shape must match logits shape")
        noise_t = ad.Tensor(noise.astype(logits.dtype, copy=False))
        logp = ad.log_softmax(logits)
        return ad.softmax(ad.scale_shift(ad.add(logp, noise_t), 1.0 / tau))
    logits = np.asarray(logits, dtype=np.float64)
    if noise.shape != logits.shape:
        raise ContractError("noise shape must match logits shape")
    z = logits - np.log(np.exp(logits - logits.max(axis=-1, keepdims=True))
                        .sum(axis=-1, keepdims=True)) - logits.max(axis=-1, keepdims=True)
    y = (z + noise) / tau
    y -= y.max(axis=-1, keepdims=True)
    e = np.exp(y)
    return e / e.sum(axis=-1, keepdims=True)
