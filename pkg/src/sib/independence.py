"""Adversarial independence between a new feature and the sum of earlier ones.

A discriminator learns to tell aligned ``(z_i, z_prev)`` pairs (joint) from
pairs whose second half was shuffled across the batch (product of
marginals). Label 1 is the shuffled class.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .model import Discriminator, discriminate

CLAMP = 1e-7


@dataclass
class AdversarialBatch:
    z_i: dc.Node
    z_prev: dc.Node
    perm: np.ndarray

    @property
    def joint_pairs(self) -> tuple[dc.Node, dc.Node]:
        return self.z_i, self.z_prev

    @property
    def product_pairs(self) -> tuple[dc.Node, dc.Node]:
        return self.z_i, self.z_prev[self.perm]


def make_adversarial_batch(z_i, z_prev, rng: np.random.Generator) -> AdversarialBatch:
    z_i, z_prev = dc.const(z_i), dc.const(z_prev)
    if z_i.shape != z_prev.shape:
        raise dc.ShapeError("make_adversarial_batch", z_i.shape, z_prev.shape)
    b = z_i.shape[0]
    if b < 2:
        raise ValueError("shuffling needs a batch of at least 2")
    return AdversarialBatch(z_i, z_prev, rng.permutation(b))


def _detached(pair):
    return tuple(dc.Node(n.value) for n in pair)


def discriminator_loss(disc: Discriminator, batch: AdversarialBatch) -> dc.Node:
    """mean[-log(1 - d(joint)) - log d(product)]; features enter as constants."""
    d_joint = dc.clip(discriminate(disc, *_detached(batch.joint_pairs)), CLAMP, 1 - CLAMP)
    d_prod = dc.clip(discriminate(disc, *_detached(batch.product_pairs)), CLAMP, 1 - CLAMP)
    return dc.mean(-dc.log(1.0 - d_joint) - dc.log(d_prod))


def encoder_independence_penalty(disc: Discriminator, z_i, z_prev) -> dc.Node:
    """mean[-log d(joint)], pushing joint pairs toward the shuffled class.

    The earlier features enter as constants. Gradient also reaches the
    discriminator's ``.grad`` buffers, but callers only step the encoder
    optimizer with it and zero the buffers before the discriminator step.
    """
    d = discriminate(disc, z_i, dc.Node(dc.const(z_prev).value))
    return dc.mean(-dc.log(dc.clip(d, CLAMP, 1 - CLAMP)))


def mi_from_density_ratio(disc: Discriminator, z_i, z_prev) -> float:
    """Density-ratio estimate of I(z_i; z_prev): mean log((1 - d) / d) on joint pairs."""
    d = np.clip(discriminate(disc, dc.const(z_i).value, dc.const(z_prev).value).value,
                CLAMP, 1 - CLAMP)
    return float(np.mean(np.log1p(-d) - np.log(d)))


def train_discriminator(disc: Discriminator, z_i: np.ndarray, z_prev: np.ndarray,
                        rng: np.random.Generator, steps: int, batch_size: int = 100,
                        lr: float = 1e-3) -> list[float]:
    """Fit ``disc`` on fixed feature arrays; used for diagnostics and calibration."""
    state = dc.AdamState()
    params = disc.parameters()
    n = len(z_i)
    losses = []
    for _ in range(steps):
        idx = rng.choice(n, size=batch_size, replace=False)
        batch = make_adversarial_batch(z_i[idx], z_prev[idx], rng)
        dc.zero_grad(params)
        loss = discriminator_loss(disc, batch)
        dc.backward(loss)
        dc.adam_step(params, state, lr)
        losses.append(float(loss.value))
    return losses
