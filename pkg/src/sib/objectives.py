"""IB Lagrangian losses: VIB, squared VIB and the nonlinear (KDE) IB."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .gaussian import DiagGaussian


class Variant(str, enum.Enum):
    VIB = "vib"
    SQVIB = "sqvib"
    NIB = "nib"


@dataclass(frozen=True)
class ObjectiveKind:
    variant: Variant = Variant.VIB
    beta: float = 1.0
    nib_var: float = 1.0
    prior: DiagGaussian | None = None  # None means N(0, I) at the feature dimension
    # "mean" divides the VIB/sqVIB KL by the feature dimension before beta applies
    kl_reduction: str = "sum"

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if self.kl_reduction not in ("sum", "mean"):
            raise ValueError("kl_reduction must be 'sum' or 'mean'")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.nib_var <= 0:
            raise ValueError("nib_var must be positive")

    def prior_for(self, dim: int) -> DiagGaussian:
        return self.prior if self.prior is not None else DiagGaussian.standard(dim)


@dataclass
class BatchPosteriors:
    """A batch of diagonal posteriors q(z|x_b) plus one reparameterized draw each.

    ``mean``, ``var`` and ``samples`` are ``B x D`` graph nodes.
    """

    mean: dc.Node
    var: dc.Node
    samples: dc.Node

    def __post_init__(self):
        if not (self.mean.shape == self.var.shape == self.samples.shape) or self.mean.ndim != 2:
            raise dc.ShapeError("BatchPosteriors", self.mean.shape, self.var.shape)

    @property
    def size(self) -> int:
        return self.mean.shape[0]

    @property
    def dim(self) -> int:
        return self.mean.shape[1]

    def posterior(self, b: int) -> DiagGaussian:
        return DiagGaussian(self.mean.value[b], self.var.value[b])


def vib_compression(batch: BatchPosteriors, prior: DiagGaussian) -> dc.Node:
    """Mean over the batch of KL(q(z|x_b) || prior)."""
    if prior.dim != batch.dim:
        raise ValueError(f"prior dimension {prior.dim} != posterior dimension {batch.dim}")
    pv = prior.var
    kl = 0.5 * (dc.log(dc.const(pv) / batch.var)
                + (batch.var + dc.square(batch.mean - prior.mean)) / pv - 1.0)
    return dc.mean(dc.sum_(kl, axis=1))


def pairwise_kl(batch: BatchPosteriors) -> dc.Node:
    """B x B matrix with entry (i, j) = KL(q_i || q_j)."""
    b, d = batch.size, batch.dim
    mi, mj = dc.reshape(batch.mean, (b, 1, d)), dc.reshape(batch.mean, (1, b, d))
    vi, vj = dc.reshape(batch.var, (b, 1, d)), dc.reshape(batch.var, (1, b, d))
    terms = dc.log(vj / vi) + (vi + dc.square(mi - mj)) / vj - 1.0
    return 0.5 * dc.sum_(terms, axis=2)


def nib_compression(batch: BatchPosteriors) -> dc.Node:
    """KDE upper bound -1/B sum_i log 1/B sum_j exp(-KL(q_i || q_j))."""
    b = batch.size
    lse = dc.logsumexp(-pairwise_kl(batch), axis=1)
    return -dc.mean(lse - np.log(b))


def prediction_loss(logits: dc.Node, labels: np.ndarray) -> dc.Node:
    """Mean softmax cross-entropy in nats."""
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise dc.ShapeError("prediction_loss", logits.shape, labels.shape)
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError(f"labels must lie in [0, {c})")
    logp = dc.log_softmax(logits, axis=1)
    return -dc.mean(logp[np.arange(n), labels])


def compression_term(kind: ObjectiveKind, batch: BatchPosteriors) -> dc.Node:
    """The compression bound the Lagrangian penalizes for this objective."""
    if kind.variant is Variant.NIB:
        return nib_compression(batch)
    kl = vib_compression(batch, kind.prior_for(batch.dim))
    return kl / batch.dim if kind.kl_reduction == "mean" else kl


def lagrangian(kind: ObjectiveKind, compression: dc.Node, pred_loss: dc.Node) -> dc.Node:
    if compression.value < -1e-9:
        raise ValueError(f"compression term is negative ({float(compression.value):.3g})")
    if kind.beta == 0:
        return pred_loss
    if kind.variant is Variant.SQVIB:
        return pred_loss + kind.beta * dc.square(compression)
    return pred_loss + kind.beta * compression
