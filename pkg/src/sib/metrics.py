"""I(X;Z), I(Z;Y), accuracy and parameter counts for trained models."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import diffcore as dc
from .datasets import LabeledDataset
from .model import Decoder, SibModel, aggregate, decode, encode


@dataclass
class MiReport:
    beta: float
    k: int
    variant: str
    i_xz: float
    i_zy: float
    accuracy: float
    param_count: int
    weights: list[float] = field(default_factory=list)
    stage: str = "final"
    split: str = "test"

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")

    def row(self) -> dict:
        d = asdict(self)
        d["weights"] = " ".join(f"{w:.6f}" for w in self.weights)
        return d


def _logits(decoder: Decoder, z: np.ndarray) -> np.ndarray:
    return decode(decoder, z).value


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    lp = logits - logsumexp(logits, axis=1, keepdims=True)
    return float(-lp[np.arange(len(labels)), labels].mean())


def estimate_i_zy(decoder: Decoder, z: np.ndarray, labels: np.ndarray, h_y: float) -> float:
    """H(Y) minus the decoder cross-entropy on features ``z``, floored at 0."""
    return max(h_y - cross_entropy(_logits(decoder, z), labels), 0.0)


def accuracy(decoder: Decoder, z: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(_logits(decoder, z), axis=1) == labels))


def estimate_i_xz_mc(mean: np.ndarray, var: np.ndarray, rng: np.random.Generator,
                     samples: int = 4, ref_size: int | None = 2000, tile: int = 512) -> float:
    """Monte-Carlo estimate of I(X; Z) for a Gaussian-mixture encoder.

    Each draw ``z ~ q(z|x_i)`` contributes ``log q(z|x_i) - log mean_j q(z|x_j)``
    with ``j`` over a uniform reference subset of size M. A point outside the
    subset takes the place of one fixed reference member in its own mixture,
    so every term, and the estimate, is at most ``log M``.
    """
    mean, var = np.asarray(mean, float), np.asarray(var, float)
    n, d = mean.shape
    m = n if ref_size is None else min(n, ref_size)
    if m < 2 or samples < 1:
        raise ValueError("need at least 2 reference points and 1 sample")
    ref = rng.permutation(n)[:m]
    in_ref = np.zeros(n, bool)
    in_ref[ref] = True
    rm, rv = mean[ref], var[ref]
    log_norm_ref = -0.5 * np.sum(np.log(2 * np.pi * rv), axis=1)

    total = 0.0
    for lo in range(0, n, tile):
        idx = np.arange(lo, min(lo + tile, n))
        mu, v = mean[idx], var[idx]
        eps = rng.standard_normal((samples, len(idx), d))
        z = mu + np.sqrt(v) * eps
        own = -0.5 * np.sum(np.log(2 * np.pi * v) + eps ** 2, axis=-1)  # S x T
        zz = z.reshape(-1, 1, d)
        logq = log_norm_ref - 0.5 * np.sum((zz - rm) ** 2 / rv, axis=-1)  # ST x M
        mix = logsumexp(logq, axis=1).reshape(samples, len(idx))
        outside = ~in_ref[idx]
        if outside.any():
            rest = logsumexp(logq[:, :-1], axis=1).reshape(samples, len(idx))
            mix = np.where(outside, np.logaddexp(rest, own), mix)
        total += np.sum(own - mix + np.log(m))
    return float(total / (n * samples))


def param_count(model: SibModel) -> int:
    return int(sum(p.value.size for p in model.parameters()))


def features(model: SibModel, x: np.ndarray, weighted: bool = True, rng=None):
    """Aggregated posterior (mean, var, sample) arrays for inputs ``x``."""
    main = encode(model.main, x, rng, model.kind)
    aux = [encode(e, x, rng, model.kind) for e in model.aux]
    if weighted:
        post = aggregate(dc.Node(model.weights.value), main, aux)
    else:
        post = main
    return post.mean.value, post.var.value, post.samples.value


def evaluate(model: SibModel, data: LabeledDataset, rng: np.random.Generator,
             stage: str = "final", sampled: bool = False, samples: int = 4,
             ref_size: int = 2000, chunk: int = 2000) -> MiReport:
    """Test-split metrics of the aggregated feature.

    Accuracy and I(Z;Y) read the posterior mean unless ``sampled``.
    """
    means, vars_, zs = [], [], []
    for lo in range(0, len(data), chunk):
        x = data.inputs[lo:lo + chunk]
        m, v, z = features(model, x, rng=rng if sampled else None)
        means.append(m), vars_.append(v), zs.append(z)
    mean, var, z = np.concatenate(means), np.concatenate(vars_), np.concatenate(zs)
    return MiReport(
        beta=model.kind.beta, k=model.n_aux, variant=model.kind.variant.value,
        i_xz=estimate_i_xz_mc(mean, var, rng, samples, ref_size),
        i_zy=estimate_i_zy(model.decoder, z, data.labels, data.h_y),
        accuracy=accuracy(model.decoder, z, data.labels),
        param_count=param_count(model), weights=model.weights.value.tolist(),
        stage=stage, split=data.split,
    )
