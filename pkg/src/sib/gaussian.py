"""Closed-form quantities for diagonal Gaussians (all in nats)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor

from . import diffcore as dc

LOG_2PIE = float(np.log(2.0 * np.pi * np.e))
VAR_FLOOR = 1e-8


@dataclass(frozen=True)
class DiagGaussian:
    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        var = np.atleast_1d(np.asarray(self.var, dtype=np.float64))
        if mean.shape != var.shape or mean.ndim != 1:
            raise ValueError(f"mean {mean.shape} and var {var.shape} must be equal-length vectors")
        if not np.all(var > 0):
            raise ValueError("variances must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "var", var)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @classmethod
    def standard(cls, dim: int) -> "DiagGaussian":
        return cls(np.zeros(dim), np.ones(dim))

    def log_prob(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        return -0.5 * np.sum(np.log(2 * np.pi * self.var) + (z - self.mean) ** 2 / self.var, axis=-1)


@dataclass(frozen=True)
class JointBlockGaussian:
    """Joint law of ``(Z + Z', Z)`` for independent diagonal ``Z, Z'``."""

    base: DiagGaussian
    extra: DiagGaussian

    @property
    def sum_block(self) -> DiagGaussian:
        return DiagGaussian(self.base.mean + self.extra.mean, self.base.var + self.extra.var)

    @property
    def cross_block(self) -> np.ndarray:
        return self.base.var

    def covariance(self) -> np.ndarray:
        s, e = np.diag(self.base.var), np.diag(self.extra.var)
        return np.block([[s + e, s], [s, s]])

    def mean(self) -> np.ndarray:
        return np.concatenate([self.sum_block.mean, self.base.mean])


def _check_dims(p: DiagGaussian, q: DiagGaussian):
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")


def kl_diag(p: DiagGaussian, q: DiagGaussian) -> float:
    """KL(p || q) for diagonal Gaussians."""
    _check_dims(p, q)
    r = p.var / q.var
    return float(0.5 * np.sum(-np.log(r) + r + (p.mean - q.mean) ** 2 / q.var - 1.0))


def entropy_diag(p: DiagGaussian) -> float:
    return float(0.5 * (p.dim * LOG_2PIE + np.sum(np.log(p.var))))


def sample(p: DiagGaussian, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    eps = rng.standard_normal(p.dim if n is None else (n, p.dim))
    return p.mean + np.sqrt(p.var) * eps


def rsample(mean: dc.Node, var: dc.Node, rng: np.random.Generator) -> dc.Node:
    """Reparameterized draw ``mean + sqrt(var) * eps``; differentiable in both."""
    eps = rng.standard_normal(mean.shape)
    std = dc.Node(np.sqrt(var.value), [(var, lambda g: g * 0.5 / np.sqrt(var.value))])
    return mean + std * eps


def joint_entropy_sum_and_base(var: np.ndarray, var_extra: np.ndarray, dim: int | None = None) -> float:
    """H(Z + Z', Z) = D ln(2 pi e) + 1/2 ln det(Sigma Sigma')."""
    var, var_extra = np.asarray(var, float), np.asarray(var_extra, float)
    d = var.shape[0] if dim is None else dim
    return float(d * LOG_2PIE + 0.5 * np.sum(np.log(var) + np.log(var_extra)))


def entropy_gap(var_extra: np.ndarray, dim: int | None = None) -> float:
    """H(Z + Z', Z) - H(Z); nonnegative iff det(Sigma') >= (2 pi e)^-D."""
    var_extra = np.asarray(var_extra, float)
    d = var_extra.shape[0] if dim is None else dim
    return float(0.5 * d * LOG_2PIE + 0.5 * np.sum(np.log(var_extra)))


def lu_logdet(a: np.ndarray) -> tuple[float, float]:
    """(sign, log|det|) of a dense matrix via LU with partial pivoting."""
    lu, piv = lu_factor(a)
    d = np.diag(lu)
    swaps = np.sum(piv != np.arange(len(piv)))
    sign = (-1.0) ** swaps * np.prod(np.sign(d))
    return float(sign), float(np.sum(np.log(np.abs(d))))


def block_determinant_check(var: np.ndarray, var_extra: np.ndarray) -> tuple[float, float]:
    """Dense LU determinant of [[S+S', S], [S, S]] next to prod(S * S')."""
    joint = JointBlockGaussian(DiagGaussian(np.zeros_like(var), var),
                               DiagGaussian(np.zeros_like(var_extra), var_extra))
    sign, logdet = lu_logdet(joint.covariance())
    if sign <= 0:
        raise np.linalg.LinAlgError("assembled covariance is not positive definite")
    return float(np.exp(logdet)), float(np.prod(np.asarray(var) * np.asarray(var_extra)))


def dense_gaussian_entropy(cov: np.ndarray) -> float:
    sign, logdet = lu_logdet(cov)
    if sign <= 0:
        raise np.linalg.LinAlgError("covariance is not positive definite")
    return 0.5 * (cov.shape[0] * LOG_2PIE + logdet)
