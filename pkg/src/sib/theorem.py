"""Numerical checks of the Gaussian aggregation result.

For independent diagonal Gaussians ``Z`` and ``Z'`` and labels produced by
a full-rank linear decoder followed by a one-hot argmax, adding ``Z'``
should never lose information about the label. This module checks the
closed-form entropy identities behind that claim at dimensions up to 8 and
the information inequality itself by Monte Carlo at D <= 2.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian import (LOG_2PIE, DiagGaussian, JointBlockGaussian, block_determinant_check,
                       dense_gaussian_entropy, entropy_diag, entropy_gap,
                       joint_entropy_sum_and_base)

IDENTITY_RTOL = 1e-9


@dataclass
class MiEstimate:
    value: float
    stderr: float
    method: str = "histogram"

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("stderr must be nonnegative")


@dataclass
class TheoremInstance:
    mean: np.ndarray
    var: np.ndarray
    mean_extra: np.ndarray
    var_extra: np.ndarray
    W: np.ndarray
    n_mc: int = 200_000
    seed: int = 0

    def __post_init__(self):
        self.mean, self.var = np.atleast_1d(self.mean).astype(float), np.atleast_1d(self.var).astype(float)
        self.mean_extra = np.atleast_1d(self.mean_extra).astype(float)
        self.var_extra = np.atleast_1d(self.var_extra).astype(float)
        self.W = np.atleast_2d(np.asarray(self.W, dtype=float))
        d = self.dim
        if not all(a.shape == (d,) for a in (self.var, self.mean_extra, self.var_extra)):
            raise ValueError("means and variances must share one dimension")
        if self.W.shape != (d, d):
            raise ValueError(f"W must be {d}x{d}, got {self.W.shape}")
        if np.any(self.var <= 0) or np.any(self.var_extra <= 0):
            raise ValueError("variances must be positive")
        rows = self.W / np.linalg.norm(self.W, axis=1, keepdims=True).clip(min=1e-300)
        if abs(np.linalg.det(rows)) <= 1e-9:
            raise ValueError("W is not full rank")

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    @property
    def base(self) -> DiagGaussian:
        return DiagGaussian(self.mean, self.var)

    @property
    def extra(self) -> DiagGaussian:
        return DiagGaussian(self.mean_extra, self.var_extra)

    def conforms(self) -> bool:
        """Whether det(Sigma') >= (2 pi e)^-D."""
        return bool(np.sum(np.log(self.var_extra)) >= -self.dim * LOG_2PIE)


def random_instance(rng: np.random.Generator, dim: int, conforming: bool | None = True,
                    n_mc: int = 200_000) -> TheoremInstance:
    """Draw means ~ N(0, 1), log-variances ~ U(log 0.1, log 10), Gaussian W.

    ``conforming=True`` redraws ``Sigma'`` until the determinant condition holds,
    ``False`` until it fails, ``None`` keeps the first draw.
    """
    lo, hi = np.log(0.1), np.log(10.0)
    while True:
        var_extra = np.exp(rng.uniform(lo - 2.0, hi, dim))
        ok = np.sum(np.log(var_extra)) >= -dim * LOG_2PIE
        if conforming is None or ok == conforming:
            break
    while True:
        W = rng.standard_normal((dim, dim))
        if abs(np.linalg.det(W / np.linalg.norm(W, axis=1, keepdims=True))) > 1e-3:
            break
    return TheoremInstance(rng.standard_normal(dim), np.exp(rng.uniform(lo, hi, dim)),
                           rng.standard_normal(dim), var_extra, W, n_mc,
                           int(rng.integers(2**31)))


def one_hot_argmax(y_prime) -> int | np.ndarray:
    """Index of the largest component (lowest index on ties); works row-wise."""
    y = np.asarray(y_prime, dtype=float)
    return int(np.argmax(y)) if y.ndim == 1 else np.argmax(y, axis=-1)


def decoder_labels(y_prime: np.ndarray) -> np.ndarray:
    """Class labels for decoder outputs ``N x D``.

    With D = 1 the argmax of a single logit is constant, so the scalar is
    read against a zero reference logit (a two-class sign decision).
    """
    y_prime = np.asarray(y_prime, dtype=float)
    if y_prime.shape[1] == 1:
        y_prime = np.concatenate([np.zeros_like(y_prime), y_prime], axis=1)
    return one_hot_argmax(y_prime)


# -- closed-form identities ----------------------------------------------------

def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1.0)


def check_entropy_identities(inst: TheoremInstance) -> dict:
    det_dense, det_prod = block_determinant_check(inst.var, inst.var_extra)
    joint = JointBlockGaussian(inst.base, inst.extra)
    h_joint_closed = joint_entropy_sum_and_base(inst.var, inst.var_extra)
    h_joint_dense = dense_gaussian_entropy(joint.covariance())
    gap_closed = entropy_gap(inst.var_extra)
    gap_direct = h_joint_closed - entropy_diag(inst.base)
    errs = {
        "det_rel_err": abs(det_dense - det_prod) / det_prod,
        "joint_entropy_rel_err": _rel(h_joint_closed, h_joint_dense),
        "gap_rel_err": _rel(gap_closed, gap_direct),
    }
    return {
        "dim": inst.dim,
        "det_dense": det_dense, "det_product": det_prod,
        "h_joint_closed": h_joint_closed, "h_joint_dense": h_joint_dense,
        "gap": gap_closed, "gap_direct": gap_direct,
        "conforms": inst.conforms(),
        "gap_sign_matches": (gap_closed >= 0) == inst.conforms(),
        **errs,
        "pass": max(errs.values()) < IDENTITY_RTOL,
    }


# -- histogram mutual information ----------------------------------------------

def _entropy_mm(counts: np.ndarray, n: int) -> float:
    c = counts[counts > 0]
    p = c / n
    return float(-np.sum(p * np.log(p)) + (len(c) - 1) / (2 * n))


def equal_mass_cells(z: np.ndarray, bins: int | None = None) -> np.ndarray:
    """Joint cell index after per-dimension equal-mass binning."""
    z = np.asarray(z, float).reshape(len(z), -1)
    n, d = z.shape
    bins = bins or int(np.ceil(n ** (1 / 3)))
    cell = np.zeros(n, dtype=np.int64)
    for j in range(d):
        edges = np.quantile(z[:, j], np.linspace(0, 1, bins + 1)[1:-1])
        cell = cell * bins + np.searchsorted(edges, z[:, j], side="right")
    return cell


def plugin_mi(cells: np.ndarray, labels: np.ndarray) -> float:
    """Plug-in MI with Miller-Madow correction on every entropy term."""
    n = len(cells)
    _, cell_idx = np.unique(cells, return_inverse=True)
    _, lab_idx = np.unique(labels, return_inverse=True)
    n_lab = lab_idx.max() + 1
    joint = np.bincount(cell_idx * n_lab + lab_idx)
    return (_entropy_mm(np.bincount(cell_idx), n) + _entropy_mm(np.bincount(lab_idx), n)
            - _entropy_mm(joint, n))


def histogram_mi(z: np.ndarray, labels: np.ndarray, rng: np.random.Generator,
                 n_boot: int = 20, bins: int | None = None) -> MiEstimate:
    cells = equal_mass_cells(z, bins)
    value = plugin_mi(cells, labels)
    n = len(cells)
    boots = [plugin_mi(cells[idx], labels[idx])
             for idx in (rng.integers(0, n, n) for _ in range(n_boot))]
    return MiEstimate(value, float(np.std(boots, ddof=1)))


def draw(inst: TheoremInstance, rng: np.random.Generator):
    """Samples of Z, Z' and the decoder output W(Z + Z')."""
    z = inst.mean + np.sqrt(inst.var) * rng.standard_normal((inst.n_mc, inst.dim))
    zx = inst.mean_extra + np.sqrt(inst.var_extra) * rng.standard_normal((inst.n_mc, inst.dim))
    return z, zx, (z + zx) @ inst.W.T


def verify_information_gain(inst: TheoremInstance) -> dict:
    """Estimate I(Z + Z'; Y) and I(Z; Y) with Y = h(W(Z + Z')).

    Passes when the first is not below the second by more than two combined
    bootstrap standard errors.
    """
    if inst.dim > 2:
        raise ValueError("histogram MI is only trusted up to D = 2")
    if not inst.conforms():
        return {"status": "precondition unmet", "pass": None, "dim": inst.dim}
    rng = np.random.default_rng(inst.seed)
    z, zx, y_prime = draw(inst, rng)
    y = decoder_labels(y_prime)
    i_sum = histogram_mi(z + zx, y, rng)
    i_base = histogram_mi(z, y, rng)
    se = float(np.hypot(i_sum.stderr, i_base.stderr))
    p = np.bincount(y) / len(y)
    p = p[p > 0]
    return {
        "status": "checked", "dim": inst.dim,
        "i_sum": i_sum.value, "i_sum_stderr": i_sum.stderr,
        "i_base": i_base.value, "i_base_stderr": i_base.stderr,
        "h_y": float(-np.sum(p * np.log(p))),
        "margin": i_sum.value - i_base.value, "combined_stderr": se,
        "pass": bool(i_sum.value >= i_base.value - 2 * se),
    }


def markov_sanity(inst: TheoremInstance) -> dict:
    """MI with a label is unchanged by relabeling the label deterministically.

    Computes I(Z; Y) for the stored labels, for a permuted relabeling, and for
    labels recomputed from the decoder outputs. Also reports I(Z; Y') with the
    continuous decoder output binned finely, which can only be larger.
    """
    if inst.dim > 2:
        raise ValueError("histogram MI is only trusted up to D = 2")
    rng = np.random.default_rng(inst.seed)
    z, _, y_prime = draw(inst, rng)
    y = decoder_labels(y_prime)
    cells = equal_mass_cells(z)
    i_zy = histogram_mi(z, y, rng)
    perm = rng.permutation(max(int(y.max()) + 1, 2))
    i_perm = plugin_mi(cells, perm[y])
    # independent route: decide the class from the raw outputs by pairwise comparison
    if y_prime.shape[1] == 1:
        y_again = (y_prime[:, 0] > 0).astype(int)
    else:
        y_again = np.argmax(y_prime >= y_prime.max(axis=1, keepdims=True), axis=1)
    i_again = plugin_mi(cells, y_again)
    fine = equal_mass_cells(y_prime, bins=int(np.ceil(inst.n_mc ** (1 / 3))))
    i_fine = plugin_mi(cells, fine)
    return {
        "dim": inst.dim,
        "i_zy": i_zy.value, "stderr": i_zy.stderr,
        "i_zy_relabelled": i_perm, "relabel_diff": abs(i_perm - i_zy.value),
        "i_z_h_yprime": i_again, "h_diff": abs(i_again - i_zy.value),
        "i_z_yprime_binned": i_fine,
        "pass": bool(abs(i_perm - i_zy.value) < 1e-12
                     and abs(i_again - i_zy.value) < 2 * max(i_zy.stderr, 1e-12)),
    }


def run_suite(n_identity: int = 200, n_mc: int = 100, d_max: int = 8,
              mc_samples: int = 200_000, seed: int = 0) -> dict:
    """Identity checks at D <= d_max and Monte-Carlo checks at D <= 2."""
    rng = np.random.default_rng(seed)
    identity = []
    for _ in range(n_identity):
        inst = random_instance(rng, int(rng.integers(1, d_max + 1)), conforming=None)
        identity.append(check_entropy_identities(inst))
    mc = []
    for _ in range(n_mc):
        inst = random_instance(rng, int(rng.integers(1, 3)), conforming=True, n_mc=mc_samples)
        mc.append(verify_information_gain(inst))
    checked = [r for r in mc if r["status"] == "checked"]
    pass_rate = float(np.mean([r["pass"] for r in checked])) if checked else float("nan")
    identity_ok = all(r["pass"] and r["gap_sign_matches"] for r in identity)
    return {
        "identity": identity, "mc": mc,
        "identity_max_rel_err": max(max(r["det_rel_err"], r["joint_entropy_rel_err"], r["gap_rel_err"])
                                    for r in identity) if identity else 0.0,
        "identity_all_pass": identity_ok,
        "mc_pass_rate": pass_rate,
        "ok": bool(identity_ok and pass_rate >= 0.95),
    }
