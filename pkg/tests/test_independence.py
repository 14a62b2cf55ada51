import numpy as np
import pytest

from sib import diffcore as dc
from sib.independence import (discriminator_loss, encoder_independence_penalty, make_adversarial_batch,
                              mi_from_density_ratio, train_discriminator)
from sib.model import Discriminator
from helpers import check_grads


def _gaussian_pairs(rho, n, rng):
    a = rng.standard_normal((n, 1))
    b = rho * a + np.sqrt(1 - rho ** 2) * rng.standard_normal((n, 1))
    return a, b


def test_discriminator_loss_gradient():
    rng = np.random.default_rng(0)
    for _ in range(10):
        d = int(rng.integers(1, 3))
        disc = Discriminator(d, rng, hidden=(5, 4))
        batch = make_adversarial_batch(rng.normal(size=(4, d)), rng.normal(size=(4, d)), rng)
        assert check_grads(lambda: discriminator_loss(disc, batch), disc.parameters()) < 1e-5


def test_penalty_gradient_reaches_encoder_features():
    rng = np.random.default_rng(1)
    for _ in range(10):
        d = int(rng.integers(1, 3))
        disc = Discriminator(d, rng, hidden=(5, 4))
        z = dc.Parameter(rng.normal(size=(4, d)), "z")
        prev = rng.normal(size=(4, d))
        assert check_grads(lambda: encoder_independence_penalty(disc, z, prev),
                           [z] + disc.parameters()) < 1e-5


def test_discriminator_loss_treats_features_as_constants():
    rng = np.random.default_rng(2)
    disc = Discriminator(2, rng, hidden=(4, 4))
    z = dc.Parameter(rng.normal(size=(3, 2)), "z")
    loss = discriminator_loss(disc, make_adversarial_batch(z, rng.normal(size=(3, 2)), rng))
    dc.backward(loss)
    assert z.grad is None


def test_adversarial_batch_needs_two_rows():
    with pytest.raises(ValueError):
        make_adversarial_batch(np.ones((1, 2)), np.ones((1, 2)), np.random.default_rng(0))


def test_density_ratio_recovers_correlated_gaussian_mi():
    rng = np.random.default_rng(3)
    a, b = _gaussian_pairs(0.9, 6000, rng)
    disc = Discriminator(1, rng, hidden=(32, 32))
    train_discriminator(disc, a, b, rng, steps=1500, batch_size=200, lr=3e-3)
    ta, tb = _gaussian_pairs(0.9, 4000, rng)
    truth = -0.5 * np.log(1 - 0.81)  # 0.830 nats
    assert mi_from_density_ratio(disc, ta, tb) == pytest.approx(truth, abs=0.2)


def test_independent_pair_is_near_zero_and_unseparable():
    rng = np.random.default_rng(4)
    a, b = _gaussian_pairs(0.0, 6000, rng)
    disc = Discriminator(1, rng, hidden=(32, 32))
    train_discriminator(disc, a, b, rng, steps=600, batch_size=200, lr=1e-3)
    ta, tb = _gaussian_pairs(0.0, 4000, rng)
    assert abs(mi_from_density_ratio(disc, ta, tb)) < 0.05
    # AUC of joint vs shuffled scores stays near chance
    joint = disc(dc.concat([dc.const(ta), dc.const(tb)], axis=1)).value
    prod = disc(dc.concat([dc.const(ta), dc.const(tb[rng.permutation(4000)])], axis=1)).value
    auc = np.mean(prod[:, None] > joint[None, :])
    assert abs(auc - 0.5) < 0.05
