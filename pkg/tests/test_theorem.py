import numpy as np
import pytest

from sib.gaussian import LOG_2PIE
from sib.theorem import (TheoremInstance, check_entropy_identities, decoder_labels, equal_mass_cells,
                         histogram_mi, markov_sanity, one_hot_argmax, plugin_mi, random_instance,
                         run_suite, verify_information_gain)


def test_one_hot_argmax_breaks_ties_low():
    assert one_hot_argmax([0.2, 0.7, 0.7]) == 1
    np.testing.assert_array_equal(one_hot_argmax(np.array([[1, 0], [0, 0], [0, 3]])), [0, 0, 1])


def test_scalar_decoder_output_is_a_sign_decision():
    np.testing.assert_array_equal(decoder_labels(np.array([[-0.5], [0.0], [2.0]])), [0, 0, 1])


def test_identities_on_random_draws():
    rng = np.random.default_rng(0)
    for _ in range(100):
        r = check_entropy_identities(random_instance(rng, int(rng.integers(1, 9)), conforming=None))
        assert r["pass"] and r["gap_sign_matches"]


def test_gap_sign_at_the_boundary():
    d = 2
    v = np.full(d, np.exp(-LOG_2PIE))  # det exactly (2 pi e)^-D
    inst = TheoremInstance(np.zeros(d), np.ones(d), np.zeros(d), v * 1.001, np.eye(d))
    assert inst.conforms() and check_entropy_identities(inst)["gap"] > 0
    inst = TheoremInstance(np.zeros(d), np.ones(d), np.zeros(d), v * 0.999, np.eye(d))
    assert not inst.conforms() and check_entropy_identities(inst)["gap"] < 0


def test_instance_validation():
    with pytest.raises(ValueError, match="full rank"):
        TheoremInstance(np.zeros(2), np.ones(2), np.zeros(2), np.ones(2), np.array([[1, 2], [2, 4]]))
    with pytest.raises(ValueError):
        TheoremInstance(np.zeros(2), -np.ones(2), np.zeros(2), np.ones(2), np.eye(2))


def test_plugin_mi_on_deterministic_and_independent_labels():
    rng = np.random.default_rng(1)
    n = 100_000
    cells = rng.integers(0, 4, n)
    # label is a function of the cell that splits it evenly: I = H(Y) = ln 2
    assert plugin_mi(cells, cells % 2) == pytest.approx(np.log(2), abs=5e-3)
    assert plugin_mi(cells, rng.integers(0, 3, n)) == pytest.approx(0.0, abs=2e-3)


def test_histogram_mi_of_sign_label():
    rng = np.random.default_rng(2)
    z = rng.standard_normal(64_000)  # 40 bins, so the median is a bin edge
    est = histogram_mi(z, (z > 0).astype(int), rng)
    assert est.value == pytest.approx(np.log(2), abs=0.01)
    assert 0 < est.stderr < 0.01


def test_equal_mass_cells_are_balanced():
    z = np.random.default_rng(3).standard_normal((27_000, 1))
    counts = np.bincount(equal_mass_cells(z))
    assert len(counts) == 30
    assert counts.min() >= 0.95 * counts.mean()


def test_information_gain_on_conforming_instances():
    rng = np.random.default_rng(4)
    results = [verify_information_gain(random_instance(rng, d, n_mc=50_000)) for d in (1, 2, 1, 2)]
    assert all(r["status"] == "checked" and r["pass"] for r in results)


def test_nonconforming_instance_is_not_checked():
    rng = np.random.default_rng(5)
    r = verify_information_gain(random_instance(rng, 2, conforming=False, n_mc=1000))
    assert r == {"status": "precondition unmet", "pass": None, "dim": 2}


def test_histogram_check_refuses_high_dimension():
    with pytest.raises(ValueError):
        verify_information_gain(random_instance(np.random.default_rng(6), 3, n_mc=100))


def test_markov_sanity():
    rng = np.random.default_rng(7)
    for d in (1, 2):
        r = markov_sanity(random_instance(rng, d, n_mc=40_000))
        assert r["pass"]
        assert r["i_z_yprime_binned"] >= r["i_zy"] - 3 * r["stderr"]


def test_small_suite_reports_ok():
    rep = run_suite(n_identity=20, n_mc=4, d_max=4, mc_samples=20_000, seed=1)
    assert rep["ok"] and len(rep["identity"]) == 20 and len(rep["mc"]) == 4
    assert max(r["dim"] for r in rep["identity"]) <= 4
