import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_orbitals
from monitored_fermions import observables as obs
from monitored_fermions.gaussian import CorrelationMatrix, SITE, init_fermi_sea, init_product_state
from monitored_fermions.lattice import LatticeConfig, diagonalize


def slater_g(rng, L, N):
    phi = random_orbitals(rng, L, N)
    return np.conj(phi) @ phi.T


def test_pair_correlator_of_product_state_vanishes():
    pc = obs.pair_correlator(init_product_state([1, 0, 0, 1, 1]))
    np.testing.assert_allclose(pc.c_real, 0, atol=1e-15)
    np.testing.assert_allclose(pc.c_momentum, 0, atol=1e-15)


def test_pair_correlator_two_sites():
    g = CorrelationMatrix(np.full((2, 2), 0.5 + 0j), SITE)
    np.testing.assert_allclose(obs.pair_correlation_matrix(g), [[0.25, -0.25], [-0.25, 0.25]])
    pc = obs.pair_correlator(g)
    np.testing.assert_allclose(pc.c_real, [0.25, -0.25])
    np.testing.assert_allclose(pc.c_momentum, [0.0, 0.5], atol=1e-15)
    np.testing.assert_allclose(pc.q_tilde, [0.0, 2.0], atol=1e-15)


def test_pair_correlator_requires_site_basis():
    with pytest.raises(ValueError):
        obs.pair_correlator(CorrelationMatrix(np.eye(2), "eigenmode"))


def test_pair_correlator_rejects_non_hermitian_input():
    g = np.zeros((4, 4), dtype=complex)
    g[0, 1] = 0.5j
    with pytest.raises(obs.ObservableError):
        obs.pair_correlator(g + np.eye(4) * 0.5)


def test_translation_average_direct():
    C = np.arange(16.0).reshape(4, 4)
    ref = [np.mean([C[x, (x + r) % 4] for x in range(4)]) for r in range(4)]
    np.testing.assert_allclose(obs.translation_average(C), ref)


@given(st.integers(0, 2**32 - 1), st.integers(2, 16))
@settings(max_examples=60, deadline=None)
def test_sum_rule(seed, L):
    rng = np.random.default_rng(seed)
    g = slater_g(rng, L, int(rng.integers(0, L + 1)))
    pc = obs.pair_correlator(g)
    assert abs(pc.c_real.sum()) < 1e-10
    assert abs(pc.c_momentum[0]) < 1e-10 * L


def test_fermi_sea_correlator_is_nonnegative_variance_density():
    cfg = LatticeConfig(40)
    pc = obs.pair_correlator(init_fermi_sea(cfg, diagonalize(cfg)))
    assert pc.c_momentum.min() > -1e-10
    # free Fermi sea: C(q) = |q| / (2 pi) for |q| <= 2 k_F
    m = np.arange(1, 20)
    np.testing.assert_allclose(pc.c_momentum[1:20], m / 40, atol=1e-12)


def test_second_cumulant_examples():
    assert obs.second_cumulant(init_product_state([1, 0, 1]), 2) == 0.0
    g = np.diag([0.5, 0, 0]).astype(complex)
    assert obs.second_cumulant(g, 1) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        obs.second_cumulant(g, 0)


@given(st.integers(0, 2**32 - 1), st.integers(2, 14))
@settings(max_examples=60, deadline=None)
def test_second_cumulant_paths_agree(seed, L):
    rng = np.random.default_rng(seed)
    g = slater_g(rng, L, int(rng.integers(0, L + 1)))
    allc = obs.second_cumulant_all(g)
    for l in range(1, L + 1):
        val = obs.second_cumulant(g, l, check=True)
        lam = obs.block_eigenvalues(g, l)
        assert abs(val - np.sum(lam * (1 - lam))) < 1e-10
        assert abs(val - allc[l - 1]) < 1e-10
        assert val > -1e-12
    assert abs(allc[-1]) < 1e-10  # sharp total number


def test_entropy_examples():
    assert obs.entropy_from_eigenvalues([0.5]) == pytest.approx(math.log(2))
    assert obs.entanglement_entropy(init_product_state([1, 0, 1, 1]), 3) == pytest.approx(0, abs=1e-12)
    with pytest.raises(obs.ObservableError):
        obs.entropy_from_eigenvalues([1.1])


@given(st.integers(0, 2**32 - 1), st.integers(2, 14))
@settings(max_examples=60, deadline=None)
def test_entropy_bounds_and_symmetry(seed, L):
    rng = np.random.default_rng(seed)
    g = slater_g(rng, L, int(rng.integers(0, L + 1)))
    # complement of the leading block is the trailing block
    for l in range(1, L):
        S = obs.entanglement_entropy(g, l)
        assert -1e-12 <= S <= min(l, L - l) * math.log(2) + 1e-9
        lam_c = np.linalg.eigvalsh(g[l:, l:])
        assert abs(S - obs.entropy_from_eigenvalues(lam_c)) < 1e-9


def test_bernoulli_cumulants():
    c = obs.fcs_cumulants_from_eigenvalues([0.5], 4)
    assert c[0] == pytest.approx(0.25)
    assert c[1] == pytest.approx(-0.125)


def test_fourth_cumulant_by_differentiation():
    # kappa_4 = d^4/d(i mu)^4 ln(1 + lam (e^{i mu} - 1)) at mu = 0
    lam = 0.3
    ref = mpmath.diff(lambda s: mpmath.log(1 + lam * (mpmath.exp(s) - 1)), 0, 4)
    assert obs.fcs_cumulants_from_eigenvalues([lam], 4)[1] == pytest.approx(float(ref), rel=1e-12)
    ref6 = mpmath.diff(lambda s: mpmath.log(1 + lam * (mpmath.exp(s) - 1)), 0, 6)
    assert obs.fcs_cumulants_from_eigenvalues([lam], 6)[2] == pytest.approx(float(ref6), rel=1e-10)


def test_cumulants_are_additive():
    a = obs.fcs_cumulants_from_eigenvalues([0.2], 8)
    b = obs.fcs_cumulants_from_eigenvalues([0.7], 8)
    np.testing.assert_allclose(obs.fcs_cumulants_from_eigenvalues([0.2, 0.7], 8), a + b, rtol=1e-13)


def test_cumulant_order_bounds():
    with pytest.raises(ValueError):
        obs.fcs_cumulants_from_eigenvalues([0.5], 14)
    with pytest.raises(ValueError):
        obs.fcs_cumulants_from_eigenvalues([0.5], 3)


def test_fcs_second_matches_second_cumulant(rng):
    g = slater_g(rng, 12, 5)
    assert obs.fcs_cumulants(g, 5, 2)[0] == pytest.approx(obs.second_cumulant(g, 5), abs=1e-10)


def test_klich_levitov_first_term():
    sums = obs.klich_levitov_entropy([0.25, -0.125])
    assert sums[0] == pytest.approx(math.pi ** 2 / 12)
    assert sums[1] == pytest.approx(math.pi ** 2 / 12 - 2 * math.pi ** 4 / 90 * 0.125)


def test_klich_levitov_first_term_is_positive(rng):
    lam = rng.random(20)
    assert obs.klich_levitov_entropy(obs.fcs_cumulants_from_eigenvalues(lam, 2))[0] > 0


def test_density_profile():
    cfg = LatticeConfig(10)
    g = init_fermi_sea(cfg, diagonalize(cfg))
    np.testing.assert_allclose(obs.density_profile(g), 0.5, atol=1e-14)
    assert obs.density_profile(g).sum() == pytest.approx(5)


def test_rescaled_length_and_grid():
    assert obs.rescaled_length(50, 100) == pytest.approx(100 / math.pi)
    np.testing.assert_array_equal(obs.default_lengths(16), np.arange(1, 9))
    big = obs.default_lengths(2048)
    assert big[0] == 1 and big[-1] == 1024 and np.all(np.diff(big) > 0)


def test_cumulant_profile(rng):
    g = slater_g(rng, 16, 8)
    prof = obs.cumulant_profile(g, max_order=4, keep_eigenvalues=True)
    assert prof.lengths.tolist() == list(range(1, 9))
    for i, l in enumerate(prof.lengths):
        assert prof.c2[i] == pytest.approx(obs.second_cumulant(g, l), abs=1e-12)
        assert prof.entropy[i] == pytest.approx(obs.entanglement_entropy(g, l), abs=1e-12)
        assert prof.higher[i, 0] == pytest.approx(prof.c2[i], abs=1e-10)
    quick = obs.cumulant_profile(g, spectra=False)
    assert quick.entropy is None and quick.higher is None
