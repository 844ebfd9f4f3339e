import math

import numpy as np
import pytest

from conftest import random_orbitals
from monitored_fermions import exact as ex
from monitored_fermions.engine import EventStream, trajectory_rng
from monitored_fermions.gaussian import (
    CorrelationTrajectoryState,
    ForbiddenOutcomeError,
    SITE,
    CorrelationMatrix,
    SlaterState,
    born_probability,
    fermi_sea_orbitals,
)
from monitored_fermions.lattice import LatticeConfig, build_hamiltonian, diagonalize
from monitored_fermions.observables import entanglement_entropy, second_cumulant


def bell_pair():
    basis = ex.fock_basis(2, 1)
    amps = np.zeros(2, dtype=complex)
    amps[basis.index[0b01]] = amps[basis.index[0b10]] = 1 / math.sqrt(2)
    return ex.FockState(amps, basis)


def test_basis_dimension_and_limit():
    assert ex.fock_basis(6, 3).dim == 20
    with pytest.raises(ValueError):
        ex.fock_basis(20, 10)


def test_single_particle_sector_reproduces_hopping_matrix():
    for bc in ("open", "periodic"):
        cfg = LatticeConfig(7, J=0.8, bc=bc)
        H = ex.exact_hamiltonian(cfg, N=1)
        np.testing.assert_allclose(H.matrix, build_hamiltonian(cfg), atol=1e-14)


def test_many_body_spectrum_is_sum_of_single_particle_levels():
    cfg = LatticeConfig(6)
    xi = np.linalg.eigvalsh(build_hamiltonian(cfg))
    from itertools import combinations

    sums = np.sort([sum(xi[list(c)]) for c in combinations(range(6), 3)])
    np.testing.assert_allclose(np.sort(ex.exact_hamiltonian(cfg, N=3).energies), sums, atol=1e-12)


def test_evolve_identity_and_norm(rng):
    cfg = LatticeConfig(6)
    H = ex.exact_hamiltonian(cfg)
    s = ex.slater_state(random_orbitals(rng, 6, 3))
    np.testing.assert_allclose(ex.exact_evolve(s, H, 0.0).amplitudes, s.amplitudes, atol=1e-15)
    s2 = ex.exact_evolve(s, H, 7.3)
    assert abs(np.linalg.norm(s2.amplitudes) - 1) < 1e-12
    with pytest.raises(ValueError):
        ex.exact_evolve(s, H, -1.0)


@pytest.mark.parametrize("t", [0.2, 1.0, 2.5])
def test_two_site_rabi(t):
    cfg = LatticeConfig(2, bc="open")
    H = ex.exact_hamiltonian(cfg, N=1)
    s = ex.exact_evolve(ex.product_state([1, 0]), H, t)
    assert ex.exact_correlation_matrix(s).g[0, 0].real == pytest.approx(math.cos(t) ** 2, abs=1e-13)


def test_measure_bell_pair():
    outcome, s, p1 = ex.exact_measure(bell_pair(), 0, 0.4)
    assert (outcome, p1) == (1, pytest.approx(0.5))
    np.testing.assert_allclose(np.abs(s.amplitudes), [1, 0], atol=1e-15)  # |10>: site 0 occupied
    np.testing.assert_allclose(ex.exact_correlation_matrix(s).g, np.diag([1, 0]), atol=1e-15)


def test_measure_eigenstate_is_deterministic():
    s = ex.product_state([1, 0, 1])
    for u in (0.0, 0.5, 0.999):
        outcome, s2, p1 = ex.exact_measure(s, 0, u)
        assert outcome == 1 and p1 == 1.0
        np.testing.assert_array_equal(s2.amplitudes, s.amplitudes)
    with pytest.raises(ForbiddenOutcomeError):
        ex.exact_measure(s, 0, 1.0)


def test_born_probability_matches_gaussian(rng):
    for _ in range(10):
        phi = random_orbitals(rng, 7, 3)
        s = ex.slater_state(phi)
        g = CorrelationMatrix(np.conj(phi) @ phi.T, SITE)
        for m in range(7):
            assert abs(ex.exact_measure(s, m, 0.0)[2] - born_probability(g, m)) < 1e-12


def test_correlation_matrix_examples(rng):
    np.testing.assert_allclose(ex.exact_correlation_matrix(ex.product_state([1, 0])).g, np.diag([1, 0]))
    phi = random_orbitals(rng, 6, 3)
    G = ex.exact_correlation_matrix(ex.slater_state(phi)).g
    # Wick: <c^dag_x c_y> = sum_k conj(phi_xk) phi_yk
    np.testing.assert_allclose(G, np.conj(phi) @ phi.T, atol=1e-13)
    assert np.max(np.abs(G - G.conj().T)) < 1e-12
    # real orbitals: equals V V^dag as well
    phr, _ = np.linalg.qr(rng.normal(size=(6, 6)))
    Gr = ex.exact_correlation_matrix(ex.slater_state(phr[:, :2])).g
    np.testing.assert_allclose(Gr, phr[:, :2] @ phr[:, :2].T, atol=1e-13)


def test_entropy_examples(rng):
    assert ex.exact_entanglement_entropy(ex.product_state([1, 0, 1, 1]), 2) == pytest.approx(0, abs=1e-14)
    assert ex.exact_entanglement_entropy(bell_pair(), 1) == pytest.approx(math.log(2), abs=1e-14)
    phi = random_orbitals(rng, 8, 4)
    s = ex.slater_state(phi)
    G = ex.exact_correlation_matrix(s).g
    for l in range(9):
        S_exact = ex.exact_entanglement_entropy(s, l)
        S_gauss = entanglement_entropy(G, l) if l else 0.0
        assert abs(S_exact - S_gauss) < 1e-8


def test_reduced_density_matrix_is_a_state(rng):
    s = ex.slater_state(random_orbitals(rng, 6, 3))
    rho = ex.reduced_density_matrix(s, 3)
    assert np.trace(rho).real == pytest.approx(1.0)
    assert np.linalg.eigvalsh(rho).min() > -1e-12


def lockstep(representation, seed, L=6, N=3, events=200, gamma=1.0):
    """Drive the Gaussian engine and the Fock-space reference with one stream; return worst deviations."""
    cfg = LatticeConfig(L, n=N / L)
    basis = diagonalize(cfg)
    cls = SlaterState if representation == "slater" else CorrelationTrajectoryState
    gs = cls.fermi_sea(cfg, basis)
    es = ex.slater_state(fermi_sea_orbitals(cfg, basis))
    H = ex.exact_hamiltonian(cfg)
    stream = EventStream(gamma, L, trajectory_rng(seed, 0))
    t = 0.0
    worst = np.zeros(3)
    for _ in range(events):
        tn, m, u = stream.pop()
        gs.advance(tn)
        es = ex.exact_evolve(es, H, tn - t)
        t = tn
        o = gs.measure(m, u)
        oe, es, _ = ex.exact_measure(es, m, u)
        if o.outcome != oe:
            return None
        G, Ge = gs.correlation_matrix().g, ex.exact_correlation_matrix(es).g
        l = L // 2
        worst = np.maximum(worst, [
            np.max(np.abs(G - Ge)),
            abs(entanglement_entropy(G, l) - ex.exact_entanglement_entropy(es, l)),
            abs(second_cumulant(G, l) - second_cumulant(Ge, l)),
        ])
    return worst


@pytest.mark.parametrize("representation", ["slater", "correlation"])
def test_lockstep_short(representation):
    for seed in range(3):
        worst = lockstep(representation, seed, events=60)
        assert worst is not None
        assert worst.max() < 1e-8


def test_lockstep_open_chain():
    cfg = LatticeConfig(5, bc="open", n=0.4)
    basis = diagonalize(cfg)
    gs = SlaterState.fermi_sea(cfg, basis)
    es = ex.slater_state(fermi_sea_orbitals(cfg, basis))
    H = ex.exact_hamiltonian(cfg)
    stream = EventStream(0.7, 5, trajectory_rng(11, 2))
    t = 0.0
    for _ in range(80):
        tn, m, u = stream.pop()
        gs.advance(tn)
        es = ex.exact_evolve(es, H, tn - t)
        t = tn
        assert gs.measure(m, u).outcome == ex.exact_measure(es, m, u)[0]
        es = ex.exact_measure(es, m, u)[1]
    np.testing.assert_allclose(gs.correlation_matrix().g, ex.exact_correlation_matrix(es).g, atol=1e-9)
