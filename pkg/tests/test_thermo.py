import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cepd.lattice import Supercell
from cepd.thermo import (
    boltzmann_weights,
    boundary_mus,
    exact_thermo,
    ground_states,
    hte_phi,
    hull_energy,
    input_mu_to_physical,
    lte_phi,
    mean_field_tmisc,
    physical_mu_to_input,
)


def test_boundary_mus(separation, checkerboard):
    assert np.allclose(boundary_mus(separation[1]), [0])
    assert np.allclose(boundary_mus(checkerboard[1]), [-6, 6])


def test_duplicate_ground_state_rejected(separation):
    ce, gs = separation
    dup = ground_states(ce, [gs.structures[0], gs.structures[0]])
    with pytest.raises(ValueError):
        boundary_mus(dup)


def test_input_mu_map(separation, checkerboard):
    gs6 = checkerboard[1]
    assert input_mu_to_physical(0.5, gs6) == pytest.approx(-12)
    assert input_mu_to_physical(1.5, gs6) == pytest.approx(0)
    assert input_mu_to_physical(1.96, gs6) == pytest.approx(5.52)
    assert input_mu_to_physical(2.5, gs6) == pytest.approx(12)
    assert input_mu_to_physical(0.0, separation[1]) == 0.0
    assert input_mu_to_physical(0.3, separation[1]) == pytest.approx(0.3)


@given(st.floats(-5, 5, allow_nan=False), st.floats(1e-3, 1.0))
def test_input_mu_map_monotone_and_invertible(u, du):
    from .test_thermo_fixtures import GS6

    a = input_mu_to_physical(u, GS6)
    b = input_mu_to_physical(u + du, GS6)
    assert b > a
    assert physical_mu_to_input(a, GS6) == pytest.approx(u, abs=1e-9)


def test_lte_zero_temperature_limit(checkerboard):
    ce, gs = checkerboard
    r = lte_phi(1, gs, ce, 1e-3, 0.0)
    assert r.phi == pytest.approx(-3.6, abs=1e-12) and r.valid


def test_lte_single_flip_correction(separation):
    ce, gs = separation
    kT = 0.5
    r = lte_phi(0, gs, ce, kT, 0.0)
    assert r.phi == pytest.approx(-3 - kT * math.exp(-12 / kT), rel=1e-12)
    assert r.correction == pytest.approx(kT * math.exp(-12 / kT))


def test_lte_matches_exact_away_from_coexistence(separation, small_cell):
    ce, gs = separation
    # far enough from mu = 0 that the cell's other phase contributes nothing
    r = lte_phi(0, gs, ce, 0.5, -2.0)
    ex = exact_thermo(ce, small_cell, 0.5, -2.0)
    assert r.valid and abs(r.phi - ex.phi) < 1e-8
    assert r.x == pytest.approx(ex.x, abs=1e-8)


def test_lte_validity_flags(checkerboard):
    ce, gs = checkerboard
    # flip cost -9.6 - 2 mu: positive only below mu = -4.8
    assert lte_phi(0, gs, ce, 0.1, -13.0).valid
    assert not lte_phi(0, gs, ce, 0.1, -4.0).valid
    # large correction at high T
    assert not lte_phi(0, gs, ce, 50.0, -13.0, ltep=1e-3).valid


def test_lte_derivatives_are_consistent(checkerboard):
    ce, gs = checkerboard
    T, mu, h = 0.8, -1.0, 1e-5
    r = lte_phi(1, gs, ce, T, mu)
    dphi = (lte_phi(1, gs, ce, T, mu + h).phi - lte_phi(1, gs, ce, T, mu - h).phi) / (2 * h)
    assert -dphi == pytest.approx(r.x, abs=1e-7)


def test_hte_limits(separation, small_cell):
    ce, _ = separation
    assert hte_phi(ce, 2.0, 0.0) == pytest.approx(-2.0 * math.log(2))
    assert hte_phi(ce, 1e-4, 0.7) == pytest.approx(-0.7)
    ex = exact_thermo(ce, small_cell, 100.0, 0.0)
    assert hte_phi(ce, 100.0, 0.0) == pytest.approx(ex.phi, rel=0.01)


def test_exact_symmetry_and_ground_limit(separation, small_cell):
    ce, _ = separation
    assert exact_thermo(ce, small_cell, 3.0, 0.0).x == pytest.approx(0, abs=1e-12)
    cold = exact_thermo(ce, small_cell, 1e-3, 0.4)
    assert cold.phi == pytest.approx(-3 - 0.4, abs=1e-9)


def test_exact_regression_point(separation, small_cell):
    ce, _ = separation
    p = exact_thermo(ce, small_cell, 6.0, 1.0)
    # brute-force enumeration over the 256 configurations
    E, X = _enumerate_by_hand(small_cell)
    a = -(8 / 6.0) * (E - X)
    w = np.exp(a - a.max())
    w /= w.sum()
    assert p.x == pytest.approx(w @ X, abs=1e-12)
    assert p.E == pytest.approx(w @ E, abs=1e-12)
    assert p.x == pytest.approx(0.4714301004530428, abs=1e-12)


def _enumerate_by_hand(sc):
    E, X = [], []
    for code in range(256):
        s = np.array([1 if code >> k & 1 else -1 for k in range(8)]).reshape(2, 2, 2)
        e = -sum(np.sum(s * np.roll(s, 1, axis=ax)) + np.sum(s * np.roll(s, -1, axis=ax)) for ax in range(3))
        E.append(e / 16)
        X.append(s.mean())
    return np.array(E), np.array(X)


@pytest.mark.parametrize("kT", [1.0, 4.0, 10.0])
@pytest.mark.parametrize("mu", [-1.5, 0.0, 0.7])
def test_exact_conjugacy(separation, small_cell, kT, mu):
    ce, _ = separation
    h = 1e-4
    fd = -(exact_thermo(ce, small_cell, kT, mu + h).phi - exact_thermo(ce, small_cell, kT, mu - h).phi) / (2 * h)
    assert fd == pytest.approx(exact_thermo(ce, small_cell, kT, mu).x, abs=1e-7)


def test_phi_concave_in_mu(separation, small_cell):
    ce, _ = separation
    mus = np.linspace(-3, 3, 41)
    for kT in (0.5, 3.0, 12.0):
        phi = np.array([exact_thermo(ce, small_cell, kT, m).phi for m in mus])
        assert np.all(np.diff(phi, 2) <= 1e-12)


def test_boltzmann_weights_normalized(separation, small_cell):
    ce, _ = separation
    w = boltzmann_weights(ce, small_cell, 2.0, 0.3)
    assert w.shape == (256,) and w.sum() == pytest.approx(1)


def test_exact_refuses_large_cells(separation):
    ce, _ = separation
    with pytest.raises(ValueError):
        exact_thermo(ce, Supercell(ce.lattice, (3, 3, 3)), 1.0, 0.0)


def test_mean_field_tmisc(separation):
    ce, _ = separation
    assert 2 * mean_field_tmisc(ce, 6) / 0.8 == pytest.approx(12)
    assert mean_field_tmisc(ce, 6, 8.617e-5) == pytest.approx(55703.8, abs=0.05)
    assert mean_field_tmisc(ce.with_eci([0, 0, 0]), 6) == 0
    with pytest.raises(ValueError):
        mean_field_tmisc(ce, 0)


def test_hull_energy(checkerboard):
    gs = checkerboard[1]
    assert hull_energy(gs, 0.5) == pytest.approx(-0.6)
    assert hull_energy(gs, -0.5) == pytest.approx(-0.6)
    with pytest.raises(ValueError):
        hull_energy(gs, 1.5)


def test_finite_cell_lte_counts_symmetry_images(checkerboard):
    ce, gs = checkerboard
    sc = Supercell(ce.lattice, (2, 2, 2))
    kT = 0.9
    r = lte_phi(1, gs, ce, kT, 0.0, supercell=sc)
    ex = exact_thermo(ce, sc, kT, 0.0)
    # the two sublattice variants of the ordered phase both live in the cell
    assert r.valid and r.phi == pytest.approx(ex.phi, abs=1e-6)
    assert lte_phi(1, gs, ce, kT, 0.0).phi - r.phi == pytest.approx(kT * math.log(2) / 8, abs=1e-3)


def test_finite_cell_lte_invalid_at_coexistence(separation, small_cell):
    ce, gs = separation
    assert lte_phi(0, gs, ce, 0.5, 0.0).valid
    assert not lte_phi(0, gs, ce, 0.5, 0.0, supercell=small_cell).valid
