import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xcpd.errors import ConfigurationError, DimensionError
from xcpd.graph import cosine_adjacency, nonneg_shift, normalized_laplacian
from xcpd.linalg import jacobi_eigh
from xcpd.spectral import (
    HIGH,
    LOW,
    MID,
    BandPartition,
    SharedBasis,
    band_energies,
    band_memberships,
    eigengap,
    energy_response,
    equal_thirds,
    fit_shared_basis,
    gft,
    group_nodes,
    inverse_gft,
    refine_bands,
    verify_basis_bound,
)
from xcpd.verify import bound_ensemble, degenerate_ensemble


def window_laps(rng, n, count):
    return [normalized_laplacian(nonneg_shift(cosine_adjacency(rng.standard_normal((n, 3)))))
            for _ in range(count)]


def identity_basis(n):
    return SharedBasis(np.eye(n), np.zeros(n), np.zeros((n, n)), 0.0)


def test_single_laplacian_basis(rng):
    lap = window_laps(rng, 6, 1)[0]
    basis = fit_shared_basis([lap])
    dec = jacobi_eigh(lap)
    np.testing.assert_allclose(basis.basis, dec.eigenvectors, atol=1e-12)
    b2 = fit_shared_basis([lap, lap])
    np.testing.assert_allclose(b2.basis, basis.basis, atol=1e-12)


def test_mean_reconstruction(rng):
    laps = window_laps(rng, 12, 10)
    b = fit_shared_basis(laps)
    recon = (b.basis * b.eigenvalues) @ b.basis.T
    mean = np.mean(laps, axis=0)
    assert np.linalg.norm(recon - mean) / np.linalg.norm(mean) <= 1e-9
    assert np.all(np.diff(b.eigenvalues) >= -1e-12)


def test_fit_errors():
    with pytest.raises(ConfigurationError):
        fit_shared_basis([])
    with pytest.raises(DimensionError):
        fit_shared_basis([np.eye(2), np.eye(3)])


def test_eigengap_ignores_ties():
    assert eigengap([0.0, 0.5, 0.5, 1.2]) == pytest.approx(0.5)
    assert eigengap([1.0, 1.0]) == 0.0


def test_bound_zero_perturbation(rng):
    basis, laps = bound_ensemble(rng)
    rep = verify_basis_bound(basis, basis.mean_laplacian)
    assert rep.holds and not rep.vacuous
    assert rep.lhs <= 1e-9


def test_bound_randomized(rng):
    for _ in range(30):
        basis, laps = bound_ensemble(rng)
        assert basis.eigengap >= 0.1
        assert all(verify_basis_bound(basis, lap).holds for lap in laps)


def test_bound_vacuous(rng):
    laps = degenerate_ensemble(rng)
    basis = fit_shared_basis(laps)
    assert basis.eigengap <= 1e-6
    rep = verify_basis_bound(basis, laps[0])
    assert rep.vacuous and rep.holds


def test_gft_identity_and_zero(rng):
    x = rng.standard_normal((4, 3))
    assert np.array_equal(gft(identity_basis(4), x), x)
    b = fit_shared_basis(window_laps(rng, 4, 2))
    assert np.array_equal(gft(b, np.zeros((4, 3))), np.zeros((4, 3)))
    with pytest.raises(DimensionError):
        gft(b, np.zeros((5, 3)))


def test_gft_roundtrip(rng):
    b = fit_shared_basis(window_laps(rng, 15, 4))
    x = rng.standard_normal((2, 15, 6))
    np.testing.assert_allclose(inverse_gft(b, gft(b, x)), x, atol=1e-9)


def test_energy_simple_cases():
    b = identity_basis(3)
    assert np.array_equal(energy_response(b, np.zeros((3, 2))), np.zeros((3, 3)))
    spec = np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]])
    np.testing.assert_allclose(energy_response(b, spec), np.eye(3), atol=1e-15)


def test_energy_total_conserved(rng):
    for _ in range(50):
        n = int(rng.integers(2, 30))
        b = fit_shared_basis(window_laps(rng, n, 2))
        x = rng.standard_normal((n, int(rng.integers(1, 9))))
        total = energy_response(b, gft(b, x)).sum()
        assert total == pytest.approx(np.sum(x * x), rel=1e-10)


def test_node_energy_identity_holds_for_permutation_basis(rng):
    perm = np.eye(5)[rng.permutation(5)]
    b = SharedBasis(perm, np.zeros(5), np.zeros((5, 5)), 0.0)
    x = rng.standard_normal((5, 3))
    np.testing.assert_allclose(energy_response(b, gft(b, x)).sum(axis=1), np.sum(x * x, axis=1))


def test_node_energy_identity_fails_for_generic_basis():
    # Row sums of U_ij^2 ||X^spc_j||^2 are not the per-node norms: only the
    # total over all nodes is conserved.
    s = 1 / math.sqrt(2)
    b = SharedBasis(np.array([[s, s], [s, -s]]), np.array([0.0, 1.0]), np.zeros((2, 2)), 1.0)
    x = np.array([[1.0], [0.0]])
    rows = energy_response(b, gft(b, x)).sum(axis=1)
    np.testing.assert_allclose(rows, [0.5, 0.5])
    assert rows.sum() == pytest.approx(1.0)


def test_membership_at_boundary():
    bp = band_memberships(3.0, 6.0, 5.0, 8)
    assert bp.memberships[2, LOW] == 0.5
    assert bp.memberships[5, HIGH] == 0.5


def test_membership_saturated():
    bp = band_memberships(2.0, 10.0, 50.0, 12)
    np.testing.assert_allclose(bp.memberships[5], [0.0, 1.0, 0.0], atol=1e-12)


def test_close_boundaries_midpoint_value():
    # j=3 is the midpoint of (2.95, 3.05): low = high = sigmoid(-0.5)
    bp = band_memberships(2.95, 3.05, 10.0, 5)
    mid = 1.0 - 2.0 / (1.0 + math.exp(0.5))
    assert bp.memberships[2, MID] == pytest.approx(mid, abs=1e-12)
    assert mid > 0
    np.testing.assert_allclose(bp.memberships.sum(axis=1), 1.0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(t1=st.floats(1.0, 20.0), gap=st.floats(1e-3, 19.0), m=st.floats(0.01, 100.0))
def test_memberships_valid(t1, gap, m):
    n = 40
    bp = band_memberships(t1, t1 + gap, m, n)
    a = bp.memberships
    assert np.all(a >= 0)
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(np.diff(a[:, LOW]) <= 1e-15)
    assert np.all(np.diff(a[:, HIGH]) >= -1e-15)


def test_membership_errors():
    with pytest.raises(ConfigurationError):
        band_memberships(3.0, 3.0, 1.0, 5)
    with pytest.raises(ConfigurationError):
        band_memberships(0.5, 3.0, 1.0, 5)


def test_equal_thirds_defaults():
    bp = equal_thirds(12, 5.0)
    assert (bp.tau1, bp.tau2) == (4.0, 8.0)


def test_group_single_band_mass():
    n = 9
    bands = band_memberships(3.0, 6.0, 100.0, n)
    energy = np.zeros((4, n))
    energy[:, 0] = 1.0
    assert np.all(group_nodes(energy, bands).labels == LOW)


def test_group_three_way_tie():
    bands = BandPartition(1.5, 2.5, 1.0, np.eye(3))
    g = group_nodes(np.ones((2, 3)), bands)
    assert np.all(g.labels == LOW)
    np.testing.assert_allclose(g.scores, 1 / 3)


def test_group_matches_direct_evaluation(rng):
    n = 12
    bands = equal_thirds(n, 5.0)
    energy = rng.random((20, n))
    g = group_nodes(energy, bands)
    for i in range(20):
        logits = [sum(bands.memberships[j, b] * energy[i, j] for j in range(n)) for b in range(3)]
        assert g.labels[i] == int(np.argmax(logits))
        z = np.exp(np.array(logits) - max(logits))
        np.testing.assert_allclose(g.scores[i], z / z.sum(), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(1e-3, 1e3))
def test_band_ranking_scale_invariant(seed, c):
    rng = np.random.default_rng(seed)
    bands = equal_thirds(9, 5.0)
    e = rng.random((5, 9))
    a, b = band_energies(e, bands), band_energies(c * e, bands)
    assert np.array_equal(np.argsort(a, axis=1, kind="stable"), np.argsort(b, axis=1, kind="stable"))


def test_refine_prefers_equal_thirds_on_ties():
    bp = refine_bands(12, 5.0, lambda b: 1.0)
    assert (bp.tau1, bp.tau2) == (4.0, 8.0)


def test_refine_finds_better_candidate():
    bp = refine_bands(12, 5.0, lambda b: abs(b.tau1 - 1.0 - 11.0 / 5) + abs(b.tau2 - 1.0 - 44.0 / 5))
    assert bp.tau1 == pytest.approx(1.0 + 11.0 / 5)
