import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from conftest import random_spd
from dpgauss.errors import EmptyCore, InvalidInput
from dpgauss.gaussian import psd_factor
from dpgauss.semimetrics import (combine_equal, euclidean_space, exact_space, norm_dist,
                                 projector_exact_dist, projector_space, spectral_cov_dist,
                                 spectral_space, weighted_combine)

SLACK = 1e-9


def near(rng, A, scale):
    """SPD matrix at spectral distance of order ``scale`` from ``A``."""
    d = A.shape[0]
    root, _, _ = psd_factor(A)
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    E = (Q * np.exp(rng.uniform(-scale, scale, d))) @ Q.T
    B = root @ E @ root
    return (B + B.T) / 2


@pytest.mark.parametrize("d", [1, 3, 5])
def test_spectral_examples(d):
    I = np.eye(d)
    assert spectral_cov_dist(I, I) == pytest.approx(0.0, abs=1e-12)
    assert spectral_cov_dist(2 * I, I) == pytest.approx(1.0, abs=1e-12)


def test_spectral_diag_and_singular():
    assert spectral_cov_dist(np.diag([1.0, 4.0]), np.eye(2)) == pytest.approx(3.0, abs=1e-12)
    assert spectral_cov_dist(np.diag([1.0, 0.0]), np.eye(2)) == np.inf
    assert spectral_cov_dist(np.eye(2), np.diag([1.0, 0.0])) == np.inf
    with pytest.raises(InvalidInput):
        spectral_cov_dist(np.eye(2), np.eye(3))


def test_norm_examples():
    v = np.array([1.5, -2.0])
    assert norm_dist(v, v) == 0.0
    assert norm_dist([0, 0], [3, 4]) == 5.0
    assert norm_dist(np.eye(2), np.zeros((2, 2))) == pytest.approx(np.sqrt(2))
    with pytest.raises(InvalidInput):
        norm_dist([0, 0], [1, 2, 3])


def test_projector_examples(rng):
    U, _ = np.linalg.qr(rng.standard_normal((4, 2)))
    P = U @ U.T
    assert projector_exact_dist(P, P) == 0.0
    assert projector_exact_dist(np.diag([1.0, 0.0]), np.diag([0.0, 1.0])) == np.inf
    E = 1e-12 * rng.standard_normal((4, 4))
    assert projector_exact_dist(P, P + (E + E.T) / 2) == 0.0
    with pytest.raises(InvalidInput):
        projector_exact_dist(P, 2 * P)


def test_weighted_combine_examples():
    assert np.array_equal(weighted_combine([np.array([1.0, 2.0])], [1.0]), [1.0, 2.0])
    assert np.allclose(weighted_combine([np.zeros(2), np.array([2.0, 0.0])], [0.5, 0.5]), [1.0, 0.0])
    assert np.allclose(weighted_combine([np.eye(2), 3 * np.eye(2)], [0.5, 0.5]), 2 * np.eye(2))
    with pytest.raises(EmptyCore):
        weighted_combine([np.zeros(2), np.ones(2)], [0.0, 0.0])
    with pytest.raises(InvalidInput):
        weighted_combine([np.zeros(2), np.eye(2)], [1.0, 1.0])
    with pytest.raises(InvalidInput):
        weighted_combine([np.zeros(2)], [-1.0])


def test_combine_equal_projectors():
    P = np.diag([1.0, 0.0])
    assert np.array_equal(combine_equal([P, P, np.eye(2)], [1.0, 0.5, 0.0]), P)
    with pytest.raises(InvalidInput):
        combine_equal([P, np.eye(2)], [1.0, 1.0])


def test_space_constants():
    sp = spectral_space()
    assert (sp.t, sp.r, sp.phi) == (1.5, 1.0, 1.0)
    assert sp.score_radius == pytest.approx(2 / 3)
    eu = euclidean_space()
    assert (eu.t, eu.r, eu.phi) == (1.0, np.inf, 0.0)
    with pytest.raises(InvalidInput):
        type(sp)("bad", norm_dist, t=0.5, r=1.0, phi=0.0)


def test_within_counts_examples():
    eu = euclidean_space(1.0)
    cands = [np.zeros(1), np.zeros(1), np.zeros(1), np.array([10.0])]
    assert list(eu.within_counts(cands)) == [3, 3, 3, 1]
    # ties at the radius count
    assert list(eu.within_counts([np.zeros(1), np.ones(1)])) == [2, 2]


def test_spectral_counts_match_pairwise(rng):
    sp = spectral_space()
    base = random_spd(rng, 3)
    cands = [near(rng, base, 0.4) for _ in range(30)] + [np.diag([1.0, 1.0, 0.0])]
    D = sp.pairwise(cands)
    expected = np.count_nonzero(D <= sp.score_radius, axis=1)
    assert np.array_equal(sp.within_counts(cands), expected)
    assert expected[-1] == 1
    for i in range(5):
        for j in range(5):
            assert D[i, j] == pytest.approx(spectral_cov_dist(cands[i], cands[j]), rel=1e-9, abs=1e-12)


def test_exact_space_counts():
    ex = exact_space()
    cands = [np.ones(2), np.ones(2) + 1e-12, np.zeros(2)]
    assert list(ex.within_counts(cands)) == [2, 2, 1]
    pr = projector_space()
    assert list(pr.within_counts([np.eye(2), np.eye(2)])) == [2, 2]


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_spectral_restricted_triangle(d, seed):
    rng = np.random.default_rng(seed)
    A = random_spd(rng, d, cond=1e4)
    B = near(rng, A, 0.3)
    C = near(rng, B, 0.3)
    ab, bc, ac = spectral_cov_dist(A, B), spectral_cov_dist(B, C), spectral_cov_dist(A, C)
    assume(max(ab, bc, ac) <= 2 / 3)
    assert ac <= 1.5 * (ab + bc) + SLACK


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_spectral_convexity(d, seed, a):
    rng = np.random.default_rng(seed)
    A, B, C = (random_spd(rng, d, cond=100) for _ in range(3))
    lhs = spectral_cov_dist(a * A + (1 - a) * B, C)
    assert lhs <= a * spectral_cov_dist(A, C) + (1 - a) * spectral_cov_dist(B, C) + SLACK


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_norm_convexity(d, seed, a):
    rng = np.random.default_rng(seed)
    A, B, C = rng.standard_normal((3, d))
    assert norm_dist(a * A + (1 - a) * B, C) <= a * norm_dist(A, C) + (1 - a) * norm_dist(B, C) + SLACK


def _locality_holds(space, points, rng):
    k = len(points)
    a, b = rng.dirichlet(np.ones(k)), rng.dirichlet(np.ones(k))
    D = space.pairwise(points)
    lhs = space.distance(space.combine(points, a), space.combine(points, b))
    return lhs <= np.abs(a - b).sum() * (space.phi + D.max()) + SLACK


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 5), st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_spectral_locality(d, k, seed):
    rng = np.random.default_rng(seed)
    base = random_spd(rng, d, cond=100)
    assert _locality_holds(spectral_space(), [near(rng, base, 0.5) for _ in range(k)], rng)


@settings(max_examples=150, deadline=None)
@given(st.integers(1, 5), st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_norm_locality(d, k, seed):
    rng = np.random.default_rng(seed)
    assert _locality_holds(euclidean_space(), list(rng.standard_normal((k, d))), rng)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_symmetry_and_identity(d, seed):
    rng = np.random.default_rng(seed)
    A, B = random_spd(rng, d), random_spd(rng, d)
    assert spectral_cov_dist(A, A) <= 1e-9
    assert spectral_cov_dist(A, B) == pytest.approx(spectral_cov_dist(B, A), rel=1e-9)
    u, v = rng.standard_normal((2, d))
    assert norm_dist(u, v) == norm_dist(v, u) and norm_dist(u, u) == 0
    U, _ = np.linalg.qr(rng.standard_normal((d, d)))
    P = U[:, :1] @ U[:, :1].T
    Q = U[:, -1:] @ U[:, -1:].T
    assert projector_exact_dist(P, P) == 0.0
    assert projector_exact_dist(P, Q) == projector_exact_dist(Q, P)
