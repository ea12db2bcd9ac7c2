import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_spd
from dpgauss import kernels
from dpgauss.semimetrics import _spectral_inputs, spectral_cov_dist

compiled = pytest.mark.skipif("compiled" not in kernels.available_backends(),
                              reason="extension not built")


def _spd_batch(rng, k, d, spread):
    base = random_spd(rng, d, cond=1e3)
    out = []
    for _ in range(k):
        Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        E = (Q * np.exp(rng.uniform(-spread, spread, d))) @ Q.T
        root = np.linalg.cholesky(base)
        M = root @ E @ root.T
        out.append((M + M.T) / 2)
    return out


def test_backend_switch_restores():
    before = kernels.backend_name()
    with kernels.use_backend("python"):
        assert kernels.backend_name() == "python"
    assert kernels.backend_name() == before
    with pytest.raises(ValueError):
        with kernels.use_backend("fortran"):
            pass


@pytest.mark.parametrize("backend", ["python", pytest.param("compiled", marks=compiled)])
def test_spectral_matrix_matches_reference(backend, rng):
    mats, linv, ok = _spectral_inputs(_spd_batch(rng, 12, 4, 0.8))
    assert ok.all()
    with kernels.use_backend(backend):
        D = kernels.spectral_dist_matrix(mats, linv)
    for i in range(12):
        for j in range(12):
            assert D[i, j] == pytest.approx(spectral_cov_dist(mats[i], mats[j]), rel=1e-8, abs=1e-10)


@compiled
@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.integers(2, 40), st.integers(0, 2**32 - 1), st.floats(0.05, 1.5))
def test_spectral_count_parity(d, k, seed, radius):
    rng = np.random.default_rng(seed)
    mats, linv, _ = _spectral_inputs(_spd_batch(rng, k, d, 0.6))
    with kernels.use_backend("python"):
        py = kernels.spectral_within_counts(mats, linv, radius)
        Dpy = kernels.spectral_dist_matrix(mats, linv)
    with kernels.use_backend("compiled"):
        cc = kernels.spectral_within_counts(mats, linv, radius)
        Dcc = kernels.spectral_dist_matrix(mats, linv)
    assert np.allclose(Dpy, Dcc, rtol=1e-9, atol=1e-11)
    # counts may differ only for pairs within rounding of the radius
    borderline = np.abs(Dpy - radius) <= 1e-9 * max(1.0, radius)
    slack = borderline.sum(axis=1)
    assert np.all(np.abs(py - cc) <= slack)


@pytest.mark.parametrize("backend", ["python", pytest.param("compiled", marks=compiled)])
def test_euclid_counts_reference(backend, rng):
    pts = rng.standard_normal((60, 3))
    D = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    with kernels.use_backend(backend):
        got = kernels.euclid_within_counts(np.ascontiguousarray(pts), 1.0)
    assert np.array_equal(got, np.count_nonzero(D <= 1.0, axis=1))


@pytest.mark.parametrize("backend", ["python", pytest.param("compiled", marks=compiled)])
def test_euclid_zero_radius_exact_ties(backend):
    pts = np.array([[1.0, 2.0], [1.0, 2.0], [1.0, 2.0 + 1e-9]])
    with kernels.use_backend(backend):
        assert list(kernels.euclid_within_counts(pts, 0.0)) == [2, 2, 1]


@compiled
@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 80), st.integers(0, 2**32 - 1), st.floats(0.0, 3.0))
def test_euclid_count_parity(d, k, seed, radius):
    rng = np.random.default_rng(seed)
    # coarse grid so many pairs sit exactly on the radius
    pts = np.ascontiguousarray(rng.integers(-3, 4, (k, d)).astype(float))
    with kernels.use_backend("python"):
        py = kernels.euclid_within_counts(pts, radius)
    with kernels.use_backend("compiled"):
        cc = kernels.euclid_within_counts(pts, radius)
    assert np.array_equal(py, cc)
