"""Convex semimetric spaces used to score and aggregate candidate estimates.

A space bundles a distance, its approximate triangle constant ``t``, the
radius ``r`` up to which that triangle inequality is promised, the locality
constant ``phi`` and the averaging rule. Candidates are plain numpy arrays;
the space decides how to interpret them.
"""

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from dpgauss import kernels
from dpgauss.errors import EmptyCore, InvalidInput
from dpgauss.gaussian import psd_factor, symmetrize

PROJECTOR_TOL = 1e-8
EXACT_TOL = 1e-8


def spectral_cov_dist(A, B):
    """Symmetric relative spectral deviation between two PSD matrices.

    Returns ``max(||B^-1/2 A B^-1/2 - I||, ||A^-1/2 B A^-1/2 - I||)`` in
    operator norm, or ``inf`` when either matrix is rank deficient.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape != B.shape:
        raise InvalidInput(f"shape mismatch {A.shape} vs {B.shape}")
    _, _, rank_a = psd_factor(A)
    _, b_inv, rank_b = psd_factor(B)
    d = A.shape[0]
    if rank_a < d or rank_b < d:
        return float("inf")
    M = b_inv @ symmetrize(A) @ b_inv
    ev = np.linalg.eigvalsh((M + M.T) / 2)
    if ev[0] <= 0:
        return float("inf")
    return float(max(ev[-1] - 1.0, 1.0 / ev[0] - 1.0))


def norm_dist(u, v):
    """Euclidean distance; matrices are compared entrywise (Frobenius)."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise InvalidInput(f"shape mismatch {u.shape} vs {v.shape}")
    return float(np.linalg.norm((u - v).ravel()))


def check_projector(P, tol=PROJECTOR_TOL):
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise InvalidInput("projector must be square")
    if np.max(np.abs(P - P.T), initial=0.0) > tol or np.max(np.abs(P @ P - P), initial=0.0) > tol:
        raise InvalidInput("matrix is not an orthogonal projector")
    return P


def projector_exact_dist(P1, P2):
    """0 when two orthogonal projectors agree to ``PROJECTOR_TOL``, else ``inf``."""
    P1 = check_projector(P1)
    P2 = check_projector(P2)
    if P1.shape != P2.shape:
        raise InvalidInput("projector shape mismatch")
    return 0.0 if np.linalg.norm(P1 - P2) <= PROJECTOR_TOL else float("inf")


def _normalized(points, weights):
    if len(points) == 0:
        raise InvalidInput("no points to combine")
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(points),):
        raise InvalidInput("one weight per point is required")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidInput("weights must be finite and nonnegative")
    total = w.sum()
    if total <= 0:
        raise EmptyCore("all weights are zero")
    shapes = {np.shape(p) for p in points}
    if len(shapes) != 1:
        raise InvalidInput("points have mixed shapes")
    return w / total


def weighted_combine(points, weights):
    """Convex combination of same-shaped points with normalized weights."""
    w = _normalized(points, weights)
    stack = np.asarray([np.asarray(p, dtype=float) for p in points])
    return np.tensordot(w, stack, axes=1)


def combine_equal(points, weights, tol=PROJECTOR_TOL):
    """Combination for 0/inf spaces: every weighted point must coincide within ``tol``."""
    w = _normalized(points, weights)
    live = [np.asarray(p, dtype=float) for p, wi in zip(points, w) if wi > 0]
    first = live[0]
    for p in live[1:]:
        if np.linalg.norm(p - first) > tol:
            raise InvalidInput("cannot average distinct points in an exact-equality space")
    return first.copy()


@dataclass(frozen=True)
class Semimetric:
    """A convex semimetric space and the constants PPME reads from it.

    Attributes:
      name: Identifier used in reports.
      distance: Pairwise distance, possibly ``inf``.
      t: Approximation factor of the restricted triangle inequality (>= 1).
      r: Radius of the restricted triangle inequality (``inf`` allowed).
      phi: Locality constant of weighted averages.
      combine: Weighted averaging rule ``(points, weights) -> point``.
      kind: Selects the pairwise counting kernel.
      tol: Equality tolerance for the exact spaces.
    """

    name: str
    distance: Callable
    t: float
    r: float
    phi: float
    combine: Callable = weighted_combine
    kind: str = "generic"
    tol: float = 0.0

    def __post_init__(self):
        if self.t < 1:
            raise InvalidInput("t must be at least 1")
        if not self.r > 0:
            raise InvalidInput("r must be positive")
        if self.phi < 0:
            raise InvalidInput("phi must be nonnegative")

    @property
    def score_radius(self):
        return self.r / self.t

    def with_radius(self, r):
        return replace(self, r=float(r))

    def pairwise(self, candidates):
        """Full distance matrix (``inf`` where undefined)."""
        k = len(candidates)
        if self.kind == "spectral":
            mats, linv, ok = _spectral_inputs(candidates)
            D = np.full((k, k), np.inf)
            np.fill_diagonal(D, 0.0)
            idx = np.flatnonzero(ok)
            if idx.size:
                D[np.ix_(idx, idx)] = kernels.spectral_dist_matrix(mats[idx], linv[idx])
            return D
        D = np.zeros((k, k))
        for i in range(k):
            for j in range(i + 1, k):
                D[i, j] = D[j, i] = self.distance(candidates[i], candidates[j])
        return D

    def within_counts(self, candidates, radius=None):
        """Number of candidates within ``radius`` of each one, self included."""
        radius = self.score_radius if radius is None else radius
        k = len(candidates)
        if self.kind == "spectral":
            mats, linv, ok = _spectral_inputs(candidates)
            counts = np.ones(k, dtype=np.int64)
            idx = np.flatnonzero(ok)
            if idx.size:
                counts[idx] = kernels.spectral_within_counts(mats[idx], linv[idx], radius)
            return counts
        if self.kind == "euclidean":
            pts = np.ascontiguousarray([np.ravel(c) for c in candidates], dtype=float)
            if np.isinf(radius):
                return np.full(k, k, dtype=np.int64)
            return kernels.euclid_within_counts(pts, float(radius))
        if self.kind == "exact":
            # 0/inf distance: any radius in [0, inf) reduces to the equality test
            pts = np.ascontiguousarray([np.ravel(c) for c in candidates], dtype=float)
            if np.isinf(radius):
                return np.full(k, k, dtype=np.int64)
            return kernels.euclid_within_counts(pts, self.tol)
        D = self.pairwise(candidates)
        return np.count_nonzero(D <= radius, axis=1).astype(np.int64)


def _spectral_inputs(candidates):
    mats = np.ascontiguousarray([np.asarray(c, dtype=float) for c in candidates])
    k, d = mats.shape[0], mats.shape[1]
    linv = np.zeros_like(mats)
    ok = np.zeros(k, dtype=bool)
    for i in range(k):
        _, _, rank = psd_factor(mats[i])
        if rank < d:
            continue
        try:
            L = np.linalg.cholesky(mats[i])
        except np.linalg.LinAlgError:
            continue
        linv[i] = np.linalg.solve(L, np.eye(d))
        ok[i] = True
    return mats, np.ascontiguousarray(linv), ok


def spectral_space():
    return Semimetric("spectral", spectral_cov_dist, t=1.5, r=1.0, phi=1.0, kind="spectral")


def euclidean_space(r=float("inf")):
    """Norm metric; a finite ``r`` narrows the scoring ball to ``r``."""
    return Semimetric("euclidean", norm_dist, t=1.0, r=r, phi=0.0, kind="euclidean")


def projector_space():
    return Semimetric("projector", projector_exact_dist, t=1.0, r=1.0, phi=0.0,
                      combine=combine_equal, kind="exact", tol=PROJECTOR_TOL)


def exact_space(scale=1.0):
    """Exact-equality space on vectors; equality tolerance grows with ``scale``."""
    tol = EXACT_TOL * max(1.0, float(scale))

    def dist(u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if u.shape != v.shape:
            raise InvalidInput("shape mismatch")
        return 0.0 if np.linalg.norm(u - v) <= tol else float("inf")

    def combine(points, weights):
        return combine_equal(points, weights, tol=tol)

    return Semimetric("exact", dist, t=1.0, r=1.0, phi=0.0, combine=combine,
                      kind="exact", tol=tol)
