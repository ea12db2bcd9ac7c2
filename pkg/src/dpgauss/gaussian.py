"""Dense PSD linear algebra and Gaussian distribution utilities."""

from dataclasses import dataclass

import numpy as np

from dpgauss.errors import InvalidInput, InvalidMatrix, SingularCovariance

SYMMETRY_TOL = 1e-10
NEGATIVE_EIG_TOL = 1e-9
RANK_TOL = 1e-13


def symmetrize(M):
    """Check ``M`` for symmetry and return ``(M + M.T) / 2``.

    Raises:
      InvalidMatrix: if ``M`` is not square or is asymmetric beyond
        ``SYMMETRY_TOL`` (scaled by the largest entry when that exceeds 1).
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidMatrix(f"expected a square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidMatrix("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if M.size and np.max(np.abs(M - M.T)) > SYMMETRY_TOL * scale:
        raise InvalidMatrix("matrix is not symmetric")
    return (M + M.T) / 2


def psd_eigh(M):
    """Eigendecomposition of a numerically PSD matrix with small negatives clamped."""
    S = symmetrize(M)
    if S.shape[0] == 0:
        return np.zeros(0), np.zeros((0, 0))
    evals, evecs = np.linalg.eigh(S)
    top = max(float(evals[-1]), 1.0)
    if evals[0] < -NEGATIVE_EIG_TOL * top:
        raise InvalidMatrix(f"matrix is not PSD (smallest eigenvalue {evals[0]:.3g})")
    return np.clip(evals, 0.0, None), evecs


def psd_factor(M, rank_tol=RANK_TOL):
    """Symmetric square root, inverse square root and numerical rank of ``M``.

    Eigenvalues at or below ``rank_tol * lambda_max`` count as zero. The inverse
    square root is ``None`` unless every eigenvalue clears that threshold.

    Returns:
      Tuple ``(sqrt, inv_sqrt, rank)``.
    """
    evals, evecs = psd_eigh(M)
    d = evals.shape[0]
    lam_max = float(evals[-1]) if d else 0.0
    keep = evals > rank_tol * lam_max if lam_max > 0 else np.zeros(d, dtype=bool)
    rank = int(np.count_nonzero(keep))
    root = np.where(keep, np.sqrt(evals), 0.0)
    sqrt = (evecs * root) @ evecs.T
    inv_sqrt = None
    if rank == d and d > 0:
        inv_sqrt = (evecs / np.sqrt(evals)) @ evecs.T
    return sqrt, inv_sqrt, rank


def range_basis(M, rank_tol=RANK_TOL):
    """Orthonormal basis (d x rank) for the range of a PSD matrix."""
    evals, evecs = psd_eigh(M)
    if evals.size == 0 or evals[-1] <= 0:
        return np.zeros((evals.size, 0))
    keep = evals > rank_tol * evals[-1]
    return evecs[:, keep]


@dataclass(frozen=True, eq=False)
class GaussianModel:
    """A (possibly degenerate) multivariate normal distribution."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if mean.ndim != 1:
            raise InvalidInput("mean must be a vector")
        if cov.shape != (mean.size, mean.size):
            raise InvalidInput(
                f"covariance shape {cov.shape} does not match mean length {mean.size}")
        psd_eigh(cov)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", symmetrize(cov))

    @property
    def dim(self):
        return self.mean.size


def as_samples(X, dim=None):
    """Validate an ordered sample set, returned as a 2-D float array (rows)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1 and dim is not None:
        X = X.reshape(-1, dim)
    if X.ndim != 2:
        raise InvalidInput(f"samples must be a 2-D array, got shape {X.shape}")
    if dim is not None and X.shape[1] != dim:
        raise InvalidInput(f"samples have dimension {X.shape[1]}, expected {dim}")
    return X


def sample_gaussian(model, n, rng):
    """Draw ``n`` rows i.i.d. from ``model`` as ``mean + sqrt(cov) @ g``."""
    if n < 1:
        raise InvalidInput("n must be at least 1")
    rng = np.random.default_rng(rng)
    sqrt, _, _ = psd_factor(model.covariance)
    g = rng.standard_normal((n, model.dim))
    return model.mean + g @ sqrt


def _checked_logdet(cov):
    sign, logdet = np.linalg.slogdet(cov)
    _, _, rank = psd_factor(cov)
    if rank < cov.shape[0] or sign <= 0:
        raise SingularCovariance("covariance matrix is singular")
    return logdet


def kl_gaussians(g1, g2):
    """KL(g1 || g2) for normal distributions; ``inf`` if g1 is degenerate."""
    if g1.dim != g2.dim:
        raise InvalidInput("dimension mismatch")
    logdet2 = _checked_logdet(g2.covariance)
    d = g1.dim
    _, _, rank1 = psd_factor(g1.covariance)
    if rank1 < d:
        return float("inf")
    logdet1 = np.linalg.slogdet(g1.covariance)[1]
    L = np.linalg.cholesky(g2.covariance)
    A = np.linalg.solve(L, g1.covariance)
    trace = float(np.trace(np.linalg.solve(L, A.T)))
    diff = np.linalg.solve(L, g2.mean - g1.mean)
    kl = 0.5 * (trace - d + float(diff @ diff) - (logdet1 - logdet2))
    return max(kl, 0.0)


def _reduce_to_shared_range(g1, g2, tol=1e-8):
    """Restrict two degenerate Gaussians to their common support.

    Returns ``None`` when the supports differ (the measures are mutually
    singular), otherwise the pair of lower dimensional models.
    """
    U1 = range_basis(g1.covariance)
    U2 = range_basis(g2.covariance)
    if U1.shape[1] != U2.shape[1]:
        return None
    P1 = U1 @ U1.T
    P2 = U2 @ U2.T
    if np.linalg.norm(P1 - P2) > tol:
        return None
    comp = np.eye(g1.dim) - P1
    scale = max(1.0, float(np.linalg.norm(g1.mean)), float(np.linalg.norm(g2.mean)))
    if np.linalg.norm(comp @ (g1.mean - g2.mean)) > tol * scale:
        return None
    if U1.shape[1] == 0:
        return ()
    return (GaussianModel(U1.T @ g1.mean, U1.T @ g1.covariance @ U1),
            GaussianModel(U1.T @ g2.mean, U1.T @ g2.covariance @ U1))


def tv_upper_bound(g1, g2):
    """Symmetric Pinsker bound ``min(1, sqrt(max(KL12, KL21) / 2))`` on total variation."""
    if g1.dim != g2.dim:
        raise InvalidInput("dimension mismatch")
    _, _, r1 = psd_factor(g1.covariance)
    _, _, r2 = psd_factor(g2.covariance)
    if r1 < g1.dim or r2 < g2.dim:
        reduced = _reduce_to_shared_range(g1, g2)
        if reduced is None:
            return 1.0
        if reduced == ():
            return 0.0
        g1, g2 = reduced
    kl = max(kl_gaussians(g1, g2), kl_gaussians(g2, g1))
    return float(min(1.0, np.sqrt(kl / 2)))


def gaussian_log_density_ratio(g1, g2, x):
    """Log-likelihood ratio ``ln f1(x) / f2(x)``; ``x`` may hold one row or many."""
    if g1.dim != g2.dim:
        raise InvalidInput("dimension mismatch")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != g1.dim:
        raise InvalidInput("point dimension mismatch")
    out = np.zeros(X.shape[0])
    for sign, g in ((1.0, g1), (-1.0, g2)):
        logdet = _checked_logdet(g.covariance)
        L = np.linalg.cholesky(g.covariance)
        z = np.linalg.solve(L, (X - g.mean).T)
        out += sign * (-0.5 * logdet - 0.5 * np.sum(z * z, axis=0))
    return float(out[0]) if single else out
