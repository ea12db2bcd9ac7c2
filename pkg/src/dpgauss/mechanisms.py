"""Noise primitives: truncated Laplace, Gaussian and covariance masking."""

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import stats

from dpgauss.errors import InvalidInput, SingularCovariance
from dpgauss.gaussian import psd_factor

GAMMA_CAP = 0.5


def _check_privacy(epsilon, delta):
    if not epsilon > 0:
        raise InvalidInput("epsilon must be positive")
    if not 0 < delta < 1:
        raise InvalidInput("delta must lie in (0, 1)")


def log_tlap_ratio(epsilon, delta):
    """``ln(1 + (e^eps - 1) / (2 delta))`` without overflow for large epsilon."""
    _check_privacy(epsilon, delta)
    if epsilon > 1:
        log_expm1 = epsilon + math.log1p(-math.exp(-epsilon))
    else:
        log_expm1 = math.log(math.expm1(epsilon))
    return float(np.logaddexp(0.0, log_expm1 - math.log(2 * delta)))


@dataclass(frozen=True)
class TruncatedLaplaceParams:
    """Laplace noise of scale ``sensitivity / epsilon`` truncated to ``[-A, A]``."""

    sensitivity: float
    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.sensitivity > 0:
            raise InvalidInput("sensitivity must be positive")
        _check_privacy(self.epsilon, self.delta)

    @property
    def lam(self):
        return self.sensitivity / self.epsilon

    @property
    def A(self):
        return self.lam * log_tlap_ratio(self.epsilon, self.delta)

    @property
    def B(self):
        return 1.0 / (2 * self.lam * -math.expm1(-self.A / self.lam))

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(np.abs(x) <= self.A, self.B * np.exp(-np.abs(x) / self.lam), 0.0)

    def cdf(self, x):
        x = np.clip(np.asarray(x, dtype=float), -self.A, self.A)
        lam, tail = self.lam, math.exp(-self.A / self.lam)
        left = self.B * lam * (np.exp(np.minimum(x, 0) / lam) - tail)
        right = 1.0 - self.B * lam * (np.exp(-np.maximum(x, 0) / lam) - tail)
        return np.where(x < 0, left, right)


def sample_truncated_laplace(p, rng, size=None):
    """Inverse-CDF draw(s) from ``p``; one uniform per output value."""
    rng = np.random.default_rng(rng)
    u = rng.random(size)
    lam, tail, scale = p.lam, math.exp(-p.A / p.lam), p.B * p.lam
    lo = np.minimum(u, 1.0 - u)
    mag = -lam * np.log(lo / scale + tail)
    x = np.where(u < 0.5, -mag, mag)
    x = np.clip(x, -p.A, p.A)
    return float(x) if size is None else x


@dataclass(frozen=True)
class MaskingCalibration:
    """Parameters of a masking mechanism and its concentration guarantee.

    ``gamma`` is the input distance up to which outputs are
    ``(epsilon, delta)``-indistinguishable; with probability ``1 - conc_beta``
    the output lies within ``conc_alpha`` of the input.
    """

    gamma: float
    epsilon: float
    delta: float
    eta: float
    conc_alpha: float = float("nan")
    conc_beta: float = float("nan")


def gaussian_noise_per_distance(epsilon, delta):
    """Noise scale per unit of input distance for the Gaussian mask.

    The larger of ``max(2 ln(1.25/delta), sqrt(2 ln(1.25/delta))) / epsilon``
    and the scale at which the privacy loss ``N(mu, 2 mu)`` exceeds
    ``epsilon`` with probability at most ``delta / 2``. The second term only
    binds for epsilon in the hundreds.
    """
    _check_privacy(epsilon, delta)
    L = math.log(1.25 / delta)
    stated = max(2 * L, math.sqrt(2 * L)) / epsilon
    z = float(stats.norm.isf(delta / 2))
    root_mu = (-math.sqrt(2) * z + math.sqrt(2 * z * z + 4 * epsilon)) / 2
    return max(stated, 1.0 / (math.sqrt(2) * root_mu))


def gaussian_mask_eta(gamma, epsilon, delta):
    return gamma * gaussian_noise_per_distance(epsilon, delta)


def gaussian_mask_gamma(eta, epsilon, delta):
    """Input distance hidden by Gaussian noise of scale ``eta``."""
    return eta / gaussian_noise_per_distance(epsilon, delta)


def gaussian_calibration(gamma, epsilon, delta, dim, beta=None):
    eta = gaussian_mask_eta(gamma, epsilon, delta)
    conc = float("nan") if beta is None else eta * math.sqrt(2 * dim * math.log(2 / beta))
    return MaskingCalibration(gamma, epsilon, delta, eta, conc, float("nan") if beta is None else beta / 2)


def gaussian_mask(y, cal, rng):
    """Return ``y + eta * g`` with ``g`` standard normal of the same shape."""
    y = np.asarray(y, dtype=float)
    if cal.eta == 0:
        return y.copy()
    rng = np.random.default_rng(rng)
    return y + cal.eta * rng.standard_normal(y.shape)


def covariance_mask(S, eta, rng):
    """``S^1/2 (I + eta G)(I + eta G)^T S^1/2`` with the symmetric root of ``S``."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    root, _, rank = psd_factor(S)
    d = S.shape[0]
    if rank < d:
        raise SingularCovariance("covariance mask needs a positive definite input")
    if eta == 0:
        return S.copy()
    rng = np.random.default_rng(rng)
    M = np.eye(d) + eta * rng.standard_normal((d, d))
    out = root @ M @ M.T @ root
    return (out + out.T) / 2


def covariance_mask_gamma(eta, epsilon, delta, d):
    """Largest input distance the covariance mask hides at ``(epsilon, delta)``.

    The minimum of the four calibration terms, capped at ``GAMMA_CAP``.
    """
    _check_privacy(epsilon, delta)
    if not eta > 0 or d < 1:
        raise InvalidInput("eta and d must be positive")
    L = math.log(2 / delta)
    terms = (
        math.sqrt(epsilon / (2 * d * (d + 1 / eta**2))),
        epsilon / (8 * d * math.sqrt(L)),
        epsilon / (8 * L),
        epsilon * eta / (12 * math.sqrt(d) * math.sqrt(L)),
    )
    return min(min(terms), GAMMA_CAP)


def calibrate_concentration_eta(d, beta, c1, robust_alpha=None):
    """Noise scale for which the covariance mask stays within 1/100 w.p. 1 - beta/2.

    With ``robust_alpha`` the scale shrinks so the mask error is of order
    ``alpha / sqrt(d)``.
    """
    # beta up to 4 keeps ln(4/beta) >= 0
    if not c1 > 0 or not 0 < beta <= 4 or d < 1:
        raise InvalidInput("need c1 > 0, beta in (0, 4], d >= 1")
    lb = math.log(4 / beta)
    if robust_alpha is None:
        return 1.0 / (c1 * (math.sqrt(d) + math.sqrt(lb)))
    return robust_alpha / (c1 * (d + math.sqrt(d * lb)))


def identity_mask(y, rng=None):
    return y


@dataclass(frozen=True)
class Mask:
    """A masking mechanism bound to its calibration.

    ``gamma`` is ``inf`` for masks whose space only has finite distances
    between equal points.
    """

    name: str
    apply: Callable
    gamma: float
    calibration: Optional[MaskingCalibration] = None

    def __call__(self, point, rng):
        return self.apply(point, rng)


IDENTITY = Mask("identity", identity_mask, float("inf"))


def gaussian_mask_for(gamma, epsilon, delta, dim, beta=None):
    cal = gaussian_calibration(gamma, epsilon, delta, dim, beta)
    return Mask("gaussian", lambda y, rng: gaussian_mask(y, cal, rng), gamma, cal)


def covariance_mask_for(eta, epsilon, delta, d):
    gamma = covariance_mask_gamma(eta, epsilon, delta, d)
    cal = MaskingCalibration(gamma, epsilon, delta, eta, 0.01)
    return Mask("covariance", lambda S, rng: covariance_mask(S, eta, rng), gamma, cal)
