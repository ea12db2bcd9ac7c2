"""Private populous mean estimation.

The data are cut into ``k`` equal chunks, a non-private estimator runs on
each, and every candidate is scored by the fraction of candidates inside its
``r / t`` ball. A truncated-Laplace noisy average of the scores decides
whether the candidates agree; if they do, high-scoring candidates are
averaged with soft weights and the average is masked.

For ``k >= 140`` and a mask that hides distances up to ``400 (r + phi) / k``
at ``(epsilon, delta)``, a run is ``(2 epsilon, 4 e^epsilon delta)``-DP.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from dpgauss.errors import ConfigError, InsufficientData, InvalidInput
from dpgauss.gaussian import psd_factor
from dpgauss.mechanisms import TruncatedLaplaceParams, log_tlap_ratio, sample_truncated_laplace
from dpgauss.semimetrics import Semimetric

MIN_CHUNKS = 140


def min_chunks(epsilon, delta):
    """Smallest ``k`` meeting both the privacy floor and the utility bound."""
    return max(MIN_CHUNKS, math.ceil(20 / epsilon * log_tlap_ratio(epsilon, delta)))


def spent_budget(epsilon, delta):
    """Total ``(epsilon, delta)`` of one run at internal parameters ``(epsilon, delta)``."""
    try:
        return 2 * epsilon, 4 * math.exp(epsilon) * delta
    except OverflowError:
        return 2 * epsilon, float("inf")


@dataclass(frozen=True)
class PpmeConfig:
    k: int
    epsilon: float
    delta: float
    space: Semimetric
    shuffle: bool = True

    def __post_init__(self):
        if int(self.k) != self.k or self.k < MIN_CHUNKS:
            raise ConfigError(f"k must be an integer >= {MIN_CHUNKS}, got {self.k}")
        if not self.epsilon > 0 or not 0 < self.delta < 1:
            raise ConfigError("need epsilon > 0 and delta in (0, 1)")

    @property
    def threshold(self):
        return 0.8 + 2 / (self.k * self.epsilon) * log_tlap_ratio(self.epsilon, self.delta)

    @property
    def meets_utility_bound(self):
        return self.k >= 20 / self.epsilon * log_tlap_ratio(self.epsilon, self.delta)

    @property
    def required_gamma(self):
        return 400 * (self.space.r + self.space.phi) / self.k

    @property
    def spent(self):
        return spent_budget(self.epsilon, self.delta)


@dataclass(frozen=True)
class PpmeOutcome:
    """Result of one run: ``point`` is ``None`` when the run failed."""

    point: Optional[np.ndarray]
    diagnostics: dict = field(default_factory=dict)

    @property
    def failed(self):
        return self.point is None


def compute_scores(candidates, space):
    k = len(candidates)
    if k < 1:
        raise InvalidInput("need at least one candidate")
    return space.within_counts(candidates) / k


def compute_weights(q):
    q = np.asarray(q, dtype=float)
    return np.minimum(1.0, 10.0 * np.maximum(0.0, q - 0.6))


def threshold_test(Q, cfg, rng):
    """Noisy stability test; returns ``(passed, Qhat)``."""
    noise = sample_truncated_laplace(
        TruncatedLaplaceParams(2.0 / cfg.k, cfg.epsilon, cfg.delta), rng)
    Qhat = Q + noise
    return bool(Qhat >= cfg.threshold), float(Qhat)


def _chunk_candidates(X, estimator, k):
    s = len(X) // k
    return [estimator(X[i * s:(i + 1) * s]) for i in range(k)], s


def ppme_run(dataset, estimator, mask, cfg, rng):
    """Run the estimator once per chunk and privately aggregate the candidates.

    Args:
      dataset: Records, one per row (anything indexable by slices).
      estimator: Deterministic map from a chunk of records to a candidate.
      mask: ``Mask`` whose ``gamma`` covers ``400 (r + phi) / k`` in ``cfg.space``.
      cfg: ``PpmeConfig``.
      rng: Seed or ``numpy.random.Generator``.

    Returns:
      ``PpmeOutcome``; diagnostics are filled in on both success and failure.

    Raises:
      InsufficientData: fewer records than chunks.
      ConfigError: the mask does not hide distances as large as required.
    """
    X = np.asarray(dataset)
    m = len(X)
    if m < cfg.k:
        raise InsufficientData(f"need at least k={cfg.k} records, got {m}")
    if mask.gamma < cfg.required_gamma * (1 - 1e-12):
        raise ConfigError(
            f"mask gamma {mask.gamma:.4g} below required 400(r+phi)/k = {cfg.required_gamma:.4g}")
    shuffle_rng, noise_rng, mask_rng = np.random.default_rng(rng).spawn(3)
    if cfg.shuffle:
        X = X[shuffle_rng.permutation(m)]
    candidates, s = _chunk_candidates(X, estimator, cfg.k)
    q = compute_scores(candidates, cfg.space)
    Q = float(q.mean())
    passed, Qhat = threshold_test(Q, cfg, noise_rng)
    eps_spent, delta_spent = cfg.spent
    diag = {
        "k": cfg.k, "s": s, "space": cfg.space.name,
        "q": q, "Q": Q, "Qhat": Qhat, "threshold": cfg.threshold,
        "failed_at_threshold": not passed,
        "epsilon": cfg.epsilon, "delta": cfg.delta,
        "spent_epsilon": eps_spent, "spent_delta": delta_spent,
    }
    if not passed:
        diag["weights"] = np.zeros(cfg.k)
        diag["weight_sum"] = 0.0
        return PpmeOutcome(None, diag)
    w = compute_weights(q)
    diag["weights"] = w
    diag["weight_sum"] = float(w.sum())
    if cfg.space.kind == "spectral":
        live = [candidates[i] for i in np.flatnonzero(w > 0)]
        if any(psd_factor(c)[2] < c.shape[0] for c in live):
            raise RuntimeError("positive weight on a candidate at infinite distance")
    mu = cfg.space.combine(candidates, w)
    return PpmeOutcome(np.asarray(mask(mu, mask_rng)), diag)


def q_sensitivity_probe(dataset, estimator, cfg, index, replacement):
    """``|Q(D) - Q(D')|`` where ``D'`` swaps record ``index`` for ``replacement``."""
    X = np.array(dataset, dtype=float, copy=True)
    if not 0 <= index < len(X):
        raise InvalidInput("index out of range")
    cands, _ = _chunk_candidates(X, estimator, cfg.k)
    Q1 = compute_scores(cands, cfg.space).mean()
    X[index] = replacement
    cands, _ = _chunk_candidates(X, estimator, cfg.k)
    Q2 = compute_scores(cands, cfg.space).mean()
    return float(abs(Q1 - Q2))
