"""Monte Carlo audits of privacy and concentration, and constant calibration.

Privacy audits compare the empirical tail of the privacy loss, or the
frequency of output events, against the claimed ``(epsilon, delta)``.
All frequencies carry exact binomial (Clopper-Pearson) intervals.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from dpgauss.errors import CalibrationFailed, InvalidInput
from dpgauss.gaussian import GaussianModel, gaussian_log_density_ratio, psd_factor, sample_gaussian
from dpgauss.semimetrics import spectral_cov_dist

CONFIDENCE = 0.95
_BATCH = 100_000


def clopper_pearson(successes, trials, confidence=CONFIDENCE):
    """Exact two-sided binomial interval for a success probability."""
    if trials < 1 or not 0 <= successes <= trials:
        raise InvalidInput("need 0 <= successes <= trials and trials >= 1")
    a = (1 - confidence) / 2
    lo = 0.0 if successes == 0 else float(stats.beta.ppf(a, successes, trials - successes + 1))
    hi = 1.0 if successes == trials else float(stats.beta.ppf(1 - a, successes + 1, trials - successes))
    return lo, hi


@dataclass
class AuditReport:
    mechanism: str
    trials: int
    epsilon_target: float
    delta_target: float
    tail_estimate: float = float("nan")
    tail_ci: tuple = (float("nan"), float("nan"))
    eps_lower_bound: float = float("nan")
    eps_ci: tuple = (float("nan"), float("nan"))
    passed: bool = False
    details: dict = field(default_factory=dict)


def _tail_count(g1, g2, epsilon, trials, rng):
    hits = 0
    done = 0
    while done < trials:
        n = min(_BATCH, trials - done)
        Y = sample_gaussian(g1, n, rng)
        hits += int(np.count_nonzero(gaussian_log_density_ratio(g1, g2, Y) >= epsilon))
        done += n
    return hits


def privacy_loss_tail(d1, d2, epsilon, trials, rng, delta=0.0, slack=0.0, mechanism="gaussian"):
    """Estimate ``P(L >= epsilon)`` in both directions from exact log densities.

    Passes when both upper confidence bounds are at most ``delta + slack``.
    """
    rng = np.random.default_rng(rng)
    r12, r21 = rng.spawn(2)
    counts = (_tail_count(d1, d2, epsilon, trials, r12), _tail_count(d2, d1, epsilon, trials, r21))
    cis = [clopper_pearson(c, trials) for c in counts]
    worst = int(np.argmax([ci[1] for ci in cis]))
    return AuditReport(
        mechanism, trials, epsilon, delta,
        tail_estimate=counts[worst] / trials, tail_ci=cis[worst],
        passed=all(ci[1] <= delta + slack for ci in cis),
        details={"counts": counts, "intervals": cis},
    )


def analytic_gaussian_tail(gamma, eta, epsilon):
    """``P(L >= epsilon)`` for ``N(0, eta^2)`` against ``N(gamma, eta^2)``."""
    return float(stats.norm.cdf(gamma / (2 * eta) - eta * epsilon / gamma))


def covariance_mask_laws(sigma1, sigma2, eta):
    """Output laws of ``vec(S^1/2 (I + eta G))`` for two input covariances.

    The mask output is a function of this vector, so indistinguishability
    of these laws implies that of the masked covariances.
    """
    laws = []
    for S in (sigma1, sigma2):
        S = np.atleast_2d(np.asarray(S, dtype=float))
        root, _, _ = psd_factor(S)
        d = S.shape[0]
        laws.append(GaussianModel(root.ravel(order="F"), eta**2 * np.kron(np.eye(d), S)))
    return tuple(laws)


def _event_family(outputs_a, outputs_b):
    events = [("fail", lambda y: y is None)]
    pooled = [np.ravel(y) for y in outputs_a + outputs_b if y is not None]
    if pooled:
        pooled = np.asarray(pooled)
        for j in range(pooled.shape[1]):
            for thr in np.unique(np.quantile(pooled[:, j], np.linspace(0.1, 0.9, 9))):
                events.append((f"x[{j}]>={thr:.6g}",
                               lambda y, j=j, t=thr: y is not None and np.ravel(y)[j] >= t))
                events.append((f"x[{j}]<{thr:.6g}",
                               lambda y, j=j, t=thr: y is not None and np.ravel(y)[j] < t))
    return events


def blackbox_eps_lower_bound(mech, D, Dprime, trials, rng, epsilon=float("inf"), delta=0.0,
                             events=None):
    """Largest ``ln((P[M(D) in S] - delta) / P[M(D') in S])`` supported at 95% confidence.

    ``mech(dataset, rng)`` returns an output or ``None`` for a failure.
    Both orderings of the datasets are tried. Default events are failure
    and threshold crossings at the deciles of each output coordinate.
    """
    rng = np.random.default_rng(rng)
    ra, rb = rng.spawn(2)
    out_a = [mech(D, g) for g in ra.spawn(trials)]
    out_b = [mech(Dprime, g) for g in rb.spawn(trials)]
    events = _event_family(out_a, out_b) if events is None else events
    best, best_event, best_ci = -math.inf, None, (math.nan, math.nan)
    for name, pred in events:
        ca = sum(bool(pred(y)) for y in out_a)
        cb = sum(bool(pred(y)) for y in out_b)
        for c1, c2, tag in ((ca, cb, "D>D'"), (cb, ca, "D'>D")):
            lo1, _ = clopper_pearson(c1, trials)
            _, hi2 = clopper_pearson(c2, trials)
            if lo1 - delta <= 0:
                continue
            bound = math.log((lo1 - delta) / hi2)
            if bound > best:
                p1, p2 = c1 / trials, max(c2, 1) / trials
                point = math.log(max(p1 - delta, 1e-300) / p2)
                best, best_event, best_ci = bound, f"{name} ({tag})", (bound, point)
    return AuditReport(
        "blackbox", trials, epsilon, delta,
        eps_lower_bound=best, eps_ci=best_ci, passed=best <= epsilon,
        details={"event": best_event, "events": len(events)},
    )


def concentration_certify(mask, distance, Y, alpha, beta, trials, rng, slack=0.0):
    """Frequency of ``distance(mask(Y), Y) > alpha`` compared with ``beta``.

    ``distance`` may be a ``Semimetric`` or a plain function.
    """
    dist = getattr(distance, "distance", distance)
    rng = np.random.default_rng(rng)
    misses = sum(dist(mask(Y, g), Y) > alpha for g in rng.spawn(trials))
    lo, hi = clopper_pearson(int(misses), trials)
    return AuditReport(
        getattr(mask, "name", "mask"), trials, math.nan, math.nan,
        tail_estimate=misses / trials, tail_ci=(lo, hi), passed=hi <= beta + slack,
        details={"alpha": alpha, "beta": beta, "slack": slack},
    )


def calibrate_constant(check, lo, hi, rel_tol=0.02, safety=1.5):
    """Smallest constant in ``[lo, hi]`` passing a monotone check, times ``safety``.

    If ``lo`` already passes it is returned as is.

    Raises:
      CalibrationFailed: ``hi`` does not pass.
    """
    if not 0 < lo < hi:
        raise InvalidInput("need 0 < lo < hi")
    if check(lo):
        return float(lo)
    if not check(hi):
        raise CalibrationFailed(f"no passing constant in [{lo}, {hi}]")
    a, b = lo, hi
    while b / a > 1 + rel_tol:
        mid = math.sqrt(a * b)
        if check(mid):
            b = mid
        else:
            a = mid
    return float(b * safety)


# ------------------------------------------------------------ calibration targets

def bartlett_wishart(d, s, rng):
    """``W / s`` for ``W ~ Wishart(I_d, s)`` via the Bartlett factor."""
    L = np.tril(rng.standard_normal((d, d)), -1)
    L[np.diag_indices(d)] = np.sqrt(rng.chisquare(s - np.arange(d)))
    return L @ L.T / s


def mask_concentration_check(dims, beta, trials, seed, target=0.01, robust_alpha=None):
    """Check factory for ``c1``: the covariance mask stays within ``target``
    of its input with frequency at least ``1 - beta/2`` at every dimension.

    The spectral distance is invariant under congruence, so the identity
    input covers every positive definite one.
    """
    from dpgauss.mechanisms import calibrate_concentration_eta

    draws = {d: np.random.default_rng([seed, d]).standard_normal((trials, d, d)) for d in dims}

    def check(c1):
        for d in dims:
            eta = calibrate_concentration_eta(d, beta, c1, robust_alpha)
            M = np.eye(d) + eta * draws[d]
            misses = sum(spectral_cov_dist(m @ m.T, np.eye(d)) > target for m in M)
            if misses / trials > beta / 2:
                return False
        return True

    return check


def empirical_covariance_check(dims, beta, trials, seed, target=0.01):
    """Check factory for ``c2``: with ``s = c2 (d + ln(4/beta))`` Gaussian
    samples the empirical second moment is within ``target`` with frequency
    at least ``1 - beta/2``."""
    def check(c2):
        for d in dims:
            s = math.ceil(c2 * (d + math.log(4 / beta)))
            rng = np.random.default_rng([seed, d])
            misses = sum(spectral_cov_dist(bartlett_wishart(d, s, rng), np.eye(d)) > target
                         for _ in range(trials))
            if misses / trials > beta / 2:
                return False
        return True

    return check


def clean_filter_check(kind, dims, sizes, alpha, trials, seed, level=0.05):
    """Check factory for the filter triggers: on clean Gaussian data a round
    fires in at most a ``level`` fraction of trials."""
    from dpgauss.estimators import robust_covariance_filter, robust_mean_filter

    fn = robust_mean_filter if kind == "mean" else robust_covariance_filter

    def check(c):
        for d in dims:
            for s in sizes:
                rng = np.random.default_rng([seed, d, s])
                fired = sum(fn(rng.standard_normal((s, d)), alpha, c=c).rounds > 0
                            for _ in range(trials))
                if fired / trials > level:
                    return False
        return True

    return check


def shift_corruption(X, alpha, rng, shift=100.0):
    """Replace an ``alpha`` fraction of rows by ``mean + shift * e_1`` plus noise."""
    X = np.array(X, dtype=float, copy=True)
    n_bad = int(round(alpha * len(X)))
    idx = rng.choice(len(X), n_bad, replace=False)
    X[idx] = X.mean(axis=0) + rng.standard_normal((n_bad, X.shape[1]))
    X[idx, 0] += shift
    return X


def robust_mean_check(dims, s, alpha, trials, seed, level=0.05, filter_c=None):
    """Check factory for ``c3``: filtered mean error at most ``c3 alpha sqrt(ln 1/alpha)``
    under shifted-cluster corruption, in all but a ``level`` fraction of trials.
    The shift sweeps far outliers and ones hidden near the bulk."""
    from dpgauss.estimators import robust_mean_filter

    scale = alpha * math.sqrt(math.log(1 / alpha))
    errors = []
    for d in dims:
        rng = np.random.default_rng([seed, d])
        for t in range(trials):
            shift = (100.0, 4.0, 2.0)[t % 3]
            X = shift_corruption(rng.standard_normal((s, d)), alpha, rng, shift)
            errors.append(np.linalg.norm(robust_mean_filter(X, alpha, c=filter_c).estimate))
    errors = np.asarray(errors)

    def check(c3):
        return np.mean(errors > c3 * scale) <= level

    return check


def robust_tv_check(d, s, alpha, trials, seed, level=0.05, mean_c=None, cov_c=None):
    """Check factory for ``robust_tv_c``: the non-private filtered pipeline
    (covariance on paired differences, mean on whitened records) lands within
    total variation ``C alpha ln(1/alpha)`` of the truth under shift corruption."""
    from dpgauss.estimators import robust_covariance_filter, robust_mean_filter
    from dpgauss.gaussian import tv_upper_bound

    scale = alpha * math.log(1 / alpha)
    rng = np.random.default_rng([seed, d, s])
    tvs = []
    for _ in range(trials):
        A = rng.standard_normal((d, d))
        true = GaussianModel(rng.standard_normal(d), A @ A.T + 0.5 * np.eye(d))
        X = shift_corruption(sample_gaussian(true, 3 * s, rng), alpha, rng)
        Z = (X[:s] - X[s:2 * s]) / math.sqrt(2)
        sigma = robust_covariance_filter(Z, alpha, c=cov_c).estimate
        root, inv_root, _ = psd_factor(sigma)
        mu = root @ robust_mean_filter(X[2 * s:] @ inv_root, alpha, c=mean_c).estimate
        tvs.append(tv_upper_bound(GaussianModel(mu, sigma), true))
    tvs = np.asarray(tvs)

    def check(c):
        return np.mean(tvs > c * scale) <= level

    return check
