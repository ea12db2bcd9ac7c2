"""Plug-in estimators and the private estimators built on PPME.

Single-stage private estimators take the internal ``(epsilon, delta)`` of
one PPME run and report the ``(2 epsilon, 4 e^epsilon delta)`` they spend.
The full pipelines take a total budget and split it evenly across stages.
"""

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np

from dpgauss.config import load_constants
from dpgauss.errors import (ConfigError, FilterDiverged, InsufficientData, InvalidInput,
                            RefinementUnstable)
from dpgauss.gaussian import GaussianModel, as_samples, psd_factor, range_basis
from dpgauss.mechanisms import (IDENTITY, calibrate_concentration_eta, covariance_mask_for,
                                gaussian_mask_for, gaussian_mask_gamma)
from dpgauss.ppme import PpmeConfig, min_chunks, ppme_run, spent_budget
from dpgauss.semimetrics import euclidean_space, exact_space, projector_space, spectral_space

SPAN_RANK_TOL = 1e-8


@dataclass(frozen=True)
class PrivacyBudget:
    epsilon: float
    delta: float

    def __post_init__(self):
        if not self.epsilon > 0:
            raise InvalidInput("epsilon must be positive")
        if not self.delta > 0:
            raise InvalidInput("delta must be positive")

    @property
    def spent(self):
        """Total cost of one PPME run at these internal parameters."""
        return PrivacyBudget(*spent_budget(self.epsilon, self.delta))


def compose(budgets):
    """Basic composition: coordinatewise sum."""
    budgets = list(budgets)
    if not budgets:
        return None
    return PrivacyBudget(math.fsum(b.epsilon for b in budgets),
                         math.fsum(b.delta for b in budgets))


def split_budget(total, stages):
    """Internal per-stage budgets whose PPME totals sum to ``total``."""
    eps_stage = total.epsilon / stages
    delta_stage = total.delta / stages
    eps = eps_stage / 2
    delta = delta_stage / (4 * math.exp(eps)) if eps < 700 else 0.0
    if delta <= 0:
        raise ConfigError("budget split leaves no usable delta; pass explicit stage budgets")
    return [PrivacyBudget(eps, delta) for _ in range(stages)]


# ---------------------------------------------------------------- plug-ins

def empirical_covariance(samples):
    X = as_samples(samples)
    if len(X) < 1:
        raise InvalidInput("need at least one sample")
    return X.T @ X / len(X)


def empirical_mean(samples):
    X = as_samples(samples)
    if len(X) < 1:
        raise InvalidInput("need at least one sample")
    return X.mean(axis=0)


def span_projection(samples):
    """Orthogonal projector onto the span of the rows."""
    X = as_samples(samples)
    d = X.shape[1]
    if len(X) == 0 or not np.any(X):
        return np.zeros((d, d))
    _, sv, vt = np.linalg.svd(X, full_matrices=False)
    V = vt[sv > SPAN_RANK_TOL * sv[0]]
    P = V.T @ V
    return (P + P.T) / 2


class FilterResult(NamedTuple):
    estimate: np.ndarray
    rounds: int
    kept: np.ndarray


def _max_rounds(s):
    return max(8, math.ceil(2 * math.log2(max(s, 2))))


def _top_direction(V):
    C = np.cov(V, rowvar=False, bias=True)
    evals, evecs = np.linalg.eigh(np.atleast_2d(C))
    return evals[-1], evecs[:, -1]


def _drop_extremes(V, keep, direction, count):
    live = np.flatnonzero(keep)
    centered = V - V.mean(axis=0)
    score = (centered @ direction) ** 2
    worst = live[np.argsort(score, kind="stable")[-count:]]
    keep = keep.copy()
    keep[worst] = False
    return keep


def robust_mean_filter(samples, alpha, c=None):
    """Spectral filter for the mean of near-identity-covariance data."""
    if not 0 < alpha < 0.5:
        raise InvalidInput("alpha must lie in (0, 1/2)")
    c = load_constants().filter_mean_c if c is None else c
    X = as_samples(samples)
    s = len(X)
    keep = np.ones(s, dtype=bool)
    trigger = 1 + c * alpha * math.log(1 / alpha)
    drop = math.ceil(alpha * s / 4)
    rounds = 0
    while rounds < _max_rounds(s):
        Y = X[keep]
        top, v = _top_direction(Y)
        if top <= trigger:
            break
        keep = _drop_extremes(Y, keep, v, drop)
        rounds += 1
        if keep.sum() < s / 2:
            raise FilterDiverged(f"filter kept {keep.sum()} of {s} points")
    return FilterResult(X[keep].mean(axis=0), rounds, keep)


def _half_vec_outer(Z):
    # (z_i^2, sqrt2 z_i z_j): covariance 2I under a standard Gaussian
    d = Z.shape[1]
    iu = np.triu_indices(d)
    scale = np.where(iu[0] == iu[1], 1.0, math.sqrt(2))
    return Z[:, iu[0]] * Z[:, iu[1]] * scale


def robust_covariance_filter(samples, alpha, c=None, alpha0=None):
    """Spectral filter on whitened outer products for a zero-mean second moment."""
    consts = load_constants()
    c = consts.filter_cov_c if c is None else c
    alpha0 = consts.alpha0 if alpha0 is None else alpha0
    if not 0 < alpha < alpha0:
        raise InvalidInput(f"alpha must lie in (0, {alpha0})")
    X = as_samples(samples)
    s = len(X)
    keep = np.ones(s, dtype=bool)
    trigger = 2 * (1 + c * alpha * math.log(1 / alpha))
    drop = math.ceil(alpha * s / 4)
    rounds = 0
    while rounds < _max_rounds(s):
        Y = X[keep]
        S = Y.T @ Y / len(Y)
        _, inv_root, _ = psd_factor(S)
        if inv_root is None:
            break
        V = _half_vec_outer(Y @ inv_root)
        top, v = _top_direction(V)
        if top <= trigger:
            break
        keep = _drop_extremes(V, keep, v, drop)
        rounds += 1
        if keep.sum() < s / 2:
            raise FilterDiverged(f"filter kept {keep.sum()} of {s} points")
    Y = X[keep]
    return FilterResult(Y.T @ Y / len(Y), rounds, keep)


def filtered_robust_mean(samples, alpha, beta=0.1):
    return robust_mean_filter(samples, alpha).estimate


def filtered_robust_covariance(samples, alpha, beta=0.1):
    return robust_covariance_filter(samples, alpha).estimate


# ---------------------------------------------------------------- planning

@dataclass(frozen=True)
class StagePlan:
    """Chunk count, chunk size and mask scale of one PPME stage."""

    name: str
    k: int
    s: int
    eta: float
    gamma: float
    radius: float = float("nan")

    @property
    def m(self):
        return self.k * self.s


def plan_subspace(d, budget):
    k = min_chunks(budget.epsilon, budget.delta)
    return StagePlan("subspace", k, d, 0.0, float("inf"))


def plan_precondition(d, budget, beta, constants=None, robust_alpha=None):
    """Sizes for the spectral-distance covariance stage.

    The chunk count follows from the covariance mask's ``gamma``; chunks
    are sized so every empirical second moment lands within 1/100 of the
    truth with probability ``1 - beta / (2k)``.
    """
    consts = constants or load_constants()
    c1 = consts.c1 if robust_alpha is None else consts.c1_robust
    eta = calibrate_concentration_eta(d, beta, c1, robust_alpha)
    gamma = covariance_mask_for(eta, budget.epsilon, budget.delta, d).gamma
    space = spectral_space()
    k = max(min_chunks(budget.epsilon, budget.delta),
            math.ceil(400 * (space.r + space.phi) / gamma * (1 - 1e-12)))
    if robust_alpha is None:
        s = math.ceil(consts.c2 * (d + math.log(4 * k / beta)))
    else:
        spread = robust_alpha * math.log(1 / robust_alpha)
        s = math.ceil(consts.robust_cov_s_factor * (d * d + math.log(4 * k / beta)) / spread**2)
    return StagePlan("precondition", k, max(s, d), eta, gamma, space.r)


def plan_refine(d, budget, alpha, beta, constants=None):
    """Sizes for the Frobenius refinement of a whitened covariance."""
    consts = constants or load_constants()
    r = consts.refine_radius
    eta = alpha / (4 * math.sqrt(2 * d * d * math.log(2 / beta)))
    gamma = gaussian_mask_gamma(eta, budget.epsilon, budget.delta)
    k = max(min_chunks(budget.epsilon, budget.delta), math.ceil(400 * r / gamma * (1 - 1e-12)))
    rho = r / 2
    s = math.ceil(1.21 * (d * d + d) * (1 + math.sqrt(2 * math.log(2 * k / beta))) ** 2 / rho**2)
    return StagePlan("refine", k, s, eta, gamma, r)


def plan_mean(d, budget, alpha, beta, radius=None):
    """Sizes for the Euclidean mean stage on whitened data."""
    r = alpha if radius is None else radius
    eta = alpha / math.sqrt(2 * d * math.log(2 / beta))
    gamma = gaussian_mask_gamma(eta, budget.epsilon, budget.delta)
    k = max(min_chunks(budget.epsilon, budget.delta), math.ceil(400 * r / gamma * (1 - 1e-12)))
    rho = r / 2
    s = math.ceil(1.5 * (math.sqrt(d) + math.sqrt(2 * math.log(2 * k / beta))) ** 2 / rho**2)
    return StagePlan("mean", k, s, eta, gamma, r)


def plan_complement(budget):
    k = min_chunks(budget.epsilon, budget.delta)
    return StagePlan("complement", k, 1, 0.0, float("inf"))


def _require(X, m, what):
    if len(X) < m:
        raise InsufficientData(f"{what} needs m >= {m} records, got {len(X)}")


def _outcome_with(outcome, **extra):
    diag = dict(outcome.diagnostics)
    diag.update(extra)
    return replace(outcome, diagnostics=diag)


# ---------------------------------------------------------------- private stages

def private_subspace(dataset, budget, rng, k=None):
    """Projector onto the span of the data, released exactly when chunks agree."""
    X = as_samples(dataset)
    d = X.shape[1]
    plan = plan_subspace(d, budget)
    k = plan.k if k is None else k
    _require(X, k * d, "subspace stage")
    cfg = PpmeConfig(k, budget.epsilon, budget.delta, projector_space())
    out = ppme_run(X, span_projection, IDENTITY, cfg, rng)
    return _outcome_with(out, stage="subspace")


def private_precondition_covariance(dataset, budget, beta, rng, constants=None, k=None,
                                    robust_alpha=None):
    """Covariance within spectral distance 1/10 of a zero-mean Gaussian's.

    With ``robust_alpha`` each chunk uses the filtered covariance and the
    mask noise shrinks accordingly.
    """
    X = as_samples(dataset)
    d = X.shape[1]
    plan = plan_precondition(d, budget, beta, constants, robust_alpha)
    if k is not None:
        if k < plan.k:
            raise ConfigError(
                f"k={k} is below 400(r+phi)/gamma = {plan.k}; the mask would not hide chunk changes")
        plan = replace(plan, k=k)
    _require(X, plan.m, "covariance stage")
    mask = covariance_mask_for(plan.eta, budget.epsilon, budget.delta, d)
    cfg = PpmeConfig(plan.k, budget.epsilon, budget.delta, spectral_space())
    if robust_alpha is None:
        estimator = empirical_covariance
    else:
        def estimator(chunk):
            return filtered_robust_covariance(chunk, robust_alpha)
    out = ppme_run(X, estimator, mask, cfg, rng)
    return _outcome_with(out, stage="precondition", eta=plan.eta, gamma=mask.gamma)


def private_refine_covariance(dataset, precond, budget, alpha, beta, rng, constants=None):
    """Refine a preconditioner to Frobenius accuracy ``alpha`` in whitened space."""
    X = as_samples(dataset)
    d = X.shape[1]
    root, inv_root, _ = psd_factor(precond)
    if inv_root is None:
        raise InvalidInput("preconditioner must be positive definite")
    plan = plan_refine(d, budget, alpha, beta, constants)
    _require(X, plan.m, "refine stage")
    mask = gaussian_mask_for(plan.gamma, budget.epsilon, budget.delta, d * d, beta)
    cfg = PpmeConfig(plan.k, budget.epsilon, budget.delta, euclidean_space(plan.radius))
    out = ppme_run(X @ inv_root, empirical_covariance, mask, cfg, rng)
    out = _outcome_with(out, stage="refine", eta=mask.calibration.eta, radius=plan.radius)
    if out.failed:
        return out
    M = (out.point + out.point.T) / 2
    evals, evecs = np.linalg.eigh(M)
    clamped = np.clip(evals, 0.0, None)
    if np.max(clamped - evals) > alpha / 2:
        raise RefinementUnstable("PSD projection moved an eigenvalue by more than alpha/2")
    M = (evecs * clamped) @ evecs.T
    band_ok = bool(clamped[0] >= 0.9 - alpha and clamped[-1] <= 1.1 + alpha)
    sigma = root @ M @ root
    out = _outcome_with(out, whitened=M, conditioning_band_ok=band_ok)
    return replace(out, point=(sigma + sigma.T) / 2)


def private_mean_wellconditioned(dataset, budget, alpha, beta, rng, radius=None, estimator=None):
    """Mean of near-identity-covariance data to within about ``2 alpha``."""
    X = as_samples(dataset)
    d = X.shape[1]
    plan = plan_mean(d, budget, alpha, beta, radius)
    _require(X, plan.m, "mean stage")
    mask = gaussian_mask_for(plan.gamma, budget.epsilon, budget.delta, d, beta)
    cfg = PpmeConfig(plan.k, budget.epsilon, budget.delta, euclidean_space(plan.radius))
    out = ppme_run(X, estimator or empirical_mean, mask, cfg, rng)
    return _outcome_with(out, stage="mean", eta=mask.calibration.eta, radius=plan.radius)


def _first_record(chunk):
    return np.array(chunk[0], dtype=float)


def private_complement_mean(dataset, P, budget, rng):
    """The common value of ``(I - P) x`` over the records, released exactly."""
    X = as_samples(dataset)
    d = X.shape[1]
    P = np.asarray(P, dtype=float)
    Y = X @ (np.eye(d) - P)
    plan = plan_complement(budget)
    _require(Y, plan.k, "complement stage")
    scale = float(np.max(np.linalg.norm(Y, axis=1))) if len(Y) else 1.0
    cfg = PpmeConfig(plan.k, budget.epsilon, budget.delta, exact_space(scale))
    out = ppme_run(Y, _first_record, IDENTITY, cfg, rng)
    return _outcome_with(out, stage="complement")


# ---------------------------------------------------------------- pipelines

@dataclass(frozen=True)
class EstimationReport:
    model: Optional[GaussianModel]
    failed: bool
    failed_stage: Optional[str]
    stage_diagnostics: dict
    budget_spent: Optional[PrivacyBudget]
    seed: Optional[int]
    slices: dict = field(default_factory=dict)


LEARN_STAGES = ("subspace", "precondition", "refine", "mean", "complement")
ROBUST_STAGES = ("precondition", "mean")


def _stage_budgets(total, names, stage_budgets):
    if stage_budgets is None:
        return dict(zip(names, split_budget(total, len(names))))
    if set(stage_budgets) != set(names):
        raise ConfigError(f"stage budgets must name exactly {list(names)}")
    return dict(stage_budgets)


def plan_learn_gaussian(d, budget, alpha, beta, constants=None, stage_budgets=None):
    """Stage plans and record counts ``(m1, m_pre, m_ref, m3, m4)``; total is
    ``2 m1 + 2 (m_pre + m_ref) + m3 + m4``."""
    b = _stage_budgets(budget, LEARN_STAGES, stage_budgets)
    plans = {
        "subspace": plan_subspace(d, b["subspace"]),
        "precondition": plan_precondition(d, b["precondition"], beta, constants),
        "refine": plan_refine(d, b["refine"], alpha, beta, constants),
        "mean": plan_mean(d, b["mean"], alpha, beta),
        "complement": plan_complement(b["complement"]),
    }
    counts = {name: p.m for name, p in plans.items()}
    total = (2 * counts["subspace"] + 2 * (counts["precondition"] + counts["refine"])
             + counts["mean"] + counts["complement"])
    return plans, counts, total


def _stage_rngs(rng, names):
    seed = rng if isinstance(rng, (int, np.integer)) else None
    streams = np.random.default_rng(rng).spawn(len(names))
    return seed, dict(zip(names, streams))


def learn_gaussian(dataset, budget, alpha, beta, rng, constants=None, stage_budgets=None):
    """Private estimate of a (possibly degenerate) Gaussian from its samples.

    Records are consumed as disjoint contiguous slices: paired differences
    for the subspace, paired differences for the two covariance stages,
    then raw records for the two mean stages.

    Args:
      dataset: ``m x d`` samples.
      budget: Total ``PrivacyBudget``; split evenly over five PPME stages
        unless ``stage_budgets`` maps each stage to internal parameters.
      alpha: Target accuracy.
      beta: Failure probability.
      rng: Integer seed or ``numpy.random.Generator``.
    """
    X = as_samples(dataset)
    m, d = X.shape
    budgets = _stage_budgets(budget, LEARN_STAGES, stage_budgets)
    plans, counts, total = plan_learn_gaussian(d, budget, alpha, beta, constants, budgets)
    if m < total:
        raise InsufficientData(f"learn_gaussian needs m >= {total} records, got {m}")
    seed, rngs = _stage_rngs(rng, LEARN_STAGES)
    m1, m_pre, m_ref = counts["subspace"], counts["precondition"], counts["refine"]
    m2 = m_pre + m_ref
    m3 = counts["mean"]
    cuts = np.cumsum([0, 2 * m1, 2 * m2, m3, counts["complement"]])
    slices = {"subspace": (int(cuts[0]), int(cuts[1])), "covariance": (int(cuts[1]), int(cuts[2])),
              "mean": (int(cuts[2]), int(cuts[3])), "complement": (int(cuts[3]), int(cuts[4]))}
    diagnostics, spent = {}, []

    def finish(model, failed_stage=None):
        return EstimationReport(model, model is None, failed_stage, diagnostics,
                                compose(spent), seed, slices)

    def run(name, fn, *args, **kwargs):
        out = fn(*args, **kwargs)
        diagnostics[name] = out.diagnostics
        spent.append(budgets[name].spent)
        return out

    Z1 = (X[:m1] - X[m1:2 * m1]) / math.sqrt(2)
    out = run("subspace", private_subspace, Z1, budgets["subspace"], rngs["subspace"])
    if out.failed:
        return finish(None, "subspace")
    P = out.point
    U = range_basis(P) if np.any(P) else np.zeros((d, 0))
    rank = U.shape[1]
    diagnostics["subspace"]["rank"] = rank

    base = cuts[1]
    Z2 = (X[base:base + m2] - X[base + m2:base + 2 * m2]) / math.sqrt(2)
    if rank > 0:
        Z2 = Z2 @ U
        out = run("precondition", private_precondition_covariance, Z2[:m_pre],
                  budgets["precondition"], beta, rngs["precondition"], constants)
        if out.failed:
            return finish(None, "precondition")
        out = run("refine", private_refine_covariance, Z2[m_pre:], out.point,
                  budgets["refine"], alpha, beta, rngs["refine"], constants)
        if out.failed:
            return finish(None, "refine")
        sigma_r = out.point
        root_r, inv_root_r, _ = psd_factor(sigma_r)
        X3 = X[cuts[2]:cuts[3]] @ U @ inv_root_r
        out = run("mean", private_mean_wellconditioned, X3, budgets["mean"], alpha, beta,
                  rngs["mean"])
        if out.failed:
            return finish(None, "mean")
        mean_r = U @ root_r @ out.point
        cov = U @ sigma_r @ U.T
    else:
        mean_r = np.zeros(d)
        cov = np.zeros((d, d))

    out = run("complement", private_complement_mean, X[cuts[3]:cuts[4]], P,
              budgets["complement"], rngs["complement"])
    if out.failed:
        return finish(None, "complement")
    return finish(GaussianModel(mean_r + out.point, (cov + cov.T) / 2))


def plan_learn_gaussian_robust(d, budget, alpha, beta, constants=None, stage_budgets=None):
    consts = constants or load_constants()
    b = _stage_budgets(budget, ROBUST_STAGES, stage_budgets)
    radius = consts.c3 * alpha * math.sqrt(math.log(1 / alpha))
    plans = {
        "precondition": plan_precondition(d, b["precondition"], beta, consts, robust_alpha=alpha),
        "mean": plan_mean(d, b["mean"], alpha, beta, radius=radius),
    }
    counts = {name: p.m for name, p in plans.items()}
    return plans, counts, 2 * counts["precondition"] + counts["mean"]


def learn_gaussian_robust(dataset, budget, alpha, beta, rng, constants=None, stage_budgets=None):
    """Private estimate of a full-rank Gaussian from an alpha-corrupted sample.

    Both stages run the reference filters inside each chunk: the covariance
    on paired differences, the mean on records whitened by that covariance.
    """
    consts = constants or load_constants()
    if not 0 < alpha < consts.alpha0:
        raise InvalidInput(f"alpha must lie in (0, {consts.alpha0})")
    X = as_samples(dataset)
    m, d = X.shape
    budgets = _stage_budgets(budget, ROBUST_STAGES, stage_budgets)
    plans, counts, total = plan_learn_gaussian_robust(d, budget, alpha, beta, consts, budgets)
    if m < total:
        raise InsufficientData(f"learn_gaussian_robust needs m >= {total} records, got {m}")
    seed, rngs = _stage_rngs(rng, ROBUST_STAGES)
    m_cov = counts["precondition"]
    slices = {"covariance": (0, 2 * m_cov), "mean": (2 * m_cov, 2 * m_cov + counts["mean"])}
    diagnostics, spent = {}, []

    def finish(model, failed_stage=None):
        return EstimationReport(model, model is None, failed_stage, diagnostics,
                                compose(spent), seed, slices)

    Z = (X[:m_cov] - X[m_cov:2 * m_cov]) / math.sqrt(2)
    out = private_precondition_covariance(Z, budgets["precondition"], beta, rngs["precondition"],
                                          consts, robust_alpha=alpha)
    diagnostics["precondition"] = out.diagnostics
    spent.append(budgets["precondition"].spent)
    if out.failed:
        return finish(None, "precondition")
    sigma = out.point
    root, inv_root, _ = psd_factor(sigma)
    Y = X[slices["mean"][0]:slices["mean"][1]] @ inv_root

    def robust_mean(chunk):
        return filtered_robust_mean(chunk, alpha)

    out = private_mean_wellconditioned(Y, budgets["mean"], alpha, beta, rngs["mean"],
                                       radius=plans["mean"].radius, estimator=robust_mean)
    diagnostics["mean"] = out.diagnostics
    spent.append(budgets["mean"].spent)
    if out.failed:
        return finish(None, "mean")
    return finish(GaussianModel(root @ out.point, sigma))
