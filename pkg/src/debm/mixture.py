"""Per-biomarker normal/abnormal density estimation.

Each biomarker gets a two-component Gaussian mixture: a ``normal`` component
(values of subjects in whom the biomarker has not yet become abnormal) and an
``abnormal`` component, mixed with weight ``theta`` on the abnormal side.
The robust estimator first fits each component on "easy" CN/AD subjects
(misclassified training values are dropped for the initial fit), then refines
both components and theta over the whole cohort with an EM whose means and
standard deviations are confined to confidence boxes around the initial fit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import expit

from .data import BiomarkerDataset
from .errors import FitError

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianParams:
    mu: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
            raise FitError("Gaussian parameters must be finite")
        if self.sigma <= 0.0:
            raise FitError(f"sigma must be positive, got {self.sigma}")

    def logpdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.sigma
        return -0.5 * z * z - math.log(self.sigma) - 0.5 * _LOG_2PI

    def pdf(self, x):
        return np.exp(self.logpdf(x))


@dataclass(frozen=True)
class FitBounds:
    """Box constraints for one Gaussian component."""

    mu_lo: float
    mu_hi: float
    sigma_lo: float
    sigma_hi: float

    def __post_init__(self):
        if self.mu_lo > self.mu_hi:
            raise FitError("mu_lo must not exceed mu_hi")
        if not 0.0 < self.sigma_lo <= self.sigma_hi:
            raise FitError("sigma bounds must satisfy 0 < sigma_lo <= sigma_hi")

    def contains(self, params: GaussianParams, tol: float = 1e-12) -> bool:
        return (
            self.mu_lo - tol <= params.mu <= self.mu_hi + tol
            and self.sigma_lo - tol <= params.sigma <= self.sigma_hi + tol
        )

    def project(self, mu: float, sigma: float) -> tuple[float, float]:
        return (
            min(max(mu, self.mu_lo), self.mu_hi),
            min(max(sigma, self.sigma_lo), self.sigma_hi),
        )


@dataclass(frozen=True)
class BiomarkerMixture:
    """Two-Gaussian mixture with abnormal-fraction ``theta``."""

    normal: GaussianParams
    abnormal: GaussianParams
    theta: float

    def __post_init__(self):
        if not 0.0 <= self.theta <= 1.0:
            raise FitError(f"theta must lie in [0, 1], got {self.theta}")

    def log_density(self, x):
        """Log of the mixture density theta*f_ab + (1-theta)*f_norm."""
        x = np.asarray(x, dtype=float)
        la = self.abnormal.logpdf(x)
        ln = self.normal.logpdf(x)
        if self.theta == 0.0:
            return ln
        if self.theta == 1.0:
            return la
        return np.logaddexp(math.log(self.theta) + la, math.log1p(-self.theta) + ln)

    def swapped(self) -> "BiomarkerMixture":
        return BiomarkerMixture(normal=self.abnormal, abnormal=self.normal, theta=1.0 - self.theta)


def _plain_gaussian_fit(values: np.ndarray, what: str) -> GaussianParams:
    if values.size < 2:
        raise FitError(f"{what}: needs at least 2 values, got {values.size}")
    sd = float(np.std(values, ddof=1))
    if sd == 0.0:
        raise FitError(f"{what}: zero variance")
    return GaussianParams(mu=float(np.mean(values)), sigma=sd)


def initial_fit(cn_values, ad_values):
    """Robust per-class Gaussian estimates from 'easy' CN and AD subjects.

    Fits one Gaussian per class, re-classifies the training values with a
    two-class Bayes rule (priors proportional to class sizes), drops the
    misclassified values and refits on the survivors. A class that would be
    left with fewer than 2 survivors keeps its pre-removal fit.

    Returns (normal, abnormal, removed) where removed is a dict with the
    dropped index arrays under "cn" and "ad".
    """
    cn = np.asarray(cn_values, dtype=float)
    ad = np.asarray(ad_values, dtype=float)
    normal0 = _plain_gaussian_fit(cn, "CN class")
    abnormal0 = _plain_gaussian_fit(ad, "AD class")

    log_prior_cn = math.log(cn.size) - math.log(cn.size + ad.size)
    log_prior_ad = math.log(ad.size) - math.log(cn.size + ad.size)

    # a value is misclassified only if the other class is strictly better
    cn_bad = log_prior_ad + abnormal0.logpdf(cn) > log_prior_cn + normal0.logpdf(cn)
    ad_bad = log_prior_cn + normal0.logpdf(ad) > log_prior_ad + abnormal0.logpdf(ad)
    removed = {"cn": np.flatnonzero(cn_bad), "ad": np.flatnonzero(ad_bad)}

    normal = normal0
    cn_kept = cn[~cn_bad]
    if cn_kept.size >= 2 and np.std(cn_kept, ddof=1) > 0.0:
        normal = _plain_gaussian_fit(cn_kept, "CN class after removal")
    abnormal = abnormal0
    ad_kept = ad[~ad_bad]
    if ad_kept.size >= 2 and np.std(ad_kept, ddof=1) > 0.0:
        abnormal = _plain_gaussian_fit(ad_kept, "AD class after removal")
    return normal, abnormal, removed


def confidence_bounds(params: GaussianParams, n: int) -> FitBounds:
    """95% confidence box for a Gaussian fitted on n samples.

    The mean interval is mu +/- 1.96*sigma/sqrt(n); the standard-deviation
    interval is the exact chi-square one at n-1 degrees of freedom.
    """
    if n < 2:
        raise FitError(f"confidence bounds need n >= 2, got {n}")
    half = 1.96 * params.sigma / math.sqrt(n)
    dof = n - 1
    sigma_lo = params.sigma * math.sqrt(dof / stats.chi2.ppf(0.975, dof))
    sigma_hi = params.sigma * math.sqrt(dof / stats.chi2.ppf(0.025, dof))
    return FitBounds(params.mu - half, params.mu + half, sigma_lo, sigma_hi)


def refine_gmm(
    all_values,
    init_normal: GaussianParams,
    init_abnormal: GaussianParams,
    bounds_normal: FitBounds,
    bounds_abnormal: FitBounds,
    theta_init: float = 0.5,
    tol: float = 1e-6,
    max_iter: int = 500,
    callback=None,
) -> BiomarkerMixture:
    """Box-constrained EM refinement of the two-component mixture.

    Maximizes the summed log mixture density over the full cohort. Each M-step
    clamps the component mean, then the standard deviation recomputed at the
    clamped mean, onto its box; theta stays in [0, 1]. Every outer iteration is
    guaranteed not to decrease the objective. Stops when the objective improves
    by less than ``tol`` or after ``max_iter`` iterations. ``callback``, when
    given, is invoked with the objective after every iteration (including the
    initial one).
    """
    x = np.asarray(all_values, dtype=float)
    if x.size < 4:
        raise FitError(f"mixture refinement needs at least 4 values, got {x.size}")
    if not bounds_normal.contains(init_normal) or not bounds_abnormal.contains(init_abnormal):
        raise FitError("initial parameters fall outside their bounds")
    if not 0.0 <= theta_init <= 1.0:
        raise FitError(f"theta_init must lie in [0, 1], got {theta_init}")

    mixture = BiomarkerMixture(init_normal, init_abnormal, theta_init)
    objective = float(np.sum(mixture.log_density(x)))
    if not math.isfinite(objective):
        raise FitError("mixture objective is non-finite at initialization")
    if callback is not None:
        callback(objective)

    for _ in range(max_iter):
        # E-step: responsibility of the abnormal component, in log space
        la = mixture.abnormal.logpdf(x)
        ln = mixture.normal.logpdf(x)
        th = mixture.theta
        if th == 0.0:
            resp = np.zeros_like(x)
        elif th == 1.0:
            resp = np.ones_like(x)
        else:
            resp = expit(math.log(th) - math.log1p(-th) + la - ln)

        # M-step with projection onto the boxes
        w_ab = resp.sum()
        w_no = x.size - w_ab
        theta = min(max(w_ab / x.size, 0.0), 1.0)
        ab = _weighted_component(x, resp, w_ab, mixture.abnormal, bounds_abnormal)
        no = _weighted_component(x, 1.0 - resp, w_no, mixture.normal, bounds_normal)
        candidate = BiomarkerMixture(no, ab, theta)

        new_objective = float(np.sum(candidate.log_density(x)))
        if not math.isfinite(new_objective):
            raise FitError("mixture objective became non-finite during refinement")
        mixture = candidate
        if callback is not None:
            callback(new_objective)
        if new_objective - objective < tol:
            objective = new_objective
            break
        objective = new_objective
    return mixture


def _weighted_component(x, weights, total, current: GaussianParams, bounds: FitBounds) -> GaussianParams:
    """Box-clamped weighted Gaussian update; keeps the current parameters when
    the component has (numerically) no mass."""
    if total <= 1e-12:
        return current
    mu = float(np.dot(weights, x) / total)
    mu = min(max(mu, bounds.mu_lo), bounds.mu_hi)
    var = float(np.dot(weights, (x - mu) ** 2) / total)
    sigma = math.sqrt(max(var, 0.0))
    sigma = min(max(sigma, bounds.sigma_lo), bounds.sigma_hi)
    return GaussianParams(mu=mu, sigma=sigma)


def posterior(mixture: BiomarkerMixture, x):
    """Posterior probability that x comes from the abnormal component.

    Evaluated in log-density space, so simultaneous tail underflow of both
    components cannot produce 0/0.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("posterior input must be finite")
    if mixture.theta == 0.0:
        out = np.zeros_like(x)
    elif mixture.theta == 1.0:
        out = np.ones_like(x)
    else:
        la = mixture.abnormal.logpdf(x)
        ln = mixture.normal.logpdf(x)
        out = expit(
            math.log(mixture.theta) - math.log1p(-mixture.theta) + la - ln
        )
    return float(out) if out.ndim == 0 else out


# Class fits narrower than this fraction of the biomarker's observed range are
# widened before the bounds are derived. Keeps zero-measurement-noise data
# (where a saturated class collapses onto a point) from producing delta-spike
# components whose posteriors are garbage for every value outside the spike.
# Real cohorts sit far above it.
SIGMA_FLOOR_REL = 0.01


def _floored(params: GaussianParams, floor: float) -> GaussianParams:
    if params.sigma >= floor:
        return params
    return GaussianParams(params.mu, floor)


def fit_biomarker(
    values: np.ndarray,
    cn_mask: np.ndarray,
    ad_mask: np.ndarray,
    method: str = "robust-bounded",
    callback=None,
    sigma_floor_rel: float = SIGMA_FLOOR_REL,
) -> BiomarkerMixture:
    """Fit one biomarker column. ``method`` selects the estimator:

    - "robust-bounded": misclassification-pruned initial fits, EM confined to
      95% confidence boxes around them.
    - "plain-gmm": labeled per-class initial fits, EM over boxes spanning the
      data range (sigma in [1e-6*range, range]).
    """
    cn = values[cn_mask]
    ad = values[ad_mask]
    span = float(np.max(values) - np.min(values))
    if span <= 0.0:
        raise FitError("all values identical; cannot fit a mixture")
    floor = sigma_floor_rel * span
    theta_init = float(ad_mask.sum()) / values.size
    if method == "robust-bounded":
        normal, abnormal, removed = initial_fit(cn, ad)
        normal = _floored(normal, floor)
        abnormal = _floored(abnormal, floor)
        b_norm = confidence_bounds(normal, int(cn.size - removed["cn"].size))
        b_ab = confidence_bounds(abnormal, int(ad.size - removed["ad"].size))
    elif method == "plain-gmm":
        normal = _floored(_plain_gaussian_fit(cn, "CN class"), floor)
        abnormal = _floored(_plain_gaussian_fit(ad, "AD class"), floor)
        b_norm = b_ab = FitBounds(
            float(np.min(values)), float(np.max(values)), max(1e-6 * span, floor), span
        )
    else:
        raise ValueError(f"unknown mixture method {method!r}")
    return refine_gmm(values, normal, abnormal, b_norm, b_ab, theta_init, callback=callback)


def fit_all_biomarkers(dataset: BiomarkerDataset, method: str = "robust-bounded") -> list[BiomarkerMixture]:
    """Fit every biomarker column; errors are re-raised naming the biomarker."""
    dataset.require_fit_counts()
    if dataset.n_subjects < 4:
        raise FitError(
            f"mixture fitting needs at least 4 subjects, got {dataset.n_subjects}"
        )
    cn_mask = dataset.label_mask("CN")
    ad_mask = dataset.label_mask("AD")
    mixtures = []
    for i, name in enumerate(dataset.biomarker_names):
        try:
            mixtures.append(fit_biomarker(dataset.values[:, i], cn_mask, ad_mask, method))
        except FitError as exc:
            raise FitError(f"biomarker {name!r}: {exc}") from exc
    return mixtures


def posterior_matrix(dataset: BiomarkerDataset, mixtures: list[BiomarkerMixture]) -> np.ndarray:
    """(M, N) matrix of abnormality posteriors, one column per biomarker."""
    if len(mixtures) != dataset.n_biomarkers:
        raise ValueError("one mixture per biomarker required")
    cols = [posterior(mix, dataset.values[:, i]) for i, mix in enumerate(mixtures)]
    return np.column_stack(cols)


def mixtures_to_dicts(mixtures: list[BiomarkerMixture], names) -> list[dict]:
    """JSON-ready view of fitted mixtures; floats round-trip exactly."""
    if len(mixtures) != len(names):
        raise ValueError("one name per mixture required")
    return [
        {
            "name": name,
            "normal": {"mu": mix.normal.mu, "sigma": mix.normal.sigma},
            "abnormal": {"mu": mix.abnormal.mu, "sigma": mix.abnormal.sigma},
            "theta": mix.theta,
        }
        for name, mix in zip(names, mixtures)
    ]


def mixtures_from_dicts(doc: list[dict]) -> tuple[list[BiomarkerMixture], list[str]]:
    mixtures = []
    names = []
    for entry in doc:
        names.append(entry["name"])
        mixtures.append(
            BiomarkerMixture(
                normal=GaussianParams(entry["normal"]["mu"], entry["normal"]["sigma"]),
                abnormal=GaussianParams(entry["abnormal"]["mu"], entry["abnormal"]["sigma"]),
                theta=entry["theta"],
            )
        )
    return mixtures, names


def mixtures_to_json(mixtures: list[BiomarkerMixture], names) -> str:
    return json.dumps(mixtures_to_dicts(mixtures, names), indent=2)


def mixtures_from_json(text: str) -> tuple[list[BiomarkerMixture], list[str]]:
    return mixtures_from_dicts(json.loads(text))
