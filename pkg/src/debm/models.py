"""End-to-end estimators.

Two families share the fitted per-biomarker mixtures. The discriminative
pipeline turns each subject's posteriors into an ordering and aggregates
those into a central ordering. The generative baseline scores candidate
orderings with a marginal likelihood that sums over the subject's unknown
stage, and climbs it by repeated pairwise transpositions from random starts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import BiomarkerDataset
from .errors import DebmError
from .mixture import (
    BiomarkerMixture,
    fit_all_biomarkers,
    mixtures_to_dicts,
    posterior_matrix,
)
from .ordering import (
    as_ordering,
    consensus_objective,
    central_ordering,
    ordering_to_names,
    subject_ordering,
)

METHODS = ("debm-prob", "debm-plain", "ebm", "ebm-modified")


@dataclass(frozen=True)
class EventLikelihoodMatrices:
    """Per-subject, per-biomarker density values under each component.

    like_abnormal[j, i] is the abnormal-component density at subject j's
    value of biomarker i; like_normal is its normal-component counterpart.
    """

    like_abnormal: np.ndarray
    like_normal: np.ndarray

    def __post_init__(self):
        la = np.asarray(self.like_abnormal, dtype=float)
        ln = np.asarray(self.like_normal, dtype=float)
        if la.ndim != 2 or la.shape != ln.shape:
            raise ValueError("likelihood matrices must be two matching M x N arrays")
        if not (np.all(np.isfinite(la)) and np.all(np.isfinite(ln))):
            raise ValueError("likelihood entries must be finite")
        if np.any(la < 0.0) or np.any(ln < 0.0):
            raise ValueError("likelihood entries must be non-negative")
        object.__setattr__(self, "like_abnormal", la)
        object.__setattr__(self, "like_normal", ln)

    @property
    def n_subjects(self) -> int:
        return self.like_abnormal.shape[0]

    @property
    def n_biomarkers(self) -> int:
        return self.like_abnormal.shape[1]


@dataclass(frozen=True)
class DebmFit:
    mixtures: tuple
    posteriors: np.ndarray
    subject_orderings: np.ndarray
    central: np.ndarray

    def __post_init__(self):
        post = np.asarray(self.posteriors, dtype=float)
        orderings = np.asarray(self.subject_orderings, dtype=np.int64)
        central = as_ordering(self.central, n=post.shape[1])
        if orderings.shape != post.shape:
            raise ValueError("subject_orderings must match the posterior matrix shape")
        for j in range(post.shape[0]):
            if not np.array_equal(orderings[j], subject_ordering(post[j])):
                raise ValueError(f"subject {j}: ordering does not match its posteriors")
        object.__setattr__(self, "mixtures", tuple(self.mixtures))
        object.__setattr__(self, "posteriors", post)
        object.__setattr__(self, "subject_orderings", orderings)
        object.__setattr__(self, "central", central)


def matrices_from_mixtures(values: np.ndarray, mixtures: list[BiomarkerMixture]) -> EventLikelihoodMatrices:
    """Evaluate each biomarker's component densities at the observed values."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[1] != len(mixtures):
        raise ValueError("values must be M x N with one mixture per column")
    la = np.empty_like(values)
    ln = np.empty_like(values)
    for i, mix in enumerate(mixtures):
        la[:, i] = mix.abnormal.pdf(values[:, i])
        ln[:, i] = mix.normal.pdf(values[:, i])
    return EventLikelihoodMatrices(like_abnormal=la, like_normal=ln)


def likelihood_matrices(dataset: BiomarkerDataset, method: str = "robust-bounded") -> EventLikelihoodMatrices:
    mixtures = fit_all_biomarkers(dataset, method=method)
    return matrices_from_mixtures(dataset.values, mixtures)


def _log_matrices(matrices: EventLikelihoodMatrices) -> tuple[np.ndarray, np.ndarray]:
    with np.errstate(divide="ignore"):
        return np.log(matrices.like_abnormal), np.log(matrices.like_normal)


def _log_matrices_from_mixtures(values: np.ndarray, mixtures) -> tuple[np.ndarray, np.ndarray]:
    """Log densities straight from the parameters.

    The pipeline works in log space throughout: density values at sigmoid
    saturation underflow to zero in linear space, which would turn fittable
    subjects into likelihood errors.
    """
    values = np.asarray(values, dtype=float)
    log_ab = np.empty_like(values)
    log_norm = np.empty_like(values)
    for i, mix in enumerate(mixtures):
        log_ab[:, i] = mix.abnormal.logpdf(values[:, i])
        log_norm[:, i] = mix.normal.logpdf(values[:, i])
    return log_ab, log_norm


def _stage_scores(log_ab: np.ndarray, log_norm: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """(M, N+1) matrix: row j, column k = log Pi_{i<=k} ab[sigma_i] Pi_{i>k} norm[sigma_i]."""
    la = log_ab[:, sigma]
    ln = log_norm[:, sigma]
    m = la.shape[0]
    zeros = np.zeros((m, 1))
    prefix_ab = np.concatenate([zeros, np.cumsum(la, axis=1)], axis=1)
    suffix_norm = np.concatenate([np.cumsum(ln[:, ::-1], axis=1)[:, ::-1], zeros], axis=1)
    return prefix_ab + suffix_norm


def _log_likelihood(log_ab, log_norm, sigma) -> float:
    m = log_ab.shape[0]
    if m == 0:
        return 0.0
    n = log_ab.shape[1]
    scores = _stage_scores(log_ab, log_norm, sigma) - np.log(n + 1)
    rowmax = scores.max(axis=1)
    if not np.all(np.isfinite(rowmax)):
        j = int(np.argmin(np.isfinite(rowmax)))
        raise DebmError(f"subject {j}: every stage term underflows to zero likelihood")
    return float(np.sum(rowmax + np.log(np.sum(np.exp(scores - rowmax[:, None]), axis=1))))


def ebm_log_likelihood(matrices: EventLikelihoodMatrices, sigma) -> float:
    """Log marginal likelihood of the data under an ordering.

    Each subject's stage is unknown and integrated out with a uniform prior
    over the N+1 possible stages (stage 0 = no events yet). Computed in log
    space with a stable log-sum-exp per subject.
    """
    sigma = as_ordering(sigma, n=matrices.n_biomarkers)
    log_ab, log_norm = _log_matrices(matrices)
    return _log_likelihood(log_ab, log_norm, sigma)


def ebm_fit(matrices: EventLikelihoodMatrices, restarts: int = 10, seed: int = 0) -> np.ndarray:
    """Maximize the marginal likelihood by restarted transposition ascent.

    Each restart draws a random initial permutation from its own seeded
    stream, then repeatedly applies the best improving pairwise transposition
    until none improves. The best restart wins; ties keep the earliest.
    Deterministic given seed.
    """
    log_ab, log_norm = _log_matrices(matrices)
    return _ebm_fit_logs(log_ab, log_norm, restarts, seed)


def _ebm_fit_logs(log_ab: np.ndarray, log_norm: np.ndarray, restarts: int, seed: int) -> np.ndarray:
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    n = log_ab.shape[1]

    def ascend(sigma):
        cur = _log_likelihood(log_ab, log_norm, sigma)
        while True:
            best, bu, bv = cur, -1, -1
            for u in range(n - 1):
                for v in range(u + 1, n):
                    sigma[u], sigma[v] = sigma[v], sigma[u]
                    val = _log_likelihood(log_ab, log_norm, sigma)
                    sigma[u], sigma[v] = sigma[v], sigma[u]
                    if val > best:
                        best, bu, bv = val, u, v
            if bu < 0:
                return sigma, cur
            sigma[bu], sigma[bv] = sigma[bv], sigma[bu]
            cur = best

    best_sigma = None
    best_val = -np.inf
    for r in range(restarts):
        rng = np.random.default_rng((seed, r))
        sigma, val = ascend(rng.permutation(n).astype(np.int64))
        if val > best_val:
            best_sigma, best_val = sigma, val
    return best_sigma


def metropolis_orderings(matrices: EventLikelihoodMatrices, n_samples: int, seed: int = 0, burn_in: int = 100, start=None) -> np.ndarray:
    """Metropolis sampler over orderings with adjacent-swap proposals.

    Exploratory tool for positional uncertainty; not used by the fitting
    pipeline. Returns an (n_samples, N) array of sampled orderings.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    log_ab, log_norm = _log_matrices(matrices)
    n = matrices.n_biomarkers
    if n < 2:
        raise ValueError("sampling needs at least 2 biomarkers")
    rng = np.random.default_rng(seed)
    sigma = as_ordering(start, n=n).copy() if start is not None else rng.permutation(n).astype(np.int64)
    cur = _log_likelihood(log_ab, log_norm, sigma)
    out = np.empty((n_samples, n), dtype=np.int64)
    kept = 0
    for step in range(burn_in + n_samples):
        u = int(rng.integers(n - 1))
        sigma[u], sigma[u + 1] = sigma[u + 1], sigma[u]
        val = _log_likelihood(log_ab, log_norm, sigma)
        if np.log(rng.random()) < val - cur:
            cur = val
        else:
            sigma[u], sigma[u + 1] = sigma[u + 1], sigma[u]
        if step >= burn_in:
            out[kept] = sigma
            kept += 1
    return out


def stage_subject(like_abnormal_row, like_normal_row, sigma) -> int:
    """Most likely stage k in [0, N]: events sigma[0..k-1] happened, the rest did not.

    Ties resolve to the smallest k. Errors when no stage has positive
    likelihood (all scores underflow) or any input is invalid.
    """
    la = np.asarray(like_abnormal_row, dtype=float)
    ln = np.asarray(like_normal_row, dtype=float)
    if la.ndim != 1 or la.shape != ln.shape:
        raise ValueError("likelihood rows must be two equal-length vectors")
    if not (np.all(np.isfinite(la)) and np.all(np.isfinite(ln))) or np.any(la < 0) or np.any(ln < 0):
        raise ValueError("likelihood entries must be finite and non-negative")
    sigma = as_ordering(sigma, n=la.shape[0])
    with np.errstate(divide="ignore"):
        scores = _stage_scores(np.log(la)[None, :], np.log(ln)[None, :], sigma)[0]
    if not np.isfinite(scores.max()):
        raise DebmError("every stage term underflows to zero likelihood")
    return int(np.argmax(scores))


def expected_stage(like_abnormal_row, like_normal_row, sigma) -> float:
    """Posterior-weighted mean stage under a uniform stage prior; variant score."""
    la = np.asarray(like_abnormal_row, dtype=float)
    ln = np.asarray(like_normal_row, dtype=float)
    if la.ndim != 1 or la.shape != ln.shape:
        raise ValueError("likelihood rows must be two equal-length vectors")
    sigma = as_ordering(sigma, n=la.shape[0])
    with np.errstate(divide="ignore"):
        scores = _stage_scores(np.log(la)[None, :], np.log(ln)[None, :], sigma)[0]
    top = scores.max()
    if not np.isfinite(top):
        raise DebmError("every stage term underflows to zero likelihood")
    w = np.exp(scores - top)
    return float(np.sum(w * np.arange(scores.shape[0])) / np.sum(w))


def _stage_logs(log_ab: np.ndarray, log_norm: np.ndarray, sigma, score: str) -> np.ndarray:
    if score not in ("stage", "expected"):
        raise ValueError(f"unknown staging score {score!r}")
    sigma = as_ordering(sigma, n=log_ab.shape[1])
    scores = _stage_scores(log_ab, log_norm, sigma)
    rowmax = scores.max(axis=1)
    if not np.all(np.isfinite(rowmax)):
        j = int(np.argmin(np.isfinite(rowmax)))
        raise DebmError(f"subject {j}: every stage term underflows to zero likelihood")
    if score == "stage":
        return np.argmax(scores, axis=1).astype(np.int64)
    w = np.exp(scores - rowmax[:, None])
    return np.sum(w * np.arange(scores.shape[1])[None, :], axis=1) / np.sum(w, axis=1)


def stage_dataset(matrices: EventLikelihoodMatrices, sigma, score: str = "stage") -> np.ndarray:
    """Stage every subject; ``score`` picks the hard stage or the expected stage."""
    log_ab, log_norm = _log_matrices(matrices)
    return _stage_logs(log_ab, log_norm, sigma, score)


def stage_with_mixtures(dataset: BiomarkerDataset, mixtures, sigma, score: str = "stage") -> np.ndarray:
    """Stage a dataset against already-fitted mixtures and a central ordering.

    Component log densities are evaluated directly so saturated values that
    underflow in linear space still stage correctly.
    """
    if len(mixtures) != dataset.n_biomarkers:
        raise ValueError(
            f"{len(mixtures)} mixtures for {dataset.n_biomarkers} biomarkers"
        )
    log_ab, log_norm = _log_matrices_from_mixtures(dataset.values, mixtures)
    return _stage_logs(log_ab, log_norm, sigma, score)


def debm_fit(
    dataset: BiomarkerDataset,
    distance: str = "probabilistic",
    weighting: str = "displaced",
    restarts: int = 0,
    seed: int = 0,
) -> DebmFit:
    """Discriminative pipeline: mixtures, posteriors, subject orderings, consensus.

    The pipeline weights each swap by the displaced element's posterior, which
    keeps every penalty non-negative; pass ``weighting="central"`` for the
    variant that references the central ordering's element instead.
    """
    mixtures = fit_all_biomarkers(dataset, method="robust-bounded")
    post = posterior_matrix(dataset, mixtures)
    orderings = np.stack([subject_ordering(post[j]) for j in range(post.shape[0])])
    central = central_ordering(
        orderings, post, distance=distance, restarts=restarts, seed=seed, weighting=weighting
    )
    return DebmFit(
        mixtures=tuple(mixtures),
        posteriors=post,
        subject_orderings=orderings,
        central=central,
    )


def fit_method(dataset: BiomarkerDataset, method: str, seed: int = 0, ebm_restarts: int = 10):
    """Run one named method; returns (central ordering, objective, mixtures).

    The objective is the summed consensus distance for the discriminative
    methods (lower is better) and the log marginal likelihood for the
    generative ones (higher is better).
    """
    if method == "debm-prob" or method == "debm-plain":
        distance = "probabilistic" if method == "debm-prob" else "plain"
        fit = debm_fit(dataset, distance=distance, weighting="displaced", seed=seed)
        objective = consensus_objective(
            fit.central, fit.subject_orderings, fit.posteriors,
            distance=distance, weighting="displaced",
        )
        return fit.central, objective, list(fit.mixtures)
    if method == "ebm" or method == "ebm-modified":
        mix_method = "plain-gmm" if method == "ebm" else "robust-bounded"
        mixtures = fit_all_biomarkers(dataset, method=mix_method)
        log_ab, log_norm = _log_matrices_from_mixtures(dataset.values, mixtures)
        central = _ebm_fit_logs(log_ab, log_norm, ebm_restarts, seed)
        return central, _log_likelihood(log_ab, log_norm, central), mixtures
    raise ValueError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")


def fit_report(dataset: BiomarkerDataset, method: str, seed: int = 0, ebm_restarts: int = 10) -> dict:
    """Full pipeline for one method, as a JSON-ready report dict."""
    central, objective, mixtures = fit_method(dataset, method, seed=seed, ebm_restarts=ebm_restarts)
    log_ab, log_norm = _log_matrices_from_mixtures(dataset.values, mixtures)
    stages = _stage_logs(log_ab, log_norm, central, "stage")
    return {
        "method": method,
        "n_subjects": dataset.n_subjects,
        "n_biomarkers": dataset.n_biomarkers,
        "central_ordering": ordering_to_names(central, dataset.biomarker_names),
        "objective": float(objective),
        "mixtures": mixtures_to_dicts(mixtures, dataset.biomarker_names),
        "stages": [
            {"subject_id": sid, "diagnosis": lab, "stage": int(stage)}
            for sid, lab, stage in zip(dataset.subject_ids, dataset.labels, stages)
        ],
    }
