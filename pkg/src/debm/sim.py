"""Synthetic cross-sectional cascade generator with known ground truth.

Each biomarker follows a sigmoid in a latent disease state psi, shifted by a
per-subject onset xi and offset by additive noise beta. Biomarkers differ in
their mean onset, so the ground-truth abnormality ordering is the ascending
order of the onset means. Labels come from psi rank blocks: the healthiest
subjects are controls, the most progressed are patients.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import expit

from .data import BiomarkerDataset
from .ordering import as_ordering


@dataclass(frozen=True)
class SimConfig:
    n_biomarkers: int
    counts: tuple  # (n_CN, n_MCI, n_AD)
    rho: float
    xi_means: tuple
    sigma_xi: float
    sigma_beta_rel: float
    beta_mean: tuple
    beta_base_sd: tuple
    seed: int = 0

    def __post_init__(self):
        n = self.n_biomarkers
        if n < 2:
            raise ValueError("need at least 2 biomarkers")
        if len(self.counts) != 3 or any(c < 0 for c in self.counts):
            raise ValueError("counts must be three non-negative integers (CN, MCI, AD)")
        if sum(self.counts) < 1:
            raise ValueError("at least one subject is required")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        xi = tuple(float(v) for v in self.xi_means)
        if len(xi) != n:
            raise ValueError("xi_means must have one entry per biomarker")
        if any(not (0.0 < v < 1.0) for v in xi):
            raise ValueError("xi_means must lie strictly inside (0, 1)")
        if any(b >= a for a, b in zip(xi[1:], xi)):
            raise ValueError("xi_means must be strictly increasing")
        if self.sigma_xi < 0 or self.sigma_beta_rel < 0:
            raise ValueError("noise scales must be non-negative")
        bm = tuple(float(v) for v in self.beta_mean)
        bs = tuple(float(v) for v in self.beta_base_sd)
        if len(bm) != n or len(bs) != n:
            raise ValueError("beta_mean and beta_base_sd must have one entry per biomarker")
        if any(v <= 0 for v in bs):
            raise ValueError("beta_base_sd entries must be positive")
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        object.__setattr__(self, "xi_means", xi)
        object.__setattr__(self, "beta_mean", bm)
        object.__setattr__(self, "beta_base_sd", bs)

    @property
    def n_subjects(self) -> int:
        return sum(self.counts)

    @property
    def beta_sd(self) -> tuple:
        return tuple(self.sigma_beta_rel * v for v in self.beta_base_sd)


@dataclass(frozen=True)
class SimResult:
    dataset: BiomarkerDataset
    ground_truth: np.ndarray
    psi: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "ground_truth", as_ordering(self.ground_truth, n=self.dataset.n_biomarkers)
        )
        psi = np.asarray(self.psi, dtype=float)
        if psi.shape != (self.dataset.n_subjects,):
            raise ValueError("psi must hold one value per subject")
        object.__setattr__(self, "psi", psi)


DEFAULT_COUNTS = (162, 210, 137)


def default_config(
    n_biomarkers: int,
    counts=DEFAULT_COUNTS,
    sigma_beta_rel: float = 0.0,
    sigma_xi_multiplier: float = 0.0,
    seed: int = 0,
) -> SimConfig:
    """Standard parameterization.

    Onset means sit at i/(N+1) for i = 1..N, so adjacent onsets are
    delta = 1/(N+1) apart; the onset spread is sigma_xi_multiplier * delta/N,
    the sigmoid steepness 3*(N+1) makes each transition span about two onset
    gaps, and the additive noise has sd 0.05 * sigma_beta_rel per biomarker.
    """
    n = int(n_biomarkers)
    if n < 2:
        raise ValueError("need at least 2 biomarkers")
    if sigma_xi_multiplier < 0:
        raise ValueError("sigma_xi_multiplier must be non-negative")
    delta = 1.0 / (n + 1)
    return SimConfig(
        n_biomarkers=n,
        counts=tuple(int(c) for c in counts),
        rho=3.0 * (n + 1),
        xi_means=tuple((i + 1) * delta for i in range(n)),
        sigma_xi=sigma_xi_multiplier * delta / n,
        sigma_beta_rel=float(sigma_beta_rel),
        beta_mean=(0.0,) * n,
        beta_base_sd=(0.05,) * n,
        seed=int(seed),
    )


def biomarker_value(psi, rho, xi, beta):
    """Sigmoid response plus offset; scalar or broadcast arrays."""
    if not np.all(np.asarray(rho) > 0):
        raise ValueError("rho must be positive")
    return expit(rho * (np.asarray(psi, dtype=float) - xi)) + beta


def simulate(config: SimConfig) -> SimResult:
    """Generate one cross-sectional dataset; deterministic given config.seed.

    Every subject has an independent substream keyed by (seed, subject), so
    the output does not depend on generation order. Subject j draws its
    disease state psi ~ Uniform(0,1), then per-biomarker onsets and offsets.
    Labels follow psi rank blocks sized by config.counts, controls lowest.
    """
    m = config.n_subjects
    n = config.n_biomarkers
    xi_means = np.array(config.xi_means)
    beta_mean = np.array(config.beta_mean)
    beta_sd = np.array(config.beta_sd)

    psi = np.empty(m)
    values = np.empty((m, n))
    for j in range(m):
        rng = np.random.default_rng((config.seed, j))
        psi[j] = rng.random()
        xi = rng.normal(xi_means, config.sigma_xi)
        beta = rng.normal(beta_mean, beta_sd)
        values[j] = biomarker_value(psi[j], config.rho, xi, beta)

    n_cn, n_mci, _ = config.counts
    rank_order = np.argsort(psi, kind="stable")
    labels = np.empty(m, dtype=object)
    labels[rank_order[:n_cn]] = "CN"
    labels[rank_order[n_cn:n_cn + n_mci]] = "MCI"
    labels[rank_order[n_cn + n_mci:]] = "AD"

    id_width = max(3, len(str(m - 1)))
    name_width = max(2, len(str(n)))
    dataset = BiomarkerDataset(
        subject_ids=tuple(f"sim-{j:0{id_width}d}" for j in range(m)),
        labels=tuple(labels),
        values=values,
        biomarker_names=tuple(f"bm{i + 1:0{name_width}d}" for i in range(n)),
    )
    ground_truth = np.argsort(xi_means, kind="stable").astype(np.int64)
    return SimResult(dataset=dataset, ground_truth=ground_truth, psi=psi)


def config_to_dict(config: SimConfig) -> dict:
    doc = asdict(config)
    doc["counts"] = list(config.counts)
    doc["xi_means"] = list(config.xi_means)
    doc["beta_mean"] = list(config.beta_mean)
    doc["beta_base_sd"] = list(config.beta_base_sd)
    return doc


def truth_sidecar(result: SimResult, config: SimConfig) -> dict:
    """JSON-ready ground-truth record written next to a simulated CSV."""
    names = result.dataset.biomarker_names
    return {
        "ground_truth": [names[i] for i in result.ground_truth],
        "ground_truth_indices": [int(i) for i in result.ground_truth],
        "config": config_to_dict(config),
    }
