"""Permutation algebra: subject orderings, Kendall tau distances, consensus.

Orderings are numpy integer arrays of biomarker indices; position 0 holds the
first biomarker to become abnormal. The probabilistic Kendall tau distance
weights each block move of the sorting pass by a posterior-probability
difference instead of a swap count, and is asymmetric in its arguments:
the first argument plays the role of the candidate central ordering.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .errors import DebmError


def as_ordering(seq, n: int | None = None) -> np.ndarray:
    """Validate and return a permutation as an int64 array."""
    arr = np.asarray(seq, dtype=np.int64)
    if arr.ndim != 1:
        raise ValueError("an ordering must be one-dimensional")
    m = arr.shape[0] if n is None else n
    if arr.shape[0] != m or not np.array_equal(np.sort(arr), np.arange(m)):
        raise ValueError(f"not a permutation of 0..{m - 1}: {seq!r}")
    return arr


def _check_posteriors(posteriors) -> np.ndarray:
    p = np.asarray(posteriors, dtype=float)
    if p.ndim != 1:
        raise ValueError("posterior vector must be one-dimensional")
    if not np.all((p >= 0.0) & (p <= 1.0)):
        raise ValueError("posteriors must lie in [0, 1]")
    return p


def subject_ordering(posteriors) -> np.ndarray:
    """Sort biomarker indices by descending posterior; ties go to the lower index."""
    p = _check_posteriors(posteriors)
    return np.argsort(-p, kind="stable").astype(np.int64)


def kendall_tau(a, b) -> int:
    """Number of discordant pairs between two orderings of the same items."""
    a = as_ordering(a)
    b = as_ordering(b, n=a.shape[0])
    pos_b = np.empty_like(b)
    pos_b[b] = np.arange(b.shape[0])
    seq = pos_b[a]
    return int(np.triu(seq[:, None] > seq[None, :], k=1).sum())


def normalized_kendall_tau(a, b) -> float:
    """Kendall tau divided by the pair count, in [0, 1]."""
    a = as_ordering(a)
    n = a.shape[0]
    if n < 2:
        raise ValueError("normalized distance needs at least 2 items")
    return kendall_tau(a, b) / (n * (n - 1) / 2)


def prob_kendall_tau(sigma0, sigma_j, posteriors, weighting: str = "central") -> float:
    """Posterior-weighted Kendall tau distance from a central ordering.

    Walks a working copy of ``sigma_j``; at step i the event ``sigma0[i]`` is
    located at position k and, if displaced (k > i), moved to position i. The
    step's weight is the posterior difference between the events at positions
    k and i of ``sigma0`` (``weighting="central"``, the default) or between
    the working copy's displaced element and the moved one
    (``weighting="displaced"``). Requires ``sigma_j`` to be posterior-sorted.
    """
    sigma0 = as_ordering(sigma0)
    n = sigma0.shape[0]
    sigma_j = as_ordering(sigma_j, n=n)
    p = _check_posteriors(posteriors)
    if p.shape[0] != n:
        raise ValueError("posterior vector length must match the orderings")
    if weighting not in ("central", "displaced"):
        raise ValueError(f"unknown weighting {weighting!r}")
    if np.any(np.diff(p[sigma_j]) > 0.0):
        raise ValueError(
            "sigma_j is not sorted by non-increasing posterior; "
            "the distance is defined only for posterior-sorted subject orderings"
        )
    work = list(sigma_j)
    total = 0.0
    for i in range(n - 1):
        k = work.index(sigma0[i])
        if k > i:
            if weighting == "central":
                total += p[sigma0[k]] - p[sigma0[i]]
            else:
                total += p[work[i]] - p[sigma0[i]]
            work.pop(k)
            work.insert(i, sigma0[i])
    return total


# ---------------------------------------------------------------------------
# Consensus (central ordering) estimation
# ---------------------------------------------------------------------------
# The probabilistic objective is evaluated by a compiled kernel. It uses the
# fact that while the sorting pass of the distance runs, the not-yet-placed
# elements keep their relative order from the original sigma_j, so the
# position k of event sigma[i] equals i plus the number of later-in-sigma
# events that precede it in sigma_j. Subjects are summed in a fixed
# sequential order, so results do not depend on any outer parallel schedule.


@njit(cache=True)
def _prob_objective(sigma, subj_pos, post, displaced):
    m, n = subj_pos.shape
    total = 0.0
    for j in range(m):
        for i in range(n - 1):
            pi_i = subj_pos[j, sigma[i]]
            c = 0
            min_pos = pi_i
            min_l = i
            for l in range(i + 1, n):
                pi_l = subj_pos[j, sigma[l]]
                if pi_l < pi_i:
                    c += 1
                if pi_l < min_pos:
                    min_pos = pi_l
                    min_l = l
            if c > 0:
                if displaced:
                    total += post[j, sigma[min_l]] - post[j, sigma[i]]
                else:
                    total += post[j, sigma[i + c]] - post[j, sigma[i]]
    return total


@njit(cache=True)
def _prob_best_swap(sigma, subj_pos, post, displaced, current):
    n = sigma.shape[0]
    best = current
    bu = -1
    bv = -1
    work = sigma.copy()
    for u in range(n - 1):
        for v in range(u + 1, n):
            work[u] = sigma[v]
            work[v] = sigma[u]
            val = _prob_objective(work, subj_pos, post, displaced)
            if val < best:
                best = val
                bu = u
                bv = v
            work[u] = sigma[u]
            work[v] = sigma[v]
    return best, bu, bv


@njit(cache=True)
def _plain_objective(sigma, disagree):
    n = sigma.shape[0]
    total = 0.0
    for u in range(n - 1):
        for v in range(u + 1, n):
            total += disagree[sigma[v], sigma[u]]
    return total


@njit(cache=True)
def _plain_best_swap(sigma, disagree, current):
    n = sigma.shape[0]
    best = current
    bu = -1
    bv = -1
    work = sigma.copy()
    for u in range(n - 1):
        for v in range(u + 1, n):
            work[u] = sigma[v]
            work[v] = sigma[u]
            val = _plain_objective(work, disagree)
            if val < best:
                best = val
                bu = u
                bv = v
            work[u] = sigma[u]
            work[v] = sigma[v]
    return best, bu, bv


def _subject_positions(orderings: np.ndarray) -> np.ndarray:
    m, n = orderings.shape
    pos = np.empty_like(orderings)
    rows = np.arange(m)[:, None]
    pos[rows, orderings] = np.arange(n)[None, :]
    return pos


def _disagreement_counts(orderings: np.ndarray) -> np.ndarray:
    """counts[a, b] = number of subjects placing a before b."""
    pos = _subject_positions(orderings)
    return (pos[:, :, None] < pos[:, None, :]).sum(axis=0).astype(np.float64)


def _validate_subjects(orderings, posteriors, require_sorted: bool) -> tuple[np.ndarray, np.ndarray]:
    orderings = np.asarray(orderings, dtype=np.int64)
    posteriors = np.asarray(posteriors, dtype=float)
    if orderings.ndim != 2 or posteriors.shape != orderings.shape:
        raise ValueError("orderings and posteriors must be matching (M, N) arrays")
    if orderings.shape[0] < 1:
        raise ValueError("at least one subject is required")
    n = orderings.shape[1]
    ref = np.arange(n)
    for j in range(orderings.shape[0]):
        if not np.array_equal(np.sort(orderings[j]), ref):
            raise ValueError(f"subject {j}: ordering is not a permutation")
    if not np.all((posteriors >= 0.0) & (posteriors <= 1.0)):
        raise ValueError("posteriors must lie in [0, 1]")
    if require_sorted:
        rows = np.arange(orderings.shape[0])[:, None]
        along = posteriors[rows, orderings]
        if np.any(np.diff(along, axis=1) > 0.0):
            bad = int(np.argwhere(np.diff(along, axis=1) > 0.0)[0, 0])
            raise ValueError(f"subject {bad}: ordering is not posterior-sorted")
    return orderings, posteriors


def consensus_objective(
    sigma,
    orderings,
    posteriors,
    distance: str = "probabilistic",
    weighting: str = "central",
) -> float:
    """Summed distance from ``sigma`` to every subject ordering."""
    orderings, posteriors = _validate_subjects(orderings, posteriors, require_sorted=(distance == "probabilistic"))
    sigma = as_ordering(sigma, n=orderings.shape[1])
    if distance == "probabilistic":
        return float(
            _prob_objective(sigma, _subject_positions(orderings), posteriors, weighting == "displaced")
        )
    if distance == "plain":
        return float(_plain_objective(sigma, _disagreement_counts(orderings)))
    raise ValueError(f"unknown distance {distance!r}")


def borda_ordering(posteriors: np.ndarray) -> np.ndarray:
    """Biomarkers by descending mean posterior; ties go to the lower index."""
    mean = np.asarray(posteriors, dtype=float).mean(axis=0)
    return np.argsort(-mean, kind="stable").astype(np.int64)


def central_ordering(
    orderings,
    posteriors,
    distance: str = "probabilistic",
    restarts: int = 0,
    seed: int = 0,
    weighting: str = "central",
) -> np.ndarray:
    """Estimate the ordering minimizing the summed distance to all subjects.

    Starts from the Borda ordering (descending mean posterior) and applies
    best-improvement pairwise-transposition local search until no single
    transposition lowers the objective. ``restarts`` adds that many random
    initializations (seeded, deterministic); the lowest objective wins and
    ties keep the earliest find.
    """
    if distance not in ("probabilistic", "plain"):
        raise ValueError(f"unknown distance {distance!r}")
    if weighting not in ("central", "displaced"):
        raise ValueError(f"unknown weighting {weighting!r}")
    orderings, posteriors = _validate_subjects(orderings, posteriors, require_sorted=(distance == "probabilistic"))
    n = orderings.shape[1]

    if distance == "probabilistic":
        subj_pos = _subject_positions(orderings)
        displaced = weighting == "displaced"

        def objective(sig):
            return _prob_objective(sig, subj_pos, posteriors, displaced)

        def best_swap(sig, cur):
            return _prob_best_swap(sig, subj_pos, posteriors, displaced, cur)

    else:
        disagree = _disagreement_counts(orderings)

        def objective(sig):
            return _plain_objective(sig, disagree)

        def best_swap(sig, cur):
            return _plain_best_swap(sig, disagree, cur)

    def refine(start):
        sig = start.copy()
        cur = objective(sig)
        while True:
            val, u, v = best_swap(sig, cur)
            if u < 0:
                return sig, cur
            sig[u], sig[v] = sig[v], sig[u]
            cur = val

    best_sigma, best_val = refine(borda_ordering(posteriors))
    for r in range(restarts):
        rng = np.random.default_rng((seed, r))
        sig, val = refine(rng.permutation(n).astype(np.int64))
        if val < best_val:
            best_sigma, best_val = sig, val
    return best_sigma


def ordering_to_names(sigma, names) -> list[str]:
    sigma = as_ordering(sigma, n=len(names))
    return [names[i] for i in sigma]


def ordering_from_names(ordered_names, names) -> np.ndarray:
    index = {name: i for i, name in enumerate(names)}
    try:
        sigma = [index[name] for name in ordered_names]
    except KeyError as exc:
        raise DebmError(f"ordering names unknown biomarker {exc.args[0]!r}") from None
    return as_ordering(sigma, n=len(names))
