"""Experiment harness: accuracy sweeps, bootstrap positional variance, staging AUC.

Everything here is seeded and schedule-independent: per-task seeds are derived
from (seed, cell, repetition) indices, results land in pre-indexed slots, and
parallel runs produce the same artifacts as serial ones.
"""

from __future__ import annotations

import os
import platform
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .data import LABELS, BiomarkerDataset
from .errors import IngestionError
from .models import METHODS, debm_fit, fit_method, stage_with_mixtures
from .ordering import normalized_kendall_tau
from .sim import DEFAULT_COUNTS, default_config, simulate

__all__ = [
    "ExperimentResult",
    "PositionalVariance",
    "run_sweep",
    "bootstrap_positional_variance",
    "staging_auc_cv",
    "mann_whitney_auc",
    "runtime_report",
    "sweep_to_csv",
    "sweep_to_json",
    "variance_to_csv",
    "variance_to_json",
    "heatmap_svg",
    "sweep_plot_svg",
]


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    """Inaccuracy sweep over a (sigma_beta_rel, sigma_xi_multiplier) grid.

    ``inaccuracies[c, m, r]`` is the normalized Kendall tau between the truth
    and method ``methods[m]`` on repetition ``r`` of grid cell ``grid[c]``;
    failed runs hold NaN and carry an entry in ``errors``. ``seconds`` records
    wall-clock fit time per run and is measurement metadata: it is excluded
    from equality so that reruns with identical seeds compare equal.
    """

    methods: tuple[str, ...]
    grid: tuple[tuple[float, float], ...]
    repetitions: int
    inaccuracies: np.ndarray
    seconds: np.ndarray
    errors: tuple[tuple[int, str, int, str], ...]

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "grid", tuple((float(b), float(x)) for b, x in self.grid))
        object.__setattr__(self, "errors", tuple(self.errors))
        shape = (len(self.grid), len(self.methods), self.repetitions)
        for field in ("inaccuracies", "seconds"):
            arr = np.array(getattr(self, field), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{field} shape {arr.shape} != {shape}")
            arr.flags.writeable = False
            object.__setattr__(self, field, arr)
        finite = self.inaccuracies[np.isfinite(self.inaccuracies)]
        if finite.size and (finite.min() < 0.0 or finite.max() > 1.0):
            raise ValueError("inaccuracy outside [0, 1]")

    def __eq__(self, other):
        if not isinstance(other, ExperimentResult):
            return NotImplemented
        return (
            self.methods == other.methods
            and self.grid == other.grid
            and self.repetitions == other.repetitions
            and np.array_equal(self.inaccuracies, other.inaccuracies, equal_nan=True)
            and self.errors == other.errors
        )

    def mean(self) -> np.ndarray:
        """Per (cell, method) mean inaccuracy over repetitions; NaN if all failed."""
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return np.nanmean(self.inaccuracies, axis=2)

    def std(self) -> np.ndarray:
        """Per (cell, method) sample standard deviation (ddof=1)."""
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return np.nanstd(self.inaccuracies, axis=2, ddof=1)

    def counts(self) -> np.ndarray:
        return np.isfinite(self.inaccuracies).sum(axis=2)

    def stderr(self) -> np.ndarray:
        n = np.maximum(self.counts(), 1)
        return self.std() / np.sqrt(n)


def _task_seeds(seed: int, cell: int, repetition: int) -> tuple[int, int]:
    sim_seed, fit_seed = np.random.SeedSequence((seed, cell, repetition)).generate_state(2)
    return int(sim_seed), int(fit_seed)


def _sweep_task(payload):
    """One (cell, repetition): simulate once, run every method on the dataset."""
    cell, rep, methods, n_biomarkers, counts, sigma_beta, sigma_xi, seed = payload
    sim_seed, fit_seed = _task_seeds(seed, cell, rep)
    config = default_config(
        n_biomarkers,
        counts=counts,
        sigma_beta_rel=sigma_beta,
        sigma_xi_multiplier=sigma_xi,
        seed=sim_seed,
    )
    result = simulate(config)
    inaccs, secs, errors = [], [], []
    for method in methods:
        start = time.perf_counter()
        try:
            central, _, _ = fit_method(result.dataset, method, seed=fit_seed)
        except Exception as exc:  # record and keep going; the sweep must not abort
            inaccs.append(float("nan"))
            secs.append(float("nan"))
            errors.append((cell, method, rep, f"{type(exc).__name__}: {exc}"))
        else:
            secs.append(time.perf_counter() - start)
            inaccs.append(normalized_kendall_tau(result.ground_truth, central))
    return cell, rep, inaccs, secs, errors


def run_sweep(
    methods,
    grid,
    repetitions: int,
    n_biomarkers: int,
    counts=DEFAULT_COUNTS,
    seed: int = 0,
    jobs: int = 1,
) -> ExperimentResult:
    """Simulate and fit over a noise grid, R repetitions per cell.

    Every method in a given (cell, repetition) sees the identical dataset, so
    results are invariant to method order and to the jobs count.
    """
    methods = tuple(methods)
    if not methods:
        raise ValueError("methods must be non-empty")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; expected one of {', '.join(METHODS)}")
    grid = tuple((float(b), float(x)) for b, x in grid)
    if not grid:
        raise ValueError("grid must be non-empty")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if jobs < 1:
        raise ValueError("jobs must be >= 1")

    payloads = [
        (ci, r, methods, n_biomarkers, tuple(counts), sb, sx, seed)
        for ci, (sb, sx) in enumerate(grid)
        for r in range(repetitions)
    ]
    if jobs == 1:
        outcomes = [_sweep_task(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_sweep_task, payloads))

    inacc = np.full((len(grid), len(methods), repetitions), np.nan)
    secs = np.full_like(inacc, np.nan)
    errors = []
    for cell, rep, task_inaccs, task_secs, task_errors in outcomes:
        inacc[cell, :, rep] = task_inaccs
        secs[cell, :, rep] = task_secs
        errors.extend(task_errors)
    errors.sort(key=lambda e: (e[0], methods.index(e[1]), e[2]))
    return ExperimentResult(
        methods=methods,
        grid=grid,
        repetitions=repetitions,
        inaccuracies=inacc,
        seconds=secs,
        errors=tuple(errors),
    )


@dataclass(frozen=True, eq=False)
class PositionalVariance:
    """Bootstrap counts: ``counts[e, p]`` = resamples placing event e at position p."""

    counts: np.ndarray
    n_bootstraps: int
    biomarker_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "biomarker_names", tuple(self.biomarker_names))
        arr = np.array(self.counts, dtype=int)
        n = len(self.biomarker_names)
        if arr.shape != (n, n):
            raise ValueError(f"counts shape {arr.shape} != ({n}, {n})")
        if arr.min() < 0:
            raise ValueError("negative bootstrap count")
        bad_rows = np.flatnonzero(arr.sum(axis=1) != self.n_bootstraps)
        bad_cols = np.flatnonzero(arr.sum(axis=0) != self.n_bootstraps)
        if bad_rows.size or bad_cols.size:
            raise ValueError("row and column sums must equal the bootstrap count")
        arr.flags.writeable = False
        object.__setattr__(self, "counts", arr)

    def __eq__(self, other):
        if not isinstance(other, PositionalVariance):
            return NotImplemented
        return (
            self.n_bootstraps == other.n_bootstraps
            and self.biomarker_names == other.biomarker_names
            and np.array_equal(self.counts, other.counts)
        )


def _stratified_resample(dataset: BiomarkerDataset, rng) -> np.ndarray:
    picks = []
    for label in LABELS:
        idx = np.flatnonzero(dataset.label_mask(label))
        if idx.size:
            picks.append(idx[rng.integers(0, idx.size, idx.size)])
    return np.concatenate(picks)


def _bootstrap_central(dataset, b: int, seed: int, stratified: bool, restarts: int):
    rng = np.random.default_rng((seed, b))
    if stratified:
        idx = _stratified_resample(dataset, rng)
    else:
        for _ in range(11):
            idx = rng.integers(0, dataset.n_subjects, dataset.n_subjects)
            labels = [dataset.labels[j] for j in idx]
            if labels.count("CN") >= 2 and labels.count("AD") >= 2:
                break
        else:
            raise IngestionError(
                f"bootstrap resample {b} lacked 2 CN and 2 AD subjects after 10 redraws"
            )
    return debm_fit(dataset.subset_rows(idx), restarts=restarts, seed=int(b)).central


def _bootstrap_task(payload):
    dataset, b, seed, stratified, restarts = payload
    return _bootstrap_central(dataset, b, seed, stratified, restarts)


def bootstrap_positional_variance(
    dataset: BiomarkerDataset,
    n_bootstraps: int,
    seed: int = 0,
    stratified: bool = True,
    restarts: int = 0,
    jobs: int = 1,
) -> PositionalVariance:
    """Resample subjects with replacement B times and histogram the central orderings.

    Stratified resampling preserves the diagnosis counts, which guarantees the
    fit preconditions; with ``stratified=False`` a resample short of 2 CN or
    2 AD subjects is redrawn, at most 10 times, then rejected. Each resample
    is seeded by its own index, so results do not depend on ``jobs``.
    """
    if n_bootstraps < 1:
        raise ValueError("n_bootstraps must be >= 1")
    if jobs < 1:
        raise ValueError("jobs must be >= 1")
    payloads = [(dataset, b, seed, stratified, restarts) for b in range(n_bootstraps)]
    if jobs == 1:
        centrals = [_bootstrap_task(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            centrals = list(pool.map(_bootstrap_task, payloads))
    n = dataset.n_biomarkers
    counts = np.zeros((n, n), dtype=int)
    for central in centrals:
        for position, event in enumerate(central):
            counts[event, position] += 1
    return PositionalVariance(
        counts=counts, n_bootstraps=n_bootstraps, biomarker_names=dataset.biomarker_names
    )


def mann_whitney_auc(negative_scores, positive_scores) -> float:
    """Rank-based AUC with midrank tie handling; positives scoring higher -> 1."""
    neg = np.asarray(negative_scores, dtype=float)
    pos = np.asarray(positive_scores, dtype=float)
    if neg.size == 0 or pos.size == 0:
        raise ValueError("AUC needs at least one score in each class")
    ranks = rankdata(np.concatenate([neg, pos]))
    rank_sum = ranks[neg.size:].sum()
    return float((rank_sum - pos.size * (pos.size + 1) / 2.0) / (pos.size * neg.size))


def _fold_assignments(dataset: BiomarkerDataset, k: int, seed: int):
    """Stratified fold ids for CN and AD rows; MCI rows train in every fold."""
    rng = np.random.default_rng(seed)
    fold_of = np.full(dataset.n_subjects, -1, dtype=int)
    for label in ("CN", "AD"):
        idx = np.flatnonzero(dataset.label_mask(label))
        if idx.size < k:
            raise IngestionError(
                f"{k}-fold CV needs at least {k} {label} subjects, got {idx.size}"
            )
        shuffled = rng.permutation(idx)
        fold_of[shuffled] = np.arange(shuffled.size) % k
    labels = np.array(dataset.labels)
    for f in range(k):
        test = fold_of == f
        train = ~test
        for label, minimum in (("CN", 2), ("AD", 2)):
            have = int(((labels == label) & train).sum())
            if have < minimum:
                raise IngestionError(
                    f"fold {f} leaves only {have} {label} subjects for training"
                )
    return fold_of


def staging_auc_cv(
    dataset: BiomarkerDataset,
    method: str = "debm-prob",
    k: int = 10,
    seed: int = 0,
    score: str = "stage",
) -> list[float]:
    """Stratified k-fold CV: fit on training rows, stage held-out CN/AD, AUC per fold.

    MCI rows inform every training fit but are never scored. ``score`` picks
    the hard stage (default) or the posterior-weighted expected stage.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    fold_of = _fold_assignments(dataset, k, seed)  # validates before any fit
    labels = np.array(dataset.labels)
    aucs = []
    for f in range(k):
        test_idx = np.flatnonzero(fold_of == f)
        train_idx = np.flatnonzero(fold_of != f)
        fit_seed = int(np.random.SeedSequence((seed, f)).generate_state(1)[0])
        central, _, mixtures = fit_method(dataset.subset_rows(train_idx), method, seed=fit_seed)
        test = dataset.subset_rows(test_idx)
        stages = stage_with_mixtures(test, mixtures, central, score=score)
        test_labels = labels[test_idx]
        aucs.append(mann_whitney_auc(stages[test_labels == "CN"], stages[test_labels == "AD"]))
    return aucs


def runtime_report(result: ExperimentResult, hardware: str | None = None) -> dict:
    """Mean wall-clock seconds per method, with a hardware description attached."""
    if hardware is None:
        hardware = f"{platform.platform()}, {os.cpu_count()} logical cpus"
    means = {}
    for mi, method in enumerate(result.methods):
        secs = result.seconds[:, mi, :]
        finite = secs[np.isfinite(secs)]
        means[method] = float(finite.mean()) if finite.size else None
    return {"hardware": hardware, "mean_seconds": means}


def _fmt(x) -> str:
    return repr(float(x))


def sweep_to_csv(result: ExperimentResult, include_seconds: bool = False) -> str:
    """Tidy per-run rows. Seconds are blank unless requested: timings vary run
    to run and would break byte-for-byte reproducibility of the default output."""
    lines = ["method,sigma_beta,sigma_xi_mult,repetition,inaccuracy,seconds"]
    for ci, (sb, sx) in enumerate(result.grid):
        for mi, method in enumerate(result.methods):
            for r in range(result.repetitions):
                v = result.inaccuracies[ci, mi, r]
                value = _fmt(v) if np.isfinite(v) else ""
                s = result.seconds[ci, mi, r]
                secs = _fmt(s) if include_seconds and np.isfinite(s) else ""
                lines.append(f"{method},{_fmt(sb)},{_fmt(sx)},{r},{value},{secs}")
    return "\n".join(lines) + "\n"


def _none_if_nan(x):
    x = float(x)
    return x if np.isfinite(x) else None


def sweep_to_json(result: ExperimentResult) -> dict:
    mean, std, stderr, counts = result.mean(), result.std(), result.stderr(), result.counts()
    cells = []
    for ci, (sb, sx) in enumerate(result.grid):
        per_method = {}
        for mi, method in enumerate(result.methods):
            per_method[method] = {
                "mean": _none_if_nan(mean[ci, mi]),
                "std": _none_if_nan(std[ci, mi]),
                "stderr": _none_if_nan(stderr[ci, mi]),
                "completed": int(counts[ci, mi]),
                "values": [_none_if_nan(v) for v in result.inaccuracies[ci, mi]],
            }
        cells.append({"sigma_beta": sb, "sigma_xi_mult": sx, "methods": per_method})
    return {
        "methods": list(result.methods),
        "repetitions": result.repetitions,
        "cells": cells,
        "errors": [
            {"cell": ci, "method": m, "repetition": r, "message": msg}
            for ci, m, r, msg in result.errors
        ],
    }


def variance_to_csv(variance: PositionalVariance) -> str:
    header = "event," + ",".join(f"position_{p}" for p in range(len(variance.biomarker_names)))
    lines = [header]
    for e, name in enumerate(variance.biomarker_names):
        lines.append(name + "," + ",".join(str(int(c)) for c in variance.counts[e]))
    return "\n".join(lines) + "\n"


def variance_to_json(variance: PositionalVariance) -> dict:
    return {
        "n_bootstraps": variance.n_bootstraps,
        "biomarker_names": list(variance.biomarker_names),
        "counts": [[int(c) for c in row] for row in variance.counts],
    }


# -- self-contained SVG rendering (no plotting library: their output embeds
#    timestamps and version strings, which breaks byte-identical reruns) -----

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _svg_header(width, height, title):
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif">\n'
        f'<title>{title}</title>\n'
        f'<rect width="{width}" height="{height}" fill="white"/>\n'
    )


def _blend(frac: float) -> str:
    """White to dark blue."""
    frac = min(max(frac, 0.0), 1.0)
    r = round(255 + (31 - 255) * frac)
    g = round(255 + (78 - 255) * frac)
    b = round(255 + (140 - 255) * frac)
    return f"rgb({r},{g},{b})"


def heatmap_svg(variance: PositionalVariance, title: str = "Positional variance") -> str:
    """Events on rows, ordering positions on columns, count as cell darkness."""
    names = variance.biomarker_names
    n = len(names)
    cell, left, top, pad = 34, 90, 50, 12
    width = left + n * cell + pad
    height = top + n * cell + pad
    peak = max(int(variance.counts.max()), 1)
    parts = [_svg_header(width, height, title)]
    parts.append(f'<text x="{left}" y="22" font-size="15">{title}</text>\n')
    for p in range(n):
        x = left + p * cell + cell // 2
        parts.append(
            f'<text x="{x}" y="{top - 8}" font-size="11" text-anchor="middle">{p}</text>\n'
        )
    for e, name in enumerate(names):
        y = top + e * cell + cell // 2 + 4
        parts.append(
            f'<text x="{left - 6}" y="{y}" font-size="11" text-anchor="end">{name}</text>\n'
        )
        for p in range(n):
            count = int(variance.counts[e, p])
            x = left + p * cell
            fill = _blend(count / peak)
            parts.append(
                f'<rect x="{x}" y="{top + e * cell}" width="{cell}" height="{cell}" '
                f'fill="{fill}" stroke="#cccccc"/>\n'
            )
            if count:
                color = "white" if count / peak > 0.55 else "black"
                parts.append(
                    f'<text x="{x + cell // 2}" y="{top + e * cell + cell // 2 + 4}" '
                    f'font-size="10" text-anchor="middle" fill="{color}">{count}</text>\n'
                )
    parts.append("</svg>\n")
    return "".join(parts)


def sweep_plot_svg(result: ExperimentResult, title: str = "Mean inaccuracy") -> str:
    """Mean inaccuracy vs noise multiplier; one polyline per (method, sigma_beta)."""
    mean = result.mean()
    xs = sorted({sx for _, sx in result.grid})
    betas = sorted({sb for sb, _ in result.grid})
    left, top, width, height, pad = 58, 40, 560, 360, 20
    plot_w, plot_h = width - left - pad, height - top - 58
    x_lo, x_hi = min(xs), max(xs)
    x_span = (x_hi - x_lo) or 1.0
    finite = mean[np.isfinite(mean)]
    y_hi = max(float(finite.max()) if finite.size else 0.0, 0.1)

    def sx_px(v):
        return left + (v - x_lo) / x_span * plot_w

    def sy_px(v):
        return top + plot_h - v / y_hi * plot_h

    parts = [_svg_header(width, height, title)]
    parts.append(f'<text x="{left}" y="22" font-size="15">{title}</text>\n')
    parts.append(
        f'<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="#333333"/>\n'
    )
    for tick in range(5):
        yv = y_hi * tick / 4
        py = sy_px(yv)
        parts.append(
            f'<line x1="{left - 4}" y1="{py:.2f}" x2="{left}" y2="{py:.2f}" stroke="#333333"/>\n'
            f'<text x="{left - 7}" y="{py:.2f}" font-size="10" text-anchor="end" '
            f'dominant-baseline="middle">{yv:.3g}</text>\n'
        )
    for xv in xs:
        px = sx_px(xv)
        parts.append(
            f'<line x1="{px:.2f}" y1="{top + plot_h}" x2="{px:.2f}" '
            f'y2="{top + plot_h + 4}" stroke="#333333"/>\n'
            f'<text x="{px:.2f}" y="{top + plot_h + 16}" font-size="10" '
            f'text-anchor="middle">{xv:g}</text>\n'
        )
    parts.append(
        f'<text x="{left + plot_w / 2:.2f}" y="{height - 26}" font-size="11" '
        f'text-anchor="middle">noise multiplier</text>\n'
    )
    legend_y = height - 10
    legend_x = left
    series = 0
    for mi, method in enumerate(result.methods):
        for sb in betas:
            points = []
            for ci, (b, x) in enumerate(result.grid):
                if b == sb and np.isfinite(mean[ci, mi]):
                    points.append((x, mean[ci, mi]))
            if not points:
                continue
            points.sort()
            color = _PALETTE[series % len(_PALETTE)]
            coords = " ".join(f"{sx_px(x):.2f},{sy_px(y):.2f}" for x, y in points)
            parts.append(
                f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>\n'
            )
            for x, y in points:
                parts.append(
                    f'<circle cx="{sx_px(x):.2f}" cy="{sy_px(y):.2f}" r="2.5" fill="{color}"/>\n'
                )
            label = method if len(betas) == 1 else f"{method} sb={sb:g}"
            parts.append(
                f'<rect x="{legend_x}" y="{legend_y - 8}" width="10" height="10" fill="{color}"/>\n'
                f'<text x="{legend_x + 14}" y="{legend_y}" font-size="10">{label}</text>\n'
            )
            legend_x += 14 + 7 * len(label) + 16
            series += 1
    parts.append("</svg>\n")
    return "".join(parts)
