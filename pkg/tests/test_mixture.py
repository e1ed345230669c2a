import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import expit

from debm.data import BiomarkerDataset
from debm.errors import FitError, IngestionError
from debm.mixture import (
    BiomarkerMixture,
    FitBounds,
    GaussianParams,
    confidence_bounds,
    fit_all_biomarkers,
    fit_biomarker,
    initial_fit,
    mixtures_from_json,
    mixtures_to_json,
    posterior,
    posterior_matrix,
    refine_gmm,
)

WIDE = FitBounds(-100.0, 100.0, 1e-3, 100.0)


def test_gaussian_params_logpdf_matches_reference():
    rng = np.random.default_rng(0)
    for _ in range(50):
        mu, sigma = rng.normal(), float(rng.uniform(0.1, 5))
        x = rng.normal(size=7)
        g = GaussianParams(mu, sigma)
        expected = stats.norm.logpdf(x, loc=mu, scale=sigma)
        assert np.allclose(g.logpdf(x), expected, atol=1e-12)
        assert np.allclose(g.pdf(x), np.exp(expected), atol=1e-12)


def test_gaussian_params_validation():
    with pytest.raises(FitError):
        GaussianParams(0.0, 0.0)
    with pytest.raises(FitError):
        GaussianParams(0.0, -1.0)
    with pytest.raises(FitError):
        GaussianParams(math.nan, 1.0)
    with pytest.raises(FitError):
        GaussianParams(0.0, math.inf)


def test_fit_bounds_validation_and_projection():
    with pytest.raises(FitError):
        FitBounds(1.0, 0.0, 0.1, 1.0)
    with pytest.raises(FitError):
        FitBounds(0.0, 1.0, 0.0, 1.0)
    with pytest.raises(FitError):
        FitBounds(0.0, 1.0, 2.0, 1.0)
    b = FitBounds(-1.0, 1.0, 0.5, 2.0)
    assert b.project(5.0, 0.01) == (1.0, 0.5)
    assert b.project(-5.0, 10.0) == (-1.0, 2.0)
    assert b.project(0.3, 1.0) == (0.3, 1.0)
    assert b.contains(GaussianParams(1.0, 2.0))
    assert not b.contains(GaussianParams(1.1, 2.0))


def test_mixture_validation_and_log_density():
    n, a = GaussianParams(0.0, 1.0), GaussianParams(3.0, 2.0)
    with pytest.raises(FitError):
        BiomarkerMixture(n, a, 1.5)
    with pytest.raises(FitError):
        BiomarkerMixture(n, a, -0.1)
    mix = BiomarkerMixture(n, a, 0.25)
    x = np.linspace(-3, 6, 13)
    direct = np.log(0.25 * a.pdf(x) + 0.75 * n.pdf(x))
    assert np.allclose(mix.log_density(x), direct, atol=1e-12)
    assert np.allclose(BiomarkerMixture(n, a, 0.0).log_density(x), n.logpdf(x))
    assert np.allclose(BiomarkerMixture(n, a, 1.0).log_density(x), a.logpdf(x))


def test_initial_fit_separated_classes_equal_plain_fits():
    cn = [-1.0, 0.0, 1.0]
    ad = [9.0, 10.0, 11.0]
    normal, abnormal, removed = initial_fit(cn, ad)
    assert removed["cn"].size == 0 and removed["ad"].size == 0
    assert normal.mu == pytest.approx(0.0) and normal.sigma == pytest.approx(1.0)
    assert abnormal.mu == pytest.approx(10.0) and abnormal.sigma == pytest.approx(1.0)


def test_initial_fit_removes_mislabeled_outlier():
    # the CN value sitting on the AD mode is reclassified and dropped
    cn = np.array([0.0, 0.1, -0.1, 0.05, 10.0])
    ad = np.array([10.0, 10.02, 9.98, 10.01])
    normal, abnormal, removed = initial_fit(cn, ad)
    assert list(removed["cn"]) == [4]
    assert removed["ad"].size == 0
    survivors = cn[:4]
    assert normal.mu == pytest.approx(float(np.mean(survivors)))
    assert normal.sigma == pytest.approx(float(np.std(survivors, ddof=1)))


def test_initial_fit_identical_distributions_still_valid():
    rng = np.random.default_rng(1)
    for _ in range(10):
        vals = rng.normal(size=40)
        normal, abnormal, removed = initial_fit(vals[:20], vals[20:])
        assert normal.sigma > 0 and abnormal.sigma > 0
        assert math.isfinite(normal.mu) and math.isfinite(abnormal.mu)
        assert removed["cn"].size <= 20 and removed["ad"].size <= 20


def test_initial_fit_keeps_prior_fit_when_survivors_degenerate():
    # dropping the outlier would leave a zero-variance CN class
    cn = np.array([0.0, 0.0, 0.0, 10.0])
    ad = np.array([10.0, 10.01, 9.99])
    normal, _, removed = initial_fit(cn, ad)
    assert list(removed["cn"]) == [3]
    assert normal.mu == pytest.approx(float(np.mean(cn)))


def test_initial_fit_zero_variance_class_rejected():
    with pytest.raises(FitError, match="zero variance"):
        initial_fit([1.0, 1.0, 1.0], [2.0, 3.0, 4.0])
    with pytest.raises(FitError, match="at least 2"):
        initial_fit([1.0], [2.0, 3.0])


def test_confidence_bounds_reference_values():
    b = confidence_bounds(GaussianParams(0.0, 1.0), 100)
    assert b.mu_lo == pytest.approx(-0.196, abs=1e-12)
    assert b.mu_hi == pytest.approx(0.196, abs=1e-12)
    # chi-square interval at 99 dof
    assert b.sigma_lo == pytest.approx(0.8780068454038706, abs=1e-9)
    assert b.sigma_hi == pytest.approx(1.161675255294621, abs=1e-9)


def test_confidence_bounds_collapse_for_large_n():
    b = confidence_bounds(GaussianParams(2.0, 3.0), 10**8)
    assert b.mu_hi - b.mu_lo < 1.5e-3
    assert b.sigma_hi - b.sigma_lo < 1.5e-3
    assert b.mu_lo < 2.0 < b.mu_hi
    assert b.sigma_lo < 3.0 < b.sigma_hi


def test_confidence_bounds_rejects_tiny_n():
    with pytest.raises(FitError, match="n >= 2"):
        confidence_bounds(GaussianParams(0.0, 1.0), 1)


def test_refine_gmm_recovers_even_mixture():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = np.concatenate([rng.normal(0, 1, 500), rng.normal(10, 1, 500)])
        mix = refine_gmm(
            x,
            GaussianParams(-0.5, 1.5),
            GaussianParams(10.5, 1.5),
            WIDE,
            WIDE,
            theta_init=0.3,
        )
        assert abs(mix.theta - 0.5) < 0.05
        assert abs(mix.normal.mu - 0.0) < 0.2
        assert abs(mix.abnormal.mu - 10.0) < 0.2


def test_refine_gmm_objective_monotone_and_bounds_respected():
    rng = np.random.default_rng(4)
    for _ in range(10):
        x = rng.normal(size=50)  # single-component data, theta pushed down
        bounds_n = FitBounds(-0.5, 0.5, 0.5, 2.0)
        bounds_a = FitBounds(2.0, 4.0, 0.5, 2.0)
        trace = []
        mix = refine_gmm(
            x,
            GaussianParams(0.1, 1.0),
            GaussianParams(3.0, 1.0),
            bounds_n,
            bounds_a,
            theta_init=0.5,
            callback=trace.append,
        )
        assert len(trace) >= 2
        assert all(b >= a - 1e-9 for a, b in zip(trace, trace[1:]))
        assert bounds_n.contains(mix.normal)
        assert bounds_a.contains(mix.abnormal)
        assert mix.theta < 0.5


def test_refine_gmm_converged_fit_is_a_fixed_point():
    rng = np.random.default_rng(9)
    x = np.concatenate([rng.normal(0, 1, 400), rng.normal(12, 1, 400)])
    first = refine_gmm(x, GaussianParams(0.2, 1.1), GaussianParams(11.8, 0.9), WIDE, WIDE, 0.5)
    again = refine_gmm(x, first.normal, first.abnormal, WIDE, WIDE, first.theta)
    assert again.normal.mu == pytest.approx(first.normal.mu, abs=1e-5)
    assert again.normal.sigma == pytest.approx(first.normal.sigma, abs=1e-5)
    assert again.abnormal.mu == pytest.approx(first.abnormal.mu, abs=1e-5)
    assert again.abnormal.sigma == pytest.approx(first.abnormal.sigma, abs=1e-5)
    assert again.theta == pytest.approx(first.theta, abs=1e-5)


def test_refine_gmm_precondition_errors():
    g = GaussianParams(0.0, 1.0)
    with pytest.raises(FitError, match="at least 4"):
        refine_gmm([1.0, 2.0, 3.0], g, g, WIDE, WIDE)
    tight = FitBounds(5.0, 6.0, 0.5, 1.0)
    with pytest.raises(FitError, match="outside"):
        refine_gmm([1.0, 2.0, 3.0, 4.0], g, g, tight, WIDE)
    with pytest.raises(FitError, match="theta_init"):
        refine_gmm([1.0, 2.0, 3.0, 4.0], g, g, WIDE, WIDE, theta_init=1.5)


def test_refine_gmm_nonfinite_objective_rejected():
    # both component densities underflow to log 0 at absurd distances
    g = GaussianParams(0.0, 1e-6)
    b = FitBounds(-1.0, 1.0, 1e-9, 1.0)
    with np.errstate(over="ignore"), pytest.raises(FitError, match="non-finite"):
        refine_gmm([1e200, -1e200, 1e201, -1e201], g, g, b, b)


def test_posterior_reference_value():
    mix = BiomarkerMixture(GaussianParams(0.0, 1.0), GaussianParams(2.0, 1.0), 0.5)
    # equal sigmas and theta 0.5 reduce to a logistic in x
    assert posterior(mix, 2.0) == pytest.approx(0.8807970779778823, abs=1e-12)
    assert posterior(mix, 2.0) == pytest.approx(0.8808, abs=5e-5)
    for x in (-3.0, 0.0, 0.7, 1.0, 2.5, 9.0):
        assert posterior(mix, x) == pytest.approx(float(expit(2 * x - 2)), abs=1e-12)
    assert posterior(mix, 1.0) == pytest.approx(0.5, abs=1e-12)


def test_posterior_degenerate_priors():
    mix = BiomarkerMixture(GaussianParams(0.0, 1.0), GaussianParams(2.0, 1.0), 0.0)
    x = np.linspace(-5, 5, 11)
    assert np.all(posterior(mix, x) == 0.0)
    one = BiomarkerMixture(GaussianParams(0.0, 1.0), GaussianParams(2.0, 1.0), 1.0)
    assert np.all(posterior(one, x) == 1.0)


def test_posterior_swap_complement_property():
    rng = np.random.default_rng(6)
    for _ in range(50):
        mix = BiomarkerMixture(
            GaussianParams(rng.normal(), float(rng.uniform(0.2, 3))),
            GaussianParams(rng.normal(), float(rng.uniform(0.2, 3))),
            float(rng.uniform(0.05, 0.95)),
        )
        x = rng.normal(scale=5, size=9)
        total = posterior(mix, x) + posterior(mix.swapped(), x)
        assert np.allclose(total, 1.0, atol=1e-12)


def test_posterior_monotone_for_equal_sigmas():
    mix = BiomarkerMixture(GaussianParams(0.0, 1.3), GaussianParams(4.0, 1.3), 0.3)
    x = np.linspace(-10, 14, 200)
    p = posterior(mix, x)
    assert np.all(np.diff(p) > 0)
    assert np.all((p >= 0) & (p <= 1))


def test_posterior_survives_deep_tail_underflow():
    mix = BiomarkerMixture(GaussianParams(0.0, 0.01), GaussianParams(1.0, 0.01), 0.5)
    # both densities underflow at x=500; the log-space form still answers
    assert posterior(mix, 500.0) == pytest.approx(1.0)
    assert posterior(mix, -500.0) == pytest.approx(0.0)


def test_posterior_rejects_non_finite_input():
    mix = BiomarkerMixture(GaussianParams(0.0, 1.0), GaussianParams(1.0, 1.0), 0.5)
    with pytest.raises(ValueError):
        posterior(mix, math.nan)


def _masks(labels):
    labels = np.asarray(labels)
    return labels == "CN", labels == "AD"


def test_fit_biomarker_methods_agree_on_separated_data():
    rng = np.random.default_rng(12)
    values = np.concatenate([rng.normal(0, 1, 60), rng.normal(8, 1, 60)])
    cn_mask, ad_mask = _masks(["CN"] * 60 + ["AD"] * 60)
    robust = fit_biomarker(values, cn_mask, ad_mask, "robust-bounded")
    plain = fit_biomarker(values, cn_mask, ad_mask, "plain-gmm")
    assert robust.normal.mu == pytest.approx(plain.normal.mu, abs=0.1)
    assert robust.abnormal.mu == pytest.approx(plain.abnormal.mu, abs=0.1)
    assert robust.theta == pytest.approx(plain.theta, abs=0.05)
    assert robust.theta == pytest.approx(0.5, abs=0.05)


def test_fit_biomarker_floors_degenerate_class_spread():
    # one class nearly collapses onto a point; spread is floored at 1% of range
    rng = np.random.default_rng(13)
    values = np.concatenate([1e-9 * rng.normal(size=30), rng.uniform(0.4, 1.0, 30)])
    cn_mask, ad_mask = _masks(["CN"] * 30 + ["AD"] * 30)
    span = float(values.max() - values.min())
    mix = fit_biomarker(values, cn_mask, ad_mask, "robust-bounded")
    floored = confidence_bounds(GaussianParams(0.0, 0.01 * span), 30)
    assert mix.normal.sigma >= floored.sigma_lo - 1e-12
    mix2 = fit_biomarker(values, cn_mask, ad_mask, "plain-gmm")
    assert mix2.normal.sigma >= 0.01 * span - 1e-12


def test_fit_biomarker_rejects_unknown_method_and_constant_column():
    values = np.array([1.0, 2.0, 3.0, 4.0])
    cn_mask, ad_mask = _masks(["CN", "CN", "AD", "AD"])
    with pytest.raises(ValueError, match="unknown mixture method"):
        fit_biomarker(values, cn_mask, ad_mask, "kde")
    with pytest.raises(FitError, match="identical"):
        fit_biomarker(np.ones(4), cn_mask, ad_mask)


def _dataset(values, labels):
    values = np.asarray(values, dtype=float)
    m, n = values.shape
    return BiomarkerDataset(
        [f"s{j}" for j in range(m)],
        labels,
        values,
        [f"bm{i}" for i in range(n)],
    )


def test_fit_all_biomarkers_theta_tracks_ad_fraction():
    rng = np.random.default_rng(21)
    n_cn, n_ad = 70, 30
    labels = ["CN"] * n_cn + ["AD"] * n_ad
    values = np.column_stack(
        [
            np.concatenate([rng.normal(0, 1, n_cn), rng.normal(6, 1, n_ad)]),
            np.concatenate([rng.normal(10, 2, n_cn), rng.normal(-4, 2, n_ad)]),
        ]
    )
    mixtures = fit_all_biomarkers(_dataset(values, labels))
    assert len(mixtures) == 2
    for mix in mixtures:
        assert mix.theta == pytest.approx(n_ad / (n_cn + n_ad), abs=0.1)


def test_fit_all_biomarkers_requires_both_classes():
    values = np.random.default_rng(0).normal(size=(6, 2))
    with pytest.raises(IngestionError, match="AD"):
        fit_all_biomarkers(_dataset(values, ["CN"] * 6))


def test_fit_all_biomarkers_tags_errors_with_biomarker_name():
    rng = np.random.default_rng(2)
    good = np.concatenate([rng.normal(0, 1, 10), rng.normal(5, 1, 10)])
    values = np.column_stack([good, np.zeros(20)])
    labels = ["CN"] * 10 + ["AD"] * 10
    with pytest.raises(FitError, match="'bm1'"):
        fit_all_biomarkers(_dataset(values, labels))


def test_posterior_matrix_matches_columnwise_calls():
    rng = np.random.default_rng(30)
    labels = ["CN"] * 20 + ["AD"] * 20
    values = np.column_stack(
        [
            np.concatenate([rng.normal(0, 1, 20), rng.normal(4, 1, 20)]),
            np.concatenate([rng.normal(2, 1, 20), rng.normal(-3, 1, 20)]),
        ]
    )
    ds = _dataset(values, labels)
    mixtures = fit_all_biomarkers(ds)
    mat = posterior_matrix(ds, mixtures)
    assert mat.shape == (40, 2)
    for i, mix in enumerate(mixtures):
        assert np.allclose(mat[:, i], posterior(mix, values[:, i]))
    with pytest.raises(ValueError):
        posterior_matrix(ds, mixtures[:1])


def test_mixture_json_round_trip_is_exact():
    rng = np.random.default_rng(40)
    mixtures = [
        BiomarkerMixture(
            GaussianParams(rng.normal(), float(rng.uniform(0.1, 2))),
            GaussianParams(rng.normal(), float(rng.uniform(0.1, 2))),
            float(rng.uniform(0, 1)),
        )
        for _ in range(5)
    ]
    names = [f"bm{i:02d}" for i in range(5)]
    back, back_names = mixtures_from_json(mixtures_to_json(mixtures, names))
    assert back_names == names
    for a, b in zip(mixtures, back):
        assert a.normal.mu == b.normal.mu and a.normal.sigma == b.normal.sigma
        assert a.abnormal.mu == b.abnormal.mu and a.abnormal.sigma == b.abnormal.sigma
        assert a.theta == b.theta
