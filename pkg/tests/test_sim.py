import json
import math

import numpy as np
import pytest
from scipy.special import expit

from debm.sim import (
    DEFAULT_COUNTS,
    SimConfig,
    biomarker_value,
    config_to_dict,
    default_config,
    simulate,
    truth_sidecar,
)


def _config(**overrides):
    base = dict(
        n_biomarkers=3,
        counts=(4, 4, 4),
        rho=12.0,
        xi_means=(0.25, 0.5, 0.75),
        sigma_xi=0.0,
        sigma_beta_rel=0.0,
        beta_mean=(0.0, 0.0, 0.0),
        beta_base_sd=(0.05, 0.05, 0.05),
        seed=0,
    )
    base.update(overrides)
    return SimConfig(**base)


def test_config_validation():
    _config()  # the baseline must be valid
    with pytest.raises(ValueError, match="at least 2"):
        _config(n_biomarkers=1, xi_means=(0.5,), beta_mean=(0.0,), beta_base_sd=(0.05,))
    with pytest.raises(ValueError, match="counts"):
        _config(counts=(4, 4))
    with pytest.raises(ValueError, match="counts"):
        _config(counts=(4, -1, 4))
    with pytest.raises(ValueError, match="at least one subject"):
        _config(counts=(0, 0, 0))
    with pytest.raises(ValueError, match="rho"):
        _config(rho=0.0)
    with pytest.raises(ValueError, match="one entry per biomarker"):
        _config(xi_means=(0.25, 0.5))
    with pytest.raises(ValueError, match="strictly inside"):
        _config(xi_means=(0.0, 0.5, 0.75))
    with pytest.raises(ValueError, match="strictly increasing"):
        _config(xi_means=(0.5, 0.5, 0.75))
    with pytest.raises(ValueError, match="non-negative"):
        _config(sigma_xi=-0.1)
    with pytest.raises(ValueError, match="positive"):
        _config(beta_base_sd=(0.05, 0.0, 0.05))
    cfg = _config(sigma_beta_rel=2.0)
    assert cfg.n_subjects == 12
    assert cfg.beta_sd == (0.1, 0.1, 0.1)


def test_biomarker_value_identities():
    assert biomarker_value(0.5, 12.0, 0.5, 0.0) == 0.5
    assert biomarker_value(0.5, 12.0, 0.5, 0.2) == 0.7
    # saturation limits reach the offsets exactly in float64
    assert biomarker_value(-100.0, 12.0, 0.5, 0.3) == 0.3
    assert biomarker_value(100.0, 12.0, 0.5, 0.3) == 1.3
    v = biomarker_value(0.625, 24.0, 0.5, 0.0)
    assert v == pytest.approx(float(expit(3.0)), abs=1e-15)
    assert v == pytest.approx(0.9526, abs=5e-5)
    with pytest.raises(ValueError, match="rho"):
        biomarker_value(0.5, -1.0, 0.5, 0.0)


def test_biomarker_value_broadcasts():
    psi = np.linspace(0, 1, 11)
    out = biomarker_value(psi, 24.0, 0.5, 0.1)
    assert out.shape == psi.shape
    assert np.allclose(out, expit(24.0 * (psi - 0.5)) + 0.1)
    assert np.all(np.diff(out) > 0)


def test_default_config_parameterization():
    cfg = default_config(7, sigma_beta_rel=1.0, sigma_xi_multiplier=2.0)
    delta = 1.0 / 8.0
    assert cfg.xi_means == tuple((i + 1) * delta for i in range(7))
    assert cfg.rho == 24.0
    assert cfg.sigma_xi == pytest.approx(2.0 * delta / 7.0, abs=1e-15)
    assert cfg.sigma_xi == pytest.approx(0.0357, abs=5e-5)
    assert cfg.beta_base_sd == (0.05,) * 7
    assert cfg.beta_mean == (0.0,) * 7
    assert cfg.counts == DEFAULT_COUNTS == (162, 210, 137)
    assert cfg.n_subjects == 509
    assert default_config(47).sigma_xi == 0.0
    with pytest.raises(ValueError):
        default_config(1)
    with pytest.raises(ValueError):
        default_config(7, sigma_xi_multiplier=-1.0)


def test_simulate_is_deterministic():
    cfg = default_config(5, counts=(20, 20, 20), sigma_beta_rel=1.5, sigma_xi_multiplier=3.0, seed=11)
    a = simulate(cfg)
    b = simulate(cfg)
    assert a.dataset == b.dataset
    assert np.array_equal(a.ground_truth, b.ground_truth)
    assert np.array_equal(a.psi, b.psi)


def test_simulate_noise_free_values_are_exact_sigmoids():
    cfg = default_config(4, counts=(10, 10, 10), seed=3)
    result = simulate(cfg)
    xi = np.array(cfg.xi_means)
    expected = expit(cfg.rho * (result.psi[:, None] - xi[None, :]))
    assert np.array_equal(result.dataset.values, expected)
    # earlier-onset biomarkers are at least as progressed for every subject
    assert np.all(np.diff(result.dataset.values, axis=1) <= 0.0)
    assert np.array_equal(result.ground_truth, np.arange(4))


def test_simulate_label_blocks_follow_psi():
    cfg = default_config(3, counts=(15, 25, 10), seed=7, sigma_beta_rel=2.0)
    result = simulate(cfg)
    labels = np.array(result.dataset.labels)
    cn, mci, ad = (result.psi[labels == lab] for lab in ("CN", "MCI", "AD"))
    assert cn.size == 15 and mci.size == 25 and ad.size == 10
    assert cn.max() <= mci.min()
    assert mci.max() <= ad.min()


def test_simulate_naming_scheme():
    result = simulate(default_config(7, counts=(3, 2, 3), seed=0))
    assert result.dataset.subject_ids[0] == "sim-000"
    assert result.dataset.subject_ids[-1] == "sim-007"
    assert result.dataset.biomarker_names == tuple(f"bm0{i}" for i in range(1, 8))
    wide = simulate(default_config(12, counts=(2, 2, 2), seed=0))
    assert wide.dataset.biomarker_names[-1] == "bm12"


def test_simulate_psi_is_uniform():
    cfg = default_config(2, counts=(400, 400, 400), seed=5)
    psi = simulate(cfg).psi
    m = psi.size
    se_mean = 1.0 / math.sqrt(12 * m)
    assert abs(psi.mean() - 0.5) < 4 * se_mean
    assert psi.min() >= 0.0 and psi.max() <= 1.0
    assert abs(psi.var() - 1 / 12) < 0.01


def test_simulate_beta_noise_statistics():
    # identical subject streams, so the value gap equals the beta draws
    clean = simulate(default_config(4, counts=(100, 100, 100), seed=9))
    noisy = simulate(default_config(4, counts=(100, 100, 100), seed=9, sigma_beta_rel=1.0))
    assert np.array_equal(clean.psi, noisy.psi)
    beta = (noisy.dataset.values - clean.dataset.values).ravel()
    sd = 0.05
    assert abs(beta.mean()) < 4 * sd / math.sqrt(beta.size)
    assert beta.std(ddof=1) == pytest.approx(sd, rel=0.1)


def test_simulate_subject_streams_do_not_depend_on_cohort_size():
    small = simulate(default_config(3, counts=(5, 5, 5), seed=21, sigma_beta_rel=1.0))
    large = simulate(default_config(3, counts=(20, 20, 20), seed=21, sigma_beta_rel=1.0))
    assert np.array_equal(small.dataset.values, large.dataset.values[:15])
    assert np.array_equal(small.psi, large.psi[:15])


def test_truth_sidecar_and_config_round_trip():
    cfg = default_config(4, counts=(6, 6, 6), sigma_beta_rel=0.5, seed=2)
    result = simulate(cfg)
    doc = truth_sidecar(result, cfg)
    assert doc["ground_truth"] == ["bm01", "bm02", "bm03", "bm04"]
    assert doc["ground_truth_indices"] == [0, 1, 2, 3]
    json.dumps(doc)
    assert SimConfig(**config_to_dict(cfg)) == cfg
