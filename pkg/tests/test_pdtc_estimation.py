import math

import numpy as np
import pytest
from sklearn.base import clone

from fsoqkd.channel_models import Degenerate, Empirical, LogNormal, sample_trace
from fsoqkd.coincidence import BlockStats, block_statistics
from fsoqkd.events import (BackgroundConfig, DeviceEfficiencies, PartyEfficiency, SourceConfig,
                           simulate_link_experiment, simulate_local_experiment)
from fsoqkd.pdtc_estimation import (EstimationError, LinkPdtcEstimator, block_transmittance,
                                    device_efficiency_from_local, estimate_link_pdtc)

from conftest import synthetic_blocks


def _dev(eta_a, eta_b):
    return DeviceEfficiencies(PartyEfficiency(detector=eta_a), PartyEfficiency(detector=eta_b))


def test_local_calibration_within_poisson_error():
    # a single run is a 3-sigma check; seed 1 happens to land at -3.3 sigma, see the next test
    a, b = simulate_local_experiment(SourceConfig(1e5), _dev(0.5, 0.05), BackgroundConfig(), 20.0, seed=0)
    est = device_efficiency_from_local(block_statistics(a, b, 0.1))
    sd = math.sqrt(0.05 * 0.95 / len(a))
    assert abs(est - 0.05) < 3 * sd


def test_local_calibration_unbiased_over_seeds():
    z = []
    for seed in range(100):
        a, b = simulate_local_experiment(SourceConfig(1e5), _dev(0.5, 0.05), BackgroundConfig(), 1.0,
                                         seed=seed)
        est = device_efficiency_from_local(block_statistics(a, b, 0.1))
        z.append((est - 0.05) / math.sqrt(0.05 * 0.95 / len(a)))
    z = np.array(z)
    assert abs(z.mean()) < 3 / math.sqrt(z.size)
    assert 0.8 < z.std() < 1.25


def test_lossless_calibration_is_exact():
    a, b = simulate_local_experiment(SourceConfig(1e4), _dev(1, 1), BackgroundConfig(), 1.0, seed=2)
    assert device_efficiency_from_local(block_statistics(a, b, 0.1)) == 1.0


def test_calibration_guards():
    with pytest.raises(EstimationError):
        device_efficiency_from_local(BlockStats.from_counts(sifted=5, errors=0, n_a=3))
    with pytest.raises(EstimationError):
        device_efficiency_from_local(BlockStats.from_counts(sifted=0, errors=0, n_a=0))


def _link(model, background, seconds, seed, pair_rate=1e6):
    tr = sample_trace(model, int(seconds / 0.01), 0.01, seed=seed)
    a, b = simulate_link_experiment(SourceConfig(pair_rate), _dev(1.0, 0.2),
                                    BackgroundConfig(background), tr, seed=seed + 1)
    return tr, block_statistics(a, b, 0.01)


def test_degenerate_round_trip():
    _, s = _link(Degenerate(0.05), 0.0, 5.0, seed=3)
    est = estimate_link_pdtc(s, 0.2)
    assert abs(est.etas.mean() - 0.05) / 0.05 < 0.02
    assert est.model.mean() == pytest.approx(0.05, rel=0.05)
    # histogram mass sits near 0.05
    centres = (est.model.edges[:-1] + est.model.edges[1:]) / 2
    near = np.abs(centres - 0.05) < 0.015
    assert est.model.probabilities[near].sum() > 0.95


def test_subtraction_removes_background_bias():
    # ten times the measured background: raw ratios overestimate, subtracted ones do not
    _, s = _link(Degenerate(0.05), 27_000.0, 10.0, seed=4)
    n_coin, n_acc, n_a = s.n_coin.sum(), s.n_acc.sum(), s.n_a.sum()
    mean_sub = (n_coin - n_acc) / n_a / 0.2
    mean_raw = n_coin / n_a / 0.2
    assert abs(mean_sub - 0.05) < 3 * math.sqrt(n_coin + n_acc) / n_a / 0.2
    assert mean_raw - 0.05 > 3 * math.sqrt(n_coin) / n_a / 0.2
    etas_sub, _, _ = block_transmittance(s, 0.2, True)
    etas_raw, _, _ = block_transmittance(s, 0.2, False)
    assert etas_raw.mean() > etas_sub.mean()


@pytest.mark.parametrize("background", [0.0, 2700.0, 27_000.0])
def test_round_trip_mean_block_level(background):
    model = LogNormal(1.0, 0.05)
    tr = sample_trace(model, 18_000, 0.01, seed=5)
    s = synthetic_blocks(tr.etas, background=background, seed=6)
    etas, _, _ = block_transmittance(s, 0.2)
    # compare against the trace actually sampled, not the model mean
    sd = etas.std() / math.sqrt(etas.size)
    assert abs(etas.mean() - tr.etas.mean()) < 3 * sd


def test_lognormal_sigma_recovery_block_level():
    model = LogNormal(1.0, 0.03)
    tr = sample_trace(model, 18_000, 0.01, seed=7)
    s = synthetic_blocks(tr.etas, pair_rate=2e6, background=0.0, seed=8)
    est = estimate_link_pdtc(s, 0.2)
    sigma, _ = est.lognormal_fit()
    assert abs(sigma - 1.0) < 0.15


def test_all_accidental_blocks_give_zero():
    n = 5
    s = BlockStats(0.01, np.arange(n), np.full(n, 0.01), np.full(n, 100), np.full(n, 10),
                   np.full(n, 4), np.full(n, 4.0), np.zeros(n), np.zeros(n), np.zeros(n), np.zeros(n))
    est = estimate_link_pdtc(s, 1.0)
    assert np.all(est.etas == 0)
    assert isinstance(est.model, Empirical)
    with pytest.raises(EstimationError):
        est.lognormal_fit()


def test_clamping_and_skips():
    s = BlockStats(0.01, np.arange(3), np.full(3, 0.01), [0, 10, 10], [5, 5, 5], [0, 9, 1],
                   [0.0, 0.0, 5.0], [0, 0, 0], [0, 0, 0], [0, 0, 0], [0, 0, 0])
    etas, index, skipped = block_transmittance(s, 0.5)
    assert skipped == 1
    assert index.tolist() == [1, 2]
    assert etas.tolist() == [1.0, 0.0]


def test_histogram_shape_and_csv(tmp_path):
    tr = sample_trace(LogNormal(0.5, 0.1), 2000, 0.01, seed=9)
    s = synthetic_blocks(tr.etas, seed=10)
    est = estimate_link_pdtc(s, 0.2, n_bins=20)
    assert est.model.edges.size == 21
    assert est.model.edges[0] == 0 and est.model.edges[-1] == pytest.approx(est.etas.max())
    assert est.model.probabilities.sum() == pytest.approx(1.0)
    est.model.to_csv(tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().splitlines()[0] == "bin_left,bin_right,probability"


def test_invalid_device_efficiency():
    s = synthetic_blocks(np.full(10, 0.1), seed=0)
    with pytest.raises(ValueError):
        estimate_link_pdtc(s, 0.0)
    with pytest.raises(ValueError):
        estimate_link_pdtc(s, 0.2, n_bins=0)


def test_estimator_api():
    tr = sample_trace(LogNormal(0.8, 0.05), 3000, 0.01, seed=11)
    s = synthetic_blocks(tr.etas, seed=12)
    est = LinkPdtcEstimator(eta_b_device=0.2, n_bins=30)
    assert est.get_params() == {"eta_b_device": 0.2, "n_bins": 30, "subtract_accidentals": True}
    etas = est.fit_transform(s)
    assert np.array_equal(etas, est.transform(s))
    assert est.model_.edges.size == 31
    assert est.sigma_ == pytest.approx(0.8, rel=0.15)
    other = clone(est).set_params(subtract_accidentals=False).fit(s)
    assert other.etas_.mean() >= est.etas_.mean()
