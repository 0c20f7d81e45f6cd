import csv
import math

import numpy as np
import pytest

from fsoqkd._validation import DomainError
from fsoqkd.channel_models import Degenerate, LogNormal
from fsoqkd.decoy import (DecoyParams, FluctuatingChannel, StaticChannel, decoy_bounds,
                          gain_and_error, key_rate_at, loss_db_to_eta, optimal_rate, scan_sigma,
                          secure_key_rate, write_scan_csv)

import oracles

CLEAN = DecoyParams(mu=0.5, nu=0.05, y0=0.0, e_detector=0.0)


def _observed(params, spec, mu):
    q_mu, e_mu = gain_and_error(params, spec, mu)
    q_nu, e_nu = gain_and_error(params, spec, params.nu)
    return q_mu, e_mu, q_nu, e_nu


def test_gain_closed_form():
    q, e = gain_and_error(CLEAN, StaticChannel(1.0), 0.5)
    assert q == pytest.approx(0.39347, abs=1e-5) and e == 0


def test_vacuum_pulse():
    p = DecoyParams(y0=1e-5)
    assert gain_and_error(p, StaticChannel(0.1), 0.0) == (1e-5, 0.5)
    assert gain_and_error(CLEAN, StaticChannel(0.1), 0.0) == (0.0, 0.5)
    with pytest.raises(DomainError):
        gain_and_error(p, StaticChannel(0.1), -0.1)


@pytest.mark.parametrize("eta", [1.0, 0.1, 1e-3])
def test_degenerate_channel_equals_static(eta):
    p = DecoyParams()
    for mu in (0.05, 0.3, 0.9):
        a = gain_and_error(p, StaticChannel(eta), mu)
        b = gain_and_error(p, FluctuatingChannel(Degenerate(eta)), mu)
        assert b == pytest.approx(a, rel=1e-12)
    assert secure_key_rate(p, FluctuatingChannel(Degenerate(eta))) == pytest.approx(
        secure_key_rate(p, StaticChannel(eta)), rel=1e-9)


def _ma_bound_naive(q_mu, e_mu, q_nu, e_nu, mu, nu, e0):
    # plain transcription of the one-decoy lower bound, kept separate from the package
    y0 = min(e_mu * q_mu * math.exp(mu), e_nu * q_nu * math.exp(nu)) / e0
    return mu / (mu * nu - nu**2) * (q_nu * math.exp(nu) - q_mu * math.exp(mu) * nu**2 / mu**2
                                     - (mu**2 - nu**2) / mu**2 * y0)


def test_clean_channel_rate_matches_oracle():
    spec = StaticChannel(1.0)
    q_mu, e_mu, q_nu, e_nu = _observed(CLEAN, spec, 0.5)
    y1 = _ma_bound_naive(q_mu, e_mu, q_nu, e_nu, 0.5, 0.05, CLEAN.e0)
    expected = 0.5 * y1 * 0.5 * math.exp(-0.5)
    assert secure_key_rate(CLEAN, spec) == pytest.approx(expected, rel=1e-12)
    b = decoy_bounds(CLEAN, q_mu, e_mu, q_nu, e_nu, 0.5)
    assert b.e1_upper == 0 and b.y0_upper == 0
    # the analytic bound never exceeds the best yield the observations allow
    assert b.y1_lower <= oracles.y1_lower_lp(q_mu, q_nu, 0.5, 0.05) + 1e-12


@pytest.mark.parametrize("loss", [3.0, 10.0, 20.0, 40.0])
@pytest.mark.parametrize("mu", [0.2, 0.5, 0.8])
def test_bounds_are_valid_and_tight(loss, mu):
    p = DecoyParams()
    eta = loss_db_to_eta(loss)
    q_mu, e_mu, q_nu, e_nu = _observed(p, StaticChannel(eta), mu)
    b = decoy_bounds(p, q_mu, e_mu, q_nu, e_nu, mu)
    assert b.y1_lower == pytest.approx(_ma_bound_naive(q_mu, e_mu, q_nu, e_nu, mu, p.nu, p.e0),
                                       rel=1e-12)
    lp = oracles.y1_lower_lp(q_mu, q_nu, mu, p.nu, y0_max=b.y0_upper)
    assert b.y1_lower <= lp * (1 + 1e-7)
    if loss >= 10:
        assert b.y1_lower == pytest.approx(lp, rel=1e-4)
    true_y1 = p.y0 + eta
    true_e1 = (p.e0 * p.y0 + p.e_detector * eta) / true_y1
    assert b.y1_lower <= true_y1
    assert b.e1_upper >= true_e1


@pytest.mark.parametrize("loss", [1.0, 10.0])
def test_vacuum_decoy_fallback_matches_lp(loss):
    # vacuum plus one intensity cannot separate one- from multi-photon yields,
    # so the bound is the worst case over Y_n in [0, 1]; zero at moderate loss
    p = DecoyParams(nu=0.0, y0=1e-6)
    eta = loss_db_to_eta(loss)
    q_mu, e_mu, q_nu, e_nu = _observed(p, StaticChannel(eta), 0.5)
    b = decoy_bounds(p, q_mu, e_mu, q_nu, e_nu, 0.5)
    lp = oracles.y1_lower_lp(q_mu, q_nu, 0.5, 0.0)
    assert b.y1_lower == pytest.approx(lp, abs=1e-9)
    assert b.y1_lower <= p.y0 + eta
    assert (b.y1_lower > 0) == (loss == 1.0)


def test_rate_examples_against_reference_curves():
    p = DecoyParams()
    for loss in (10, 20, 30, 40, 50):
        eta = loss_db_to_eta(loss)
        s = secure_key_rate(p, StaticChannel(eta))
        f = secure_key_rate(p, FluctuatingChannel(LogNormal(0.18, eta)))
        assert abs(f - s) / s < 0.01
    eta5 = loss_db_to_eta(5)
    assert (secure_key_rate(p, FluctuatingChannel(LogNormal(1.8, eta5)))
            < secure_key_rate(p, StaticChannel(eta5)))


@pytest.mark.parametrize("sigma", [0.2, 0.5, 1.0])
def test_fifteen_db_moderate_turbulence(sigma):
    rows = scan_sigma(DecoyParams(), [15.0], [sigma])
    assert abs(rows[0].relative_difference) < 0.02


@pytest.mark.parametrize("loss", [0.5, 5.0, 20.0, 45.0])
@pytest.mark.parametrize("sigma", [0.18, 1.0, 1.8])
def test_jensen_direction(loss, sigma):
    eta = loss_db_to_eta(loss)
    q_static, _ = gain_and_error(CLEAN, StaticChannel(eta), 0.5)
    q_fluct, _ = gain_and_error(CLEAN, FluctuatingChannel(LogNormal(sigma, eta)), 0.5)
    assert q_fluct <= q_static * (1 + 1e-9)


def test_scan_grid_contract(tmp_path):
    sigmas = [0.1, 0.5, 1.0, 1.5, 2.0]
    losses = [5.0, 15.0, 25.0, 35.0, 45.0]
    rows = scan_sigma(DecoyParams(), losses, sigmas)
    assert len(rows) == len(sigmas) * len(losses)
    for loss in losses:
        static = {r.rate_static for r in rows if r.mean_loss_db == loss}
        assert len(static) == 1
    columns = [[r.rate_static for r in rows if r.sigma == sigmas[0]]]
    columns += [[r.rate_fluct for r in rows if r.sigma == s] for s in sigmas]
    for col in columns:
        assert all(v >= 0 and not math.isnan(v) for v in col)
        assert all(x >= y for x, y in zip(col, col[1:]))
    path = tmp_path / "scan.csv"
    write_scan_csv(rows, path)
    with open(path) as fh:
        data = list(csv.reader(fh))
    assert data[0] == ["mean_loss_db", "sigma", "rate_static", "rate_fluct"]
    assert len(data) == len(rows) + 1
    assert float(data[1][2]) == pytest.approx(rows[0].rate_static, rel=1e-9)


def test_literal_location_variant_runs():
    rows = scan_sigma(DecoyParams(), [20.0], [1.0], literal_location=True)
    default = scan_sigma(DecoyParams(), [20.0], [1.0])
    assert rows[0].rate_static == default[0].rate_static
    assert rows[0].rate_fluct != default[0].rate_fluct


def test_optimal_mu_beats_fixed_choices():
    p = DecoyParams()
    spec = StaticChannel(loss_db_to_eta(20))
    rate, mu = optimal_rate(p, spec)
    assert p.nu < mu <= 1.5
    for trial in (0.1, 0.3, 0.6, 1.0):
        assert rate >= key_rate_at(p, spec, trial) - 1e-15
    fixed = DecoyParams(mu=0.3)
    assert optimal_rate(fixed, spec) == (max(0.0, key_rate_at(fixed, spec, 0.3)), 0.3)


def test_rate_vanishes_at_extreme_loss():
    assert secure_key_rate(DecoyParams(y0=1e-5), StaticChannel(loss_db_to_eta(70))) == 0.0


def test_param_validation():
    with pytest.raises(ValueError):
        DecoyParams(mu=0.05, nu=0.05)
    with pytest.raises(ValueError):
        DecoyParams(e_detector=0.6)
    with pytest.raises(ValueError):
        DecoyParams(f_ec=0.9)
    with pytest.raises(ValueError):
        DecoyParams(y0=1.0)
    with pytest.raises(ValueError):
        StaticChannel(0.0)
    with pytest.raises(TypeError):
        FluctuatingChannel("not a model")
    with pytest.raises(ValueError):
        scan_sigma(DecoyParams(), [0.0], [1.0])
    assert np.isclose(loss_db_to_eta(20), 0.01)
