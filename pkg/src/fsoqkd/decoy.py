"""One-decoy weak-coherent-pulse key rates over static and fluctuating channels.

Alice sends phase-randomised coherent pulses of mean photon number ``mu``
(signal) or ``nu`` (decoy).  For a channel of transmittance ``eta``::

    Q(eta)    = y0 + 1 - exp(-eta * mu)
    E Q(eta)  = e0 * y0 + e_det * (1 - exp(-eta * mu))

Over a fluctuating channel the parties only see these observables averaged
over the transmittance distribution, and they feed those averages into the
static-channel decoy bounds.  That is the comparison made here: what does
assuming a static channel cost when the channel actually fluctuates.

Bounds used (per pulse, ``q`` the sifting factor)::

    Y0 <= min(E_mu Q_mu e^mu, E_nu Q_nu e^nu) / e0
    Y1 >= mu / (mu nu - nu^2) * (Q_nu e^nu - Q_mu e^mu nu^2/mu^2
                                 - (mu^2 - nu^2)/mu^2 * Y0)
    e1 <= min((E_mu Q_mu e^mu - E_nu Q_nu e^nu) / ((mu - nu) Y1),
              E_mu Q_mu e^mu / (mu Y1), 1/2)
    R  =  q * (-Q_mu f h2(E_mu) + Y1 mu e^-mu (1 - h2(e1)))
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from ._validation import DomainError, check_positive, check_probability
from .channel_models import Degenerate, LogNormal, expectation
from .keyrate import binary_entropy

_MU_MAX = 1.5
_MU_GAP = 1e-3


@dataclass(frozen=True)
class DecoyParams:
    """Source, detector and post-processing parameters.

    ``mu=None`` means the signal intensity is optimised for each channel.
    """

    mu: float | None = None
    nu: float = 0.05
    y0: float = 1e-8
    e_detector: float = 0.033
    e0: float = 0.5
    f_ec: float = 1.22
    sift_factor: float = 0.5

    def __post_init__(self):
        check_positive(self.nu, "nu", allow_zero=True)
        if self.mu is not None and not self.mu > self.nu:
            raise ValueError("signal intensity mu must exceed decoy intensity nu")
        check_probability(self.y0, "y0")
        if self.y0 >= 1:
            raise ValueError("y0 must be < 1")
        check_probability(self.e_detector, "e_detector")
        if self.e_detector > 0.5:
            raise ValueError("e_detector must be <= 0.5")
        check_probability(self.e0, "e0")
        if self.f_ec < 1:
            raise ValueError("f_ec must be >= 1")
        check_probability(self.sift_factor, "sift_factor", open_low=True)


@dataclass(frozen=True)
class StaticChannel:
    eta: float

    def __post_init__(self):
        check_probability(self.eta, "eta", open_low=True)


@dataclass(frozen=True)
class FluctuatingChannel:
    model: object

    def __post_init__(self):
        if not isinstance(self.model, (Degenerate, LogNormal)) and not hasattr(self.model, "edges"):
            raise TypeError(f"unsupported PDTC model {self.model!r}")


def loss_db_to_eta(loss_db):
    return 10.0 ** (-float(loss_db) / 10.0)


def _detection(spec, pulse_mu):
    """Mean of ``1 - exp(-eta * mu)`` over the channel."""
    if pulse_mu == 0:
        return 0.0
    if isinstance(spec, StaticChannel):
        return -math.expm1(-spec.eta * pulse_mu)
    return expectation(spec.model, lambda eta: -np.expm1(-eta * pulse_mu))


def gain_and_error(params, spec, pulse_mu):
    """Channel-averaged gain ``Q`` and error rate ``E`` for intensity ``pulse_mu``.

    With ``Q == 0`` (no background and vacuum input) ``E`` is reported as ``e0``.
    """
    if pulse_mu < 0:
        raise DomainError("pulse_mu must be >= 0")
    d = _detection(spec, pulse_mu)
    q = params.y0 + d
    eq = params.e0 * params.y0 + params.e_detector * d
    if q == 0:
        return 0.0, params.e0
    return q, min(eq / q, 0.5)


@dataclass(frozen=True)
class DecoyBounds:
    mu: float
    q_mu: float
    e_mu: float
    q_nu: float
    e_nu: float
    y0_upper: float
    y1_lower: float
    e1_upper: float

    @property
    def q1_lower(self):
        return self.y1_lower * self.mu * math.exp(-self.mu)


def decoy_bounds(params, q_mu, e_mu, q_nu, e_nu, mu):
    """Single-photon yield and error bounds from the observed gains and error rates."""
    nu = params.nu
    if not mu > nu:
        raise DomainError("mu must exceed nu")
    eq_mu_e = e_mu * q_mu * math.exp(mu)
    eq_nu_e = e_nu * q_nu * math.exp(nu)
    y0_u = min(eq_mu_e, eq_nu_e) / params.e0 if params.e0 > 0 else q_nu * math.exp(nu)
    if nu > 0:
        y1 = mu / (mu * nu - nu * nu) * (
            q_nu * math.exp(nu)
            - q_mu * math.exp(mu) * nu * nu / (mu * mu)
            - (mu * mu - nu * nu) / (mu * mu) * y0_u
        )
    else:
        # vacuum decoy: Q_nu is Y0 itself; the Poisson tail beyond one photon
        # is bounded by assuming every multi-photon pulse is detected
        y1 = (q_mu * math.exp(mu) - q_nu - (math.exp(mu) - 1 - mu)) / mu
    y1 = max(y1, 0.0)
    if y1 > 0:
        e1 = min((eq_mu_e - eq_nu_e) / ((mu - nu) * y1), eq_mu_e / (mu * y1), 0.5)
        e1 = max(e1, 0.0)
    else:
        e1 = 0.5
    return DecoyBounds(mu, q_mu, e_mu, q_nu, e_nu, y0_u, y1, e1)


def _rate_from_bounds(params, b):
    raw = params.sift_factor * (
        -b.q_mu * params.f_ec * binary_entropy(b.e_mu)
        + b.q1_lower * (1.0 - binary_entropy(b.e1_upper))
    )
    return raw


def key_rate_at(params, spec, mu, _decoy=None):
    """Unfloored key rate per pulse at signal intensity ``mu``."""
    q_nu, e_nu = _decoy if _decoy is not None else gain_and_error(params, spec, params.nu)
    q_mu, e_mu = gain_and_error(params, spec, mu)
    b = decoy_bounds(params, q_mu, e_mu, q_nu, e_nu, mu)
    if b.y1_lower <= 0:
        return -math.inf if b.q_mu > 0 else 0.0
    return _rate_from_bounds(params, b)


def optimal_rate(params, spec):
    """``(rate, mu)`` maximising the floored rate over ``mu`` in ``(nu, 1.5]``."""
    if params.mu is not None:
        return max(0.0, key_rate_at(params, spec, params.mu)), params.mu
    decoy = gain_and_error(params, spec, params.nu)

    def neg(mu):
        r = key_rate_at(params, spec, mu, decoy)
        return -max(r, 0.0)

    res = optimize.minimize_scalar(neg, bounds=(params.nu + _MU_GAP, _MU_MAX),
                                   method="bounded", options={"xatol": 1e-6})
    return max(0.0, -float(res.fun)), float(res.x)


def secure_key_rate(params, spec):
    """Secret bits per pulse sent, floored at zero."""
    return optimal_rate(params, spec)[0]


@dataclass(frozen=True)
class ScanRow:
    mean_loss_db: float
    sigma: float
    rate_static: float
    rate_fluct: float

    @property
    def relative_difference(self):
        if self.rate_static == 0:
            return 0.0 if self.rate_fluct == 0 else math.inf
        return (self.rate_fluct - self.rate_static) / self.rate_static


def scan_sigma(params, mean_losses, sigmas, literal_location=False):
    """Static and log-normal key rates on a (mean loss, sigma) grid.

    The static channel has the same mean transmittance as the fluctuating one.
    """
    rows = []
    for loss in mean_losses:
        check_positive(loss, "mean loss (dB)")
        eta = loss_db_to_eta(loss)
        static = secure_key_rate(params, StaticChannel(eta))
        for s in sigmas:
            model = LogNormal(float(s), eta, literal_location=literal_location)
            fluct = secure_key_rate(params, FluctuatingChannel(model))
            rows.append(ScanRow(float(loss), float(s), static, fluct))
    return rows


def write_scan_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mean_loss_db", "sigma", "rate_static", "rate_fluct"])
        for r in rows:
            w.writerow([repr(r.mean_loss_db), repr(r.sigma),
                        f"{r.rate_static:.10e}", f"{r.rate_fluct:.10e}"])
