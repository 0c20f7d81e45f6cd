"""Channel transmittance distribution from block statistics.

Bob's device efficiency is calibrated with a local run (source and both
analysers side by side): the coincidence-to-Alice-singles ratio is then
Bob's total optical and detection efficiency.  During a link run the same
ratio, divided by that efficiency, estimates the atmospheric transmittance
of each block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_count, check_probability
from .channel_models import Empirical, fit_lognormal
from .coincidence import BlockStats


class EstimationError(ValueError):
    """The block statistics cannot support the requested estimate."""


def _as_blocks(stats):
    if isinstance(stats, BlockStats):
        return stats
    return BlockStats.concat(stats)


def device_efficiency_from_local(stats):
    """Bob's total efficiency: summed coincidences over summed Alice singles."""
    blocks = _as_blocks(stats)
    n_a = int(blocks.n_a.sum())
    n_coin = int(blocks.n_coin.sum())
    if n_a == 0:
        raise EstimationError("no Alice singles in the local run")
    if n_coin > n_a:
        raise EstimationError(f"{n_coin} coincidences exceed {n_a} Alice singles")
    return n_coin / n_a


@dataclass(frozen=True)
class PdtcEstimate:
    model: Empirical
    etas: np.ndarray
    block_index: np.ndarray
    skipped: int

    def lognormal_fit(self):
        """``(sigma, mean)`` of the per-block estimates; zero estimates are excluded."""
        positive = self.etas[self.etas > 0]
        if positive.size < 2:
            raise EstimationError("need at least two positive block estimates")
        return fit_lognormal(positive)


def block_transmittance(stats, eta_b_device, subtract_accidentals=True):
    """Per-block atmospheric transmittance; blocks without Alice singles are dropped.

    Returns ``(etas, block_index, skipped)``.
    """
    check_probability(eta_b_device, "eta_b_device", open_low=True)
    blocks = _as_blocks(stats)
    ok = blocks.n_a > 0
    coin = blocks.n_coin[ok].astype(float)
    if subtract_accidentals:
        coin = coin - blocks.n_acc[ok]
    ratio = np.maximum(coin, 0.0) / blocks.n_a[ok]
    etas = np.clip(ratio / eta_b_device, 0.0, 1.0)
    return etas, blocks.block_index[ok], int(np.count_nonzero(~ok))


def estimate_link_pdtc(stats, eta_b_device, n_bins=50, subtract_accidentals=True):
    """Histogram of the per-block transmittance as an :class:`Empirical` model.

    Bins are equal-width on ``[0, max estimate]`` (``[0, 1]`` when every
    estimate is zero).
    """
    check_count(n_bins, "n_bins")
    etas, index, skipped = block_transmittance(stats, eta_b_device, subtract_accidentals)
    if etas.size == 0:
        raise EstimationError("every block has zero Alice singles")
    top = float(etas.max())
    if top <= 0.0:
        top = 1.0
    counts, edges = np.histogram(etas, bins=n_bins, range=(0.0, top))
    model = Empirical(edges, counts / counts.sum())
    return PdtcEstimate(model, etas, index, skipped)


class LinkPdtcEstimator(BaseEstimator):
    """Estimator wrapper: ``fit`` on link block statistics, ``transform`` to per-block etas."""

    def __init__(self, eta_b_device=1.0, n_bins=50, subtract_accidentals=True):
        self.eta_b_device = eta_b_device
        self.n_bins = n_bins
        self.subtract_accidentals = subtract_accidentals

    def fit(self, X, y=None):
        est = estimate_link_pdtc(X, self.eta_b_device, self.n_bins, self.subtract_accidentals)
        self.model_ = est.model
        self.etas_ = est.etas
        self.skipped_ = est.skipped
        self.sigma_, self.mean_ = est.lognormal_fit() if np.count_nonzero(est.etas) > 1 else (np.nan, np.nan)
        return self

    def transform(self, X):
        etas, _, _ = block_transmittance(X, self.eta_b_device, self.subtract_accidentals)
        return etas

    def fit_transform(self, X, y=None):
        return self.fit(X).etas_
