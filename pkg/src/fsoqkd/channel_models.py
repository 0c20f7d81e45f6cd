"""Distributions of the per-block atmospheric transmittance (PDTC).

Three model variants are supported:

* :class:`Degenerate` -- a static channel, every block sees ``eta0``.
* :class:`LogNormal` -- ``theta = -ln(eta)`` is Gaussian with spread ``sigma``;
  the support is truncated to ``eta <= 1`` and renormalised.
* :class:`Empirical` -- a histogram, typically reconstructed from
  coincidence data by :mod:`fsoqkd.pdtc_estimation`.

The log-normal location is chosen so that the untruncated mean equals
``mean_eta``.  Passing ``literal_location=True`` uses ``-ln(mean_eta)`` directly as
the location of ``theta`` instead. ``mean_eta`` is then the median and the
untruncated mean grows to ``mean_eta * exp(sigma**2 / 2)``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy import integrate, special

from ._validation import DomainError, check_count, check_positive, check_probability

_SQRT2 = math.sqrt(2.0)
# Standard-normal tail beyond which the integrand is treated as zero.
_Z_CUTOFF = 40.0


class UnsupportedQueryError(TypeError):
    """Raised when a model variant cannot answer a query (density of a delta)."""


class QuadratureError(ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""


def _norm_cdf(x):
    return 0.5 * special.erfc(-np.asarray(x, dtype=float) / _SQRT2)


@dataclass(frozen=True)
class Degenerate:
    """Static channel: every block has transmittance ``eta0``."""

    eta0: float

    def __post_init__(self):
        check_probability(self.eta0, "eta0")

    def mean(self):
        return float(self.eta0)


@dataclass(frozen=True)
class LogNormal:
    """Log-normal transmittance law truncated to ``(0, 1]``.

    ``sigma`` is the standard deviation of ``theta = -ln(eta)``.
    """

    sigma: float
    mean_eta: float
    literal_location: bool = False

    def __post_init__(self):
        check_positive(self.sigma, "sigma")
        check_probability(self.mean_eta, "mean_eta", open_low=True)

    @property
    def theta_bar(self):
        return -math.log(self.mean_eta)

    @property
    def location(self):
        """Mean of ``theta`` before truncation."""
        if self.literal_location:
            return self.theta_bar
        return self.theta_bar + 0.5 * self.sigma**2

    @property
    def kept_mass(self):
        """Probability that an untruncated draw satisfies ``eta <= 1``."""
        return float(_norm_cdf(self.location / self.sigma))

    @property
    def mode(self):
        """Mode of the untruncated density in ``eta``."""
        return math.exp(-self.location - self.sigma**2)

    def mean(self):
        """Mean of the truncated law."""
        m, s = self.location, self.sigma
        tail = float(_norm_cdf((m - s * s) / s))
        return math.exp(-m + 0.5 * s * s) * tail / self.kept_mass


@dataclass(frozen=True)
class Empirical:
    """Piecewise-constant density over ascending ``bin_edges`` in ``[0, 1]``."""

    bin_edges: tuple
    bin_probabilities: tuple
    _cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=float)
        probs = np.asarray(self.bin_probabilities, dtype=float)
        if edges.ndim != 1 or edges.size < 2 or probs.size != edges.size - 1:
            raise ValueError("need n+1 bin edges for n bin probabilities")
        if np.any(np.diff(edges) <= 0):
            raise ValueError("bin_edges must be strictly ascending")
        if edges[0] < 0 or edges[-1] > 1:
            raise DomainError("bin_edges must lie in [0, 1]")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("bin_probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "bin_edges", tuple(edges.tolist()))
        object.__setattr__(self, "bin_probabilities", tuple(probs.tolist()))
        object.__setattr__(self, "_cdf", np.concatenate([[0.0], np.cumsum(probs)]))

    @property
    def edges(self):
        return np.asarray(self.bin_edges)

    @property
    def probabilities(self):
        return np.asarray(self.bin_probabilities)

    def mean(self):
        e = self.edges
        return float(np.sum(self.probabilities * 0.5 * (e[:-1] + e[1:])))

    def to_csv(self, path):
        e = self.edges
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bin_left", "bin_right", "probability"])
            for lo, hi, p in zip(e[:-1], e[1:], self.probabilities):
                writer.writerow([repr(float(lo)), repr(float(hi)), repr(float(p))])

    @classmethod
    def read_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: no histogram rows")
        left = [float(r["bin_left"]) for r in rows]
        right = [float(r["bin_right"]) for r in rows]
        if any(abs(a - b) > 1e-12 for a, b in zip(right[:-1], left[1:])):
            raise ValueError(f"{path}: histogram bins are not contiguous")
        return cls(tuple(left + right[-1:]), tuple(float(r["probability"]) for r in rows))


PdtcModel = Union[Degenerate, LogNormal, Empirical]


@dataclass(frozen=True)
class TransmissionTrace:
    """Per-block transmittance samples drawn from a :data:`PdtcModel`."""

    block_duration: float
    etas: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        check_positive(self.block_duration, "block_duration")
        etas = np.asarray(self.etas, dtype=float)
        if etas.ndim != 1 or etas.size == 0:
            raise ValueError("a trace needs at least one block")
        if np.any((etas < 0) | (etas > 1)) or np.any(np.isnan(etas)):
            raise DomainError("trace transmittances must lie in [0, 1]")
        etas.setflags(write=False)
        object.__setattr__(self, "etas", etas)

    @property
    def n_blocks(self):
        return int(self.etas.size)

    @property
    def duration(self):
        return self.n_blocks * self.block_duration

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["block_index", "eta"])
            for i, eta in enumerate(self.etas):
                writer.writerow([i, repr(float(eta))])

    @classmethod
    def read_csv(cls, path, block_duration):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        etas = [float(r["eta"]) for r in sorted(rows, key=lambda r: int(r["block_index"]))]
        return cls(block_duration=block_duration, etas=np.array(etas))


def pdtc_density(model, eta):
    """Probability density of the transmittance at ``eta`` (scalar or array).

    Raises :class:`DomainError` for ``eta`` outside ``(0, 1]`` and
    :class:`UnsupportedQueryError` for the :class:`Degenerate` variant.
    """
    arr = np.asarray(eta, dtype=float)
    if np.any((arr <= 0) | (arr > 1)) or np.any(np.isnan(arr)):
        raise DomainError("eta must lie in (0, 1]")
    if isinstance(model, Degenerate):
        raise UnsupportedQueryError("a Degenerate PDTC has no density; sample it instead")
    if isinstance(model, LogNormal):
        s = model.sigma
        z = (np.log(arr) + model.location) / s
        out = np.exp(-0.5 * z * z) / (math.sqrt(2 * math.pi) * s * arr) / model.kept_mass
    elif isinstance(model, Empirical):
        edges, probs = model.edges, model.probabilities
        idx = np.searchsorted(edges, arr, side="right") - 1
        # the right edge itself belongs to the last bin
        idx = np.where(arr == edges[-1], edges.size - 2, idx)
        inside = (idx >= 0) & (idx < probs.size)
        widths = np.diff(edges)
        safe = np.clip(idx, 0, probs.size - 1)
        out = np.where(inside, probs[safe] / widths[safe], 0.0)
    else:
        raise TypeError(f"unknown PDTC model {model!r}")
    return out if out.ndim else float(out)


def pdtc_cdf(model, eta):
    """Cumulative distribution ``P(eta_atm <= eta)``."""
    arr = np.asarray(eta, dtype=float)
    if isinstance(model, Degenerate):
        out = (arr >= model.eta0).astype(float)
    elif isinstance(model, LogNormal):
        with np.errstate(divide="ignore"):
            logs = np.log(np.clip(arr, 0, 1))
        out = _norm_cdf((model.location + logs) / model.sigma) / model.kept_mass
        out = np.where(arr >= 1, 1.0, out)
    elif isinstance(model, Empirical):
        out = np.interp(arr, model.edges, model._cdf, left=0.0, right=1.0)
    else:
        raise TypeError(f"unknown PDTC model {model!r}")
    return out if out.ndim else float(out)


def _sample(model, rng, n):
    if isinstance(model, Degenerate):
        return np.full(n, model.eta0)
    if isinstance(model, LogNormal):
        out = np.empty(n)
        filled = 0
        while filled < n:
            need = n - filled
            draw = rng.normal(model.location, model.sigma, size=int(need / model.kept_mass) + 16)
            draw = draw[draw >= 0][:need]
            out[filled : filled + draw.size] = np.exp(-draw)
            filled += draw.size
        return out
    if isinstance(model, Empirical):
        u = rng.random(n)
        bins = np.searchsorted(model._cdf, u, side="right") - 1
        bins = np.clip(bins, 0, len(model.bin_probabilities) - 1)
        lo = model.edges[bins]
        width = np.diff(model.edges)[bins]
        return lo + rng.random(n) * width
    raise TypeError(f"unknown PDTC model {model!r}")


def sample_trace(model, n_blocks, block_duration, seed):
    """Draw ``n_blocks`` independent per-block transmittances.

    The same ``(model, seed)`` always yields the same trace.
    """
    n_blocks = check_count(n_blocks, "n_blocks")
    check_positive(block_duration, "block_duration")
    rng = np.random.default_rng(seed)
    etas = np.clip(_sample(model, rng, n_blocks), 0.0, 1.0)
    return TransmissionTrace(block_duration=float(block_duration), etas=etas, seed=seed)


def fit_lognormal(samples):
    """Moment fit of a log-normal PDTC.

    Returns ``(sigma, mean_eta)`` where ``sigma`` is the population standard
    deviation of ``-ln(samples)`` and ``mean_eta`` the arithmetic mean.
    Non-positive samples (empty blocks) must be removed by the caller.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("fit_lognormal needs at least two samples")
    if np.any(x <= 0):
        raise DomainError("fit_lognormal samples must be strictly positive")
    theta = -np.log(x)
    return float(theta.std(ddof=0)), float(x.mean())


def laplace_transform(model, s, *, rtol=1e-8):
    """``E[exp(-s * eta)]`` under the model, for ``s >= 0``.

    Photon-counting gains of Poissonian sources are affine in this quantity,
    so averaging them over a fluctuating channel reduces to this expectation.
    """
    s = float(s)
    if s < 0:
        raise DomainError("s must be >= 0")
    if isinstance(model, Degenerate):
        return math.exp(-s * model.eta0)
    if isinstance(model, Empirical):
        lo, hi = model.edges[:-1], model.edges[1:]
        if s == 0:
            return 1.0
        per_bin = (np.exp(-s * lo) - np.exp(-s * hi)) / (s * (hi - lo))
        return float(np.sum(model.probabilities * per_bin))
    if isinstance(model, LogNormal):
        return expectation(model, lambda eta: np.exp(-s * eta), rtol=rtol)
    raise TypeError(f"unknown PDTC model {model!r}")


def expectation(model, func: Callable, *, rtol=1e-8):
    """``E[func(eta)]`` by adaptive quadrature (exact for Degenerate).

    For the log-normal law the integral is taken over the standardised
    Gaussian variable of ``theta``, which keeps sharply peaked laws
    (small ``sigma``) well resolved.
    """
    if isinstance(model, Degenerate):
        return float(func(model.eta0))
    if isinstance(model, LogNormal):
        m, sd = model.location, model.sigma
        lower = max(-m / sd, -_Z_CUTOFF)
        if lower >= _Z_CUTOFF:
            raise QuadratureError("log-normal mass lies entirely above eta = 1")

        def integrand(z):
            return math.exp(-0.5 * z * z) * float(func(math.exp(-(m + sd * z))))

        # split at the peak so quad sees the bulk of the Gaussian
        points = sorted({lower, max(lower, 0.0), _Z_CUTOFF})
        total = 0.0
        for a, b in zip(points[:-1], points[1:]):
            if b <= a:
                continue
            val, err, info = _quad(integrand, a, b, rtol)
            total += val
        return total / (math.sqrt(2 * math.pi) * model.kept_mass)
    if isinstance(model, Empirical):
        total = 0.0
        for lo, hi, p in zip(model.edges[:-1], model.edges[1:], model.probabilities):
            if p == 0:
                continue
            val, _, _ = _quad(lambda x: float(func(x)), lo, hi, rtol)
            total += p * val / (hi - lo)
        return total
    raise TypeError(f"unknown PDTC model {model!r}")


def _quad(f, a, b, rtol):
    out = integrate.quad(f, a, b, epsabs=0.0, epsrel=rtol, limit=200, full_output=1)
    val, err = out[0], out[1]
    if len(out) > 3 and err > max(rtol * abs(val) * 10, 1e-300):
        raise QuadratureError(
            f"quad on [{a:.4g}, {b:.4g}] stopped at value={val:.6g}, "
            f"abs error estimate={err:.3g}: {out[3]}"
        )
    return val, err, out[2]
