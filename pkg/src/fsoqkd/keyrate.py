"""Asymptotic secret-key accounting for the entanglement-based protocol.

The secret fraction is expressed per *sifted* bit::

    r(e) = 1 - f(e) h2(e) - h2(e)

and the per-raw-bit rate is half of it (basis sifting).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ._validation import DomainError
from .coincidence import BlockStats


def binary_entropy(e):
    """Base-2 binary entropy, with ``h2(0) = h2(1) = 0``. Accepts arrays."""
    arr = np.asarray(e, dtype=float)
    if np.any((arr < 0) | (arr > 1)) or np.any(np.isnan(arr)):
        raise DomainError("binary_entropy is defined on [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -arr * np.log2(arr) - (1 - arr) * np.log2(1 - arr)
    h = np.where((arr == 0) | (arr == 1), 0.0, h)
    return float(h) if h.ndim == 0 else h


@dataclass(frozen=True)
class ConstantEfficiency:
    """Error correction leaking ``f * h2(e)`` bits per sifted bit at any QBER."""

    f: float = 1.22

    def __post_init__(self):
        if not self.f >= 1:
            raise ValueError("error-correction inefficiency must be >= 1")

    def __call__(self, e):
        return np.full_like(np.asarray(e, dtype=float), self.f) if np.ndim(e) else self.f


@dataclass(frozen=True)
class TableEfficiency:
    """Piecewise-linear ``f(e)`` through ``points``, held constant outside them."""

    points: tuple = ((0.0430, 1.2202), (0.0551, 1.2697))

    def __post_init__(self):
        pts = tuple((float(q), float(f)) for q, f in self.points)
        if not pts:
            raise ValueError("need at least one (qber, f) point")
        qs = [q for q, _ in pts]
        if any(b <= a for a, b in zip(qs, qs[1:])):
            raise ValueError("table QBER values must be strictly increasing")
        if any(f < 1 for _, f in pts):
            raise ValueError("error-correction inefficiency must be >= 1")
        object.__setattr__(self, "points", pts)

    def __call__(self, e):
        qs = [q for q, _ in self.points]
        fs = [f for _, f in self.points]
        out = np.interp(e, qs, fs)
        return float(out) if np.ndim(out) == 0 else out


ErrorCorrectionModel = ConstantEfficiency | TableEfficiency
DEFAULT_EC = TableEfficiency()


def secret_fraction(e, ec=DEFAULT_EC):
    """Secret bits per sifted bit at QBER ``e``; negative above the threshold."""
    arr = np.asarray(e, dtype=float)
    if np.any((arr < 0) | (arr > 0.5)):
        raise DomainError("QBER must lie in [0, 0.5]")
    h = binary_entropy(arr)
    out = 1.0 - ec(arr) * h - h
    return float(out) if np.ndim(out) == 0 else out


def secret_rate_per_raw_bit(e, ec=DEFAULT_EC):
    """Secret bits per raw (unsifted) bit, i.e. half the sifted-bit fraction."""
    return 0.5 * secret_fraction(e, ec)


@dataclass(frozen=True)
class KeyRateResult:
    raw_count: int
    sifted_count: int
    error_count: int
    qber: float
    f_used: float
    secret_fraction: float
    secret_bits: float

    @property
    def qber_defined(self):
        return self.sifted_count > 0

    def as_record(self):
        return asdict(self)


def secret_key_from_counts(sifted, errors, ec=DEFAULT_EC, raw=None):
    """Pooled key length for ``sifted`` bits containing ``errors`` errors."""
    sifted, errors = int(sifted), int(errors)
    raw = sifted if raw is None else int(raw)
    if sifted == 0:
        return KeyRateResult(raw, 0, 0, math.nan, math.nan, math.nan, 0.0)
    e = errors / sifted
    # sampling noise can push tiny subsets past one half; no key there either way
    e_eff = min(e, 0.5)
    frac = secret_fraction(e_eff, ec)
    return KeyRateResult(
        raw_count=raw,
        sifted_count=sifted,
        error_count=errors,
        qber=e,
        f_used=float(ec(e_eff)),
        secret_fraction=frac,
        secret_bits=max(0.0, sifted * frac),
    )


def secret_key_from_blocks(blocks, ec=DEFAULT_EC):
    """Pool every block into one sifted key and apply the secret fraction once.

    Blocks without any sifted bit give ``secret_bits == 0`` and ``qber == nan``.
    """
    if not isinstance(blocks, BlockStats):
        blocks = BlockStats.concat(blocks)
    if len(blocks) == 0:
        raise ValueError("no blocks given")
    return secret_key_from_counts(
        blocks.sifted.sum(), blocks.errors.sum(), ec, raw=blocks.n_coin.sum()
    )
