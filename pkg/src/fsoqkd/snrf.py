"""Signal-to-noise-ratio filter over block statistics.

Blocks whose summed Bob singles rate falls below a threshold are discarded
before key distillation.  At a fixed background rate the singles rate is a
monotone proxy for the SNR, so the ``"snr"`` mode is the same filter with a
rescaled threshold.  The sweep searches block duration and threshold for
the largest pooled secret key.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import reduce

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_count, check_positive, seconds_to_ns
from .coincidence import BlockStats, CoincidenceConfig, accumulate_block_statistics, block_statistics
from .keyrate import DEFAULT_EC, secret_key_from_blocks, secret_key_from_counts

MODES = ("singles", "snr")
DEFAULT_DURATIONS = (0.005, 0.010, 0.020, 0.030, 0.050, 0.100)
N_DEFAULT_THRESHOLDS = 41


@dataclass(frozen=True)
class SnrfConfig:
    """``threshold`` is in counts/s (``"singles"``) or a dimensionless SNR (``"snr"``)."""

    block_duration: float
    threshold: float = 0.0
    mode: str = "singles"
    background_rate: float | None = None

    def __post_init__(self):
        check_positive(self.block_duration, "block_duration")
        check_positive(self.threshold, "threshold", allow_zero=True)
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "snr":
            if self.background_rate is None or not self.background_rate > 0:
                raise ValueError("snr mode needs a positive background_rate")


def block_score(blocks, mode="singles", background_rate=None):
    """What the filter compares against the threshold, per block."""
    rate = blocks.n_b / blocks.duration
    if mode == "snr":
        return (rate - background_rate) / background_rate
    return rate


def keep_mask(blocks, cfg):
    if not math.isclose(blocks.block_duration, cfg.block_duration, rel_tol=1e-9):
        raise ValueError(
            f"blocks have duration {blocks.block_duration} s, filter expects {cfg.block_duration} s"
        )
    return block_score(blocks, cfg.mode, cfg.background_rate) >= cfg.threshold


def apply_snrf(blocks, cfg):
    """Split ``blocks`` into ``(kept, rejected)``; a block at the threshold is kept."""
    if not isinstance(blocks, BlockStats):
        blocks = BlockStats.concat(blocks)
    mask = keep_mask(blocks, cfg)
    return blocks[mask], blocks[~mask]


def default_thresholds(blocks, n=N_DEFAULT_THRESHOLDS):
    """``n`` evenly spaced rates from 0 to twice the mean Bob singles rate."""
    mean_rate = blocks.n_b.sum() / blocks.total_duration
    return np.linspace(0.0, 2.0 * mean_rate, n)


def _threshold_scan(blocks, thresholds, ec, mode="singles", background_rate=None):
    """Pooled secret bits for each threshold on one block partition."""
    score = block_score(blocks, mode, background_rate)
    keep = score[None, :] >= np.asarray(thresholds, dtype=float)[:, None]
    sifted = keep @ blocks.sifted
    errors = keep @ blocks.errors
    return np.array([secret_key_from_counts(s, e, ec).secret_bits for s, e in zip(sifted, errors)])


def _argmax_first(values):
    best = np.max(values)
    return int(np.flatnonzero(values == best)[0])


@dataclass(frozen=True)
class SweepResult:
    durations: np.ndarray
    thresholds: np.ndarray
    secret_bits: np.ndarray
    unfiltered_secret_bits: float
    mode: str = "singles"

    def __post_init__(self):
        shape = (len(self.durations), len(self.thresholds))
        if np.shape(self.secret_bits) != shape:
            raise ValueError(f"grid shape {np.shape(self.secret_bits)} does not match axes {shape}")

    @property
    def optimum(self):
        """``(duration, threshold, secret_bits)``; row-major first max breaks ties."""
        flat = _argmax_first(self.secret_bits.ravel())
        i, j = divmod(flat, len(self.thresholds))
        return float(self.durations[i]), float(self.thresholds[j]), float(self.secret_bits[i, j])

    @property
    def gain(self):
        if self.unfiltered_secret_bits == 0:
            return math.inf if self.optimum[2] > 0 else 1.0
        return self.optimum[2] / self.unfiltered_secret_bits

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["duration_ms", "threshold_cps", "secret_bits"])
            for i, d in enumerate(self.durations):
                for j, t in enumerate(self.thresholds):
                    w.writerow([f"{d * 1e3:g}", f"{t:.6g}", f"{self.secret_bits[i, j]:.3f}"])

    def optimum_record(self):
        d, t, bits = self.optimum
        return {
            "duration_ms": round(d * 1e3, 9),
            "threshold": t,
            "threshold_mode": self.mode,
            "threshold_counts_per_block": t * d if self.mode == "singles" else None,
            "secret_bits": bits,
            "unfiltered_secret_bits": self.unfiltered_secret_bits,
            "gain": self.gain,
        }


def base_duration(durations):
    ns = [seconds_to_ns(d) for d in durations]
    return reduce(math.gcd, ns) * 1e-9, ns


def sweep_blocks(base, durations=DEFAULT_DURATIONS, thresholds=None, ec=DEFAULT_EC,
                 mode="singles", background_rate=None, threads=1):
    """Sweep using statistics already computed at a fine block duration.

    Every entry of ``durations`` must be a whole multiple of
    ``base.block_duration``; coarser partitions are exact sums of the fine one.
    """
    if len(durations) == 0:
        raise ValueError("durations must not be empty")
    base_ns = seconds_to_ns(base.block_duration)
    factors = []
    for d in durations:
        d_ns = seconds_to_ns(d)
        if d_ns % base_ns:
            raise ValueError(f"duration {d} s is not a multiple of the base block {base.block_duration} s")
        factors.append(d_ns // base_ns)
    if thresholds is None:
        if mode == "snr":
            raise ValueError("snr mode needs an explicit threshold grid")
        thresholds = default_thresholds(base)
    thresholds = np.asarray(thresholds, dtype=float)
    if thresholds.size == 0:
        raise ValueError("thresholds must not be empty")
    SnrfConfig(base.block_duration, 0.0, mode, background_rate)  # validates mode

    def row(factor):
        return _threshold_scan(base.coarsen(factor), thresholds, ec, mode, background_rate)

    # rows are independent; map preserves order so the grid is deterministic
    with ThreadPoolExecutor(max_workers=max(1, int(threads))) as pool:
        grid = np.vstack(list(pool.map(row, factors)))
    unfiltered = secret_key_from_blocks(base, ec).secret_bits
    return SweepResult(np.asarray(durations, dtype=float), thresholds, grid, unfiltered, mode)


def sweep(a, b, durations=DEFAULT_DURATIONS, thresholds=None, cc=CoincidenceConfig(),
          ec=DEFAULT_EC, mode="singles", background_rate=None, threads=1):
    """Full 2-D sweep on a pair of streams.

    Block statistics are computed once at the largest duration dividing every
    grid entry and aggregated up for the others.
    """
    base_d, _ = base_duration(durations)
    base = block_statistics(a, b, base_d, cc)
    return sweep_blocks(base, durations, thresholds, ec, mode, background_rate, threads)


def sweep_chunks(chunks, durations=DEFAULT_DURATIONS, thresholds=None, cc=CoincidenceConfig(),
                 ec=DEFAULT_EC, mode="singles", background_rate=None, threads=1):
    """As :func:`sweep`, consuming ``(alice, bob)`` chunks one at a time."""
    base_d, _ = base_duration(durations)
    base = accumulate_block_statistics(chunks, base_d, cc)
    return sweep_blocks(base, durations, thresholds, ec, mode, background_rate, threads)


def best_threshold(blocks, thresholds=None, ec=DEFAULT_EC, mode="singles", background_rate=None):
    """``(threshold, secret_bits)`` maximising the pooled key at a fixed duration."""
    if thresholds is None:
        thresholds = default_thresholds(blocks)
    thresholds = np.asarray(thresholds, dtype=float)
    bits = _threshold_scan(blocks, thresholds, ec, mode, background_rate)
    j = _argmax_first(bits)
    return float(thresholds[j]), float(bits[j])


@dataclass(frozen=True)
class SummaryRow:
    scenario: str
    raw: int
    sifted: int
    secret: float
    f: float
    qber: float


def summary_table(blocks, threshold, ec=DEFAULT_EC, mode="singles", background_rate=None):
    """Key accounting for all blocks, the kept blocks and the rejected blocks."""
    cfg = SnrfConfig(blocks.block_duration, threshold, mode, background_rate)
    kept, rejected = apply_snrf(blocks, cfg)
    rows = []
    for name, part in (("no SNRF", blocks), ("above SNRF", kept), ("below SNRF", rejected)):
        if len(part) == 0:
            rows.append(SummaryRow(name, 0, 0, 0.0, math.nan, math.nan))
            continue
        r = secret_key_from_blocks(part, ec)
        rows.append(SummaryRow(name, r.raw_count, r.sifted_count, r.secret_bits, r.f_used, r.qber))
    return rows


def write_summary_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "raw", "sifted", "secret", "f", "QBER"])
        for r in rows:
            w.writerow([r.scenario, r.raw, r.sifted, f"{r.secret:.1f}", f"{r.f:.4f}", f"{r.qber:.6f}"])


def write_json(record, path):
    with open(path, "w") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass(frozen=True)
class RollingResult:
    segment_starts: np.ndarray
    thresholds: np.ndarray
    kept: np.ndarray
    secret_bits: float


def rolling_threshold(blocks, window_blocks, ec=DEFAULT_EC, n_thresholds=N_DEFAULT_THRESHOLDS):
    """Online filter: re-optimise the threshold on the trailing window.

    The run is cut into segments of ``window_blocks`` blocks.  The first
    segment is filtered with its own optimum; every later segment uses the
    optimum of the ``window_blocks`` blocks preceding it.  The kept blocks of
    all segments are pooled into one key.
    """
    check_count(window_blocks, "window_blocks", minimum=10)
    n = len(blocks)
    if n == 0:
        raise ValueError("no blocks given")
    starts = np.arange(0, n, window_blocks)
    rate = blocks.n_b / blocks.duration
    kept = np.zeros(n, dtype=bool)
    chosen = []
    for s in starts:
        train = blocks[s:s + window_blocks] if s == 0 else blocks[max(0, s - window_blocks):s]
        thr, _ = best_threshold(train, default_thresholds(train, n_thresholds), ec)
        chosen.append(thr)
        seg = slice(s, min(s + window_blocks, n))
        kept[seg] = rate[seg] >= thr
    bits = secret_key_from_counts(blocks.sifted[kept].sum(), blocks.errors[kept].sum(), ec).secret_bits
    return RollingResult(starts, np.array(chosen), kept, float(bits))


class SnrFilter(BaseEstimator, TransformerMixin):
    """Estimator form of the filter.

    ``fit`` picks the threshold maximising the pooled key of the training
    blocks, ``transform`` returns the kept blocks, ``predict`` the keep mask
    and ``score`` the secret bits left after filtering.
    """

    def __init__(self, block_duration=0.03, thresholds=None, mode="singles",
                 background_rate=None, ec=DEFAULT_EC):
        self.block_duration = block_duration
        self.thresholds = thresholds
        self.mode = mode
        self.background_rate = background_rate
        self.ec = ec

    def _config(self, threshold):
        return SnrfConfig(self.block_duration, threshold, self.mode, self.background_rate)

    def fit(self, X, y=None):
        thresholds = self.thresholds
        if thresholds is None:
            if self.mode == "snr":
                raise ValueError("snr mode needs an explicit threshold grid")
            thresholds = default_thresholds(X)
        keep_mask(X, self._config(0.0))
        self.threshold_, self.secret_bits_ = best_threshold(
            X, thresholds, self.ec, self.mode, self.background_rate)
        return self

    def predict(self, X):
        return keep_mask(X, self._config(self.threshold_))

    def transform(self, X):
        return X[self.predict(X)]

    def score(self, X, y=None):
        kept = self.transform(X)
        if len(kept) == 0:
            return 0.0
        return secret_key_from_blocks(kept, self.ec).secret_bits
