"""Coincidence identification, accidental estimation and per-block statistics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from ._validation import check_positive, seconds_to_ns
from .events import StreamFormatError, TimeTagStream


class UndefinedQberError(ArithmeticError):
    """No sifted bits, so the error rate is undefined."""


@dataclass(frozen=True)
class CoincidenceConfig:
    """Coincidence window and accidental-shift offset, both in ns.

    ``window`` is the full width of the window centred on each event: two
    detections coincide when ``|t_A - t_B| <= window / 2``.  With integer-ns
    timestamps the effective width is ``2 * floor(window / 2) + 1`` ns, which
    equals ``window`` for odd integer windows such as the default 5 ns.
    """

    window: float = 5.0
    accidental_shift: float | None = None

    def __post_init__(self):
        check_positive(self.window, "window")
        if self.accidental_shift is None:
            object.__setattr__(self, "accidental_shift", 10.0 * self.window)
        if self.accidental_shift <= self.window:
            raise ValueError("accidental_shift must exceed the coincidence window")

    @property
    def half_width_ns(self):
        return int(math.floor(self.window / 2 + 1e-9))

    @property
    def shift_ns(self):
        return int(round(self.accidental_shift))


class Coincidences(NamedTuple):
    alice_index: np.ndarray
    bob_index: np.ndarray

    def __len__(self):
        return int(self.alice_index.size)


def _greedy_match(t_long, t_short, half):
    """Earliest-first one-to-one matching; returns index arrays (long, short)."""
    n_long = t_long.size
    if n_long == 0 or t_short.size == 0:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty
    lo = np.searchsorted(t_long, t_short - half, side="left")
    in_range = lo < n_long
    hit = np.zeros(t_short.size, dtype=bool)
    hit[in_range] = t_long[lo[in_range]] <= t_short[in_range] + half
    cand = lo[hit]
    if cand.size < 2 or np.all(cand[1:] > cand[:-1]):
        return cand.astype(np.int64), np.flatnonzero(hit).astype(np.int64)

    # two candidates collide on one event: fall back to the sequential scan
    tl = t_long.tolist()
    ts = t_short.tolist()
    lo_l = lo.tolist()
    il, js = [], []
    i = 0
    for j, t in enumerate(ts):
        if lo_l[j] > i:
            i = lo_l[j]
        if i < n_long and tl[i] <= t + half:
            il.append(i)
            js.append(j)
            i += 1
    return np.array(il, dtype=np.int64), np.array(js, dtype=np.int64)


def _match_times(ta, tb, half):
    if tb.size <= ta.size:
        ia, ib = _greedy_match(ta, tb, half)
    else:
        ib, ia = _greedy_match(tb, ta, half)
    return ia, ib


def find_coincidences(a, b, cfg=CoincidenceConfig()):
    """Pair Alice and Bob detections within the coincidence window.

    Each event is used at most once; both streams are scanned in time order
    and the earliest admissible partner wins.  The result is ordered by
    Alice timestamp.
    """
    _require_ordered(a)
    _require_ordered(b)
    ia, ib = _match_times(a.timestamps, b.timestamps, cfg.half_width_ns)
    return Coincidences(ia, ib)


def _require_ordered(stream):
    ts = stream.timestamps
    if ts.size > 1 and np.any(ts[1:] < ts[:-1]):
        raise StreamFormatError(f"{stream.party} stream is not time-ordered")


@dataclass(frozen=True)
class AccidentalEstimate:
    """Accidental coincidences measured by shifting Bob's record, and from singles rates."""

    rate: float
    analytic_rate: float
    shifted_count: int
    overlap: float

    @property
    def poisson_sigma(self):
        """One-sigma counting uncertainty on ``rate`` (counts/s)."""
        return math.sqrt(max(self.shifted_count, 1)) / self.overlap


def _span(a, b):
    start = max(a.start_ns, b.start_ns)
    stop = min(a.stop_ns, b.stop_ns)
    return start, stop


def _shifted_matches(ta, tb, start, stop, shift, half):
    tb_shift = tb + shift
    a_lo, a_hi = np.searchsorted(ta, [start + shift, stop])
    b_lo, b_hi = np.searchsorted(tb_shift, [start + shift, stop])
    ia, _ = _match_times(ta[a_lo:a_hi], tb_shift[b_lo:b_hi], half)
    return ia + a_lo


def estimate_accidentals(a, b, cfg=CoincidenceConfig()):
    """Accidental coincidence rate in coincidences/s.

    ``rate`` counts coincidences between Alice and Bob's record delayed by
    ``cfg.accidental_shift``, divided by the overlap of the two spans.
    ``analytic_rate`` is ``N_A * N_B * window`` from the measured singles
    rates.
    """
    _require_ordered(a)
    _require_ordered(b)
    start, stop = _span(a, b)
    shift = cfg.shift_ns
    overlap_ns = stop - start - shift
    if overlap_ns <= 0:
        raise ValueError("streams overlap for less than the accidental shift")
    ia = _shifted_matches(a.timestamps, b.timestamps, start, stop, shift, cfg.half_width_ns)
    span_s = (stop - start) * 1e-9
    n_a = np.count_nonzero((a.timestamps >= start) & (a.timestamps < stop))
    n_b = np.count_nonzero((b.timestamps >= start) & (b.timestamps < stop))
    analytic = n_a * n_b * cfg.window * 1e-9 / span_s**2
    overlap = overlap_ns * 1e-9
    return AccidentalEstimate(ia.size / overlap, analytic, int(ia.size), overlap)


_INT_FIELDS = ("n_a", "n_b", "n_coin", "sifted_z", "sifted_x", "err_z", "err_x")
_CSV_HEADER = ["block_index", "n_a", "n_b", "n_coin", "n_acc", "sifted",
               "err_z", "err_x", "sifted_z", "sifted_x"]


@dataclass(frozen=True)
class BlockStats:
    """Per-block counts, stored column-wise.

    ``block_duration`` is the nominal block length in seconds; ``duration``
    holds each block's actual length (the final block of a run may be short).
    Indexing with a slice or boolean mask returns another :class:`BlockStats`.
    """

    block_duration: float
    block_index: np.ndarray
    duration: np.ndarray
    n_a: np.ndarray
    n_b: np.ndarray
    n_coin: np.ndarray
    n_acc: np.ndarray
    sifted_z: np.ndarray
    sifted_x: np.ndarray
    err_z: np.ndarray
    err_x: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.block_index).size
        for f in fields(self)[1:]:
            dtype = float if f.name in ("duration", "n_acc") else np.int64
            arr = np.atleast_1d(np.asarray(getattr(self, f.name), dtype=dtype))
            if arr.shape != (n,):
                raise ValueError(f"column {f.name} has shape {arr.shape}, expected ({n},)")
            object.__setattr__(self, f.name, arr)
        if any(np.any(getattr(self, k) < 0) for k in _INT_FIELDS) or np.any(self.n_acc < 0):
            raise ValueError("block counts must be nonnegative")
        if np.any(self.err_z > self.sifted_z) or np.any(self.err_x > self.sifted_x):
            raise ValueError("a basis has more errors than sifted bits")
        if np.any(self.sifted > self.n_coin):
            raise ValueError("sifted bits exceed coincidences")

    @classmethod
    def from_counts(cls, *, sifted, errors, n_coin=None, n_a=0, n_b=0, n_acc=0.0,
                    block_duration=1.0):
        """A single block holding the given totals, split evenly between bases."""
        sz = sifted // 2
        ez = errors // 2
        if ez > sz:
            ez = sz
        return cls(
            block_duration=block_duration,
            block_index=np.array([0]),
            duration=np.array([block_duration]),
            n_a=np.array([n_a]),
            n_b=np.array([n_b]),
            n_coin=np.array([sifted if n_coin is None else n_coin]),
            n_acc=np.array([n_acc]),
            sifted_z=np.array([sz]),
            sifted_x=np.array([sifted - sz]),
            err_z=np.array([ez]),
            err_x=np.array([errors - ez]),
        )

    def __len__(self):
        return int(self.block_index.size)

    def __getitem__(self, key):
        if isinstance(key, (int, np.integer)):
            key = slice(key, key + 1 if key != -1 else None)
        cols = {f.name: getattr(self, f.name)[key] for f in fields(self)[1:]}
        return BlockStats(self.block_duration, **cols)

    @property
    def sifted(self):
        return self.sifted_z + self.sifted_x

    @property
    def errors(self):
        return self.err_z + self.err_x

    @property
    def bob_rate(self):
        return self.n_b / self.duration

    @property
    def alice_rate(self):
        return self.n_a / self.duration

    @property
    def total_duration(self):
        return float(self.duration.sum())

    def total(self, column):
        return getattr(self, column).sum()

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        if not parts:
            raise ValueError("nothing to concatenate")
        block = parts[0].block_duration
        if any(not math.isclose(p.block_duration, block) for p in parts):
            raise ValueError("cannot concatenate blocks of different durations")
        cols = {f.name: np.concatenate([getattr(p, f.name) for p in parts])
                for f in fields(cls)[1:]}
        return cls(block, **cols)

    def coarsen(self, factor):
        """Merge runs of ``factor`` consecutive blocks.

        Counts are additive, so this equals recomputing the statistics with
        ``factor`` times the block duration on the same time axis.
        """
        factor = int(factor)
        if factor < 1:
            raise ValueError("factor must be >= 1")
        if factor == 1:
            return self
        group = self.block_index // factor
        keys, inv = np.unique(group, return_inverse=True)
        cols = {"block_index": keys}
        for f in fields(self)[2:]:
            src = getattr(self, f.name)
            summed = np.bincount(inv, weights=src, minlength=keys.size)
            cols[f.name] = summed if src.dtype.kind == "f" else np.rint(summed).astype(np.int64)
        return BlockStats(self.block_duration * factor, **cols)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(_CSV_HEADER)
            rows = zip(self.block_index.tolist(), self.n_a.tolist(), self.n_b.tolist(),
                       self.n_coin.tolist(), self.n_acc.tolist(), self.sifted.tolist(),
                       self.err_z.tolist(), self.err_x.tolist(),
                       self.sifted_z.tolist(), self.sifted_x.tolist())
            writer.writerows(rows)

    @classmethod
    def read_csv(cls, path, block_duration):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        col = {k: np.array([float(r[k]) for r in rows]) for k in _CSV_HEADER}
        n = len(rows)
        return cls(
            block_duration=float(block_duration),
            block_index=col["block_index"].astype(np.int64),
            duration=np.full(n, float(block_duration)),
            n_a=col["n_a"], n_b=col["n_b"], n_coin=col["n_coin"], n_acc=col["n_acc"],
            sifted_z=col["sifted_z"], sifted_x=col["sifted_x"],
            err_z=col["err_z"], err_x=col["err_x"],
        )


def block_statistics(a, b, block_duration, cfg=CoincidenceConfig(), *, index_offset=0):
    """Partition the common time span into blocks and count per block.

    Events belong to the block containing their timestamp; a coincidence
    belongs to the block of its Alice member.  ``n_acc`` counts coincidences
    with Bob's record delayed by ``cfg.accidental_shift``.  Sifted bits are
    coincidences measured in the same basis; an error is an outcome mismatch.
    """
    check_positive(block_duration, "block_duration")
    _require_ordered(a)
    _require_ordered(b)
    block_ns = seconds_to_ns(block_duration)
    start, stop = _span(a, b)
    if stop <= start:
        raise ValueError("streams do not overlap in time")
    nb = -(-(stop - start) // block_ns)
    edges_end = np.minimum(start + block_ns * np.arange(1, nb + 1), stop)
    durations = (edges_end - (start + block_ns * np.arange(nb))) * 1e-9

    ta, tb = a.timestamps, b.timestamps
    a_lo, a_hi = np.searchsorted(ta, [start, stop])
    b_lo, b_hi = np.searchsorted(tb, [start, stop])
    ta, tb = ta[a_lo:a_hi], tb[b_lo:b_hi]

    # both streams are sorted, so block occupancy is a difference of insertion points
    edges = np.append(start + block_ns * np.arange(nb), stop)
    n_a = np.diff(np.searchsorted(ta, edges))
    n_b = np.diff(np.searchsorted(tb, edges))

    ia, ib = _match_times(ta, tb, cfg.half_width_ns)
    blk = (ta[ia] - start) // block_ns
    a_basis = a.basis[a_lo:a_hi][ia]
    same = a_basis == b.basis[b_lo:b_hi][ib]
    wrong = same & (a.outcome[a_lo:a_hi][ia] != b.outcome[b_lo:b_hi][ib])
    zb = a_basis == 0

    n_coin = np.bincount(blk, minlength=nb)
    sifted_z = np.bincount(blk[same & zb], minlength=nb)
    sifted_x = np.bincount(blk[same & ~zb], minlength=nb)
    err_z = np.bincount(blk[wrong & zb], minlength=nb)
    err_x = np.bincount(blk[wrong & ~zb], minlength=nb)

    acc_idx = _shifted_matches(ta, tb, start, stop, cfg.shift_ns, cfg.half_width_ns)
    n_acc = np.bincount((ta[acc_idx] - start) // block_ns, minlength=nb).astype(float)

    return BlockStats(
        block_duration=float(block_duration),
        block_index=np.arange(nb) + int(index_offset),
        duration=durations,
        n_a=n_a, n_b=n_b, n_coin=n_coin, n_acc=n_acc,
        sifted_z=sifted_z, sifted_x=sifted_x, err_z=err_z, err_x=err_x,
    )


def accumulate_block_statistics(chunks, block_duration, cfg=CoincidenceConfig()):
    """Block statistics over a sequence of consecutive ``(alice, bob)`` chunks.

    Every chunk except the last must span a whole number of blocks, so block
    edges line up with a whole-stream computation.  Coincidences straddling
    a chunk edge are not formed; with pair members sharing a timestamp this
    only affects accidental pairs within one window of the edge.
    """
    block_ns = seconds_to_ns(block_duration)
    parts = []
    run_start = None
    pending_partial = False
    for a, b in chunks:
        if pending_partial:
            raise ValueError("only the final chunk may end on a partial block")
        start, stop = _span(a, b)
        if run_start is None:
            run_start = start
        if (start - run_start) % block_ns:
            raise ValueError("chunk boundaries must fall on block boundaries")
        pending_partial = (stop - start) % block_ns != 0
        parts.append(block_statistics(a, b, block_duration, cfg,
                                      index_offset=(start - run_start) // block_ns))
    return BlockStats.concat(parts)


def qber(stats):
    """Pooled error rates ``(total, z_basis, x_basis)``.

    A basis without sifted bits reports ``nan``; no sifted bits at all raises
    :class:`UndefinedQberError`.
    """
    sz, sx = int(stats.sifted_z.sum()), int(stats.sifted_x.sum())
    ez, ex = int(stats.err_z.sum()), int(stats.err_x.sum())
    if sz + sx == 0:
        raise UndefinedQberError("no sifted bits")
    qz = ez / sz if sz else math.nan
    qx = ex / sx if sx else math.nan
    return (ez + ex) / (sz + sx), qz, qx
