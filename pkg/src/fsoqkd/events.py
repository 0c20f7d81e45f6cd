"""Synthetic time-tag streams for an entangled-pair link.

Pairs are emitted as a homogeneous Poisson process.  Rather than drawing a
survival coin for every pair, the generator uses Poisson splitting: pairs
detected by Alice form a Poisson process of rate ``N * eta_A``; each of those
is also seen by Bob with probability ``eta_B(t)``; pairs seen only by Bob form
an independent process of rate ``N * (1 - eta_A) * eta_B(t)``.  This is
distributionally identical to per-pair thinning, and the cost scales with
the detected singles instead of the emitted pairs.

Long runs are produced chunk by chunk (:func:`iter_link_experiment`).
Chunk ``k`` draws from ``SeedSequence(seed, spawn_key=(k,))``, so a chunked
run and a whole-stream run with the same seed give identical events.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_positive, check_probability, seconds_to_ns
from .channel_models import Degenerate, TransmissionTrace, sample_trace

Z, X = 0, 1
SIGNAL, BACKGROUND, DARK = 0, 1, 2
_BASIS_NAMES = ("Z", "X")
_KIND_NAMES = ("signal", "background", "dark")


@dataclass(frozen=True)
class SourceConfig:
    """Entangled-pair source: ``pair_rate`` pairs/s and device error rate."""

    pair_rate: float
    intrinsic_qber: float = 0.0

    def __post_init__(self):
        check_positive(self.pair_rate, "pair_rate")
        check_probability(self.intrinsic_qber, "intrinsic_qber")
        if self.intrinsic_qber > 0.5:
            raise ValueError("intrinsic_qber must be <= 0.5")


@dataclass(frozen=True)
class PartyEfficiency:
    source_coupling: float = 1.0
    polarization_analyzer: float = 1.0
    detector: float = 1.0

    def __post_init__(self):
        for name in ("source_coupling", "polarization_analyzer", "detector"):
            check_probability(getattr(self, name), name, open_low=True)

    @property
    def total(self):
        return self.source_coupling * self.polarization_analyzer * self.detector


@dataclass(frozen=True)
class DeviceEfficiencies:
    alice: PartyEfficiency = field(default_factory=PartyEfficiency)
    bob: PartyEfficiency = field(default_factory=PartyEfficiency)

    @property
    def eta_a(self):
        return self.alice.total

    @property
    def eta_b(self):
        return self.bob.total


@dataclass(frozen=True)
class BackgroundConfig:
    """Uncorrelated count rates in counts/s."""

    bob_background_rate: float = 0.0
    alice_dark_rate: float = 0.0
    bob_dark_rate: float = 0.0

    def __post_init__(self):
        for name in ("bob_background_rate", "alice_dark_rate", "bob_dark_rate"):
            check_positive(getattr(self, name), name, allow_zero=True)


@dataclass(frozen=True)
class TimeTagStream:
    """Detection record of one party over ``[start_ns, stop_ns)``.

    ``basis`` is 0 for Z and 1 for X.  ``kind`` is simulation ground truth;
    analysis code never reads it.
    """

    party: str
    timestamps: np.ndarray
    basis: np.ndarray
    outcome: np.ndarray
    start_ns: int = 0
    stop_ns: int | None = None
    kind: np.ndarray | None = None

    def __post_init__(self):
        ts = np.ascontiguousarray(self.timestamps, dtype=np.int64)
        basis = np.ascontiguousarray(self.basis, dtype=np.uint8)
        outcome = np.ascontiguousarray(self.outcome, dtype=np.uint8)
        if not (ts.shape == basis.shape == outcome.shape) or ts.ndim != 1:
            raise ValueError("timestamps, basis and outcome must be equal-length 1-D arrays")
        if ts.size > 1 and np.any(ts[1:] < ts[:-1]):
            raise StreamFormatError(f"{self.party} timestamps are not time-ordered")
        stop = self.stop_ns
        if stop is None:
            stop = int(ts[-1]) + 1 if ts.size else int(self.start_ns) + 1
        if ts.size and (ts[0] < self.start_ns or ts[-1] >= stop):
            raise StreamFormatError("timestamps fall outside [start_ns, stop_ns)")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "outcome", outcome)
        object.__setattr__(self, "start_ns", int(self.start_ns))
        object.__setattr__(self, "stop_ns", int(stop))
        if self.kind is not None:
            object.__setattr__(self, "kind", np.ascontiguousarray(self.kind, dtype=np.uint8))

    def __len__(self):
        return int(self.timestamps.size)

    @property
    def duration(self):
        """Acquisition time in seconds."""
        return (self.stop_ns - self.start_ns) * 1e-9

    @property
    def rate(self):
        return len(self) / self.duration

    def select(self, mask):
        kind = None if self.kind is None else self.kind[mask]
        return TimeTagStream(
            self.party, self.timestamps[mask], self.basis[mask], self.outcome[mask],
            self.start_ns, self.stop_ns, kind,
        )

    def window(self, t0_ns, t1_ns):
        """Events in ``[t0_ns, t1_ns)`` as a stream with that acquisition span."""
        lo, hi = np.searchsorted(self.timestamps, [t0_ns, t1_ns], side="left")
        kind = None if self.kind is None else self.kind[lo:hi]
        return TimeTagStream(
            self.party, self.timestamps[lo:hi], self.basis[lo:hi], self.outcome[lo:hi],
            t0_ns, t1_ns, kind,
        )

    @classmethod
    def concat(cls, streams):
        streams = list(streams)
        if not streams:
            raise ValueError("nothing to concatenate")
        kinds = [s.kind for s in streams]
        return cls(
            streams[0].party,
            np.concatenate([s.timestamps for s in streams]),
            np.concatenate([s.basis for s in streams]),
            np.concatenate([s.outcome for s in streams]),
            streams[0].start_ns,
            streams[-1].stop_ns,
            None if any(k is None for k in kinds) else np.concatenate(kinds),
        )

    def to_csv(self, path, debug_truth=False):
        with open(path, "w", newline="") as fh:
            self.write_csv(fh, debug_truth)

    def write_csv(self, fh, debug_truth=False, header=True):
        """Write rows to an open text file; ``header=False`` appends a continuation."""
        truth = debug_truth and self.kind is not None
        writer = csv.writer(fh)
        if header:
            writer.writerow(["timestamp_ns", "basis", "outcome"] + (["kind"] if truth else []))
        names = np.array(_BASIS_NAMES)[self.basis]
        cols = [self.timestamps.tolist(), names, self.outcome.tolist()]
        if truth:
            cols.append(np.array(_KIND_NAMES)[self.kind])
        writer.writerows(zip(*cols))

    @classmethod
    def read_csv(cls, path, party, start_ns=0, stop_ns=None):
        """Load a stream written by :meth:`to_csv`; any ``kind`` column is ignored."""
        ts, basis, outcome = [], [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                ts.append(int(row["timestamp_ns"]))
                b = row["basis"].strip().upper()
                if b not in _BASIS_NAMES:
                    raise StreamFormatError(f"unknown basis {row['basis']!r} in {path}")
                basis.append(_BASIS_NAMES.index(b))
                o = int(row["outcome"])
                if o not in (0, 1):
                    raise StreamFormatError(f"outcome must be 0 or 1, got {o} in {path}")
                outcome.append(o)
        return cls(party, np.array(ts, dtype=np.int64), np.array(basis), np.array(outcome),
                   start_ns, stop_ns)


class StreamFormatError(ValueError):
    """A time-tag stream violates the ordering or span contract."""


def _poisson_times(rng, rate_per_ns, t0, t1):
    """Event times of a homogeneous Poisson process on ``[t0, t1)`` (float ns)."""
    span = t1 - t0
    mean = rate_per_ns * span
    if mean <= 0:
        return np.empty(0)
    # exponential gaps, topped up if the first batch falls short
    parts = []
    now = float(t0)
    batch = int(mean + 6 * np.sqrt(mean) + 16)
    while True:
        gaps = rng.exponential(1.0 / rate_per_ns, size=batch)
        times = now + np.cumsum(gaps)
        if times[-1] >= t1:
            parts.append(times[: np.searchsorted(times, t1, side="left")])
            break
        parts.append(times)
        now = times[-1]
        batch = int(rate_per_ns * (t1 - now) + 6 * np.sqrt(rate_per_ns * (t1 - now)) + 16)
    return parts[0] if len(parts) == 1 else np.concatenate(parts)


def _uniform_times(rng, rate_per_ns, t0, t1):
    n = rng.poisson(rate_per_ns * (t1 - t0))
    return np.sort(t0 + rng.random(n) * (t1 - t0))


def _piecewise_times(rng, rates_per_ns, edges):
    """Inhomogeneous Poisson process with constant rate between ``edges``."""
    counts = rng.poisson(rates_per_ns * np.diff(edges))
    if counts.sum() == 0:
        return np.empty(0)
    starts = np.repeat(edges[:-1], counts)
    widths = np.repeat(np.diff(edges), counts)
    return np.sort(starts + rng.random(counts.sum()) * widths)


def _jitter(rng, times, sd_ns, t0, t1):
    if sd_ns <= 0 or times.size == 0:
        return times
    return np.clip(times + rng.normal(0.0, sd_ns, size=times.size), t0, np.nextafter(t1, t0))


@dataclass(frozen=True)
class _LinkPlan:
    source: SourceConfig
    eta_a: float
    eta_b_dev: float
    trace_etas: np.ndarray
    trace_block_ns: float
    bob_background_rate: float
    alice_dark_rate: float
    bob_dark_rate: float
    jitter_ns: float
    duration_ns: int


def _bob_eta(plan, t0, t1):
    """Block-wise Bob transmittance on ``[t0, t1)``: (edges, etas)."""
    blk = plan.trace_block_ns
    first = int(t0 // blk)
    last = int(np.ceil(t1 / blk))
    idx = np.arange(first, last)
    edges = np.clip(np.concatenate([idx * blk, [last * blk]]), t0, t1).astype(float)
    etas = plan.eta_b_dev * plan.trace_etas[np.clip(idx, 0, plan.trace_etas.size - 1)]
    return edges, etas


def _simulate_chunk(plan, rng, t0, t1):
    src = plan.source
    n_rate = src.pair_rate * 1e-9

    # pairs with Alice's photon detected
    a_sig = _poisson_times(rng, n_rate * plan.eta_a, t0, t1)
    n_a = a_sig.size
    a_bits = rng.integers(0, 4, size=n_a, dtype=np.uint8)
    a_basis, a_out = a_bits & 1, a_bits >> 1

    edges, eta_b = _bob_eta(plan, t0, t1)
    # of those, the ones Bob also detects
    pos = np.searchsorted(a_sig, edges)
    counts = np.diff(pos)
    k = rng.binomial(counts, eta_b)
    picks = [lo + np.sort(rng.choice(n, size=m, replace=False))
             for lo, n, m in zip(pos[:-1], counts, k) if m]
    both = np.concatenate(picks) if picks else np.empty(0, dtype=np.int64)
    b_both_t = a_sig[both]
    same = rng.integers(0, 2, size=both.size, dtype=np.uint8)
    b_both_basis = np.where(same == 1, a_basis[both], 1 - a_basis[both]).astype(np.uint8)
    flips = (rng.random(both.size) < src.intrinsic_qber).astype(np.uint8)
    rand_out = rng.integers(0, 2, size=both.size, dtype=np.uint8)
    b_both_out = np.where(same == 1, a_out[both] ^ flips, rand_out).astype(np.uint8)

    # pairs where only Bob's photon survives
    b_only_t = _piecewise_times(rng, n_rate * (1.0 - plan.eta_a) * eta_b, edges)
    b_bg_t = _uniform_times(rng, plan.bob_background_rate * 1e-9, t0, t1)
    b_dark_t = _uniform_times(rng, plan.bob_dark_rate * 1e-9, t0, t1)
    a_dark_t = _uniform_times(rng, plan.alice_dark_rate * 1e-9, t0, t1)

    n_unc_b = b_only_t.size + b_bg_t.size + b_dark_t.size
    unc_b = rng.integers(0, 4, size=n_unc_b, dtype=np.uint8)
    unc_a = rng.integers(0, 4, size=a_dark_t.size, dtype=np.uint8)

    jit = plan.jitter_ns
    a_sig_j = _jitter(rng, a_sig, jit, t0, t1)
    b_both_j = _jitter(rng, b_both_t, jit, t0, t1)

    alice = _assemble(
        "alice",
        [a_sig_j, _jitter(rng, a_dark_t, jit, t0, t1)],
        [a_basis, unc_a & 1],
        [a_out, unc_a >> 1],
        [SIGNAL, DARK],
        t0, t1,
    )
    bob = _assemble(
        "bob",
        [b_both_j, _jitter(rng, b_only_t, jit, t0, t1), b_bg_t, b_dark_t],
        [b_both_basis, unc_b & 1],
        [b_both_out, unc_b >> 1],
        [SIGNAL, SIGNAL, BACKGROUND, DARK],
        t0, t1,
    )
    return alice, bob


def _assemble(party, times, bases, outcomes, kinds, t0, t1):
    ts = np.concatenate(times)
    basis = np.concatenate(bases)
    outcome = np.concatenate(outcomes)
    kind = np.concatenate([np.full(t.size, k, dtype=np.uint8) for t, k in zip(times, kinds)])
    ts_int = np.floor(ts).astype(np.int64)
    if any(t.size for t in times[1:]) or not _is_sorted(ts_int):
        order = np.argsort(ts_int, kind="stable")
        ts_int, basis, outcome, kind = ts_int[order], basis[order], outcome[order], kind[order]
    return TimeTagStream(party, ts_int, basis, outcome, int(t0), int(t1), kind)


def _is_sorted(a):
    return a.size < 2 or bool(np.all(a[1:] >= a[:-1]))


def _chunk_rng(seed, k):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(k,)))


def _iter_plan(plan, seed, chunk_duration):
    chunk_ns = seconds_to_ns(chunk_duration)
    for k, t0 in enumerate(range(0, plan.duration_ns, chunk_ns)):
        t1 = min(t0 + chunk_ns, plan.duration_ns)
        yield _simulate_chunk(plan, _chunk_rng(seed, k), t0, t1)


def _link_plan(source, dev, bg, trace, jitter_ns):
    if not isinstance(trace, TransmissionTrace):
        raise TypeError("trace must be a TransmissionTrace")
    check_positive(jitter_ns, "jitter_ns", allow_zero=True)
    return _LinkPlan(
        source=source,
        eta_a=dev.eta_a,
        eta_b_dev=dev.eta_b,
        trace_etas=trace.etas,
        trace_block_ns=trace.block_duration * 1e9,
        bob_background_rate=bg.bob_background_rate,
        alice_dark_rate=bg.alice_dark_rate,
        bob_dark_rate=bg.bob_dark_rate,
        jitter_ns=float(jitter_ns),
        duration_ns=seconds_to_ns(trace.duration),
    )


def iter_link_experiment(source, dev, bg, trace, seed, *, chunk_duration=1.0, jitter_ns=0.0):
    """Yield ``(alice, bob)`` stream chunks covering the whole trace.

    Bob's per-pair survival in trace block ``i`` is ``eta_B_dev * trace.etas[i]``;
    he also records background light at ``bg.bob_background_rate``.
    """
    yield from _iter_plan(_link_plan(source, dev, bg, trace, jitter_ns), seed, chunk_duration)


def simulate_link_experiment(source, dev, bg, trace, seed, *, chunk_duration=1.0, jitter_ns=0.0):
    """Whole-run Alice and Bob streams across the fluctuating link."""
    chunks = list(iter_link_experiment(source, dev, bg, trace, seed,
                                       chunk_duration=chunk_duration, jitter_ns=jitter_ns))
    return (TimeTagStream.concat(c[0] for c in chunks),
            TimeTagStream.concat(c[1] for c in chunks))


def _local_plan(source, dev, bg, duration, jitter_ns):
    check_positive(duration, "duration")
    trace = sample_trace(Degenerate(1.0), 1, duration, seed=0)
    local_bg = BackgroundConfig(0.0, bg.alice_dark_rate, bg.bob_dark_rate)
    return _link_plan(source, dev, local_bg, trace, jitter_ns)


def iter_local_experiment(source, dev, bg, duration, seed, *, chunk_duration=1.0, jitter_ns=0.0):
    """Chunked variant of :func:`simulate_local_experiment`."""
    yield from _iter_plan(_local_plan(source, dev, bg, duration, jitter_ns), seed, chunk_duration)


def simulate_local_experiment(source, dev, bg, duration, seed, *, chunk_duration=1.0, jitter_ns=0.0):
    """Source and both analysers side by side: no atmosphere, no background light.

    Dark counts from ``bg`` are still generated; ``bob_background_rate`` is
    ignored because the receiver telescope is not in use.
    """
    chunks = list(iter_local_experiment(source, dev, bg, duration, seed,
                                        chunk_duration=chunk_duration, jitter_ns=jitter_ns))
    return (TimeTagStream.concat(c[0] for c in chunks),
            TimeTagStream.concat(c[1] for c in chunks))
