"""Key rates across a low-earth-orbit pass, with and without the SNRF.

Each scenario entry is treated as quasi-static: a short stretch of
``sample_duration`` seconds is simulated at that entry's loss, turbulence
and background, and the resulting rate is scaled to bits per second and
bits per dwell time.  ``mean_loss_db`` is Bob's total loss (atmosphere and
receiver), so the atmospheric mean transmittance is
``10**(-loss/10) / eta_B_device``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from ._validation import check_positive, check_probability
from .channel_models import LogNormal, sample_trace
from .coincidence import CoincidenceConfig, accumulate_block_statistics
from .decoy import loss_db_to_eta
from .events import BackgroundConfig, DeviceEfficiencies, PartyEfficiency, SourceConfig, iter_link_experiment
from .keyrate import DEFAULT_EC, secret_key_from_blocks
from .snrf import DEFAULT_DURATIONS, SnrfConfig, apply_snrf, base_duration, sweep_blocks


@dataclass(frozen=True)
class PassEntry:
    elevation_deg: float
    mean_loss_db: float
    sigma: float
    background_rate: float
    dwell_time: float

    def __post_init__(self):
        if not 0 < self.elevation_deg <= 90:
            raise ValueError("elevation_deg must lie in (0, 90]")
        check_positive(self.mean_loss_db, "mean_loss_db")
        check_positive(self.sigma, "sigma")
        check_positive(self.background_rate, "background_rate", allow_zero=True)
        check_positive(self.dwell_time, "dwell_time")


@dataclass(frozen=True)
class PassScenario:
    """Pass entries plus the space-segment source and ground-station devices.

    ``bob`` is the ground receiver; Alice sits next to the source on the
    satellite, so only her own device efficiency applies to her.
    """

    entries: tuple
    source: SourceConfig = SourceConfig(1e8, 0.025)
    alice_efficiency: float = 0.8
    bob: PartyEfficiency = PartyEfficiency(0.5, 0.8, 0.5)
    sample_duration: float = 2.0
    trace_block_duration: float = 0.005
    chunk_duration: float = 0.1
    durations: tuple = DEFAULT_DURATIONS

    def __post_init__(self):
        entries = tuple(e if isinstance(e, PassEntry) else PassEntry(**e) for e in self.entries)
        if not entries:
            raise ValueError("a pass needs at least one entry")
        elev = [e.elevation_deg for e in entries]
        if any(b < a for a, b in zip(elev, elev[1:])):
            raise ValueError("entries must be sorted by elevation")
        object.__setattr__(self, "entries", entries)
        check_probability(self.alice_efficiency, "alice_efficiency", open_low=True)
        check_positive(self.sample_duration, "sample_duration")
        check_positive(self.trace_block_duration, "trace_block_duration")
        for e in entries:
            if loss_db_to_eta(e.mean_loss_db) > self.bob.total:
                raise ValueError(
                    f"entry at {e.elevation_deg} deg: total loss {e.mean_loss_db} dB is below "
                    f"the receiver's own loss"
                )

    @property
    def devices(self):
        return DeviceEfficiencies(PartyEfficiency(detector=self.alice_efficiency), self.bob)


@dataclass(frozen=True)
class PassResult:
    elevation_deg: float
    mode: str
    secret_bits_per_s: float
    qber: float
    unfloored_fraction: float
    secret_bits_per_pass: float
    sifted_count: int
    threshold: float = 0.0
    block_duration: float = math.nan


def _entry_blocks(scenario, entry, cc, seed):
    dev = scenario.devices
    mean_eta = loss_db_to_eta(entry.mean_loss_db) / dev.eta_b
    n_blocks = max(1, int(round(scenario.sample_duration / scenario.trace_block_duration)))
    trace = sample_trace(LogNormal(entry.sigma, mean_eta), n_blocks,
                         scenario.trace_block_duration, seed)
    chunks = iter_link_experiment(scenario.source, dev, BackgroundConfig(entry.background_rate),
                                  trace, seed, chunk_duration=scenario.chunk_duration)
    base_d, _ = base_duration(scenario.durations)
    return accumulate_block_statistics(chunks, base_d, cc)


def _entry_seed(seed, index):
    return int(np.random.SeedSequence(seed, spawn_key=(index,)).generate_state(1)[0])


def evaluate_entry(scenario, index, with_snrf=(False, True), cc=CoincidenceConfig(),
                   ec=DEFAULT_EC, seed=0):
    """Results for one entry; the simulation is shared by both modes."""
    entry = scenario.entries[index]
    base = _entry_blocks(scenario, entry, cc, _entry_seed(seed, index))
    span = base.total_duration
    out = []
    for filtered in with_snrf:
        if filtered:
            res = sweep_blocks(base, scenario.durations, ec=ec)
            dur, thr, _ = res.optimum
            blocks = base.coarsen(int(round(dur / base.block_duration)))
            kept, _ = apply_snrf(blocks, SnrfConfig(dur, thr))
        else:
            dur, thr, kept = base.block_duration, 0.0, base
        key = secret_key_from_blocks(kept, ec) if len(kept) else None
        bits = key.secret_bits if key else 0.0
        rate = bits / span
        out.append(PassResult(
            elevation_deg=entry.elevation_deg,
            mode="snrf" if filtered else "no_snrf",
            secret_bits_per_s=rate,
            qber=key.qber if key else math.nan,
            unfloored_fraction=key.secret_fraction if key else math.nan,
            secret_bits_per_pass=rate * entry.dwell_time,
            sifted_count=key.sifted_count if key else 0,
            threshold=thr,
            block_duration=dur,
        ))
    return out


def evaluate_pass(scenario, with_snrf, cc=CoincidenceConfig(), ec=DEFAULT_EC, seed=0):
    """Per-entry results in elevation order for one mode.

    ``with_snrf`` may be a bool or a tuple of bools to get both modes from
    one simulation per entry.
    """
    modes = tuple(with_snrf) if isinstance(with_snrf, (tuple, list)) else (bool(with_snrf),)
    rows = []
    for i in range(len(scenario.entries)):
        rows.extend(evaluate_entry(scenario, i, modes, cc, ec, seed))
    return rows


def write_pass_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["elevation_deg", "mode", "secret_bits_per_s", "qber",
                    "unfloored_fraction", "secret_bits_per_pass"])
        for r in rows:
            w.writerow([f"{r.elevation_deg:g}", r.mode, f"{r.secret_bits_per_s:.6g}",
                        f"{r.qber:.6f}", f"{r.unfloored_fraction:.6f}",
                        f"{r.secret_bits_per_pass:.6g}"])
