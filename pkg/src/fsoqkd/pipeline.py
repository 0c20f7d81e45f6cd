"""Config-driven runs behind the command-line subcommands.

Each function takes a loaded :class:`~fsoqkd.config.ExperimentConfig` and an
existing output directory, writes its artifacts there and returns a small
summary record.
"""

from __future__ import annotations

import json
import math
import os

import numpy as np

from .coincidence import accumulate_block_statistics
from .config import ConfigError
from .decoy import scan_sigma, write_scan_csv
from .events import (PartyEfficiency, SourceConfig, TimeTagStream, iter_link_experiment,
                     iter_local_experiment)
from .pdtc_estimation import device_efficiency_from_local, estimate_link_pdtc
from .satellite import PassScenario, evaluate_pass, write_pass_csv
from .snrf import (base_duration, rolling_threshold, summary_table, sweep_blocks,
                   write_json, write_summary_csv)

CALIBRATION_KEY = 1


def derived_seed(seed, key):
    return int(np.random.SeedSequence(seed, spawn_key=(key,)).generate_state(1)[0])


def clean_record(value):
    """JSON-safe copy: NaN and infinities become ``None``."""
    if isinstance(value, dict):
        return {k: clean_record(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [clean_record(v) for v in value]
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return v if math.isfinite(v) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def dump_json(record, path):
    write_json(clean_record(record), path)


def stream_chunks(cfg):
    """``(alice, bob)`` chunks from stream files if configured, else simulated."""
    sim = cfg.simulation()
    if sim["alice_stream"] or sim["bob_stream"]:
        if not (sim["alice_stream"] and sim["bob_stream"]):
            raise ConfigError("simulation.alice_stream", "alice_stream and bob_stream go together")
        a = TimeTagStream.read_csv(sim["alice_stream"], "alice")
        b = TimeTagStream.read_csv(sim["bob_stream"], "bob")
        return iter([(a, b)])
    kwargs = {"chunk_duration": float(sim["chunk_duration"]), "jitter_ns": float(sim["jitter_ns"])}
    if sim["mode"] == "local":
        return iter_local_experiment(cfg.source(), cfg.devices(), cfg.background(),
                                     cfg.duration, cfg.seed, **kwargs)
    return iter_link_experiment(cfg.source(), cfg.devices(), cfg.background(),
                                cfg.trace(), cfg.seed, **kwargs)


def run_simulate(cfg, out, debug_truth=False):
    sim = cfg.simulation()
    if sim["mode"] == "link":
        cfg.trace().to_csv(os.path.join(out, "trace.csv"))
    n_a = n_b = 0
    stop = 0
    with open(os.path.join(out, "alice.csv"), "w", newline="") as fa, \
            open(os.path.join(out, "bob.csv"), "w", newline="") as fb:
        for k, (a, b) in enumerate(stream_chunks(cfg)):
            a.write_csv(fa, debug_truth, header=(k == 0))
            b.write_csv(fb, debug_truth, header=(k == 0))
            n_a += len(a)
            n_b += len(b)
            stop = b.stop_ns
    record = {"mode": sim["mode"], "seed": cfg.seed, "duration_ns": stop,
              "alice_events": n_a, "bob_events": n_b}
    dump_json(record, os.path.join(out, "run.json"))
    return record


def _calibrate(cfg):
    p = cfg.section("pdtc")
    if p["eta_b_device"] is not None:
        return float(p["eta_b_device"])
    chunks = iter_local_experiment(cfg.source(), cfg.devices(), cfg.background(),
                                   float(p["calibration_duration"]),
                                   derived_seed(cfg.seed, CALIBRATION_KEY))
    return device_efficiency_from_local(
        accumulate_block_statistics(chunks, float(p["block_duration"]), cfg.coincidence()))


def run_pdtc(cfg, out):
    p = cfg.section("pdtc")
    eta_dev = _calibrate(cfg)
    stats = accumulate_block_statistics(stream_chunks(cfg), float(p["block_duration"]),
                                        cfg.coincidence())
    est = estimate_link_pdtc(stats, eta_dev, int(p["n_bins"]), bool(p["subtract_accidentals"]))
    est.model.to_csv(os.path.join(out, "pdtc_histogram.csv"))
    with open(os.path.join(out, "pdtc_blocks.csv"), "w") as fh:
        fh.write("block_index,eta\n")
        for i, eta in zip(est.block_index.tolist(), est.etas.tolist()):
            fh.write(f"{i},{eta!r}\n")
    n_pos = int(np.count_nonzero(est.etas))
    sigma, mean = est.lognormal_fit() if n_pos > 1 else (math.nan, math.nan)
    record = {"eta_b_device": eta_dev, "blocks": int(est.etas.size), "skipped_blocks": est.skipped,
              "zero_blocks": int(est.etas.size - n_pos), "fit_sigma": sigma, "fit_mean": mean,
              "mean_eta": float(est.etas.mean())}
    dump_json(record, os.path.join(out, "pdtc_summary.json"))
    return record


def _thresholds(cfg):
    t = cfg.section("snrf")["thresholds_cps"]
    if t is None:
        return None
    if not isinstance(t, list) or not t:
        raise ConfigError("snrf.thresholds_cps", "expected a non-empty list or null")
    return np.array([float(v) for v in t])


def run_snrf_sweep(cfg, out, threads=1):
    s = cfg.section("snrf")
    durations = cfg.durations("snrf")
    ec = cfg.error_correction()
    base_d, _ = base_duration(durations)
    base = accumulate_block_statistics(stream_chunks(cfg), base_d, cfg.coincidence())
    thresholds = _thresholds(cfg)
    if thresholds is None and s["mode"] == "singles":
        mean_rate = base.n_b.sum() / base.total_duration
        thresholds = np.linspace(0.0, 2.0 * mean_rate, int(s["n_thresholds"]))
    try:
        res = sweep_blocks(base, durations, thresholds, ec, s["mode"], s["background_rate"], threads)
    except ValueError as exc:
        raise ConfigError("snrf", str(exc)) from None
    res.to_csv(os.path.join(out, "sweep.csv"))
    d, thr, _ = res.optimum
    blocks = base.coarsen(int(round(d / base_d)))
    blocks.to_csv(os.path.join(out, "blocks_optimum.csv"))
    rows = summary_table(blocks, thr, ec, s["mode"], s["background_rate"])
    write_summary_csv(rows, os.path.join(out, "summary.csv"))
    record = res.optimum_record()
    record["max_bob_rate"] = float(np.max(blocks.bob_rate))
    record["table"] = [r.__dict__ for r in rows]
    if s["window_blocks"] is not None:
        roll = rolling_threshold(blocks, int(s["window_blocks"]), ec)
        record["rolling_secret_bits"] = roll.secret_bits
        record["rolling_thresholds"] = roll.thresholds.tolist()
    dump_json(record, os.path.join(out, "optimum.json"))
    return record


def run_decoy_scan(cfg, out):
    d = cfg.section("decoy")
    rows = scan_sigma(cfg.decoy_params(), [float(x) for x in d["mean_losses_db"]],
                      [float(x) for x in d["sigmas"]])
    write_scan_csv(rows, os.path.join(out, "decoy_scan.csv"))
    return {"points": len(rows)}


def scenario_from_config(cfg):
    s = cfg.section("satellite")
    try:
        return PassScenario(
            entries=tuple(cfg.satellite_entries()),
            source=SourceConfig(float(s["pair_rate"]), float(s["intrinsic_qber"])),
            alice_efficiency=float(s["alice_efficiency"]),
            bob=PartyEfficiency(**cfg.section("devices")["bob"]),
            sample_duration=float(s["sample_duration"]),
            trace_block_duration=float(s["trace_block_duration"]),
            chunk_duration=float(s["chunk_duration"]),
            durations=cfg.durations("satellite"),
        )
    except (ValueError, TypeError) as exc:
        raise ConfigError("satellite", str(exc)) from None


def run_satellite(cfg, out):
    rows = evaluate_pass(scenario_from_config(cfg), (False, True), cfg.coincidence(),
                         cfg.error_correction(), cfg.seed)
    write_pass_csv(rows, os.path.join(out, "satellite.csv"))
    return {"rows": len(rows)}
