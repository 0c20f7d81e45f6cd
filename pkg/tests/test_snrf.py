import csv
import math

import numpy as np
import pytest
from sklearn.base import clone

from fsoqkd.channel_models import Degenerate, LogNormal, sample_trace
from fsoqkd.coincidence import BlockStats, block_statistics, qber
from fsoqkd.events import (BackgroundConfig, DeviceEfficiencies, PartyEfficiency, SourceConfig,
                           iter_link_experiment, simulate_link_experiment)
from fsoqkd.keyrate import secret_key_from_blocks
from fsoqkd.snrf import (SnrFilter, SnrfConfig, SweepResult, apply_snrf, base_duration,
                         best_threshold, default_thresholds, keep_mask, rolling_threshold,
                         summary_table, sweep, sweep_blocks, sweep_chunks, write_summary_csv)

from conftest import synthetic_blocks


def _turbulent(n=6000, sigma=1.8, background=2700.0, seed=0, **kw):
    tr = sample_trace(LogNormal(sigma, 1e-3), n, 0.01, seed=seed)
    return synthetic_blocks(tr.etas, background=background, seed=seed + 1, **kw)


def _reindex(blocks):
    n = len(blocks)
    return BlockStats(blocks.block_duration, np.arange(n), blocks.duration, blocks.n_a, blocks.n_b,
                      blocks.n_coin, blocks.n_acc, blocks.sifted_z, blocks.sifted_x,
                      blocks.err_z, blocks.err_x)


def test_config_validation():
    with pytest.raises(ValueError):
        SnrfConfig(0.0)
    with pytest.raises(ValueError):
        SnrfConfig(0.01, -1.0)
    with pytest.raises(ValueError):
        SnrfConfig(0.01, 1.0, mode="snr")
    with pytest.raises(ValueError):
        SnrfConfig(0.01, 1.0, mode="other")


def test_threshold_zero_keeps_everything():
    b = _turbulent(500)
    kept, rejected = apply_snrf(b, SnrfConfig(0.01, 0.0))
    assert len(kept) == len(b) and len(rejected) == 0
    assert secret_key_from_blocks(kept) == secret_key_from_blocks(b)


def test_threshold_above_max_rejects_everything():
    b = _turbulent(500)
    kept, rejected = apply_snrf(b, SnrfConfig(0.01, float(b.bob_rate.max()) + 1))
    assert len(kept) == 0 and len(rejected) == len(b)


def test_boundary_is_inclusive():
    b = _turbulent(200)
    t = float(b.bob_rate[17])
    assert keep_mask(b, SnrfConfig(0.01, t))[17]


def test_duration_mismatch_rejected():
    with pytest.raises(ValueError):
        apply_snrf(_turbulent(100), SnrfConfig(0.02, 0.0))


def test_partition_conserves_counts():
    b = _turbulent(1000)
    kept, rejected = apply_snrf(b, SnrfConfig(0.01, float(np.median(b.bob_rate))))
    for col in ("n_a", "n_b", "n_coin", "sifted_z", "err_x"):
        assert getattr(kept, col).sum() + getattr(rejected, col).sum() == getattr(b, col).sum()
    assert not set(kept.block_index) & set(rejected.block_index)


def test_rejected_blocks_have_higher_qber():
    b = _turbulent(6000)
    thr, _ = best_threshold(b)
    kept, rejected = apply_snrf(b, SnrfConfig(0.01, thr))
    assert qber(rejected)[0] > qber(kept)[0]


def test_kept_sifted_nonincreasing_and_qber_mostly_nonincreasing():
    # background is the only error source and dominates the signal; with weaker
    # background the flat tail of the curve shows noise-level rises more often
    b = _turbulent(18_000, background=3e5, intrinsic=0.0)
    thresholds = default_thresholds(b)
    sifted, q = [], []
    for t in thresholds:
        kept, _ = apply_snrf(b, SnrfConfig(0.01, t))
        if len(kept) == 0 or kept.sifted.sum() == 0:
            break
        sifted.append(kept.sifted.sum())
        q.append(qber(kept)[0])
    assert all(x >= y for x, y in zip(sifted, sifted[1:]))
    steps = np.diff(q)
    assert np.mean(steps <= 0) >= 0.95


def test_snr_mode_equivalent_to_rescaled_singles():
    bg = 2700.0
    b = _turbulent(2000)
    for snr in (0.0, 0.5, 3.0, 20.0):
        a = keep_mask(b, SnrfConfig(0.01, snr, "snr", bg))
        s = keep_mask(b, SnrfConfig(0.01, bg * (1 + snr)))
        assert np.array_equal(a, s)
    grid_snr = sweep_blocks(b, [0.01, 0.02], [0.0, 1.0, 5.0], mode="snr", background_rate=bg)
    grid_s = sweep_blocks(b, [0.01, 0.02], [bg, 2 * bg, 6 * bg])
    assert np.array_equal(grid_snr.secret_bits[:, 1:], grid_s.secret_bits[:, 1:])
    with pytest.raises(ValueError):
        sweep_blocks(b, [0.01], None, mode="snr", background_rate=bg)


def test_sweep_grid_contract():
    b = _turbulent(6000)
    res = sweep_blocks(b, [0.01, 0.02, 0.05])
    assert res.secret_bits.shape == (3, 41)
    assert np.all(res.secret_bits[:, 0] == res.unfiltered_secret_bits)
    d, t, bits = res.optimum
    i = [0.01, 0.02, 0.05].index(d)
    j = int(np.flatnonzero(res.thresholds == t)[0])
    assert bits == res.secret_bits.max() == res.secret_bits[i, j]
    assert res.gain >= 1.0
    with pytest.raises(ValueError):
        sweep_blocks(b, [0.015])
    with pytest.raises(ValueError):
        sweep_blocks(b, [])


def test_sweep_matches_direct_recomputation():
    b = _turbulent(3000)
    res = sweep_blocks(b, [0.01, 0.03], [0.0, 1e4, 3e4])
    coarse = b.coarsen(3)
    for j, t in enumerate(res.thresholds):
        kept, _ = apply_snrf(coarse, SnrfConfig(0.03, t))
        expect = secret_key_from_blocks(kept).secret_bits if len(kept) else 0.0
        assert res.secret_bits[1, j] == pytest.approx(expect, rel=1e-12)


def test_optimum_tie_break():
    grid = np.array([[1.0, 3.0, 3.0], [3.0, 3.0, 2.0]])
    res = SweepResult(np.array([0.01, 0.02]), np.array([0.0, 5.0, 9.0]), grid, 1.0)
    assert res.optimum == (0.01, 5.0, 3.0)
    with pytest.raises(ValueError):
        SweepResult(np.array([0.01]), np.array([0.0, 5.0]), grid, 1.0)


def test_optimum_record_readouts():
    res = SweepResult(np.array([0.03]), np.array([0.0, 95_000.0]), np.array([[1.0, 2.0]]), 1.0)
    rec = res.optimum_record()
    assert rec["duration_ms"] == 30.0
    assert rec["threshold"] == 95_000.0
    assert rec["threshold_counts_per_block"] == pytest.approx(2850.0)
    assert rec["gain"] == 2.0


def test_sweep_csv(tmp_path):
    res = sweep_blocks(_turbulent(600), [0.01, 0.02], [0.0, 1e4])
    res.to_csv(tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["duration_ms", "threshold_cps", "secret_bits"]
    assert [r[0] for r in rows[1:]] == ["10", "10", "20", "20"]


def test_threads_do_not_change_the_grid():
    b = _turbulent(3000)
    one = sweep_blocks(b, [0.01, 0.02, 0.03, 0.05], threads=1)
    four = sweep_blocks(b, [0.01, 0.02, 0.03, 0.05], threads=4)
    assert one.secret_bits.tobytes() == four.secret_bits.tobytes()


def test_base_duration_is_gcd():
    d, ns = base_duration([0.005, 0.01, 0.02, 0.03, 0.05, 0.1])
    assert d == pytest.approx(0.005) and ns[3] == 30_000_000
    assert base_duration([0.02, 0.03])[0] == pytest.approx(0.01)


def _link_streams(model, background, seconds, seed):
    tr = sample_trace(model, int(round(seconds / 0.01)), 0.01, seed=seed)
    dev = DeviceEfficiencies(PartyEfficiency(detector=1.0), PartyEfficiency(detector=0.2))
    args = (SourceConfig(1e6, 0.0234), dev, BackgroundConfig(background), tr, seed + 1)
    return args


def test_stream_sweep_equals_block_sweep_and_chunked():
    args = _link_streams(LogNormal(1.8, 0.01), 2700.0, 4.0, seed=3)
    a, b = simulate_link_experiment(*args, chunk_duration=1.0)
    durations = [0.01, 0.02, 0.05]
    direct = sweep(a, b, durations, [0.0, 1e3, 5e3])
    chunked = sweep_chunks(iter_link_experiment(*args, chunk_duration=1.0), durations, [0.0, 1e3, 5e3])
    manual = sweep_blocks(block_statistics(a, b, 0.01), durations, [0.0, 1e3, 5e3])
    assert np.array_equal(direct.secret_bits, manual.secret_bits)
    # chunk edges can only drop accidental pairs straddling them
    assert np.allclose(direct.secret_bits, chunked.secret_bits, rtol=1e-3)


def test_static_channel_no_spurious_gain():
    args = _link_streams(Degenerate(0.01), 0.0, 20.0, seed=4)
    a, b = simulate_link_experiment(*args, chunk_duration=5.0)
    res = sweep(a, b, [0.01, 0.05, 0.1])
    assert res.optimum[2] <= res.unfiltered_secret_bits * 1.01
    # near-flat well below the operating rate; only Poisson-low blocks get cut
    bits_below_rate = res.secret_bits[:, res.thresholds < 0.5 * b.rate]
    assert np.all(np.abs(bits_below_rate / res.unfiltered_secret_bits - 1) < 0.01)


def test_summary_table(tmp_path):
    b = _turbulent(6000)
    thr, _ = best_threshold(b)
    rows = summary_table(b, thr)
    assert [r.scenario for r in rows] == ["no SNRF", "above SNRF", "below SNRF"]
    assert rows[0].sifted == rows[1].sifted + rows[2].sifted
    assert rows[0].raw == rows[1].raw + rows[2].raw
    assert rows[2].qber > rows[1].qber
    write_summary_csv(rows, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "scenario,raw,sifted,secret,f,QBER"
    assert len(lines) == 4
    empty = summary_table(b, 0.0)
    assert empty[2].sifted == 0 and math.isnan(empty[2].qber)


def test_rolling_window_validation():
    with pytest.raises(ValueError):
        rolling_threshold(_turbulent(100), 9)


def test_rolling_whole_run_equals_global():
    b = _turbulent(2000)
    roll = rolling_threshold(b, len(b))
    thr, bits = best_threshold(b)
    assert roll.thresholds.tolist() == [thr]
    assert roll.secret_bits == pytest.approx(bits, rel=1e-12)


def test_rolling_stationary_close_to_global():
    b = _turbulent(18_000, seed=5)
    _, best = best_threshold(b)
    roll = rolling_threshold(b, 1000)
    assert roll.secret_bits >= 0.9 * best


def test_rolling_adapts_to_background_step():
    first = _turbulent(6000, background=2700.0, seed=7)
    second = _turbulent(6000, background=27_000.0, seed=9)
    blocks = _reindex(BlockStats.concat([first, second]))
    fixed_thr, _ = best_threshold(first)
    kept, _ = apply_snrf(blocks, SnrfConfig(0.01, fixed_thr))
    fixed_bits = secret_key_from_blocks(kept).secret_bits
    # no single threshold tuned on the first half does as well as re-tuning
    best_fixed = max(
        secret_key_from_blocks(k).secret_bits if len(k) else 0.0
        for k in (apply_snrf(blocks, SnrfConfig(0.01, t))[0] for t in default_thresholds(first))
    )
    roll = rolling_threshold(blocks, 1000)
    assert roll.secret_bits > fixed_bits
    assert roll.secret_bits > best_fixed
    assert roll.thresholds[-1] > roll.thresholds[0]


def test_estimator_api():
    b = _turbulent(4000)
    f = SnrFilter(block_duration=0.01)
    assert set(f.get_params()) == {"block_duration", "thresholds", "mode", "background_rate", "ec"}
    f.fit(b)
    thr, bits = best_threshold(b)
    assert f.threshold_ == thr and f.secret_bits_ == bits
    mask = f.predict(b)
    assert len(f.transform(b)) == mask.sum()
    assert f.score(b) == pytest.approx(bits)
    g = clone(f).set_params(mode="snr", background_rate=2700.0, thresholds=[0.0, 1.0, 4.0])
    g.fit(b)
    assert g.threshold_ in (0.0, 1.0, 4.0)
    with pytest.raises(ValueError):
        SnrFilter(block_duration=0.02).fit(b)
    with pytest.raises(ValueError):
        SnrFilter(block_duration=0.01, mode="snr", background_rate=2700.0).fit(b)
