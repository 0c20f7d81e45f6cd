import numpy as np
import pytest

from fsoqkd.coincidence import BlockStats

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("[")[1].split("]")[0])):
            terminalreporter.write_line(line)


def synthetic_blocks(etas, *, block=0.01, pair_rate=1e6, eta_dev=0.2, background=2700.0,
                     window=5e-9, intrinsic=0.02, seed=0):
    """Block counts drawn directly from their Poisson/binomial laws (no event streams)."""
    rng = np.random.default_rng(seed)
    etas = np.asarray(etas, dtype=float)
    n = etas.size
    n_a = rng.poisson(pair_rate * block, n)
    sig = rng.poisson(pair_rate * eta_dev * etas * block)
    acc_mean = pair_rate * background * window * block
    acc = rng.poisson(acc_mean, n)
    # the shifted-window estimate is an independent draw with the same mean
    n_acc = rng.poisson(acc_mean, n).astype(float)
    n_b = sig + rng.poisson(background * block, n)
    sig_s = rng.binomial(sig, 0.5)
    acc_s = rng.binomial(acc, 0.5)
    err = rng.binomial(sig_s, intrinsic) + rng.binomial(acc_s, 0.5)
    sifted = sig_s + acc_s
    sz = rng.binomial(sifted, 0.5)
    ez = np.minimum(rng.binomial(err, 0.5), sz)
    ex = np.minimum(err - ez, sifted - sz)
    return BlockStats(block, np.arange(n), np.full(n, block), n_a, n_b, sig + acc,
                      n_acc, sz, sifted - sz, ez, ex)


@pytest.fixture
def make_blocks():
    return synthetic_blocks
