import numpy as np
import pytest
from hypothesis import settings

# numba compiles on first call; per-example deadlines would time the JIT
settings.register_profile("default", deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_bits(rng, n, dim, p=0.5):
    return (rng.random((n, dim)) < p).astype(np.uint8)


def bits_to_int(row) -> int:
    """Independent packing oracle: bit d of the descriptor is bit d of a Python int."""
    return sum(int(b) << d for d, b in enumerate(row))


def random_bmm(rng, k, dim, lo=0.05, hi=0.95):
    from binagg.mixtures import BernoulliMixture

    w = rng.dirichlet(np.full(k, 2.0))
    return BernoulliMixture(w, rng.uniform(lo, hi, (k, dim)))


def random_gmm(rng, k, dim):
    from binagg.mixtures import GaussianMixture

    w = rng.dirichlet(np.full(k, 2.0))
    return GaussianMixture(w, rng.normal(0, 1, (k, dim)), rng.uniform(0.2, 2.0, (k, dim)))


def bmm_loglik_oracle(m, x) -> float:
    """Plain product-of-probabilities likelihood, no log-domain tricks."""
    total = 0.0
    for row in x:
        p = 0.0
        for k in range(m.k):
            p += m.weights[k] * np.prod(np.where(row == 1, m.means[k], 1 - m.means[k]))
        total += np.log(p)
    return total


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.format_line(number, title, ok, detail))
