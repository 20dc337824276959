import numpy as np
import pytest

from d2dtoken import make_model
from d2dtoken.mos import MosParams, LinkQuality, benefit_from_mos


@pytest.fixture(scope="session")
def fig_model():
    """Four-type illustration instance: benefits 3..6, uniform traffic mix."""
    return make_model(
        benefits=[3.0, 4.0, 5.0, 6.0],
        stationary=[0.2, 0.2, 0.2, 0.2, 0.2],
        cost=1.0,
        discount=0.99,
        token_cap=20,
        p_recv=0.5,
        q_accept=0.5,
    )


@pytest.fixture(scope="session")
def realistic_model():
    """Video + elastic instance with MOS-derived benefits (natural log)."""
    params = MosParams()
    video = benefit_from_mos(
        params, LinkQuality(psnr=10, throughput=1500), LinkQuality(psnr=5, throughput=1000), "video"
    )
    elastic = benefit_from_mos(
        params, LinkQuality(psnr=10, throughput=1500), LinkQuality(psnr=5, throughput=1000), "elastic"
    )
    return make_model(
        benefits=[elastic, video],
        stationary=[0.3, 0.5, 0.2],
        cost=0.4,
        discount=0.99,
        token_cap=20,
        p_recv=0.8,
        q_accept=0.8,
        labels=["elastic", "video"],
    )


@pytest.fixture(scope="session")
def tiny_model():
    """Smallest interesting instance: one traffic type, one-token wallet."""
    return make_model(
        benefits=[3.0],
        stationary=[0.5, 0.5],
        cost=1.0,
        discount=0.5,
        token_cap=1,
        p_recv=0.5,
        q_accept=0.5,
    )


def random_instance(rng: np.random.Generator, max_types: int = 5, max_cap: int = 20):
    """Random valid instance from the family used by the structural suites."""
    n = int(rng.integers(1, max_types + 1))
    cap = int(rng.integers(1, max_cap + 1))
    raw = rng.uniform(0.2, 1.0, size=n + 1)
    stationary = raw / raw.sum()
    benefits = np.cumsum(rng.uniform(0.2, 2.0, size=n))
    return make_model(
        benefits=benefits.tolist(),
        stationary=stationary.tolist(),
        cost=float(rng.uniform(0.0, 2.0)),
        discount=float(rng.uniform(0.5, 0.999)),
        token_cap=cap,
        p_recv=float(rng.uniform(0.05, 0.95)),
        q_accept=float(rng.uniform(0.05, 0.95)),
    )


def small_random_instance(rng: np.random.Generator):
    """Random instance small enough for the brute-force oracle.

    Free states number (n_types + 1) * token_cap; kept at or below 12 so the
    policy enumeration stays quick.
    """
    while True:
        n = int(rng.integers(1, 4))
        cap = int(rng.integers(1, 7))
        if (n + 1) * cap <= 12:
            break
    raw = rng.uniform(0.2, 1.0, size=n + 1)
    stationary = raw / raw.sum()
    benefits = np.cumsum(rng.uniform(0.2, 2.0, size=n))
    return make_model(
        benefits=benefits.tolist(),
        stationary=stationary.tolist(),
        cost=float(rng.uniform(0.0, 2.0)),
        discount=float(rng.uniform(0.5, 0.98)),
        token_cap=cap,
        p_recv=float(rng.uniform(0.05, 0.95)),
        q_accept=float(rng.uniform(0.05, 0.95)),
    )
