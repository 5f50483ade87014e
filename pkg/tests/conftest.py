from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

from lifgibbs import _accel
from lifgibbs.params import NetworkParams, load_params

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def canonical():
    return load_params(FIXTURES / "canonical.cfg")


@pytest.fixture
def single():
    return load_params(FIXTURES / "single.cfg")


@pytest.fixture(params=_accel.available_backends())
def backend(request):
    return request.param


def random_params(rng, n=None, gamma=None):
    """A random admissible parameter set (moderate rates)."""
    n = int(rng.integers(1, 4)) if n is None else n
    return NetworkParams(
        rng.normal(0.0, 0.6, (n, n)),
        rng.normal(0.5, 0.5, n),
        float(rng.uniform(0.0, 0.9)) if gamma is None else gamma,
        float(rng.uniform(0.5, 2.0)),
        float(rng.uniform(0.3, 2.0)),
    )


finite = st.floats(-3.0, 3.0, allow_nan=False, allow_infinity=False)


@st.composite
def params_strategy(draw, max_neurons=3):
    n = draw(st.integers(1, max_neurons))
    w = draw(st.lists(finite, min_size=n * n, max_size=n * n))
    i = draw(st.lists(finite, min_size=n, max_size=n))
    gamma = draw(st.floats(0.0, 0.95))
    theta = draw(st.floats(0.1, 3.0))
    sigma = draw(st.floats(0.2, 3.0))
    return NetworkParams(np.reshape(w, (n, n)), i, gamma, theta, sigma)


def gis_maxent(features, targets, iters=200_000, tol=1e-14):
    """Generalized iterative scaling on an explicit finite state space.

    ``features`` is (states, L) 0/1; a slack feature makes row sums constant.
    """
    f = np.asarray(features, dtype=float)
    total = f.sum(axis=1).max()
    slack = total - f.sum(axis=1)
    full = np.column_stack([f, slack])
    goal = np.append(targets, total - np.sum(targets))
    lam = np.zeros(full.shape[1])
    for _ in range(iters):
        logp = full @ lam
        p = np.exp(logp - logp.max())
        p /= p.sum()
        got = p @ full
        if np.max(np.abs(got[:-1] - targets)) < tol:
            break
        lam += np.log(goal / got) / total
    # the slack multiplier is a shift along sum(f) + slack = total; fold it away
    return lam[:-1] - lam[-1]
