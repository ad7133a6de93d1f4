import numpy as np
import pytest

from mobiusgcn.skeleton import SkeletonTopology, default_topology


@pytest.fixture(scope="session")
def topo():
    return default_topology()


def random_tree(rng, n):
    """Random labelled tree: node k attaches to a uniformly chosen earlier node."""
    edges = [(int(rng.integers(0, k)), k) for k in range(1, n)]
    return SkeletonTopology(tuple(f"j{k}" for k in range(n)), tuple(edges), 0)


def random_symmetric(rng, n):
    a = rng.uniform(-2, 2, size=(n, n))
    return (a + a.T) / 2


def central_difference(f, x, h=1e-6):
    """Gradient of scalar f at array x by central differences, entry by entry."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def assert_grad_close(analytic, numeric, rtol=1e-5, atol=1e-8):
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    err = np.abs(analytic - numeric)
    bound = rtol * np.maximum(np.abs(analytic), np.abs(numeric)) + atol
    worst = np.max(err - bound) if err.size else -1
    assert np.all(err <= bound), f"gradient mismatch, worst excess {worst:.3e}"
