import sys

import numpy as np
import pytest
from scipy.stats import unitary_group

from qdelay.mps import SiteLabel, VidalChain


def haar_unitary(dim: int, seed: int) -> np.ndarray:
    return unitary_group.rvs(dim, random_state=seed)


def random_chain(dims, seed=0, d_max=256, system_at=0, layers=3) -> VidalChain:
    """Entangled chain obtained from a product state by brickwork random unitaries."""
    rng = np.random.default_rng(seed)
    states = []
    for d in dims:
        v = rng.normal(size=d) + 1j * rng.normal(size=d)
        states.append(v / np.linalg.norm(v))
    labels = [SiteLabel.time_bin(i) for i in range(len(dims))]
    labels[system_at] = SiteLabel.system()
    chain = VidalChain.product_state(states, labels, d_max=d_max)
    k = 0
    for layer in range(layers):
        for i in range(layer % 2, len(dims) - 1, 2):
            chain.apply_gate(i, haar_unitary(dims[i] * dims[i + 1], seed * 1000 + k))
            k += 1
    return chain


def apply_dense(psi: np.ndarray, dims, first: int, width: int, u: np.ndarray) -> np.ndarray:
    """Apply ``u`` to sites ``first .. first+width-1`` of a dense vector (oracle)."""
    t = psi.reshape(dims)
    win = list(range(first, first + width))
    wdims = [dims[i] for i in win]
    ut = u.reshape(wdims + wdims)
    out = np.tensordot(ut, t, axes=(list(range(width, 2 * width)), win))
    return np.moveaxis(out, list(range(width)), win).reshape(-1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("tests.test_acceptance") or sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
