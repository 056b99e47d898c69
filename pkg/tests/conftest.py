import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stoqlattice.circuit import RegisterLayout, random_circuit

settings.register_profile("pkg", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("pkg")


def small_circuits(count, seed=0, max_T=3, max_M=4, nearest_neighbour=False):
    """Deterministic random circuits with T <= max_T gates on M <= max_M qubits."""
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        M = int(rng.integers(2, max_M + 1))
        w = int(rng.integers(0, 2))
        p = 2 if M - w >= 3 and rng.random() < 0.4 else 0
        n = int(rng.integers(0, M - w - p + 1))
        m = M - n - w - p
        T = int(rng.integers(1, max_T + 1))
        lay = RegisterLayout(n, w, m, p)
        out.append(random_circuit(lay, T, rng, nearest_neighbour=nearest_neighbour))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
