import numpy as np
import pytest

from btcsense.liouvillian import (
    build_liouvillian,
    spectral_decomposition,
    steady_state,
)
from btcsense.qfi import build_correlation_model
from btcsense.spin import SpinSector, build_spin_operators


def match_multisets(a, b, atol):
    """Greedy nearest matching of two complex multisets (order-free)."""
    a = np.sort_complex(np.asarray(a))
    b = list(np.asarray(b))
    worst = 0.0
    for z in a:
        dist = [abs(z - w) for w in b]
        k = int(np.argmin(dist))
        worst = max(worst, dist[k])
        b.pop(k)
    assert worst <= atol, f"multiset mismatch: worst pair distance {worst:.3e}"
    return worst


@pytest.fixture(scope="session")
def spectral_bundle():
    """Cache of (lv, spectrum, rho_ss, ops, model) keyed by (N, omega)."""
    cache = {}

    def get(n, omega, kappa=1.0):
        key = (n, omega, kappa)
        if key not in cache:
            sector = SpinSector(n)
            ops = build_spin_operators(sector)
            lv = build_liouvillian(sector, omega, kappa)
            spec = spectral_decomposition(lv)
            rho_ss = steady_state(lv, check_unique=False)
            model = build_correlation_model(spec, rho_ss, ops.jx)
            cache[key] = (lv, spec, rho_ss, ops, model)
        return cache[key]

    return get
