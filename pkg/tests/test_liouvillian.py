import numpy as np
import pytest

from btcsense.errors import InvalidParameterError, NonUniqueSteadyStateError
from btcsense.liouvillian import (
    build_liouvillian,
    build_superspin,
    extreme_limit_eigenvalues,
    extreme_limit_generator,
    liouvillian_gap,
    propagate,
    spectral_decomposition,
    steady_state,
    unvec,
    vec,
)
from btcsense.spin import (
    SpinSector,
    build_spin_operators,
    dark_state,
    maximally_mixed,
    trace_distance,
)
from conftest import match_multisets


def test_invalid_parameters():
    with pytest.raises(InvalidParameterError):
        build_liouvillian(SpinSector(2), 1.0, 0.0)
    with pytest.raises(InvalidParameterError):
        build_liouvillian(SpinSector(2), -1.0, 1.0)


def test_n1_undriven_eigenvalues():
    # populations relax at 2 kappa / N = 2, coherences at half that
    lv = build_liouvillian(SpinSector(1), 0.0, 1.0)
    evals = np.linalg.eigvals(lv.dense)
    match_multisets(evals, [0.0, -1.0, -1.0, -2.0], atol=1e-12)


def test_undriven_steady_state_is_dark():
    for n in (1, 3, 6):
        lv = build_liouvillian(SpinSector(n), 0.0, 1.0)
        rho = steady_state(lv, check_unique=False)
        assert trace_distance(rho, dark_state(SpinSector(n))) < 1e-10


def test_trace_and_hermiticity_preservation():
    rng = np.random.default_rng(3)
    lv = build_liouvillian(SpinSector(5), 2.0, 1.0)
    d = 6
    ident = vec(np.eye(d, dtype=complex))
    assert np.abs(ident.conj() @ lv.dense).max() < 1e-12
    for _ in range(100):
        x = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
        x = x + x.conj().T
        lx = unvec(lv.sparse @ vec(x))
        assert abs(np.trace(lx)) < 1e-10
        assert np.abs(lx - lx.conj().T).max() < 1e-10


def test_spectrum_real_parts_non_positive():
    for omega in (0.0, 0.5, 4.0):
        lv = build_liouvillian(SpinSector(6), omega, 1.0)
        evals = np.linalg.eigvals(lv.dense)
        assert evals.real.max() < 1e-10


@pytest.mark.parametrize("omega", [0.5, 1.0, 4.0])
def test_unique_steady_state(omega):
    for n in (2, 10, 30):
        lv = build_liouvillian(SpinSector(n), omega, 1.0)
        spec = spectral_decomposition(lv)
        near_null = np.sum(np.abs(spec.eigenvalues) < 1e-8)
        assert near_null == 1


def test_steady_state_contract():
    lv = build_liouvillian(SpinSector(10), 4.0, 1.0)
    rho = steady_state(lv)
    assert np.linalg.norm(lv.sparse @ vec(rho)) < 1e-10
    assert np.linalg.eigvalsh(rho).min() > -1e-12
    assert np.trace(rho).real == pytest.approx(1.0, abs=1e-12)


def test_strong_drive_steady_state_near_mixed():
    lv = build_liouvillian(SpinSector(6), 1e3, 1.0)
    rho = steady_state(lv, check_unique=False)
    assert trace_distance(rho, maximally_mixed(SpinSector(6))) < 0.05


def test_degenerate_null_space_detected():
    # a zeroed generator leaves every state stationary
    lv = build_liouvillian(SpinSector(2), 0.0, 1.0)
    lv.sparse = lv.sparse * 0.0
    lv._dense = None
    with pytest.raises(NonUniqueSteadyStateError):
        steady_state(lv, check_unique=True)


def test_biorthonormality_n1():
    lv = build_liouvillian(SpinSector(1), 0.0, 1.0)
    spec = spectral_decomposition(lv)
    gram = spec.left.conj().T @ spec.right
    assert np.abs(gram - np.eye(4)).max() < 1e-8


def test_biorthonormality_driven():
    lv = build_liouvillian(SpinSector(5), 4.0, 1.0)
    spec = spectral_decomposition(lv)
    gram = spec.left.conj().T @ spec.right
    assert np.abs(gram - np.eye(spec.n_modes)).max() < 1e-7
    assert spec.reconstruction_residual < 1e-10


def test_eigenvalues_closed_under_conjugation():
    lv = build_liouvillian(SpinSector(6), 4.0, 1.0)
    spec = spectral_decomposition(lv)
    match_multisets(spec.eigenvalues, spec.eigenvalues.conj(), atol=1e-9)


def test_spectrum_sorting_deterministic():
    lv = build_liouvillian(SpinSector(4), 1.0, 1.0)
    a = spectral_decomposition(lv).eigenvalues
    b = spectral_decomposition(lv).eigenvalues
    assert np.array_equal(a, b)
    assert np.all(np.diff(np.abs(a.real)) > -1e-12)


def test_strong_drive_slow_mode_matches_closed_form():
    # eigenvalue nearest -kappa/N on the real axis, relative error O(kappa/omega)
    lv = build_liouvillian(SpinSector(4), 1e3, 1.0)
    evals = np.linalg.eigvals(lv.dense)
    real_axis = evals[np.abs(evals.imag) < 1e-3]
    closest = real_axis[np.argmin(np.abs(real_axis.real + 0.25))]
    assert abs(closest.real + 0.25) / 0.25 < 1e-2


def test_extreme_limit_eigenvalues_exact():
    for n in range(1, 7):
        lv = extreme_limit_generator(SpinSector(n), 1e3, 1.0)
        evals = np.linalg.eigvals(lv.dense)
        ref = extreme_limit_eigenvalues(n, 1e3, 1.0)
        assert evals.size == (n + 1) ** 2
        match_multisets(evals, ref, atol=1e-9)


def test_extreme_limit_low_lying_agreement():
    # low-lying modes of the full generator approach the closed form at
    # large drive; deviation is reported, not asserted to an order
    n, omega = 4, 1e4
    full = np.linalg.eigvals(build_liouvillian(SpinSector(n), omega, 1.0).dense)
    ref = extreme_limit_eigenvalues(n, omega, 1.0)
    slow_ref = ref[np.abs(ref.real) < 1.0]
    for lam in slow_ref:
        err = np.abs(full - lam).min()
        assert err < 1e-2 * max(1.0, abs(lam))


def test_superspin_identities():
    for n in (1, 2, 3, 6):
        ss = build_superspin(SpinSector(n))
        ops = build_spin_operators(SpinSector(n))
        jxv = vec(ops.jx)
        assert np.abs(ss.sx @ jxv).max() == 0.0
        assert np.abs(ss.s_sq @ jxv - 2.0 * jxv).max() < 1e-12
        s_sq = ss.s_sq.toarray()
        assert np.abs(s_sq - s_sq.conj().T).max() < 1e-12


def test_superspin_casimir_spectrum():
    # S^2 eigenvalues are s(s+1) for integer s <= N, each s appearing 2s+1 times
    for n in (2, 4, 6):
        ss = build_superspin(SpinSector(n))
        evals = np.sort(np.linalg.eigvalsh(ss.s_sq.toarray()))
        expected = np.sort(
            [s * (s + 1) for s in range(n + 1) for _ in range(2 * s + 1)]
        )
        assert np.abs(evals - expected).max() < 1e-9


def test_extreme_generator_steady_mode():
    lv = extreme_limit_generator(SpinSector(3), 7.7, 1.0)
    evals = np.linalg.eigvals(lv.dense)
    assert np.abs(evals).min() < 1e-12


def test_propagate_matches_eigenexpansion():
    sec = SpinSector(3)
    lv = build_liouvillian(sec, 2.0, 1.0)
    rho0 = dark_state(sec)
    rho_t = propagate(lv, rho0, 1.7)
    spec = spectral_decomposition(lv)
    coeff = spec.left.conj().T @ vec(rho0)
    rebuilt = unvec(spec.right @ (np.exp(spec.eigenvalues * 1.7) * coeff))
    assert np.abs(rho_t - rebuilt).max() < 1e-8


def test_liouvillian_gap():
    lv = build_liouvillian(SpinSector(1), 0.0, 1.0)
    assert liouvillian_gap(lv) == pytest.approx(1.0, rel=1e-8)


@pytest.mark.slow
def test_iterative_slow_modes_beyond_cap():
    # force the iterative path and compare the slowest decay rates against a
    # dense solve of the same generator
    lv = build_liouvillian(SpinSector(10), 4.0, 1.0)
    dense = spectral_decomposition(lv)
    part = spectral_decomposition(lv, dense_cap=10, n_modes=12)
    assert not part.complete
    slow_dense = np.sort(np.abs(dense.eigenvalues.real))[:8]
    slow_part = np.sort(np.abs(part.eigenvalues.real))[:8]
    assert np.abs(slow_dense - slow_part).max() < 1e-7
    gram = part.left.conj().T @ part.right
    assert np.abs(gram - np.eye(part.n_modes)).max() < 1e-6
