import numpy as np
import pytest

from btcsense.errors import (
    ConsistencyError,
    DivergentRateError,
    HorizonError,
    InvalidParameterError,
)
from btcsense.liouvillian import (
    build_liouvillian,
    extreme_limit_generator,
    spectral_decomposition,
    steady_state,
)
from btcsense.qfi import (
    analytic_fglobal,
    build_correlation_model,
    correlation_function,
    global_qfi_finite_T,
    global_rate_spectral,
    global_rate_time_integral,
    qfi_of_state,
    steady_state_derivative,
)
from btcsense.spin import SpinSector, build_spin_operators, dark_state


def extreme_bundle(n, omega=1e3, kappa=1.0):
    sector = SpinSector(n)
    ops = build_spin_operators(sector)
    lv = extreme_limit_generator(sector, omega, kappa)
    spec = spectral_decomposition(lv)
    rho_ss = steady_state(lv, check_unique=False)
    model = build_correlation_model(spec, rho_ss, ops.jx)
    return lv, spec, rho_ss, ops, model


# ---------------------------------------------------------------------------
# correlation function
# ---------------------------------------------------------------------------

def test_c0_extreme_limit():
    for n in (2, 5):
        lv, _, rho_ss, ops, model = extreme_bundle(n)
        c0 = correlation_function(lv, rho_ss, ops.jx, 0.0)
        assert c0 == pytest.approx(n * (n + 2) / 6.0, rel=1e-10)
        assert model.value_at_zero == pytest.approx(n * (n + 2) / 6.0, rel=1e-10)


def test_c0_undriven_dark_state():
    # C(0) with the dark steady state equals N/2
    for n in (1, 2, 6):
        sector = SpinSector(n)
        ops = build_spin_operators(sector)
        lv = build_liouvillian(sector, 0.0, 1.0)
        rho_ss = steady_state(lv, check_unique=False)
        c0 = correlation_function(lv, rho_ss, ops.jx, 0.0)
        assert c0 == pytest.approx(n / 2.0, rel=1e-10)


def test_correlation_even_and_decaying(spectral_bundle):
    lv, spec, rho_ss, ops, model = spectral_bundle(6, 4.0)
    c_plus = correlation_function(lv, rho_ss, ops.jx, 2.3)
    c_minus = correlation_function(lv, rho_ss, ops.jx, -2.3)
    assert c_plus == pytest.approx(c_minus, abs=1e-12)
    horizon = 10.0 * 6 / spec.gap
    assert abs(correlation_function(lv, rho_ss, ops.jx, horizon)) < 1e-6


def test_model_matches_direct_correlation(spectral_bundle):
    lv, spec, rho_ss, ops, model = spectral_bundle(8, 4.0)
    rng = np.random.default_rng(1)
    scale = abs(model.value_at_zero)
    for t in rng.uniform(0.0, 10.0, 20):
        direct = correlation_function(lv, rho_ss, ops.jx, t)
        assert model.evaluate(t) == pytest.approx(direct, abs=1e-6 * scale)


def test_model_needs_sine_terms(spectral_bundle):
    # away from the strong-drive limit the quadrature amplitudes are real
    # and non-negligible
    _, _, _, _, model = spectral_bundle(8, 4.0)
    assert np.abs(model.sine_amplitude).max() > 1e-4


def test_steady_mode_amplitude_vanishes(spectral_bundle):
    for args in [(6, 1.0), (8, 4.0)]:
        _, _, _, _, model = spectral_bundle(*args)
        assert model.steady_amplitude < 1e-10


def test_extreme_limit_single_mode():
    _, _, _, _, model = extreme_bundle(4)
    weights = np.hypot(model.amplitude, model.sine_amplitude)
    big = weights > 1e-10
    assert big.sum() == 1
    assert model.amplitude[big][0] == pytest.approx(4 * 6 / 12.0, rel=1e-10)


def test_model_c0_consistency_guard(spectral_bundle):
    _, spec, rho_ss, ops, _ = spectral_bundle(4, 1.0)
    with pytest.raises(ConsistencyError):
        build_correlation_model(spec, rho_ss, ops.jx, consistency_tol=1e-18)


# ---------------------------------------------------------------------------
# rates
# ---------------------------------------------------------------------------

def test_analytic_fglobal_values():
    assert analytic_fglobal(2, 1.0) == pytest.approx(32.0 / 3.0)
    assert analytic_fglobal(1, 2.0) == pytest.approx(1.0)
    ratio = analytic_fglobal(2000, 1.0) / analytic_fglobal(1000, 1.0)
    assert ratio == pytest.approx(8.0, rel=2e-3)
    with pytest.raises(InvalidParameterError):
        analytic_fglobal(0, 1.0)
    with pytest.raises(InvalidParameterError):
        analytic_fglobal(2, -1.0)


@pytest.mark.parametrize("n", [1, 2, 4, 8])
def test_extreme_limit_rate_closed_form(n):
    _, _, _, _, model = extreme_bundle(n)
    rate = global_rate_spectral(model)
    assert rate.value == pytest.approx(analytic_fglobal(n, 1.0), rel=1e-8)


def test_n2_extreme_rate_value():
    _, _, _, _, model = extreme_bundle(2)
    assert global_rate_spectral(model).value == pytest.approx(32.0 / 3.0, rel=1e-10)


def test_rate_at_strong_drive_near_closed_form(spectral_bundle):
    _, _, _, _, model = spectral_bundle(10, 100.0)
    rate = global_rate_spectral(model)
    assert rate.value == pytest.approx(analytic_fglobal(10, 1.0), rel=1e-2)


def test_divergent_rate_guard(spectral_bundle):
    _, _, _, _, model = spectral_bundle(4, 4.0)
    import copy

    bad = copy.deepcopy(model)
    bad.gamma = bad.gamma.copy()
    bad.gamma[np.argmax(np.abs(bad.amplitude))] = 0.0
    with pytest.raises(DivergentRateError):
        global_rate_spectral(bad)


def test_time_integral_agrees_with_spectral(spectral_bundle):
    for omega in (1.0, 4.0):
        lv, _, _, _, model = spectral_bundle(6, omega)
        spectral = global_rate_spectral(model).value
        integral = global_rate_time_integral(lv).value
        assert integral == pytest.approx(spectral, rel=1e-4)


def test_time_integral_extreme_limit():
    lv, *_ = extreme_bundle(4, omega=50.0)
    rate = global_rate_time_integral(lv)
    assert rate.value == pytest.approx(64.0, rel=1e-5)


def test_time_integral_horizon_guard(spectral_bundle):
    lv, *_ = spectral_bundle(6, 0.5)
    with pytest.raises(HorizonError):
        global_rate_time_integral(lv, horizon=0.5)


def test_static_phase_rate_smaller(spectral_bundle):
    _, _, _, _, model = spectral_bundle(6, 0.5)
    rate = global_rate_spectral(model).value
    assert 0.0 < rate < analytic_fglobal(6, 1.0)


def test_rate_positivity(spectral_bundle):
    for omega in (0.5, 1.0, 4.0):
        _, _, _, _, model = spectral_bundle(4, omega)
        assert global_rate_spectral(model).value >= 0.0


def test_method_agreement_one_percent(spectral_bundle):
    # spectral, time-integral, and the slope of the finite-T accumulation
    # (two-point slope cancels the constant offset of F(T) = f T - c)
    for omega in (1.0, 4.0):
        lv, _, rho_ss, _, model = spectral_bundle(4, omega)
        f_spec = global_rate_spectral(model).value
        f_int = global_rate_time_integral(lv).value
        T = 40.0 * 4
        f_half = global_qfi_finite_T(lv, rho_ss, T / 2, n_base=256)
        f_full = global_qfi_finite_T(lv, rho_ss, T, n_base=256)
        f_slope = (f_full - f_half) / (T / 2)
        assert f_int == pytest.approx(f_spec, rel=1e-4)
        assert f_slope == pytest.approx(f_spec, rel=0.01)


# ---------------------------------------------------------------------------
# finite-T accumulation
# ---------------------------------------------------------------------------

def test_finite_t_zero_horizon(spectral_bundle):
    lv, *_ = spectral_bundle(2, 4.0)
    assert global_qfi_finite_T(lv, dark_state(SpinSector(2)), 0.0) == 0.0


def test_finite_t_unitary_limit():
    # kappa -> 0 with rho0 = |j, j>: pure phase accumulation, F = T^2
    sector = SpinSector(1)
    lv = build_liouvillian(sector, 4.0, 1e-9)
    rho0 = np.diag([1.0, 0.0]).astype(complex)
    for T in (1.0, 2.0):
        val = global_qfi_finite_T(lv, rho0, T)
        assert val == pytest.approx(T**2, rel=1e-5)


def test_finite_t_slope_reaches_rate(spectral_bundle):
    lv, _, rho_ss, _, model = spectral_bundle(2, 4.0)
    f_true = global_rate_spectral(model).value
    T = 60.0 * 2
    assert global_qfi_finite_T(lv, rho_ss, T, n_base=512) / T == pytest.approx(
        f_true, rel=0.02
    )


def test_finite_t_negative_horizon(spectral_bundle):
    lv, *_ = spectral_bundle(2, 4.0)
    with pytest.raises(InvalidParameterError):
        global_qfi_finite_T(lv, dark_state(SpinSector(2)), -1.0)


# ---------------------------------------------------------------------------
# state QFI
# ---------------------------------------------------------------------------

def test_qfi_pure_qubit_family():
    theta = 0.7
    psi = np.array([np.cos(theta / 2), np.sin(theta / 2)])
    dpsi = np.array([-np.sin(theta / 2), np.cos(theta / 2)]) / 2.0
    rho = np.outer(psi, psi)
    drho = np.outer(dpsi, psi) + np.outer(psi, dpsi)
    assert qfi_of_state(rho.astype(complex), drho.astype(complex)) == pytest.approx(1.0)


def test_qfi_zero_derivative():
    rho = np.eye(3, dtype=complex) / 3.0
    assert qfi_of_state(rho, np.zeros((3, 3), dtype=complex)) == 0.0


def test_qfi_traceless_guard():
    rho = np.eye(2, dtype=complex) / 2.0
    with pytest.raises(ConsistencyError):
        qfi_of_state(rho, np.eye(2, dtype=complex))


def test_steady_state_derivative_traceless():
    rho, drho = steady_state_derivative(SpinSector(4), 1.0, 1.0)
    assert abs(np.trace(drho)) < 1e-8
    assert np.abs(drho - drho.conj().T).max() < 1e-8


@pytest.mark.slow
def test_critical_state_qfi_scaling():
    # F_Q(rho_ss) at the critical drive grows superlinearly, ~N^{4/3}
    sizes = [10, 16, 24, 36, 50]
    vals = []
    for n in sizes:
        rho, drho = steady_state_derivative(SpinSector(n), 1.0, 1.0)
        vals.append(qfi_of_state(rho, drho))
    slope = np.polyfit(np.log(sizes), np.log(vals), 1)[0]
    assert slope > 1.0
    assert slope == pytest.approx(4.0 / 3.0, abs=0.2)
