"""Finite-size scaling estimators for the critical point omega = kappa.

Local exponents from neighbouring system-size pairs,

    e_N = log(v_N / v_N') / log(N / N'),

sharpen as N grows even when far from convergence; a power-law-with-offset
fit e_N = a + b N^{-x} extrapolates them.  Applied to the decay rates
gamma_k of the slowest modes (z exponents), their amplitudes A_k and C(0)
(reported both as the raw exponent of the quantity and as Delta = -e/2,
matching the A ~ N^{-2 Delta} convention), to the steady-state
susceptibilities d<J_y>/dw, d<J_z>/dw (Delta = 1/nu - e with nu = 3/2), and
to the global rate itself (zeta exponents).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize as sopt

from .errors import FitFailureError, InvalidParameterError, ModeTrackingError
from .liouvillian import build_liouvillian, spectral_decomposition, steady_state
from .qfi import (
    build_correlation_model,
    global_rate_spectral,
    steady_state_derivative,
)
from .spin import SpinSector, build_spin_operators, expect

__all__ = [
    "ScalingSeries",
    "local_exponents",
    "fit_power_law_offset",
    "TrackedMode",
    "track_slow_modes",
    "critical_amplitude_exponents",
    "CriticalScalingStudy",
    "critical_scaling_study",
]

NU_CRITICAL = 1.5  # correlation-length exponent of the transition


@dataclass
class ScalingSeries:
    """Values over a strictly increasing size grid, with local exponents.

    ``exponents[i]`` is assigned to ``sizes[i + 1]`` (the larger member of
    each pair).  ``fit`` holds (a, b, x) of e_N = a + b N^{-x} when computed.
    """

    sizes: np.ndarray
    values: np.ndarray
    exponents: np.ndarray = field(default=None)
    fit: tuple | None = None
    fit_residual: float | None = None
    label: str = ""

    def __post_init__(self):
        self.sizes = np.asarray(self.sizes, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.exponents is None and self.sizes.size >= 2:
            self.exponents = _pairwise_exponents(self.sizes, self.values)

    @property
    def exponent_sizes(self) -> np.ndarray:
        return self.sizes[1:]


def _pairwise_exponents(sizes: np.ndarray, values: np.ndarray) -> np.ndarray:
    return np.log(values[1:] / values[:-1]) / np.log(sizes[1:] / sizes[:-1])


def local_exponents(sizes, values, label: str = "") -> ScalingSeries:
    """Consecutive-pair exponents of a positive series over >= 3 sizes."""
    sizes = np.asarray(sizes, dtype=float)
    values = np.asarray(values, dtype=float)
    if sizes.size < 3:
        raise InvalidParameterError("need at least 3 sizes for local exponents")
    if np.any(np.diff(sizes) <= 0):
        raise InvalidParameterError("sizes must be strictly increasing")
    if np.any(values <= 0):
        raise InvalidParameterError("local exponents need positive values")
    series = ScalingSeries(sizes=sizes, values=values, label=label)
    if not np.all(np.isfinite(series.exponents)):
        raise InvalidParameterError("non-finite exponent in series")
    return series


def fit_power_law_offset(
    sizes, exponents, max_iter: int = 10000
) -> tuple[tuple[float, float, float], np.ndarray, float]:
    """Fit e_N = a + b N^{-x} (x > 0) by nonlinear least squares.

    Returns ((a, b, x), covariance, rms_residual).  Several starting points
    are tried; failure to converge raises :class:`FitFailureError`.
    """
    sizes = np.asarray(sizes, dtype=float)
    exponents = np.asarray(exponents, dtype=float)
    if sizes.size < 5:
        raise InvalidParameterError("need at least 5 points for the offset fit")

    def model(n, a, b, x):
        return a + b * n ** (-x)

    spread = exponents.max() - exponents.min()
    best = None
    for x0 in (0.3, 0.5, 1.0, 2.0):
        for a0 in (exponents[-1], exponents.mean()):
            b0 = (exponents[0] - a0) * sizes[0] ** x0 if spread > 0 else 1.0
            try:
                popt, pcov = sopt.curve_fit(
                    model, sizes, exponents,
                    p0=(a0, b0 if b0 != 0 else 1.0, x0),
                    bounds=([-np.inf, -np.inf, 1e-6], [np.inf, np.inf, 10.0]),
                    maxfev=max_iter,
                )
            except (RuntimeError, ValueError):
                continue
            resid = float(np.sqrt(np.mean((model(sizes, *popt) - exponents) ** 2)))
            if best is None or resid < best[2]:
                best = (tuple(float(p) for p in popt), pcov, resid)
    if best is None:
        raise FitFailureError(
            f"power-law-offset fit did not converge in {max_iter} evaluations"
        )
    return best


# ---------------------------------------------------------------------------
# mode tracking across system sizes
# ---------------------------------------------------------------------------

@dataclass
class TrackedMode:
    """One eigenmode followed over the size grid by eigenvalue continuity."""

    sizes: list = field(default_factory=list)
    gammas: list = field(default_factory=list)
    frequencies: list = field(default_factory=list)
    amplitudes: list = field(default_factory=list)

    def gamma_series(self) -> ScalingSeries:
        return ScalingSeries(np.asarray(self.sizes, float), np.asarray(self.gammas))

    def amplitude_series(self) -> ScalingSeries:
        return ScalingSeries(
            np.asarray(self.sizes, float), np.abs(np.asarray(self.amplitudes))
        )


def _candidate_modes(model, amp_cut: float):
    """(gamma, Omega >= 0, |A|) of decaying modes with non-negligible weight,
    conjugate pairs reduced to their Omega >= 0 member, sorted by gamma."""
    weight = np.hypot(model.amplitude, model.sine_amplitude)
    mask = (weight > amp_cut * abs(model.value_at_zero)) & (
        model.frequency > -1e-12
    )
    g = model.gamma[mask]
    w = np.abs(model.frequency[mask])
    a = model.amplitude[mask]
    order = np.argsort(g, kind="stable")
    return g[order], w[order], a[order]


def track_slow_modes(
    size_grid,
    models: dict,
    n_modes: int = 3,
    amp_cut: float = 1e-8,
    ambiguity_ratio: float = 0.2,
) -> list[TrackedMode]:
    """Follow the ``n_modes`` slowest finite-weight modes across the grid.

    Matching between consecutive sizes uses nearest distance in the
    (N * gamma, Omega) plane, where the real part is rescaled by N so that
    strong-drive-limit eigenvalues become size-independent.  A second
    candidate within ``ambiguity_ratio`` of the best distance raises
    :class:`ModeTrackingError` listing both candidates.
    """
    sizes = sorted(size_grid)
    g0, w0, a0 = _candidate_modes(models[sizes[0]], amp_cut)
    if g0.size < n_modes:
        raise ModeTrackingError(
            f"only {g0.size} finite-weight modes at N={sizes[0]}, need {n_modes}"
        )
    tracks = []
    for k in range(n_modes):
        tr = TrackedMode()
        tr.sizes.append(sizes[0])
        tr.gammas.append(float(g0[k]))
        tr.frequencies.append(float(w0[k]))
        tr.amplitudes.append(float(a0[k]))
        tracks.append(tr)

    for n in sizes[1:]:
        g, w, a = _candidate_modes(models[n], amp_cut)
        taken = set()
        for tr in tracks:
            ref = np.array([tr.sizes[-1] * tr.gammas[-1], tr.frequencies[-1]])
            dist = np.hypot(n * g - ref[0], w - ref[1])
            for idx in taken:
                dist[idx] = np.inf
            order = np.argsort(dist)
            best = int(order[0])
            if dist.size > 1 and np.isfinite(dist[order[1]]):
                if dist[order[1]] - dist[best] < ambiguity_ratio * max(dist[best], 1e-12):
                    raise ModeTrackingError(
                        f"ambiguous continuation at N={n}: candidates "
                        f"(g={g[best]:.5f}, W={w[best]:.5f}) and "
                        f"(g={g[order[1]]:.5f}, W={w[order[1]]:.5f})"
                    )
            taken.add(best)
            tr.sizes.append(int(n))
            tr.gammas.append(float(g[best]))
            tr.frequencies.append(float(w[best]))
            tr.amplitudes.append(float(a[best]))
    return tracks


# ---------------------------------------------------------------------------
# full critical-point study
# ---------------------------------------------------------------------------

@dataclass
class CriticalScalingStudy:
    """All size-scaling series extracted at the critical drive."""

    sizes: np.ndarray
    rate: ScalingSeries                    # f_global, exponents = zeta_N
    c0: ScalingSeries                      # C(0) = 2 Tr[J_x^2 rho_ss]
    mode_gammas: list                      # per tracked mode: z_{k,N} series
    mode_amplitudes: list                  # per tracked mode: amplitude series
    susceptibility_jy: ScalingSeries
    susceptibility_jz: ScalingSeries

    @property
    def zeta(self) -> np.ndarray:
        return self.rate.exponents

    def z_exponents(self) -> list:
        """z_{k,N} per tracked mode, positive for gamma_k ~ N^{-z_k}
        (the negative of the raw exponent of the decreasing gamma series)."""
        return [-m.exponents for m in self.mode_gammas]

    def delta_from_c0(self) -> np.ndarray:
        """Delta_O per pair under A ~ N^{-2 Delta} (expected near -5/6)."""
        return -self.c0.exponents / 2.0

    def delta_from_susceptibility(self) -> dict:
        """Delta_O = 1/nu - exponent, from both local observables."""
        return {
            "jy": 1.0 / NU_CRITICAL - self.susceptibility_jy.exponents,
            "jz": 1.0 / NU_CRITICAL - self.susceptibility_jz.exponents,
        }

    def delta_from_modes(self) -> list:
        return [-m.exponents / 2.0 for m in self.mode_amplitudes]


def critical_amplitude_exponents(
    size_grid, models: dict, n_modes: int = 3, amp_cut: float = 1e-8
) -> tuple[list, ScalingSeries]:
    """Amplitude exponent series of the tracked slow modes, plus the C(0)
    series (both as raw exponents; Delta = -exponent / 2)."""
    tracks = track_slow_modes(size_grid, models, n_modes=n_modes, amp_cut=amp_cut)
    amp_series = [t.amplitude_series() for t in tracks]
    sizes = sorted(size_grid)
    c0 = ScalingSeries(
        np.asarray(sizes, float),
        np.asarray([abs(models[n].value_at_zero) for n in sizes]),
        label="C(0)",
    )
    return amp_series, c0


def critical_scaling_study(
    size_grid,
    kappa: float = 1.0,
    omega: float | None = None,
    n_modes: int = 3,
    susceptibility_delta: float = 1e-4,
) -> CriticalScalingStudy:
    """Diagonalize the generator over the size grid at omega = kappa and
    collect every scaling series of interest."""
    sizes = sorted(int(n) for n in size_grid)
    if len(sizes) < 3:
        raise InvalidParameterError("need at least 3 sizes")
    omega = kappa if omega is None else omega

    models = {}
    rates, c0s, sus_y, sus_z = [], [], [], []
    for n in sizes:
        sector = SpinSector(n)
        ops = build_spin_operators(sector)
        lv = build_liouvillian(sector, omega, kappa)
        spec = spectral_decomposition(lv)
        rho_ss = steady_state(lv, check_unique=False)
        model = build_correlation_model(spec, rho_ss, ops.jx)
        models[n] = model
        rates.append(global_rate_spectral(model).value)
        c0s.append(model.value_at_zero)
        _, drho = steady_state_derivative(
            sector, omega, kappa, delta=susceptibility_delta
        )
        sus_y.append(abs(expect(ops.jy, drho)))
        sus_z.append(abs(expect(ops.jz, drho)))

    tracks = track_slow_modes(sizes, models, n_modes=n_modes)
    return CriticalScalingStudy(
        sizes=np.asarray(sizes, float),
        rate=ScalingSeries(np.asarray(sizes, float), np.asarray(rates), label="f_global"),
        c0=ScalingSeries(np.asarray(sizes, float), np.asarray(c0s), label="C(0)"),
        mode_gammas=[t.gamma_series() for t in tracks],
        mode_amplitudes=[t.amplitude_series() for t in tracks],
        susceptibility_jy=ScalingSeries(np.asarray(sizes, float), np.asarray(sus_y)),
        susceptibility_jz=ScalingSeries(np.asarray(sizes, float), np.asarray(sus_z)),
    )
