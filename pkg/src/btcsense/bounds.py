"""Precision bounds for inefficient detection and the collective advantage.

For detector efficiency eta < 1 the unmonitored dissipator
2(1-eta) kappa / N D[J_-] acts as unavoidable Markovian noise, and every
estimation strategy built on the monitored output (with or without a final
system measurement) obeys

    f_signal <= N / (2 (1 - eta) kappa).

The bound follows from minimizing the operator norm of

    alpha = |g1|^2 I + g2 sqrt(2(1-eta)kappa/N) (g1* J_+ + g1 J_-)
            + g2^2 (2(1-eta)kappa/N) J_+ J_-

subject to the linear constraint

    beta = sqrt(2(1-eta)kappa/N) (g1* J_+ + g1 J_-)
           + g2 (2(1-eta)kappa/N) J_+ J_- + J_x + g3 I = 0,

over g1 in C and real g2, g3.  The constraint forces g2 = g3 = 0 and
g1 = -(1/2) sqrt(N / (2(1-eta)kappa)), leaving ||alpha|| = N/(8(1-eta)kappa)
with the bound equal to 4 ||alpha||.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError
from .qfi import global_rate_for
from .spin import SpinSector, build_spin_operators

__all__ = [
    "inefficiency_bound",
    "BoundWitness",
    "analytic_optimum",
    "verify_bound_optimum",
    "collective_advantage",
    "advantage_error",
    "advantage_cap",
    "rescaling_check",
]


def inefficiency_bound(n_spins: int, eta: float, kappa: float) -> float:
    """N / (2 (1 - eta) kappa); +inf at eta = 1 (the bound degenerates)."""
    if n_spins < 1 or kappa <= 0 or not 0.0 < eta <= 1.0:
        raise InvalidParameterError(
            f"need N >= 1, kappa > 0, 0 < eta <= 1; got ({n_spins}, {eta}, {kappa})"
        )
    if eta == 1.0:
        return math.inf
    return n_spins / (2.0 * (1.0 - eta) * kappa)


@dataclass(frozen=True)
class BoundWitness:
    """Evaluated multiplier point for the noisy-metrology bound."""

    gamma1: complex
    gamma2: float
    gamma3: float
    alpha_norm: float
    beta_residual: float


def analytic_optimum(n_spins: int, eta: float, kappa: float) -> tuple[complex, float, float]:
    """The multipliers that null the constraint operator exactly."""
    g1 = -0.5 * math.sqrt(n_spins / (2.0 * (1.0 - eta) * kappa))
    return complex(g1), 0.0, 0.0


def verify_bound_optimum(
    sector: SpinSector,
    eta: float,
    kappa: float,
    gamma1: complex,
    gamma2: float,
    gamma3: float,
) -> BoundWitness:
    """Construct alpha and beta at the given multipliers and measure them.

    ``alpha_norm`` is the operator norm (largest |eigenvalue| of the Hermitian
    alpha), ``beta_residual`` the largest singular value of beta.
    """
    if not 0.0 < eta < 1.0:
        raise InvalidParameterError("the finite bound requires 0 < eta < 1")
    ops = build_spin_operators(sector)
    n = sector.n_spins
    rate = 2.0 * (1.0 - eta) * kappa / n
    root = math.sqrt(rate)
    eye = np.eye(sector.dimension, dtype=complex)
    ladder = np.conj(gamma1) * ops.jp + gamma1 * ops.jm
    jpjm = ops.jp @ ops.jm

    alpha = (
        abs(gamma1) ** 2 * eye
        + gamma2 * root * ladder
        + gamma2**2 * rate * jpjm
    )
    beta = root * ladder + gamma2 * rate * jpjm + ops.jx + gamma3 * eye

    alpha_norm = float(np.abs(np.linalg.eigvalsh(alpha)).max())
    beta_residual = float(np.linalg.svd(beta, compute_uv=False).max())
    return BoundWitness(
        gamma1=complex(gamma1),
        gamma2=float(gamma2),
        gamma3=float(gamma3),
        alpha_norm=alpha_norm,
        beta_residual=beta_residual,
    )


def collective_advantage(f_n: float, f_1: float, n_spins: int) -> float:
    """xi_N = f(N) / (N f(1)): monitored rate against N independent sensors."""
    if f_1 <= 0:
        raise InvalidParameterError(f"single-sensor baseline must be positive, got {f_1}")
    return f_n / (n_spins * f_1)


def advantage_error(
    f_n: float, err_n: float, f_1: float, err_1: float, n_spins: int
) -> float:
    """Delta-method standard error of xi_N with independent numerator and
    denominator estimates."""
    xi = collective_advantage(f_n, f_1, n_spins)
    return abs(xi) * math.hypot(err_n / f_n, err_1 / f_1)


def advantage_cap(f_1: float, eta: float, kappa: float) -> float:
    """Upper bound on xi_N: the inefficiency bound divided by N f(1),
    i.e. (2 (1-eta) kappa f(1))^{-1}."""
    if f_1 <= 0:
        raise InvalidParameterError(f"single-sensor baseline must be positive, got {f_1}")
    if eta == 1.0:
        return math.inf
    return 1.0 / (2.0 * (1.0 - eta) * kappa * f_1)


def rescaling_check(n_spins: int, omega: float, kappa: float) -> float:
    """Ratio of the rate with the 2 kappa / N dissipator at drive omega to the
    rate of the unscaled (2 kappa) model at drive N * omega; equals N.

    The unscaled model is the same dynamics in time units stretched by N, so
    its information rate per unit time drops by exactly that factor.
    """
    sector = SpinSector(n_spins)
    scaled = global_rate_for(sector, omega, kappa, rescale_dissipator=True)
    unscaled = global_rate_for(
        sector, n_spins * omega, kappa, rescale_dissipator=False
    )
    return scaled.value / unscaled.value
