"""Collective angular-momentum algebra in the symmetric (Dicke) sector.

N spin-1/2 particles restricted to the maximal-spin subspace j = N/2.  The
sector is (N+1)-dimensional and every operator here is a dense complex matrix
in the Dicke ladder basis |j, m>, ordered by *descending* m (|j, j> first).
That ordering is a package-wide convention: all modules share it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSectorError

__all__ = [
    "SpinSector",
    "SpinOperators",
    "build_spin_operators",
    "maximally_mixed",
    "dark_state",
    "expect",
    "purity",
    "trace_distance",
    "check_density_operator",
]


@dataclass(frozen=True)
class SpinSector:
    """Symmetric sector of ``n_spins`` two-level systems (dimension N+1)."""

    n_spins: int

    def __post_init__(self):
        if not isinstance(self.n_spins, (int, np.integer)) or self.n_spins < 1:
            raise InvalidSectorError(
                f"need a positive integer number of spins, got {self.n_spins!r}"
            )

    @property
    def dimension(self) -> int:
        return self.n_spins + 1

    @property
    def j(self) -> float:
        return self.n_spins / 2.0

    @property
    def m_values(self) -> np.ndarray:
        """Magnetic quantum numbers in basis order (j, j-1, ..., -j)."""
        return self.j - np.arange(self.dimension)


@dataclass(frozen=True)
class SpinOperators:
    """The collective operators J_x, J_y, J_z, J_+, J_- of one sector."""

    sector: SpinSector
    jx: np.ndarray = field(repr=False)
    jy: np.ndarray = field(repr=False)
    jz: np.ndarray = field(repr=False)
    jp: np.ndarray = field(repr=False)
    jm: np.ndarray = field(repr=False)


def build_spin_operators(sector: SpinSector) -> SpinOperators:
    """Construct the dense collective spin operators of a sector.

    J_- lowers m with the standard matrix element sqrt(j(j+1) - m(m-1));
    J_x = (J_+ + J_-)/2 and J_y = (J_+ - J_-)/(2i).
    """
    j = sector.j
    m = sector.m_values
    d = sector.dimension

    jz = np.diag(m).astype(complex)
    # |j, m> sits at index i = j - m; J_-|j, m> lands one index below.
    lower = np.sqrt(j * (j + 1) - m[:-1] * (m[:-1] - 1))
    jm = np.zeros((d, d), dtype=complex)
    jm[np.arange(1, d), np.arange(0, d - 1)] = lower
    jp = jm.conj().T.copy()
    jx = (jp + jm) / 2.0
    jy = (jp - jm) / 2.0j
    return SpinOperators(sector=sector, jx=jx, jy=jy, jz=jz, jp=jp, jm=jm)


def maximally_mixed(sector: SpinSector) -> np.ndarray:
    """Identity / (N+1)."""
    d = sector.dimension
    return np.eye(d, dtype=complex) / d


def dark_state(sector: SpinSector) -> np.ndarray:
    """Projector onto the lowest-weight state |j, -j> (annihilated by J_-)."""
    d = sector.dimension
    rho = np.zeros((d, d), dtype=complex)
    rho[-1, -1] = 1.0
    return rho


def expect(op: np.ndarray, rho: np.ndarray) -> float:
    """Real part of Tr[op rho]."""
    return float(np.trace(op @ rho).real)


def purity(rho: np.ndarray) -> float:
    """Tr[rho^2]."""
    return float(np.einsum("ij,ji->", rho, rho).real)


def trace_distance(rho: np.ndarray, sigma: np.ndarray) -> float:
    """(1/2)||rho - sigma||_1 via the eigenvalues of the Hermitian difference."""
    delta = rho - sigma
    delta = (delta + delta.conj().T) / 2.0
    return float(0.5 * np.abs(np.linalg.eigvalsh(delta)).sum())


def check_density_operator(rho: np.ndarray, tol: float = 1e-10) -> None:
    """Raise ``ValueError`` unless rho is Hermitian, unit trace and PSD.

    Eigenvalues are allowed to dip to -tol (integration round-off).
    """
    if not np.allclose(rho, rho.conj().T, atol=tol):
        raise ValueError("state is not Hermitian within tolerance")
    tr = np.trace(rho).real
    if abs(tr - 1.0) > max(tol, 1e-12):
        raise ValueError(f"state trace {tr} differs from 1 beyond tolerance")
    evals = np.linalg.eigvalsh((rho + rho.conj().T) / 2.0)
    if evals.min() < -tol:
        raise ValueError(f"state has negative eigenvalue {evals.min():.3e}")
