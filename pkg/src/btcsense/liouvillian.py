"""Vectorized generator of the driven collective-decay model and its spectrum.

The unconditional dynamics is

    d rho / dt = -i omega [J_x, rho] + (2 kappa / N) D[J_-] rho,

with D[L] rho = L rho L^dag - {L^dag L, rho}/2.  The 2/N rescaling of the
collective decay keeps the thermodynamic limit well defined; it can be turned
off (``rescale_dissipator=False``) to study the unscaled model at a rescaled
drive.

Vectorization convention (package-wide): *column stacking*,
``vec(X) = X.reshape(-1, order="F")``, so that vec(A X B) = (B^T kron A) vec(X)
and the Hilbert-Schmidt pairing is <<A|B>> = vec(A)^dag vec(B) = Tr[A^dag B].
Under this convention the commutator superoperator [J_a, .] has matrix
``kron(I, J_a) - kron(J_a^T, I)``; these commutator maps are what we call the
superspin operators S_a.  They satisfy S_x |J_x>> = 0 and
S^2 |J_x>> = 2 |J_x>>, and the strong-drive limit of the generator is the
normal operator  -i omega S_x - (kappa / 2N)(S_x^2 + S^2)  whose eigenvalues
are  -(kappa / 2N)(s(s+1) + s_x^2) + i omega s_x  with integer s <= N and
|s_x| <= s.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    BiorthonormalizationError,
    InvalidParameterError,
    NonUniqueSteadyStateError,
    NumericalError,
)
from .spin import SpinSector, build_spin_operators

__all__ = [
    "vec",
    "unvec",
    "Liouvillian",
    "build_liouvillian",
    "steady_state",
    "LiouvillianSpectrum",
    "spectral_decomposition",
    "SuperspinSet",
    "build_superspin",
    "extreme_limit_generator",
    "extreme_limit_eigenvalues",
    "propagate",
    "liouvillian_gap",
]

#: dense eigensolves are used while (N+1)^2 stays at or below this
DEFAULT_DENSE_CAP = 4096
#: number of slow modes extracted by shift-invert above the dense cap
DEFAULT_N_MODES = 64


def vec(x: np.ndarray) -> np.ndarray:
    """Column-stack an operator into a vector."""
    return np.asarray(x).reshape(-1, order="F")


def unvec(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`vec`."""
    v = np.asarray(v)
    d = int(round(np.sqrt(v.size)))
    return v.reshape((d, d), order="F")


def _dissipator_super(c: np.ndarray) -> sp.csr_matrix:
    """Column-stacked superoperator of D[c]."""
    d = c.shape[0]
    eye = sp.identity(d, format="csr")
    c = sp.csr_matrix(c)
    cdc = (c.conj().T @ c).tocsr()
    return (
        sp.kron(c.conj(), c, format="csr")
        - 0.5 * sp.kron(eye, cdc, format="csr")
        - 0.5 * sp.kron(cdc.T, eye, format="csr")
    )


def _hamiltonian_super(h: np.ndarray) -> sp.csr_matrix:
    """Column-stacked superoperator of -i[h, .]."""
    d = h.shape[0]
    eye = sp.identity(d, format="csr")
    h = sp.csr_matrix(h)
    return -1j * (sp.kron(eye, h, format="csr") - sp.kron(h.T, eye, format="csr"))


@dataclass
class Liouvillian:
    """Generator acting on column-vectorized operators of one sector."""

    sector: SpinSector
    omega: float
    kappa: float
    sparse: sp.csr_matrix = field(repr=False)
    rescaled: bool = True
    _dense: np.ndarray | None = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return self.sector.dimension ** 2

    @property
    def dense(self) -> np.ndarray:
        if self._dense is None:
            self._dense = self.sparse.toarray()
        return self._dense

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Apply the generator to an operator (matrix in, matrix out)."""
        return unvec(self.sparse @ vec(x))


def build_liouvillian(
    sector: SpinSector,
    omega: float,
    kappa: float,
    rescale_dissipator: bool = True,
) -> Liouvillian:
    """Assemble the generator for drive ``omega`` and decay scale ``kappa``.

    ``rescale_dissipator=True`` (default) uses the collective rate
    2*kappa/N; ``False`` uses 2*kappa, the unscaled variant employed for the
    rescaling consistency check f(omega) = N f(N omega).
    """
    if kappa <= 0:
        raise InvalidParameterError(f"kappa must be positive, got {kappa}")
    if omega < 0:
        raise InvalidParameterError(f"omega must be non-negative, got {omega}")
    ops = build_spin_operators(sector)
    rate = 2.0 * kappa / sector.n_spins if rescale_dissipator else 2.0 * kappa
    gen = _hamiltonian_super(omega * ops.jx) + rate * _dissipator_super(ops.jm)
    return Liouvillian(
        sector=sector, omega=omega, kappa=kappa,
        sparse=gen.tocsr(), rescaled=rescale_dissipator,
    )


# ---------------------------------------------------------------------------
# steady state
# ---------------------------------------------------------------------------

def steady_state(
    lv: Liouvillian,
    tol: float = 1e-10,
    check_unique: bool = True,
) -> np.ndarray:
    """Trace-one null state of the generator.

    The null vector is obtained from the trace-bordered linear system
    [[L, |1>>], [<<1|, 0]] x = (0, 1): because <<1| L = 0, the bordering
    multiplier vanishes identically and x is the null vector normalized to
    unit trace.  This deflated solve replaces a full SVD of the generator,
    which becomes prohibitively slow beyond a few hundred rows; a dense SVD
    fallback is kept for small dimensions if the residual check fails.

    Raises
    ------
    NonUniqueSteadyStateError
        if a second eigenvalue lies within ``tol * kappa`` of zero
        (only probed when ``check_unique``).
    NumericalError
        if the residual ||L rho_ss|| exceeds tolerance.
    """
    d = lv.sector.dimension
    n = lv.dim
    t = vec(np.eye(d, dtype=complex))

    if check_unique:
        _assert_unique_null(lv, tol)

    bordered = sp.bmat(
        [[lv.sparse, t[:, None]], [t.conj()[None, :], None]], format="csc"
    )
    rhs = np.zeros(n + 1, dtype=complex)
    rhs[-1] = 1.0
    try:
        sol = spla.splu(bordered).solve(rhs)
        rho = unvec(sol[:n])
    except RuntimeError:
        rho = _steady_state_svd(lv)

    rho = (rho + rho.conj().T) / 2.0
    rho = rho / np.trace(rho).real

    scale = max(1.0, abs(lv.omega), lv.kappa)
    residual = np.linalg.norm(lv.sparse @ vec(rho))
    if residual > 1e3 * tol * scale:
        # deflated solve did not converge; retry via dense SVD
        rho = _steady_state_svd(lv)
        rho = (rho + rho.conj().T) / 2.0
        rho = rho / np.trace(rho).real
        residual = np.linalg.norm(lv.sparse @ vec(rho))
        if residual > 1e3 * tol * scale:
            raise NumericalError(
                f"steady-state residual {residual:.3e} above tolerance"
            )

    evals = np.linalg.eigvalsh(rho)
    if evals.min() < -1e3 * tol:
        raise NumericalError(
            f"steady state has negative eigenvalue {evals.min():.3e}"
        )
    return rho


def _steady_state_svd(lv: Liouvillian) -> np.ndarray:
    _, _, vh = sla.svd(lv.dense)
    return unvec(vh[-1].conj())


def _assert_unique_null(lv: Liouvillian, tol: float) -> None:
    """Check that exactly one eigenvalue sits within tolerance of zero."""
    thresh = max(tol, 1e-12) * lv.kappa
    n = lv.dim
    if n <= 400:
        evals = np.linalg.eigvals(lv.dense)
    else:
        # shift-invert about a point just off the origin: the null mode
        # dominates and the next-slowest mode comes along with it
        sigma = lv.kappa * (1e-6 + 1e-6j)
        evals = spla.eigs(
            lv.sparse.tocsc(), k=4, sigma=sigma, return_eigenvectors=False
        )
    near_null = np.sum(np.abs(evals) < thresh)
    if near_null != 1:
        raise NonUniqueSteadyStateError(
            f"{near_null} eigenvalues within {thresh:.2e} of zero; "
            "steady state not unique at this tolerance"
        )


# ---------------------------------------------------------------------------
# spectral decomposition
# ---------------------------------------------------------------------------

@dataclass
class LiouvillianSpectrum:
    """Biorthonormalized eigensystem lambda_k = -gamma_k + i Omega_k.

    ``right[:, k]`` and ``left[:, k]`` hold the vectorized right/left
    eigen-operators with Tr[L_k^dag R_l] = delta_kl.  ``complete`` is False
    when only the slowest modes were extracted (iterative path).
    """

    eigenvalues: np.ndarray
    right: np.ndarray = field(repr=False)
    left: np.ndarray = field(repr=False)
    steady_index: int
    kappa: float
    complete: bool = True
    reconstruction_residual: float = 0.0
    cluster_warnings: tuple = ()

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.size

    @property
    def gamma(self) -> np.ndarray:
        """Decay rates -Re(lambda), clipped at zero."""
        return np.clip(-self.eigenvalues.real, 0.0, None)

    @property
    def frequencies(self) -> np.ndarray:
        return self.eigenvalues.imag

    def right_operator(self, k: int) -> np.ndarray:
        return unvec(self.right[:, k])

    def left_operator(self, k: int) -> np.ndarray:
        return unvec(self.left[:, k])

    @property
    def gap(self) -> float:
        """Smallest nonzero decay rate (Liouvillian gap)."""
        rates = np.delete(self.gamma, self.steady_index)
        return float(rates.min()) if rates.size else 0.0


def _sort_key(evals: np.ndarray) -> np.ndarray:
    # ascending |Re|, ties by ascending |Im|, positive Im before negative;
    # fixed order makes mode indices reproducible across runs
    return np.lexsort((-np.sign(evals.imag), np.abs(evals.imag), np.abs(evals.real)))


def spectral_decomposition(
    lv: Liouvillian,
    dense_cap: int = DEFAULT_DENSE_CAP,
    n_modes: int = DEFAULT_N_MODES,
    cluster_tol: float = 1e-9,
    check_tol: float = 1e-5,
) -> LiouvillianSpectrum:
    """Full (or slow-mode) biorthogonal eigendecomposition of the generator.

    Dense ``scipy.linalg.eig`` with left and right eigenvectors while the
    superoperator dimension stays at or below ``dense_cap``; beyond that,
    shift-invert Arnoldi extracts the ``n_modes`` slowest modes of L and of
    L^dag.  Eigenvalues closer than ``cluster_tol * kappa`` are treated as one
    cluster and biorthonormalized blockwise through the Gram matrix; an
    ill-conditioned cluster triggers a warning carrying its condition number.
    """
    n = lv.dim
    if n <= dense_cap:
        evals, vl, vr = sla.eig(lv.dense, left=True, right=True)
        complete = True
    else:
        evals, vl, vr = _slow_modes(lv, n_modes)
        complete = False

    order = _sort_key(evals)
    evals, vl, vr = evals[order], vl[:, order], vr[:, order]

    vl, warnings_list = _biorthonormalize(evals, vl, vr, cluster_tol * lv.kappa)

    steady_index = int(np.argmin(np.abs(evals)))
    residual = _reconstruction_residual(lv, evals, vl, vr) if complete else np.nan
    if complete and residual > check_tol:
        # near-defective spectra reconstruct poorly even though well-separated
        # slow modes (and rate sums, where the huge +/- amplitudes of a
        # defective pair cancel) stay accurate; surface it, don't abort
        warnings.warn(
            f"spectral reconstruction residual {residual:.3e} exceeds "
            f"{check_tol:.1e}; generator is nearly defective",
            RuntimeWarning,
        )
    return LiouvillianSpectrum(
        eigenvalues=evals,
        right=vr,
        left=vl,
        steady_index=steady_index,
        kappa=lv.kappa,
        complete=complete,
        reconstruction_residual=float(residual),
        cluster_warnings=tuple(warnings_list),
    )


def _slow_modes(lv: Liouvillian, k: int, n_shift_bands: int = 3):
    """Shift-invert extraction of the k slowest right and left modes.

    Slowly decaying modes oscillate at multiples of the drive frequency, so a
    single shift at the origin misses them; shifts are placed at
    i * m * omega for |m| <= n_shift_bands and the union is deduplicated
    before keeping the k smallest-|Re| modes.
    """
    a = lv.sparse.tocsc()
    ah = a.conj().T.tocsc()
    base = lv.kappa * (1e-6 + 1e-6j)
    bands = [0] + [m for mm in range(1, n_shift_bands + 1) for m in (mm, -mm)]
    shifts = [base + 1j * m * lv.omega for m in bands] if lv.omega > 0 else [base]

    k_per = max(k // max(len(shifts) - 1, 1), 6)
    evals_list, vr_list, vl_list = [], [], []
    for sigma in shifts:
        try:
            ev, vr = spla.eigs(a, k=k_per, sigma=sigma)
            ev_l, vl = spla.eigs(ah, k=k_per, sigma=np.conj(sigma))
        except spla.ArpackNoConvergence:
            continue
        # left eigenvector for lambda is the L^dag eigenvector at conj(lambda)
        used = np.zeros(ev_l.size, dtype=bool)
        for i, lam in enumerate(ev):
            dist = np.abs(ev_l.conj() - lam)
            dist[used] = np.inf
            idx = int(np.argmin(dist))
            if not np.isfinite(dist[idx]) or dist[idx] > 1e-6 * max(1.0, abs(lam)):
                continue
            used[idx] = True
            evals_list.append(lam)
            vr_list.append(vr[:, i])
            vl_list.append(vl[:, idx])
    if not evals_list:
        raise BiorthonormalizationError("shift-invert extraction found no modes")

    evals = np.asarray(evals_list)
    vr = np.column_stack(vr_list)
    vl = np.column_stack(vl_list)
    # deduplicate across overlapping shift windows
    keep = []
    for i in range(evals.size):
        if all(abs(evals[i] - evals[j]) > 1e-9 * max(lv.kappa, 1.0) for j in keep):
            keep.append(i)
    order = sorted(keep, key=lambda i: (abs(evals[i].real), abs(evals[i].imag)))[:k]
    return evals[order], vl[:, order], vr[:, order]


def _biorthonormalize(evals, vl, vr, tol_abs):
    """Rescale left vectors so Tr[L_k^dag R_l] = delta_kl, blockwise on clusters."""
    n = evals.size
    cluster_warnings = []
    visited = np.zeros(n, dtype=bool)
    vl = vl.copy()
    for i in range(n):
        if visited[i]:
            continue
        members = np.flatnonzero(np.abs(evals - evals[i]) <= tol_abs)
        visited[members] = True
        block_l = vl[:, members]
        block_r = vr[:, members]
        gram = block_l.conj().T @ block_r
        if members.size > 1:
            cond = np.linalg.cond(gram)
            if cond > 1e8:
                cluster_warnings.append(
                    (complex(evals[i]), int(members.size), float(cond))
                )
                warnings.warn(
                    f"near-defective eigenvalue cluster at {evals[i]:.4e} "
                    f"(size {members.size}, condition {cond:.2e})",
                    RuntimeWarning,
                )
        try:
            correction = np.linalg.inv(gram).conj().T
        except np.linalg.LinAlgError as exc:
            raise BiorthonormalizationError(
                f"singular Gram matrix in cluster at {evals[i]:.4e}"
            ) from exc
        vl[:, members] = block_l @ correction
    return vl, cluster_warnings


def _reconstruction_residual(lv, evals, vl, vr, n_probe: int = 4) -> float:
    """Relative action error of sum_k lambda_k R_k <<L_k|.>> on random vectors."""
    rng = np.random.default_rng(7)
    worst = 0.0
    scale = np.abs(evals).max() or 1.0
    for _ in range(n_probe):
        x = rng.standard_normal(lv.dim) + 1j * rng.standard_normal(lv.dim)
        x /= np.linalg.norm(x)
        direct = lv.sparse @ x
        coeffs = vl.conj().T @ x
        rebuilt = vr @ (evals * coeffs)
        worst = max(worst, np.linalg.norm(direct - rebuilt) / scale)
    return worst


# ---------------------------------------------------------------------------
# superspin operators and the strong-drive limit
# ---------------------------------------------------------------------------

@dataclass
class SuperspinSet:
    """Commutator superoperators S_a = [J_a, .] and the total S^2."""

    sector: SpinSector
    sx: sp.csr_matrix = field(repr=False)
    sy: sp.csr_matrix = field(repr=False)
    sz: sp.csr_matrix = field(repr=False)
    s_sq: sp.csr_matrix = field(repr=False)


def build_superspin(sector: SpinSector) -> SuperspinSet:
    """Superspin set of a sector; S^2 = S_x^2 + S_y^2 + S_z^2 is Hermitian."""
    ops = build_spin_operators(sector)
    eye = sp.identity(sector.dimension, format="csr")

    def comm_super(a: np.ndarray) -> sp.csr_matrix:
        a = sp.csr_matrix(a)
        return sp.kron(eye, a, format="csr") - sp.kron(a.T, eye, format="csr")

    sx = comm_super(ops.jx)
    sy = comm_super(ops.jy)
    sz = comm_super(ops.jz)
    s_sq = (sx @ sx + sy @ sy + sz @ sz).tocsr()
    return SuperspinSet(sector=sector, sx=sx, sy=sy, sz=sz, s_sq=s_sq)


def extreme_limit_generator(
    sector: SpinSector, omega: float, kappa: float
) -> Liouvillian:
    """Strong-drive generator  -i omega S_x - (kappa/2N)(S_x^2 + S^2).

    Built from superspin operators only; it is a normal operator whose
    spectrum is exactly :func:`extreme_limit_eigenvalues` (the sign of the
    drive term matches the Hamiltonian commutator -i omega [J_x, .]; the
    eigenvalue multiset is conjugation-symmetric either way).
    """
    if kappa <= 0:
        raise InvalidParameterError(f"kappa must be positive, got {kappa}")
    ss = build_superspin(sector)
    gen = -1j * omega * ss.sx - (kappa / (2.0 * sector.n_spins)) * (
        ss.sx @ ss.sx + ss.s_sq
    )
    return Liouvillian(
        sector=sector, omega=omega, kappa=kappa, sparse=gen.tocsr(), rescaled=True
    )


def extreme_limit_eigenvalues(
    n_spins: int, omega: float, kappa: float
) -> np.ndarray:
    """All (N+1)^2 closed-form eigenvalues, one per (s, s_x), s<=N, |s_x|<=s."""
    out = []
    for s in range(n_spins + 1):
        for s_x in range(-s, s + 1):
            out.append(
                -(kappa / (2.0 * n_spins)) * (s * (s + 1) + s_x**2)
                + 1j * omega * s_x
            )
    return np.asarray(out, dtype=complex)


# ---------------------------------------------------------------------------
# propagation
# ---------------------------------------------------------------------------

def propagate(lv: Liouvillian, x: np.ndarray, t: float) -> np.ndarray:
    """Action of exp(L t) on an operator.

    Dense ``expm`` below 1025 rows, Krylov-free ``expm_multiply`` above.
    """
    v = vec(x)
    if lv.dim <= 1024:
        return unvec(sla.expm(lv.dense * t) @ v)
    return unvec(spla.expm_multiply(lv.sparse * t, v))


def liouvillian_gap(lv: Liouvillian) -> float:
    """Smallest nonzero decay rate, from a small shift-invert eigensolve."""
    if lv.dim <= 400:
        evals = np.linalg.eigvals(lv.dense)
    else:
        sigma = lv.kappa * (1e-6 + 1e-6j)
        evals = spla.eigs(
            lv.sparse.tocsc(), k=6, sigma=sigma, return_eigenvectors=False
        )
    rates = np.sort(np.abs(evals.real))
    nonzero = rates[rates > 1e-10 * lv.kappa]
    if nonzero.size == 0:
        raise NumericalError("no nonzero decay rate found near the origin")
    return float(nonzero[0])
