import numpy as np
import pytest

from btcsense.errors import InvalidSectorError
from btcsense.spin import (
    SpinSector,
    build_spin_operators,
    dark_state,
    expect,
    maximally_mixed,
    purity,
    trace_distance,
)


def test_sector_dimensions():
    sec = SpinSector(5)
    assert sec.dimension == 6
    assert sec.j == 2.5
    assert list(sec.m_values) == [2.5, 1.5, 0.5, -0.5, -1.5, -2.5]


@pytest.mark.parametrize("bad", [0, -1, 2.5])
def test_invalid_sector(bad):
    with pytest.raises(InvalidSectorError):
        SpinSector(bad)


def test_spin_half_pauli():
    ops = build_spin_operators(SpinSector(1))
    assert np.allclose(ops.jx, [[0, 0.5], [0.5, 0]])
    assert np.allclose(ops.jy, [[0, -0.5j], [0.5j, 0]])
    assert np.allclose(ops.jz, [[0.5, 0], [0, -0.5]])


@pytest.mark.parametrize("n", [1, 2, 3, 7, 16, 30])
def test_su2_algebra(n):
    ops = build_spin_operators(SpinSector(n))
    for a, b, c in [(ops.jx, ops.jy, ops.jz),
                    (ops.jy, ops.jz, ops.jx),
                    (ops.jz, ops.jx, ops.jy)]:
        comm = a @ b - b @ a
        assert np.abs(comm - 1j * c).max() < 1e-10
    casimir = ops.jx @ ops.jx + ops.jy @ ops.jy + ops.jz @ ops.jz
    j = n / 2
    assert np.abs(casimir - j * (j + 1) * np.eye(n + 1)).max() < 1e-10


@pytest.mark.parametrize("n", [1, 2, 3, 10, 25])
def test_hermiticity_and_adjoints(n):
    ops = build_spin_operators(SpinSector(n))
    for op in (ops.jx, ops.jy, ops.jz):
        assert np.abs(op - op.conj().T).max() < 1e-12
    assert np.abs(ops.jp - ops.jm.conj().T).max() < 1e-12


def test_ladder_matrix_elements():
    # J_- amplitude sqrt(j(j+1) - m(m-1)) in the descending-m basis
    n = 4
    sec = SpinSector(n)
    ops = build_spin_operators(sec)
    j = sec.j
    for i, m in enumerate(sec.m_values[:-1]):
        assert ops.jm[i + 1, i] == pytest.approx(np.sqrt(j * (j + 1) - m * (m - 1)))


def test_jx_squared_trace():
    # Tr[J_x^2] / (N+1) = N(N+2)/12, exact small-N rational check
    for n in (1, 2, 3, 4):
        ops = build_spin_operators(SpinSector(n))
        got = np.trace(ops.jx @ ops.jx).real / (n + 1)
        assert got == pytest.approx(n * (n + 2) / 12.0, abs=1e-14)
    for n in (17, 40):
        ops = build_spin_operators(SpinSector(n))
        got = np.trace(ops.jx @ ops.jx).real / (n + 1)
        assert got == pytest.approx(n * (n + 2) / 12.0, rel=1e-12)


def test_n2_jx_squared_explicit():
    ops = build_spin_operators(SpinSector(2))
    assert np.trace(ops.jx @ ops.jx).real == pytest.approx(2.0, abs=1e-14)


def test_maximally_mixed():
    rho = maximally_mixed(SpinSector(1))
    assert np.allclose(rho, np.eye(2) / 2)
    rho3 = maximally_mixed(SpinSector(3))
    assert np.trace(rho3).real == pytest.approx(1.0)
    assert purity(rho3) == pytest.approx(0.25)
    for n in (2, 6, 11):
        ops = build_spin_operators(SpinSector(n))
        val = expect(ops.jx @ ops.jx, maximally_mixed(SpinSector(n)))
        assert val == pytest.approx(n * (n + 2) / 12.0, rel=1e-12)


def test_dark_state():
    for n in (1, 2, 4, 9):
        sec = SpinSector(n)
        ops = build_spin_operators(sec)
        rho = dark_state(sec)
        assert np.abs(ops.jm @ rho).max() == 0.0
        assert expect(ops.jz, rho) == pytest.approx(-n / 2.0)
    assert np.allclose(dark_state(SpinSector(1)), np.diag([0.0, 1.0]))


def test_trace_distance():
    sec = SpinSector(1)
    assert trace_distance(dark_state(sec), dark_state(sec)) == pytest.approx(0.0)
    up = np.diag([1.0, 0.0]).astype(complex)
    assert trace_distance(up, dark_state(sec)) == pytest.approx(1.0)
