import numpy as np
import pytest
from scipy.integrate import quad

from bangbang.kernel import (
    interval_heat_matrix,
    interval_kernel_matrix,
    kernel_duhamel_fields,
    kernel_semigroup_fields,
    kernel_state_fields,
)
from bangbang.spectral import (
    ControlTrajectory,
    Domain,
    GridField,
    GridMismatchError,
    TimeGrid,
    build_basis,
    forward_solve,
)

from oracles import dirichlet_kernel_series


def _cell_integral_series(x, j, h, tau, length, terms=4000):
    """Integral of the series kernel over cell j, done mode by mode in closed form."""
    k = np.arange(1, terms + 1)
    lam = (k * np.pi / length) ** 2
    a, b = j * h, (j + 1) * h
    cell = (np.cos(k * np.pi * a / length) - np.cos(k * np.pi * b / length)) * length / (k * np.pi)
    return float((2.0 / length) * np.sum(np.exp(-lam * tau) * np.sin(k * np.pi * x / length) * cell))


def test_heat_matrix_matches_series():
    n, length, tau = 32, 1.0, 2e-3
    G = interval_heat_matrix(n, length, tau)
    h = length / n
    x = (np.arange(n) + 0.5) * h
    for i, j in [(0, 0), (3, 5), (16, 16), (31, 30)]:
        assert G[i, j] == pytest.approx(_cell_integral_series(x[i], j, h, tau, length), abs=1e-13)


def test_point_kernel_oracle_consistent():
    # Narrow cells approach the point kernel times the cell width.
    n, tau = 4096, 1e-2
    G = interval_heat_matrix(n, 1.0, tau)
    h = 1.0 / n
    x = (np.arange(n) + 0.5) * h
    i, j = 1000, 2100
    assert G[i, j] / h == pytest.approx(dirichlet_kernel_series(x[i], x[j], tau, 1.0), rel=1e-6)


def test_time_integrated_matrix_matches_quadrature():
    n, length, a, b = 16, 1.0, 1e-3, 4e-3
    G = interval_kernel_matrix(n, length, a, b)
    h = length / n
    x = (np.arange(n) + 0.5) * h
    for i, j in [(0, 0), (4, 6), (8, 8)]:
        ref, _ = quad(lambda t: _cell_integral_series(x[i], j, h, t, length, 2000), a, b, epsabs=1e-15)
        assert G[i, j] == pytest.approx(ref, abs=1e-12)


def test_kernel_matrix_from_zero_lag_is_nonnegative():
    G = interval_kernel_matrix(64, 1.0, 0.0, 1e-4)
    assert G.min() >= -1e-300
    assert interval_heat_matrix(64, 1.0, 0.0) == pytest.approx(np.eye(64))


@pytest.fixture(scope="module")
def basis():
    return build_basis(Domain.interval(1.0, 128), 32)


def test_duhamel_fields_match_spectral_for_first_mode_control(basis):
    tg = TimeGrid(0.3, 32)
    u = ControlTrajectory(tg, basis.domain, np.tile(np.sin(np.pi * basis.domain.axis_nodes()), (32, 1)))
    exact = kernel_duhamel_fields(basis, u, tg)
    spectral = forward_solve(basis, GridField(basis.domain, np.zeros(128)), u, tg).fields()
    # Cell averaging of sin(pi x) differs from point values by O(h^2).
    assert np.max(np.abs(exact - spectral)) < 1e-4 * np.max(np.abs(spectral))
    assert not np.any(exact[0])


def test_duhamel_fields_nonnegative_for_on_off_control(basis):
    tg = TimeGrid(0.2, 32)
    values = np.zeros((32, 128))
    values[::3, 40:60] = 7.0
    values[1::5, 90:91] = 3.0
    u = ControlTrajectory(tg, basis.domain, values)
    exact = kernel_duhamel_fields(basis, u, tg)
    spectral = forward_solve(basis, GridField(basis.domain, np.zeros(128)), u, tg).fields()
    assert exact.min() >= -1e-14
    assert spectral.min() < -1e-6  # truncated expansion rings below zero
    # away from the jumps both descriptions agree once high modes have decayed
    assert np.max(np.abs(exact[-1] - spectral[-1])) < 0.5


def test_semigroup_fields_for_cellwise_initial_state(basis):
    tg = TimeGrid(0.05, 16)
    y0 = np.zeros(128)
    y0[30:50] = 1.0
    fields = kernel_semigroup_fields(basis, GridField(basis.domain, y0), tg)
    np.testing.assert_allclose(fields[0], y0, atol=1e-14)
    assert fields.min() >= -1e-14
    assert np.all(np.diff(fields.sum(axis=1)) <= 1e-12)


def test_state_fields_combine(basis):
    tg = TimeGrid(0.1, 16)
    y0 = GridField(basis.domain, np.where(np.arange(128) < 64, 1.0, 0.0))
    u = ControlTrajectory(tg, basis.domain, np.ones((16, 128)))
    total = kernel_state_fields(basis, y0, u, tg)
    parts = kernel_semigroup_fields(basis, y0, tg) + kernel_duhamel_fields(basis, u, tg)
    np.testing.assert_array_equal(total, parts)


def test_rectangle_kernel_is_nonnegative_and_consistent():
    basis = build_basis(Domain.rectangle(1.0, 1.0, 16), 8)
    tg = TimeGrid(0.05, 16)
    values = np.zeros((16, 256))
    values[:8, 100:104] = 2.0
    u = ControlTrajectory(tg, basis.domain, values)
    exact = kernel_duhamel_fields(basis, u, tg)
    assert exact.min() >= -1e-12
    coeffs = forward_solve(basis, GridField(basis.domain, np.zeros(256)), u, tg).final.coeffs
    # With exact cell averages the expansion of the final state converges fast.
    smoothed = (coeffs * basis.cell_average_factors()) @ basis.phi
    assert np.max(np.abs(exact[-1] - smoothed)) < 1e-6 * np.max(np.abs(exact[-1]))


def test_kernel_grid_mismatch(basis):
    u = ControlTrajectory.zeros(TimeGrid(0.1, 16), basis.domain)
    with pytest.raises(GridMismatchError):
        kernel_duhamel_fields(basis, u, TimeGrid(0.1, 32))
