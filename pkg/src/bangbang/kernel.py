"""Physical-space evaluation of the heat flow for cell-wise constant data.

A truncated eigen-expansion of a nonnegative, discontinuous function rings and
can dip below zero near jumps even though the true heat flow never does.  The
routines here give the state of the *untruncated* Dirichlet problem when the
data (initial state and control) are constant on every grid cell and every time
interval, which is how the synthesized controls are defined.

The contribution of recent time intervals is computed from the Dirichlet heat
kernel by the method of images, in closed form on an interval and with a
positive-weight Gauss-Legendre rule in time on a rectangle.  Older intervals are
propagated spectrally with exact cell-average coefficients: once a contribution
has diffused for a time ``tau >= cutoff / lambda_{K+1}`` the discarded modes are
damped by ``exp(-cutoff)`` and the truncation error is below round-off.
"""
from __future__ import annotations

import numpy as np
from scipy.special import erf, erfc

from .spectral import (
    ControlTrajectory,
    GridField,
    GridMismatchError,
    SpectralBasis,
    TimeGrid,
    control_modes,
)

_IMAGES = (-2, -1, 0, 1, 2)


def _erfc_antiderivative(z: np.ndarray, tau: float) -> np.ndarray:
    """``E(z, tau) = int_0^tau erfc(z / (2 sqrt(s))) / 2 ds`` for ``z >= 0``."""
    if tau <= 0.0:
        return np.zeros_like(z)
    r = z / (2.0 * np.sqrt(tau))
    return 0.5 * ((tau + 0.5 * z * z) * erfc(r) - z * np.sqrt(tau / np.pi) * np.exp(-r * r))


def _half_erf_integral(z: np.ndarray, a: float, b: float) -> tuple[np.ndarray, np.ndarray]:
    """Split ``int_a^b erf(z / (2 sqrt(s))) / 2 ds`` into ``sign(z) (b-a)/2`` and a tail.

    Returns ``(sign, tail)`` with the integral equal to ``sign * ((b - a)/2 - tail)``.
    Keeping the two parts apart avoids cancellation when differences are taken.
    """
    s = np.sign(z)
    az = np.abs(z)
    return s, _erfc_antiderivative(az, b) - _erfc_antiderivative(az, a)


def _cell_profile_time_integrated(d: np.ndarray, h: float, a: float, b: float) -> np.ndarray:
    """``int_a^b int_{|x'| < h/2} g(tau, d - x') dx' dtau`` for the free kernel ``g``."""
    s1, t1 = _half_erf_integral(d + 0.5 * h, a, b)
    s2, t2 = _half_erf_integral(d - 0.5 * h, a, b)
    return 0.5 * (s1 - s2) * (b - a) - s1 * t1 + s2 * t2


def _cell_profile(d: np.ndarray, h: float, tau: float) -> np.ndarray:
    """``int_{|x'| < h/2} g(tau, d - x') dx'``; the cell indicator when ``tau = 0``."""
    if tau <= 0.0:
        return (np.abs(d) < 0.5 * h).astype(float)
    q = 2.0 * np.sqrt(tau)
    return 0.5 * (erf((d + 0.5 * h) / q) - erf((d - 0.5 * h) / q))


def _dirichlet_matrix(n: int, length: float, profile) -> np.ndarray:
    """Node-by-cell matrix of a Dirichlet kernel built from a free-space cell profile."""
    h = length / n
    idx = np.arange(n)
    diff = (idx[:, None] - idx[None, :])
    summ = (idx[:, None] + idx[None, :] + 1)
    offsets = np.arange(-(n - 1), n) * h
    sums = np.arange(1, 2 * n) * h
    direct = np.zeros(2 * n - 1)
    mirror = np.zeros(2 * n - 1)
    for k in _IMAGES:
        direct += profile(offsets + 2 * k * length)
        mirror += profile(sums + 2 * k * length)
    return direct[diff + n - 1] - mirror[summ - 1]


def interval_kernel_matrix(n: int, length: float, a: float, b: float) -> np.ndarray:
    """``G[i, j] = int_a^b int_{cell j} G_D(tau, x_i, x') dx' dtau`` on ``(0, length)``."""
    h = length / n
    return _dirichlet_matrix(n, length, lambda d: _cell_profile_time_integrated(d, h, a, b))


def interval_heat_matrix(n: int, length: float, tau: float) -> np.ndarray:
    """``G[i, j] = int_{cell j} G_D(tau, x_i, x') dx'`` on ``(0, length)``."""
    h = length / n
    return _dirichlet_matrix(n, length, lambda d: _cell_profile(d, h, tau))


def _tail_eigenvalue(basis: SpectralBasis) -> float:
    """Lower bound on the eigenvalue of any mode left out of the basis."""
    return min(((basis.K + 1) * np.pi / length) ** 2 for length in basis.domain.lengths)


class _RecentKernel:
    """Applies the exact kernel over a lag window ``[a, b]`` to a cell-wise constant field."""

    def __init__(self, basis: SpectralBasis, gauss_points: int = 24):
        self.domain = basis.domain
        self.s, self.w = np.polynomial.legendre.leggauss(gauss_points)
        self.s = 0.5 * (self.s + 1.0)
        self.w = 0.5 * self.w

    def window(self, values: np.ndarray, a: float, b: float) -> np.ndarray:
        dom = self.domain
        if dom.dim == 1:
            return interval_kernel_matrix(dom.n, dom.lengths[0], a, b) @ values
        # Substituting tau = a + (b - a) s^2 removes the sqrt(tau) singularity at a = 0.
        out = np.zeros(dom.size)
        grid = values.reshape(dom.shape)
        for s, w in zip(self.s, self.w):
            tau = a + (b - a) * s * s
            gx = interval_heat_matrix(dom.n, dom.lengths[0], tau)
            gy = interval_heat_matrix(dom.n, dom.lengths[1], tau)
            out += 2.0 * (b - a) * s * w * (gx @ grid @ gy.T).ravel()
        return out

    def instant(self, values: np.ndarray, tau: float) -> np.ndarray:
        dom = self.domain
        if dom.dim == 1:
            return interval_heat_matrix(dom.n, dom.lengths[0], tau) @ values
        gx = interval_heat_matrix(dom.n, dom.lengths[0], tau)
        gy = interval_heat_matrix(dom.n, dom.lengths[1], tau)
        return (gx @ values.reshape(dom.shape) @ gy.T).ravel()


def kernel_duhamel_fields(
    basis: SpectralBasis, u: ControlTrajectory, tg: TimeGrid, cutoff: float = 40.0
) -> np.ndarray:
    """Nodal values of ``int_0^{t_j} S_{t_j - s} u(s) ds`` at every edge ``t_j``.

    The control is read as constant on each grid cell and each time interval.
    Returns an array of shape ``(m + 1, size)``; row 0 is zero.
    """
    if u.domain != basis.domain or not u.grid.same_as(tg):
        raise GridMismatchError("control does not match the basis or the time grid")
    lam = basis.eigenvalues
    tau_c = cutoff / _tail_eigenvalue(basis)
    uh = control_modes(basis, u) * basis.cell_average_factors()[None, :]
    edges = tg.edges
    Y = np.zeros((tg.m + 1, basis.size))
    for j, dt in enumerate(tg.widths):
        Y[j + 1] = np.exp(-lam * dt) * Y[j] + (-np.expm1(-lam * dt)) / lam * uh[j]
    recent = _RecentKernel(basis)
    cache: dict[tuple[float, float], np.ndarray] = {}
    out = np.zeros((tg.m + 1, basis.domain.size))
    for j in range(1, tg.m + 1):
        t = edges[j]
        i0 = j - 1
        while i0 > 0 and t - edges[i0] < tau_c:
            i0 -= 1
        old = np.exp(-lam * (t - edges[i0])) * Y[i0]
        field = old @ basis.phi
        for i in range(i0, j):
            if not np.any(u.values[i]):
                continue
            a, b = t - edges[i + 1], t - edges[i]
            if basis.domain.dim == 1:
                key = (round(a, 15), round(b, 15))
                if key not in cache:
                    dom = basis.domain
                    cache[key] = interval_kernel_matrix(dom.n, dom.lengths[0], a, b)
                field = field + cache[key] @ u.values[i]
            else:
                field = field + recent.window(u.values[i], a, b)
        out[j] = field
    return out


def kernel_semigroup_fields(basis: SpectralBasis, y0: GridField, tg: TimeGrid, cutoff: float = 40.0) -> np.ndarray:
    """Nodal values of ``S_{t_j} y0`` for cell-wise constant ``y0`` at every edge."""
    if y0.domain != basis.domain:
        raise GridMismatchError("initial state and basis are defined on different domains")
    tau_c = cutoff / _tail_eigenvalue(basis)
    coeffs = basis.phi @ y0.values * basis.domain.cell * basis.cell_average_factors()
    recent = _RecentKernel(basis)
    out = np.empty((tg.m + 1, basis.domain.size))
    for j, t in enumerate(tg.edges):
        if t >= tau_c:
            out[j] = (np.exp(-basis.eigenvalues * t) * coeffs) @ basis.phi
        else:
            out[j] = recent.instant(y0.values, t)
    return out


def kernel_state_fields(
    basis: SpectralBasis, y0: GridField, u: ControlTrajectory, tg: TimeGrid, cutoff: float = 40.0
) -> np.ndarray:
    """State of the untruncated problem at every edge, shape ``(m + 1, size)``."""
    return kernel_semigroup_fields(basis, y0, tg, cutoff) + kernel_duhamel_fields(basis, u, tg, cutoff)
