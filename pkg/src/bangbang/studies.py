"""Batch experiments on the amplitude value function and on support obstructions.

* ``sweep_amplitude`` tabulates ``M(T)`` and ``Pi(T) = M(T)^2 / 2`` over a list of
  horizons, with the exponential-stability lower bound checked on every row.
* ``minimal_time`` inverts ``Pi`` by bisection.
* ``obstruction_experiment`` compares the best reachable residual when controls
  must vanish on a ball with the unrestricted one.
* ``adjoint_witness`` builds the sign-changing adjoint datum ``xi * phi_1`` and
  scans for how long its backward flow stays nonnegative outside the ball.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dual import ControlProblem, DualOptions, cone_distance, minimize_dual
from .spectral import (
    GridField,
    SpectralBasis,
    TimeGrid,
    from_modes,
    semigroup_apply,
    to_modes,
)


class GeometryError(ValueError):
    """Raised when a ball or a compact set does not fit the assumptions of the experiment."""


@dataclass(frozen=True, eq=False)
class ProblemTemplate:
    """Everything that defines a control problem except the horizon ``T``."""

    basis: SpectralBasis
    m: int
    y0: GridField
    yf: GridField
    eps: float
    L: float
    rule: str = "uniform"
    grading: float = 2.0
    forbidden: np.ndarray | None = None

    def at(self, T: float) -> ControlProblem:
        grid = TimeGrid(T, self.m, self.rule, self.grading)
        return ControlProblem(self.basis, grid, self.y0, self.yf, self.eps, self.L, self.forbidden)

    @property
    def zero_initial(self) -> bool:
        return not np.any(self.y0.values)


@dataclass(frozen=True)
class SweepRow:
    T: float
    M: float
    Pi: float
    J: float
    rel_gap: float
    converged: bool
    status: str
    bound: float
    margin: float
    iterations: int


@dataclass(frozen=True)
class SweepTable:
    """Rows sorted by ``T`` plus statistics over the converged rows.

    ``max_violation`` is the largest relative increase of ``M`` between
    consecutive converged rows, ``T_ell`` the first horizon from which three
    consecutive values agree within ``2 * gap_tol`` (``None`` if not detected),
    ``mu_minus`` the tail value of ``Pi`` and ``blowup_constant`` the smaller of
    ``M(T) T`` over the two shortest horizons.
    """

    rows: list
    gap_tol: float
    max_violation: float
    monotone: bool
    T_ell: float | None
    mu_minus: float
    max_jump: float
    blowup_constant: float
    blowup_exponent: float

    @property
    def converged_rows(self) -> list:
        return [r for r in self.rows if r.converged]


def lower_bound(prob: ControlProblem) -> float:
    """``|alpha| (||y_f - S_T y0|| - eps) / (sqrt(L |Omega|) (1 - exp(alpha T)))``."""
    alpha = prob.basis.alpha
    T = prob.grid.T
    return float(abs(alpha) * (prob.d_norm - prob.eps) / (np.sqrt(prob.budget) * (-np.expm1(alpha * T))))


def check_lower_bound(row: SweepRow, prob: ControlProblem) -> float:
    """Margin ``M(T) - bound``; nonnegative up to round-off for every converged row."""
    return float(row.M - lower_bound(prob))


def _row(prob: ControlProblem, options: DualOptions | None) -> SweepRow:
    rep = minimize_dual(prob, options)
    bound = lower_bound(prob)
    return SweepRow(
        prob.grid.T, rep.H, rep.Pi, rep.J, rep.rel_gap if rep.status != "trivial" else 0.0,
        rep.converged, rep.status, float(bound), float(rep.H - bound), rep.iterations,
    )


def sweep_amplitude(
    template: ProblemTemplate, T_values, options: DualOptions | None = None, gap_tol: float = 1e-3
) -> SweepTable:
    """One dual solve per horizon; statistics use converged rows only."""
    Ts = [float(t) for t in T_values]
    if any(t <= 0 for t in Ts) or any(b <= a for a, b in zip(Ts, Ts[1:])):
        raise ValueError("T values must be positive and strictly increasing")
    rows = [_row(template.at(T), options) for T in Ts]
    good = [r for r in rows if r.converged]
    M = np.array([r.M for r in good])
    T = np.array([r.T for r in good])
    if len(M) >= 2:
        steps = np.diff(M) / np.maximum(M[:-1], 1e-300)
        violation = float(max(steps.max(), 0.0))
        jump = float(np.max(np.abs(np.diff(M))))
    else:
        violation, jump = 0.0, 0.0
    T_ell = None
    for i in range(len(M) - 2):
        window = M[i : i + 3]
        if window.max() - window.min() <= 2 * gap_tol * max(window.max(), 1e-300):
            T_ell = float(T[i])
            break
    mu = float(0.5 * M[-1] ** 2) if len(M) else float("nan")
    if len(M) >= 2 and M[0] > 0 and M[1] > 0:
        const = float(min(M[0] * T[0], M[1] * T[1]))
        exponent = float(-np.log(M[1] / M[0]) / np.log(T[1] / T[0]))
    else:
        const, exponent = float("nan"), float("nan")
    return SweepTable(rows, gap_tol, violation, violation <= 2 * gap_tol, T_ell, mu, jump, const, exponent)


@dataclass(frozen=True)
class MinimalTimeResult:
    """Outcome of the minimal-time inversion.

    ``status`` is ``"found"`` or ``"no_finite_time"``.
    """

    lam: float
    T_star: float
    Pi_at_T: float
    status: str
    evaluations: int
    bracket: tuple


def minimal_time(
    lam: float,
    template: ProblemTemplate,
    bracket: tuple[float, float],
    options: DualOptions | None = None,
    tol: float = 1e-3,
    mu_minus: float | None = None,
    max_evaluations: int = 60,
) -> MinimalTimeResult:
    """Smallest ``T`` with ``Pi(T) <= lam`` by bisection on the non-increasing map ``Pi``.

    The bracket must satisfy ``Pi(T_lo) > lam >= Pi(T_hi)``.  The search stops
    once the bracket is narrower than ``tol * T``.  A budget at or below the
    observed tail value ``mu_minus`` has no finite minimal time at this tolerance.
    """
    if not template.zero_initial:
        raise ValueError("minimal-time inversion relies on monotonicity, which needs y0 = 0")
    if mu_minus is not None and lam <= mu_minus:
        return MinimalTimeResult(lam, float("inf"), float("nan"), "no_finite_time", 0, tuple(bracket))
    lo, hi = float(bracket[0]), float(bracket[1])
    if not (0 < lo < hi):
        raise ValueError(f"invalid bracket {bracket}: need 0 < T_lo < T_hi")

    def Pi(T: float) -> float:
        return minimize_dual(template.at(T), options).Pi

    p_lo, p_hi = Pi(lo), Pi(hi)
    evaluations = 2
    if not (p_lo > lam >= p_hi):
        raise ValueError(
            f"invalid bracket: need Pi(T_lo) > lambda >= Pi(T_hi), got Pi({lo})={p_lo}, Pi({hi})={p_hi}, lambda={lam}"
        )
    while hi - lo > tol * hi and evaluations < max_evaluations:
        mid = 0.5 * (lo + hi)
        p_mid = Pi(mid)
        evaluations += 1
        if p_mid > lam:
            lo = mid
        else:
            hi, p_hi = mid, p_mid
    return MinimalTimeResult(lam, hi, p_hi, "found", evaluations, (lo, hi))


def amplitude_threshold(table: SweepTable) -> tuple[float, bool]:
    """Estimate of ``inf_T M(T)`` as the smallest converged amplitude.

    The flag is always true: a finite sweep can only overestimate the infimum.
    """
    good = table.converged_rows
    if not good:
        return float("nan"), True
    return float(min(r.M for r in good)), True


def ball_mask(basis: SpectralBasis, center, radius: float) -> np.ndarray:
    """Grid nodes inside the open ball ``B(center, radius)``."""
    pts = basis.domain.points()
    c = np.atleast_1d(np.asarray(center, dtype=float))
    return np.linalg.norm(pts - c[None, :], axis=1) < radius


def _check_ball(basis: SpectralBasis, center, radius: float) -> np.ndarray:
    c = np.atleast_1d(np.asarray(center, dtype=float))
    if c.size != basis.domain.dim or radius <= 0:
        raise GeometryError("ball center has the wrong dimension or the radius is not positive")
    for axis, length in enumerate(basis.domain.lengths):
        if not (c[axis] - radius > 0 and c[axis] + radius < length):
            raise GeometryError("the ball must lie strictly inside the domain")
    return c


@dataclass(frozen=True)
class ObstructionRow:
    T: float
    restricted_residual: float
    restricted_certified: bool
    unrestricted_residual: float
    unrestricted_status: str
    unrestricted_M: float
    eps: float

    @property
    def restricted_fails(self) -> bool:
        return self.restricted_residual > self.eps


@dataclass(frozen=True)
class ObstructionTable:
    """Restricted versus unrestricted reachability over a list of horizons.

    ``threshold`` is the largest tested ``T`` such that the restricted problem
    fails at that horizon and every shorter one; it is an observation on the
    tested grid, not the critical time itself.
    """

    center: tuple
    radius: float
    rows: list
    threshold: float | None
    witness: "WitnessReport | None" = None


def obstruction_experiment(
    template: ProblemTemplate,
    center,
    radius: float,
    T_values,
    options: DualOptions | None = None,
    max_columns: int = 300,
    witness_radius: float | None = None,
    witness_T=None,
) -> ObstructionTable:
    """Best residual with controls masked on ``B(center, radius)`` versus unmasked.

    The restricted residual is the distance from the target to the cone of
    masked reachable states (exact when certified).  The unrestricted column
    pool is seeded with the restricted one, so its residual is never larger.
    A full unrestricted dual solve is also recorded for every horizon.
    When ``witness_radius`` is given, the witness adjoint for
    ``K = B(center, witness_radius)`` is scanned over ``witness_T`` (by default
    a geometric grid from ``1e-5`` to the longest horizon).
    """
    basis = template.basis
    c = _check_ball(basis, center, radius)
    if not template.zero_initial:
        raise ValueError("the obstruction experiment uses y0 = 0")
    if np.any(template.yf.values < 0) or not np.any(template.yf.values):
        raise ValueError("the target must be nonnegative and nontrivial")
    mask = ball_mask(basis, c, radius)
    if np.any(template.yf.values[~mask] != 0):
        raise GeometryError("the target must be supported inside the ball")
    rows = []
    for T in [float(t) for t in T_values]:
        prob = template.at(T)
        restricted = cone_distance(prob.with_forbidden(mask), max_iter=max_columns)
        free = cone_distance(prob, max_iter=max_columns, columns=restricted.columns)
        rep = minimize_dual(prob, options)
        rows.append(
            ObstructionRow(
                T, restricted.residual, restricted.certified, free.residual, rep.status, rep.H, prob.eps
            )
        )
    threshold = None
    for row in rows:
        if row.restricted_fails:
            threshold = row.T
        else:
            break
    witness = None
    if witness_radius is not None:
        if witness_T is None:
            witness_T = np.geomspace(1e-5, max(r.T for r in rows), 25)
        witness = adjoint_witness(basis, c, radius, witness_radius, witness_T, template.yf)
    return ObstructionTable(tuple(float(v) for v in c), float(radius), rows, threshold, witness)


def _smooth_step(s: np.ndarray) -> np.ndarray:
    """C-infinity transition from 0 (s <= 0) to 1 (s >= 1)."""
    s = np.clip(s, 0.0, 1.0)
    with np.errstate(divide="ignore"):
        a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
        b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class WitnessReport:
    """Sign scan of the backward flow of ``p_f = xi * phi_1``.

    ``holds[j]`` tells whether ``S_s p_f >= 0`` off the ball for every sampled
    ``s <= T_values[j]``; ``T_star`` is the largest tested horizon for which
    this and every shorter horizon hold.  The signs are checked on the
    truncated datum ``P_K p_f``; ``projection_error`` is the largest nodal
    difference between ``p_f`` and its projection.
    """

    T_values: np.ndarray
    holds: np.ndarray
    min_off_ball: np.ndarray
    negative_on_K: bool
    T_star: float | None
    pairing: float | None
    projection_error: float
    p_f: GridField = field(repr=False)


def witness_datum(basis: SpectralBasis, center, radius: float, k_radius: float, flip: bool = True) -> GridField:
    """``xi * phi_1`` with ``xi = -1`` on the ball of radius ``k_radius`` and ``+1`` off ``B(center, radius)``."""
    pts = basis.domain.points()
    rho = np.linalg.norm(pts - np.atleast_1d(center)[None, :], axis=1)
    xi = -1.0 + 2.0 * _smooth_step((rho - k_radius) / (radius - k_radius)) if flip else np.ones(len(rho))
    phi1 = basis.phi[0]
    return GridField(basis.domain, xi * phi1)


def adjoint_witness(
    basis: SpectralBasis,
    center,
    radius: float,
    k_radius: float,
    T_values,
    yf: GridField | None = None,
    flip: bool = True,
    samples: int = 2001,
    tol: float = 1e-10,
) -> WitnessReport:
    """Scan the sign conditions of the witness adjoint over the horizons ``T_values``.

    Condition (i): ``p_f < 0`` on the compact set ``K = B(center, k_radius)``.
    Condition (ii): ``p(t) = S_{T - t} p_f >= 0`` off the ball for all ``t`` in
    ``[0, T]``, checked on a uniform sample of lags (plus the horizons
    themselves) with tolerance ``tol * max|p_f|``.
    """
    c = _check_ball(basis, center, radius)
    if not (0 < k_radius < radius):
        raise GeometryError("K must lie strictly inside the ball")
    Ts = np.sort(np.asarray(T_values, dtype=float))
    datum = witness_datum(basis, c, radius, k_radius, flip)
    pf = to_modes(datum, basis)
    pf_grid = from_modes(pf).values
    off = ~ball_mask(basis, c, radius)
    in_K = ball_mask(basis, c, k_radius)
    negative_on_K = bool(np.all(pf_grid[in_K] < 0)) if in_K.any() else False
    lags = np.unique(np.concatenate([np.linspace(0.0, Ts.max(), samples), Ts]))
    decay = np.exp(-np.outer(lags, basis.eigenvalues))
    fields = (decay * pf.coeffs[None, :]) @ basis.phi
    running = np.minimum.accumulate(fields[:, off].min(axis=1))
    scale = tol * float(np.max(np.abs(pf_grid)))
    idx = np.searchsorted(lags, Ts)
    min_off = running[idx]
    holds = min_off >= -scale
    T_star = None
    for T, ok in zip(Ts, holds):
        if ok:
            T_star = float(T)
        else:
            break
    pairing = datum.inner(yf) if yf is not None else None
    error = float(np.max(np.abs(pf_grid - datum.values)))
    return WitnessReport(Ts, holds, min_off, negative_on_K, T_star, pairing, error, datum)


__all__ = [
    "GeometryError",
    "MinimalTimeResult",
    "ObstructionRow",
    "ObstructionTable",
    "ProblemTemplate",
    "SweepRow",
    "SweepTable",
    "WitnessReport",
    "adjoint_witness",
    "amplitude_threshold",
    "ball_mask",
    "check_lower_bound",
    "lower_bound",
    "minimal_time",
    "obstruction_experiment",
    "semigroup_apply",
    "sweep_amplitude",
    "witness_datum",
]
