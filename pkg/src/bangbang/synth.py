"""Extraction of the on-off shape control and independent verification.

At the dual optimum the control is ``M * chi_{omega(t)}`` with
``omega(t) = {p*(t) > h(p*(t))}`` and ``M = H(p*)``.  On a grid some cells may
sit exactly at the threshold.  There the optimal control takes fractional
values, and those cells are reported as the plateau.  The fractional values come
from the convex combination of bathtub vertices recorded by the dual solver,
which is what places the terminal state on the boundary of the target ball.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import clarabel
import numpy as np
from scipy import sparse

from .dual import (
    ControlProblem,
    DualReport,
    apply_LT,
    duality_gap,
    primal_cost,
    recover_from_generators,
    vertex,
)
from .kernel import kernel_duhamel_fields
from .spectral import ControlTrajectory, ModeVector, forward_solve, semigroup_apply, to_modes

FRACTION_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SynthesizedControl:
    """On-off control with per-node shape and plateau diagnostics.

    ``shapes[i]`` is the boolean mask of ``omega`` on interval ``i`` (cells where
    the control equals the amplitude) and ``plateau[i]`` the mask of cells with
    fractional values.  ``band`` is the relative tie tolerance that was used.
    """

    control: ControlTrajectory
    amplitude: float
    amplitude_integral: float
    shapes: np.ndarray
    plateau: np.ndarray
    thresholds: np.ndarray
    p_f: ModeVector
    bang_bang: bool
    band: float = float("nan")

    @property
    def plateau_cells(self) -> np.ndarray:
        return self.plateau.sum(axis=1)

    @property
    def shape_measures(self) -> np.ndarray:
        return self.shapes.sum(axis=1) * self.control.domain.cell

    def masses(self) -> np.ndarray:
        return self.control.values.sum(axis=1) * self.control.domain.cell


def _thresholds(V: np.ndarray, cell: float, budget: float, forbidden) -> np.ndarray:
    """Per-node ``h(p(t))`` computed from sorted values."""
    if forbidden is not None:
        V = V[:, ~forbidden]
    full = int(np.floor(budget / cell + 1e-9))
    vs = -np.sort(-V, axis=1)
    if full >= vs.shape[1]:
        return np.zeros(V.shape[0])
    return np.maximum(vs[:, full], 0.0)


BAND_LADDER = (1e-12, 1e-10, 1e-8, 1e-6, 1e-4, 1e-3, 1e-2, 1e-1)


def _fill_band(prob: ControlProblem, V: np.ndarray, h: np.ndarray, M: float, tau: float):
    """Best fractional values on the near-tie band ``|V - h| <= tau max|V|``.

    Cells above the band receive the full amplitude, cells below receive zero,
    and band cells take values ``M w`` with ``0 <= w <= 1`` chosen to minimise the
    terminal residual subject to the per-node volume budget.  Returns
    ``(residual, relaxed control in [0, 1])`` or ``None`` if the cone programme fails.
    """
    basis, W = prob.basis, prob.W
    cell, budget = basis.domain.cell, prob.budget
    d = prob.d.coeffs
    K = basis.size
    delta = tau * np.max(np.abs(V), axis=1, keepdims=True)
    band = np.abs(V - h[:, None]) <= delta
    if prob.forbidden is not None:
        band[:, prob.forbidden] = False
    strict = (V > h[:, None] + delta) & ~band
    if prob.forbidden is not None:
        strict[:, prob.forbidden] = False
    base = M * apply_LT(prob, strict.astype(float))
    rows, cols = np.nonzero(band)
    N = len(rows)
    if N == 0:
        return float(np.linalg.norm(base - d)), strict.astype(float)
    C = M * (W[rows, :] * basis.phi[:, cols].T) * cell
    nodes, slot = np.unique(rows, return_inverse=True)
    zcol = sparse.csc_matrix((N, 1))
    mass = sparse.csc_matrix((np.full(N, cell), (slot, np.arange(N))), shape=(len(nodes), N))
    A = sparse.vstack([
        sparse.hstack([-sparse.identity(N), zcol]),
        sparse.hstack([sparse.identity(N), zcol]),
        sparse.hstack([mass, sparse.csc_matrix((len(nodes), 1))]),
        sparse.hstack([sparse.csc_matrix((1, N)), -sparse.identity(1)]),
        sparse.hstack([-sparse.csc_matrix(C.T), sparse.csc_matrix((K, 1))]),
    ], format="csc")
    b = np.concatenate([np.zeros(N), np.ones(N), budget - strict[nodes].sum(axis=1) * cell, [0.0], base - d])
    c = np.zeros(N + 1)
    c[-1] = 1.0
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    cones = [clarabel.NonnegativeConeT(2 * N + len(nodes)), clarabel.SecondOrderConeT(K + 1)]
    sol = clarabel.DefaultSolver(sparse.csc_matrix((N + 1, N + 1)), c, A, b, cones, settings).solve()
    if not str(sol.status).startswith(("Solved", "AlmostSolved")):
        return None
    w = np.clip(np.asarray(sol.x[:N], dtype=float), 0.0, 1.0)
    w[w <= FRACTION_TOL] = 0.0
    w[w >= 1.0 - FRACTION_TOL] = 1.0
    U = strict.astype(float)
    U[rows, cols] = w
    return float(np.linalg.norm(M * apply_LT(prob, U) - d)), U


def extract_control(
    p_f, prob: ControlProblem, report: DualReport | None = None, band_tol: float = 1e-6
) -> SynthesizedControl:
    """Build ``u* = M chi_{p* > h}`` plus plateau values from the dual minimiser.

    The amplitude is ``M = H(p_f)`` and is cross-checked against the double
    integral of ``p*`` over the optimal shapes.  The shapes are the strict
    superlevel sets ``{p*(t) > h(p*(t)) + delta}``.  Cells within ``delta`` of the
    threshold form the plateau, and their values are fitted so the terminal state
    reaches the target ball.  The smallest relative band ``delta`` from a fixed
    ladder whose residual is within ``eps (1 + band_tol)`` is used.  If no band
    succeeds, the relaxed control recorded by the dual report is used when one is
    supplied; otherwise the plain bathtub maximiser of ``p_f`` is used.
    """
    p = p_f.coeffs if isinstance(p_f, ModeVector) else np.asarray(p_f, dtype=float)
    dom = prob.basis.domain
    m = prob.grid.m
    vx = vertex(prob, p)
    M = vx.H
    integral = float(np.sum(vx.V * vx.U) * dom.cell)
    if M <= 0.0:
        zeros = np.zeros((m, dom.size), dtype=bool)
        return SynthesizedControl(
            ControlTrajectory.zeros(prob.grid, dom), 0.0, integral, zeros, zeros.copy(),
            np.zeros(m), ModeVector(prob.basis, p), True, float("nan"),
        )
    thresholds = _thresholds(vx.V, dom.cell, prob.budget, prob.forbidden)
    Uc, used = None, float("nan")
    for tau in BAND_LADDER:
        out = _fill_band(prob, vx.V, thresholds, M, tau)
        if out is not None and out[0] <= prob.eps * (1 + band_tol):
            Uc, used = out[1], tau
            break
    if Uc is None:
        if report is not None and len(report.weights) > 0:
            Uc = recover_from_generators(prob, report.generators, report.weights)
        else:
            Uc = vx.U
    shapes = Uc >= 1.0 - FRACTION_TOL
    plateau = (Uc > FRACTION_TOL) & ~shapes
    values = np.where(shapes, 1.0, np.where(plateau, Uc, 0.0)) * M
    bang_bang = bool(plateau.sum() <= 2 * m)
    return SynthesizedControl(
        ControlTrajectory(prob.grid, dom, values), M, integral, shapes, plateau,
        thresholds, ModeVector(prob.basis, p), bang_bang, used,
    )


@dataclass(frozen=True)
class VerificationThresholds:
    """Pass/fail limits attached to a verification report."""

    tol_feas: float = 1e-3
    boundary_low: float = 0.95
    comparison: float = 1e-8
    gap: float = 1e-3
    amplitude: float = 1e-10


@dataclass(frozen=True)
class VerificationReport:
    """Certificates computed from an independent forward simulation."""

    residual: float
    eps: float
    boundary_deviation: float
    volume_violation: float
    amplitude_deviation: float
    comparison_min: float
    comparison_min_spectral: float
    cost: float
    gap: float
    rel_gap: float
    fenchel_defect: float
    plateau_cells_max: int
    nontrivial: bool
    checks: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def verify(sc: SynthesizedControl, prob: ControlProblem, thresholds: VerificationThresholds | None = None) -> VerificationReport:
    """Check the synthesized control by forward simulation.

    The terminal residual is measured in the truncated basis, the same space in
    which the target ball is posed.  The comparison certificate uses the exact
    heat kernel for the cell-wise constant control, so it reports the sign of
    the actual heat flow; the value seen through the truncated expansion is
    reported alongside.
    """
    th = thresholds or VerificationThresholds()
    basis, tg = prob.basis, prob.grid
    dom = basis.domain
    u = sc.control
    traj = forward_solve(basis, prob.y0, u, tg)
    target = to_modes(prob.yf, basis).coeffs
    residual = float(np.linalg.norm(traj.final.coeffs - target))
    y0m = to_modes(prob.y0, basis)
    free = np.array([semigroup_apply(basis, t, y0m).coeffs for t in tg.edges])
    spectral_min = float(np.min((traj.coeffs - free) @ basis.phi))
    exact_min = float(np.min(kernel_duhamel_fields(basis, u, tg)))
    cell = dom.cell
    volume = float(np.max(sc.shapes.sum(axis=1) * cell - prob.budget, initial=-prob.budget))
    active = sc.shapes.any(axis=1)
    sup = u.values.max(axis=1)
    amp_dev = float(np.max(np.abs(sup[active] - sc.amplitude), initial=0.0))
    cost = primal_cost(u, prob)
    gap = duality_gap(sc.p_f, u, prob, th.tol_feas)
    J = -gap.dual
    rel_gap = gap.gap / max(abs(J), 1e-300) if gap.feasible and J != 0 else (0.0 if gap.feasible else np.inf)
    # Fenchel equality F(u) + F*(L_T* p) = <u, L_T* p>
    vx = vertex(prob, sc.p_f.coeffs)
    pairing = float(np.sum(u.values * vx.V) * cell)
    conj = 0.5 * vx.H * vx.H
    fenchel = abs(cost + conj - pairing) / max(abs(pairing), 1e-300) if pairing != 0 else abs(cost + conj)
    nontrivial = prob.nontrivial
    checks = {
        "feasible": residual <= prob.eps * (1 + th.tol_feas),
        "nonnegative": bool(np.all(u.values >= 0)),
        "volume": volume <= cell * (1 + 1e-9),
        "amplitude": amp_dev <= th.amplitude * max(1.0, sc.amplitude),
        "comparison": exact_min >= -th.comparison * max(1.0, prob.y0.norm()),
        "gap": gap.feasible and rel_gap <= th.gap,
        "amplitude_two_ways": abs(sc.amplitude - sc.amplitude_integral) <= 1e-10 * max(1.0, sc.amplitude),
    }
    if nontrivial:
        checks["ball_boundary"] = residual >= th.boundary_low * prob.eps
    return VerificationReport(
        residual, prob.eps, abs(residual - prob.eps), volume, amp_dev, exact_min, spectral_min, cost,
        float(gap.gap), float(rel_gap), float(fenchel), int(sc.plateau_cells.max(initial=0)), nontrivial, checks,
    )
