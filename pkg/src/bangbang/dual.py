"""Dual functional of the amplitude-minimal approximate control problem.

For terminal adjoint data ``p`` (eigen-coefficients) the dual functional is

    J(p) = 1/2 H(p)^2 - <d, p> + eps ||p||,     H(p) = int_0^T sigma(p(t)) dt,

where ``d = y_f - S_T y_0`` and ``sigma`` is the support function of the relaxed
shape set.  On the time grid ``H(p) = sum_i sigma(V_i)`` with ``V_i`` the adjoint
integrated over interval ``i``; this makes ``<L_T u, p> = sum_i <u_i, V_i>`` exact
and weak duality holds without quadrature error.

``J`` is convex and positively 2-homogeneous in its first term, so along a ray
``p = s q`` the minimum over ``s >= 0`` is explicit and equals ``-R(q)^2 / 2`` with

    R(q) = (<d, q> - eps ||q||)_+ / H(q).

The optimal amplitude is ``M = max_q R(q)``.  Its primal description is the
smallest ``M`` for which the eps-ball around ``d`` meets ``M * C``, where ``C`` is
the image of the relaxed shape set under ``L_T``.  The bathtub maximiser is the
linear minimisation oracle of ``C``, which gives a cutting-plane method with a
primal certificate at every step: a small second-order cone programme over the
collected vertices yields an upper bound on ``M``, the ray values give lower
bounds, and the vertex weights recover the optimal control.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from functools import cached_property

import clarabel
import numpy as np
from scipy import sparse
from scipy.optimize import nnls

from .bathtub import support_batch, volume_budget
from .spectral import (
    ControlTrajectory,
    GridField,
    ModeVector,
    SpectralBasis,
    TimeGrid,
    adjoint_map,
    control_weights,
    duhamel_modes,
    from_modes,
    semigroup_apply,
    to_modes,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ControlProblem:
    """Data of one approximate control problem on a fixed discretization.

    ``forbidden`` optionally marks grid nodes where the control must vanish.
    """

    basis: SpectralBasis
    grid: TimeGrid
    y0: GridField
    yf: GridField
    eps: float
    L: float
    forbidden: np.ndarray | None = None

    def __post_init__(self):
        if not (np.isfinite(self.eps) and self.eps > 0):
            raise ValueError(f"eps must be positive, got {self.eps}")
        if not (0.0 < self.L < 1.0):
            raise ValueError(f"L must lie in (0,1), got {self.L}")
        dom = self.basis.domain
        if self.y0.domain != dom or self.yf.domain != dom:
            raise ValueError("initial state and target must live on the basis domain")
        if self.forbidden is not None:
            mask = np.asarray(self.forbidden, dtype=bool).ravel()
            if mask.size != dom.size:
                raise ValueError("forbidden mask does not match the grid")
            if mask.all():
                raise ValueError("the forbidden mask covers the whole domain")
            object.__setattr__(self, "forbidden", mask if mask.any() else None)

    @cached_property
    def W(self) -> np.ndarray:
        return control_weights(self.basis, self.grid)

    @cached_property
    def d(self) -> ModeVector:
        """Displacement ``y_f - S_T y_0`` in the truncated basis."""
        free = semigroup_apply(self.basis, self.grid.T, to_modes(self.y0, self.basis))
        return to_modes(self.yf, self.basis) - free

    @property
    def d_norm(self) -> float:
        return self.d.norm()

    @property
    def budget(self) -> float:
        return volume_budget(self.basis.domain, self.L)

    @property
    def nontrivial(self) -> bool:
        """Whether the trivial control misses the target ball."""
        return self.d_norm > self.eps

    @property
    def admissible(self) -> bool:
        """Whether ``y_f >= S_T y_0`` holds on the grid up to 1e-8."""
        free = semigroup_apply(self.basis, self.grid.T, to_modes(self.y0, self.basis))
        return bool(np.all(self.yf.values - from_modes(free).values >= -1e-8))

    def with_grid(self, grid: TimeGrid) -> "ControlProblem":
        return ControlProblem(self.basis, grid, self.y0, self.yf, self.eps, self.L, self.forbidden)

    def with_eps(self, eps: float) -> "ControlProblem":
        return ControlProblem(self.basis, self.grid, self.y0, self.yf, eps, self.L, self.forbidden)

    def with_forbidden(self, mask: np.ndarray | None) -> "ControlProblem":
        return ControlProblem(self.basis, self.grid, self.y0, self.yf, self.eps, self.L, mask)

    @cached_property
    def h_scale(self) -> float:
        """Upper bound of ``H(q) / ||q||`` from Cauchy-Schwarz; sets absolute tolerances."""
        return float(np.sqrt(self.budget) * np.sum(np.max(np.abs(self.W), axis=1)))


@dataclass(frozen=True, eq=False)
class Vertex:
    """Bathtub data for one adjoint direction ``q``."""

    H: float
    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    def image(self, prob: ControlProblem) -> np.ndarray:
        """Coefficients of ``L_T U``."""
        return apply_LT(prob, self.U)


def apply_LT(prob: ControlProblem, U: np.ndarray) -> np.ndarray:
    """``L_T`` applied to a control given as an ``(m, size)`` array; returns coefficients."""
    b = prob.basis
    return np.sum(prob.W * (U @ b.phi.T), axis=0) * b.domain.cell


def vertex(prob: ControlProblem, q: np.ndarray, grid_weights: np.ndarray | None = None) -> Vertex:
    W = prob.W if grid_weights is None else grid_weights
    V = adjoint_map(prob.basis, np.asarray(q, dtype=float), W)
    sigma, U = support_batch(V, prob.basis.domain.cell, prob.budget, prob.forbidden)
    return Vertex(float(sigma.sum()), U, sigma, V)


def _coeffs(p) -> np.ndarray:
    return p.coeffs if isinstance(p, ModeVector) else np.asarray(p, dtype=float)


def eval_H(p_f, prob: ControlProblem) -> float:
    """``H(p) = int_0^T sigma(p(t)) dt`` on the time grid."""
    return vertex(prob, _coeffs(p_f)).H


def eval_J(p_f, prob: ControlProblem) -> float:
    p = _coeffs(p_f)
    H = eval_H(p, prob)
    return 0.5 * H * H - float(prob.d.coeffs @ p) + prob.eps * float(np.linalg.norm(p))


def subgradient(p_f, prob: ControlProblem) -> ModeVector:
    """``H(p) L_T U_b - d + eps s`` with ``U_b`` the bathtub maximisers along ``p(t)``.

    At ``p = 0`` the selection ``s = 0`` is used; any vector of norm at most ``eps``
    is a subgradient of ``eps ||.||`` there.
    """
    p = _coeffs(p_f)
    vx = vertex(prob, p)
    norm = float(np.linalg.norm(p))
    s = p / norm if norm > 0 else np.zeros_like(p)
    g = vx.H * vx.image(prob) - prob.d.coeffs + prob.eps * s
    return ModeVector(prob.basis, g)


def ray_value(q: np.ndarray, prob: ControlProblem, H: float | None = None) -> tuple[float, float]:
    """Optimal scale ``s*`` of ``J(s q)`` over ``s >= 0`` and the ratio ``R(q)``."""
    H = eval_H(q, prob) if H is None else H
    slope = float(prob.d.coeffs @ q) - prob.eps * float(np.linalg.norm(q))
    if H <= 0.0 or slope <= 0.0:
        return 0.0, 0.0
    return slope / (H * H), slope / H


@dataclass(frozen=True)
class DualOptions:
    """Solver settings.

    ``method`` is ``"cutting_plane"`` (default) or ``"subgradient"``.  The cutting
    plane run stops when the relative duality gap drops below ``tol`` or when the
    upper bound has not improved for ``patience`` iterations.  A run is reported
    as converged when its relative gap is at most ``accept_gap`` and its primal
    residual is at most ``eps (1 + tol_feas)``.
    """

    method: str = "cutting_plane"
    tol: float = 1e-8
    accept_gap: float = 1e-3
    tol_feas: float = 1e-3
    max_iter: int = 500
    patience: int = 15
    check_resolution: bool = True
    resolution_tol: float = 1e-6
    step: float = 1.0
    subgradient_max_iter: int = 50_000
    subgradient_patience: int = 500


@dataclass(frozen=True, eq=False)
class DualReport:
    """Outcome of a dual minimisation.

    ``p_f`` is the best terminal adjoint found, ``H`` its amplitude ``H(p_f)``,
    ``upper`` the amplitude of the best feasible primal candidate and ``gap`` the
    duality gap ``1/2 upper^2 + J``.  ``generators`` and ``weights`` describe that
    primal candidate as a convex combination of bathtub maximisers.
    """

    p_f: ModeVector
    J: float
    H: float
    upper: float
    gap: float
    rel_gap: float
    status: str
    iterations: int
    residual: float
    gradient_norm: float
    generators: np.ndarray
    weights: np.ndarray
    history: list = field(default_factory=list)
    distance: float = float("nan")
    certified: bool = False
    resolution_change: float = float("nan")
    under_resolved: bool = False
    elapsed: float = 0.0

    @property
    def converged(self) -> bool:
        return self.status in ("converged", "trivial")

    @property
    def amplitude(self) -> float:
        return self.H

    @property
    def Pi(self) -> float:
        return 0.5 * self.H * self.H


def _master(Y: np.ndarray, d: np.ndarray, eps: float) -> tuple[np.ndarray, str]:
    """``min 1'b`` over ``b >= 0`` with ``||Y b - d|| <= eps`` (second-order cone programme)."""
    K, N = Y.shape
    A = sparse.vstack(
        [-sparse.identity(N, format="csc"), sparse.csc_matrix((1, N)), sparse.csc_matrix(Y)], format="csc"
    )
    b = np.concatenate([np.zeros(N), [eps], d])
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = 1e-12
    settings.tol_gap_rel = 1e-12
    settings.tol_feas = 1e-12
    settings.max_iter = 200
    solver = clarabel.DefaultSolver(
        sparse.csc_matrix((N, N)), np.ones(N), A, b,
        [clarabel.NonnegativeConeT(N), clarabel.SecondOrderConeT(K + 1)], settings,
    )
    sol = solver.solve()
    return np.maximum(np.asarray(sol.x, dtype=float), 0.0), str(sol.status)


def _finish(prob, opts, q_best, H_q, beta, gens, status, it, history, t0, distance=np.nan, certified=False):
    basis = prob.basis
    if q_best is None:
        p = np.zeros(basis.size)
    else:
        s, _ = ray_value(q_best, prob, H_q)
        p = s * q_best
    vx = vertex(prob, p)
    H = vx.H
    J = 0.5 * H * H - float(prob.d.coeffs @ p) + prob.eps * float(np.linalg.norm(p))
    g = subgradient(p, prob).norm()
    if beta is not None and beta.sum() > 0:
        upper = float(beta.sum())
        keep = beta > 0
        generators = np.asarray(gens)[keep]
        weights = beta[keep] / upper
        Uc = recover_from_generators(prob, generators, weights)
        residual = float(np.linalg.norm(upper * apply_LT(prob, Uc) - prob.d.coeffs))
        gap = 0.5 * upper * upper + J
        rel_gap = gap / max(abs(J), 1e-300)
    else:
        upper = np.inf
        generators = np.zeros((0, basis.size))
        weights = np.zeros(0)
        residual = distance if np.isfinite(distance) else prob.d_norm
        gap = np.inf
        rel_gap = np.inf
    if status == "pending":
        ok = rel_gap <= opts.accept_gap and residual <= prob.eps * (1 + opts.tol_feas)
        status = "converged" if ok else "stalled"
    change, under = np.nan, False
    if opts.check_resolution and H > 0:
        Wf = control_weights(basis, prob.grid.refined())
        Hf = vertex(prob, p, Wf).H
        change = abs(Hf - H) / H
        under = bool(change > opts.resolution_tol)
    return DualReport(
        ModeVector(basis, p), J, H, upper, gap, rel_gap, status, it, residual, g,
        generators, weights, history, distance, certified, change, under, time.perf_counter() - t0,
    )


def recover_from_generators(prob: ControlProblem, generators: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Relaxed control ``sum_j w_j U_b(q_j)`` with values in ``[0, 1]``."""
    Uc = np.zeros((prob.grid.m, prob.basis.domain.size))
    for w, q in zip(weights, generators):
        Uc += w * vertex(prob, q).U
    return np.clip(Uc, 0.0, 1.0)


def _trivial_report(prob: ControlProblem, t0: float) -> DualReport:
    basis = prob.basis
    zero = np.zeros(basis.size)
    return DualReport(
        ModeVector(basis, zero), 0.0, 0.0, 0.0, 0.0, 0.0, "trivial", 0, prob.d_norm,
        float(np.linalg.norm(prob.d.coeffs)), np.zeros((0, basis.size)), np.zeros(0), [],
        prob.d_norm, True, 0.0, False, time.perf_counter() - t0,
    )


def minimize_dual(prob: ControlProblem, options: DualOptions | None = None) -> DualReport:
    """Minimise the dual functional and certify the result with a primal candidate.

    If ``||d|| <= eps`` the minimiser is ``p = 0`` and the amplitude is zero.  If
    no admissible control reaches the ball, the run ends with status
    ``"unreachable"`` and reports the distance from ``d`` to the reachable cone
    (certified when the final adjoint direction has ``H = 0``).
    """
    opts = options or DualOptions()
    t0 = time.perf_counter()
    if not prob.nontrivial:
        return _trivial_report(prob, t0)
    if opts.method == "subgradient":
        return _subgradient_method(prob, opts, t0)
    if opts.method != "cutting_plane":
        raise ValueError(f"unknown dual method {opts.method!r}")

    d, eps = prob.d.coeffs, prob.eps
    q = d.copy()
    gens: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    history: list[tuple] = []
    best_R, q_best, H_best = 0.0, None, 0.0
    beta = None
    best_upper, stall = np.inf, 0
    feasible = False
    status = "max_iter"
    distance, certified = np.nan, False
    it = 0
    for it in range(1, opts.max_iter + 1):
        vx = vertex(prob, q)
        qn = float(np.linalg.norm(q))
        if vx.H > 0:
            _, R = ray_value(q, prob, vx.H)
            if R > best_R:
                best_R, q_best, H_best = R, q.copy(), vx.H
        if not feasible and vx.H <= 1e-12 * qn * prob.h_scale:
            # No admissible direction has positive correlation with q = d - Y b.
            distance, certified, status = qn, True, "unreachable"
            break
        gens.append(q.copy())
        cols.append(vx.image(prob))
        Y = np.array(cols).T
        if not feasible:
            b, res = nnls(Y, d, maxiter=50 * Y.shape[1] + 200)
            distance = float(res)
            history.append((it, best_R, np.inf, res))
            if res > eps * (1.0 - 1e-9):
                q_new = d - Y @ b
                if np.linalg.norm(q_new - q) <= 1e-14 * prob.d_norm:
                    status = "stalled"
                    break
                q = q_new
                continue
            feasible = True
            beta = b
        b, st = _master(Y, d, eps)
        if st.startswith("Solved") or st.startswith("AlmostSolved"):
            beta = b
        else:
            beta = np.append(beta, 0.0) if len(beta) < Y.shape[1] else beta
            log.warning("master problem returned %s at iteration %d", st, it)
        upper = float(beta.sum())
        q = d - Y @ beta
        rel = (upper * upper - best_R * best_R) / max(best_R * best_R, 1e-300)
        history.append((it, best_R, upper, float(np.linalg.norm(q))))
        if upper < best_upper * (1 - 1e-12):
            best_upper, stall = upper, 0
        else:
            stall += 1
        if rel <= opts.tol:
            status = "pending"
            break
        if stall > opts.patience:
            status = "pending"
            break
    if not feasible:
        return _finish(prob, opts, q_best, H_best, None, gens, status, it, history, t0, distance, certified)
    rep = _finish(prob, opts, q_best, H_best, beta, gens, "pending", it, history, t0)
    if status == "max_iter" and rep.status == "stalled":
        return replace(rep, status="max_iter")
    return rep


def _subgradient_method(prob: ControlProblem, opts: DualOptions, t0: float) -> DualReport:
    """Normalized subgradient steps ``c / sqrt(k)`` with exact rescaling along rays.

    Every iterate is moved to the minimiser of ``J`` on its ray, which keeps the
    best-iterate sequence monotone at no extra cost.  The bathtub maximisers met
    along the way are pooled, and a final cone programme over them yields the
    primal candidate used for the gap.
    """
    d = prob.d.coeffs
    p = d / np.linalg.norm(d)
    s, _ = ray_value(p, prob)
    p = s * p if s > 0 else p
    J_best = eval_J(p, prob)
    p_best = p.copy()
    window_start = J_best
    gens: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    history: list[tuple] = []
    it = 0
    for it in range(1, opts.subgradient_max_iter + 1):
        vx = vertex(prob, p)
        gens.append(p.copy())
        cols.append(vx.image(prob))
        norm = float(np.linalg.norm(p))
        g = vx.H * cols[-1] - d + (prob.eps * p / norm if norm > 0 else 0.0)
        gn = float(np.linalg.norm(g))
        if gn == 0:
            break
        scale = opts.step * max(np.linalg.norm(p_best), 1e-12)
        p = p - scale / np.sqrt(it) * g / gn
        s, _ = ray_value(p, prob)
        if s > 0:
            p = s * p
        J = eval_J(p, prob)
        if J < J_best:
            J_best, p_best = J, p.copy()
        history.append((it, J_best))
        if it % opts.subgradient_patience == 0:
            if abs(window_start - J_best) <= opts.tol * max(1.0, abs(J_best)):
                break
            window_start = J_best
    H_best = eval_H(p_best, prob)
    Y = np.array(cols).T
    b, res = nnls(Y, d, maxiter=50 * Y.shape[1] + 200)
    beta = None
    if res <= prob.eps * (1 - 1e-9):
        b2, st = _master(Y, d, prob.eps)
        beta = b2 if (st.startswith("Solved") or st.startswith("AlmostSolved")) else b
    status = "pending" if beta is not None else "stalled"
    return _finish(prob, opts, p_best, H_best, beta, gens, status, it, history, t0)


@dataclass(frozen=True)
class GapResult:
    """Duality gap ``F(u) + J(p)`` for a feasible control, or the residual otherwise."""

    gap: float
    primal: float
    dual: float
    residual: float
    feasible: bool

    @property
    def defined(self) -> bool:
        return self.feasible


def primal_cost(u: ControlTrajectory, prob: ControlProblem) -> float:
    """``F(u) = 1/2 sup_t max(||u(t)||_inf, ||u(t)||_1 / (L |Omega|))^2``."""
    vals = u.values
    cell = prob.basis.domain.cell
    sup = vals.max(axis=1, initial=0.0)
    l1 = vals.sum(axis=1) * cell / prob.budget
    m = float(np.max(np.maximum(sup, l1), initial=0.0))
    return 0.5 * m * m


def terminal_residual(u: ControlTrajectory, prob: ControlProblem) -> float:
    """``||S_T y0 + L_T u - y_f||`` in the truncated basis."""
    y = duhamel_modes(prob.basis, u, prob.grid).coeffs
    return float(np.linalg.norm(y - prob.d.coeffs))


def duality_gap(p_f, u: ControlTrajectory, prob: ControlProblem, tol_feas: float = 1e-3) -> GapResult:
    """Weak-duality gap of the pair ``(u, p_f)``; undefined when ``u`` misses the ball."""
    residual = terminal_residual(u, prob)
    J = eval_J(p_f, prob)
    F = primal_cost(u, prob)
    feasible = residual <= prob.eps * (1 + tol_feas)
    return GapResult(F + J if feasible else float("nan"), F, -J, residual, feasible)


@dataclass(frozen=True)
class ConeDistance:
    """Distance from ``d`` to the cone of admissible terminal states.

    ``residual`` is attained by an explicit nonnegative combination of bathtub
    vertices; it is exact when ``certified`` is true.
    """

    residual: float
    certified: bool
    iterations: int
    direction: np.ndarray
    columns: np.ndarray


def cone_distance(
    prob: ControlProblem, max_iter: int = 400, columns: np.ndarray | None = None, stop_below: float | None = None
) -> ConeDistance:
    """Column generation for ``min ||y - d||`` over all admissible (unbounded amplitude) controls.

    Each step solves a nonnegative least-squares problem over the collected
    vertices and adds the bathtub vertex of the current residual direction.
    When that direction has ``H = 0`` it separates ``d`` from the cone and the
    distance is exact.  ``columns`` seeds the vertex pool and ``stop_below``
    allows an early exit once the residual is small enough.
    """
    d = prob.d.coeffs
    cols = [] if columns is None else [c for c in np.asarray(columns)]
    q = d.copy()
    res = float(np.linalg.norm(d))
    if cols:
        b, res = nnls(np.array(cols).T, d, maxiter=50 * len(cols) + 200)
        q = d - np.array(cols).T @ b
    it = 0
    for it in range(1, max_iter + 1):
        if stop_below is not None and res <= stop_below:
            return ConeDistance(res, False, it, q, np.array(cols))
        vx = vertex(prob, q)
        if vx.H <= 1e-12 * float(np.linalg.norm(q)) * prob.h_scale:
            return ConeDistance(float(np.linalg.norm(q)), True, it, q, np.array(cols))
        y = vx.image(prob)
        cols.append(y / np.linalg.norm(y))
        Y = np.array(cols).T
        b, res = nnls(Y, d, maxiter=50 * Y.shape[1] + 200)
        q_new = d - Y @ b
        if np.linalg.norm(q_new - q) <= 1e-14 * max(prob.d_norm, 1e-300):
            break
        q = q_new
    return ConeDistance(float(res), False, it, q, np.array(cols))


@dataclass(frozen=True)
class CappedDistance:
    """Bracket on ``dist(d, cap * C)`` for a hard amplitude cap."""

    upper: float
    lower: float
    iterations: int


def capped_distance(prob: ControlProblem, cap: float, max_iter: int = 300, tol: float = 1e-6) -> CappedDistance:
    """Fully corrective Frank-Wolfe for the best residual with amplitude at most ``cap``.

    The lower bound ``<d, q> - cap H(q)`` for unit ``q`` follows from the support
    function of ``cap * C`` being ``cap * H``.
    """
    d = prob.d.coeffs
    if cap <= 0:
        return CappedDistance(prob.d_norm, prob.d_norm, 0)
    cols: list[np.ndarray] = []
    q = d.copy()
    upper, lower = prob.d_norm, 0.0
    it = 0
    for it in range(1, max_iter + 1):
        qn = float(np.linalg.norm(q))
        if qn == 0:
            return CappedDistance(0.0, 0.0, it)
        vx = vertex(prob, q)
        lower = max(lower, (float(d @ q) - cap * vx.H) / qn)
        if upper - lower <= tol * max(upper, 1e-300):
            break
        cols.append(cap * vx.image(prob))
        Y = np.array(cols).T
        b = _simplex_ls(Y, d)
        q = d - Y @ b
        upper = min(upper, float(np.linalg.norm(q)))
    return CappedDistance(upper, lower, it)


def _simplex_ls(Y: np.ndarray, d: np.ndarray) -> np.ndarray:
    """``min ||Y b - d||^2`` over ``b >= 0, sum b <= 1`` (convex quadratic programme)."""
    K, N = Y.shape
    P = sparse.triu(sparse.csc_matrix(Y.T @ Y), format="csc")
    c = -(Y.T @ d)
    A = sparse.vstack([-sparse.identity(N, format="csc"), sparse.csc_matrix(np.ones((1, N)))], format="csc")
    b = np.concatenate([np.zeros(N), [1.0]])
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = 1e-14
    settings.tol_gap_rel = 1e-12
    solver = clarabel.DefaultSolver(P, c, A, b, [clarabel.NonnegativeConeT(N + 1)], settings)
    return np.maximum(np.asarray(solver.solve().x, dtype=float), 0.0)
