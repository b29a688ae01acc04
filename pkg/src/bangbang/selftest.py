"""Built-in oracle suites run by the ``selftest`` subcommand.

Each check compares a library quantity with an independent reference: the
bathtub value with a node-by-node greedy fill, the dual functional with its
convexity and conjugacy identities, and the semigroup with closed-form mode
formulas.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bathtub import brute_force_sigma, support_function
from .dual import ControlProblem, eval_J, minimize_dual, primal_cost, subgradient, vertex
from .spectral import (
    ControlTrajectory,
    Domain,
    GridField,
    ModeVector,
    TimeGrid,
    build_basis,
    duhamel_modes,
    mode,
    semigroup_apply,
)
from .synth import extract_control


@dataclass(frozen=True)
class CheckResult:
    suite: str
    name: str
    value: float
    threshold: float
    passed: bool


def _check(suite: str, name: str, value: float, threshold: float) -> CheckResult:
    return CheckResult(suite, name, float(value), float(threshold), bool(value <= threshold))


def random_field(rng: np.random.Generator, n: int) -> np.ndarray:
    """Mixed-sign values; about half the draws are rounded to create ties."""
    v = rng.normal(size=n)
    if rng.random() < 0.5:
        v = np.round(v * rng.integers(1, 4)) / 2.0
    return v


def bathtub_suite(rng: np.random.Generator, fields: int = 1000) -> list[CheckResult]:
    """``support_function`` against the greedy fill, plus maximiser feasibility."""
    worst_sigma = worst_attain = worst_box = worst_mass = 0.0
    domains: dict[int, Domain] = {}
    for _ in range(fields):
        n = int(rng.integers(8, 257))
        dom = domains.setdefault(n, Domain.interval(1.0, n))
        v = GridField(dom, random_field(rng, n))
        L = float(rng.choice([0.1, 0.3, 0.5, 0.9]))
        res = support_function(v, L)
        ref = brute_force_sigma(v, L)
        scale = max(abs(ref), float(np.abs(v.values).sum()) * dom.cell, 1e-300)
        worst_sigma = max(worst_sigma, abs(res.sigma - ref) / scale)
        attained = float(np.dot(res.maximiser, v.values)) * dom.cell
        worst_attain = max(worst_attain, abs(attained - res.sigma) / scale)
        worst_box = max(worst_box, float(np.max(np.maximum(-res.maximiser, res.maximiser - 1.0))))
        worst_mass = max(worst_mass, (res.mass - L * dom.measure) / dom.measure)
    return [
        _check("bathtub", "sigma_vs_greedy_rel", worst_sigma, 1e-12),
        _check("bathtub", "maximiser_attains_sigma_rel", worst_attain, 1e-12),
        _check("bathtub", "box_violation", worst_box, 0.0),
        _check("bathtub", "mass_violation_rel", worst_mass, 1e-12),
    ]


def small_problem(T: float = 0.3, eps_fraction: float = 0.1) -> ControlProblem:
    """Coarse bump instance used by the duality checks (graded time grid)."""
    dom = Domain.interval(1.0, 64)
    basis = build_basis(dom, 16)
    x = dom.axis_nodes()
    r = (x - 0.5) / 0.25
    yf = np.zeros_like(x)
    inside = np.abs(r) < 1
    yf[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
    target = GridField(dom, yf)
    return ControlProblem(
        basis, TimeGrid(T, 32, "graded"), GridField(dom, np.zeros(dom.size)), target, eps_fraction * target.norm(), 0.3
    )


def fenchel_suite(rng: np.random.Generator, pairs: int = 100) -> list[CheckResult]:
    """Positive homogeneity of ``sigma``, the subgradient inequality and the Fenchel equality."""
    prob = small_problem()
    cell = prob.basis.domain.cell
    worst_hom = 0.0
    for _ in range(pairs):
        v = GridField(prob.basis.domain, rng.normal(size=prob.basis.domain.size))
        c = float(rng.uniform(0.1, 10.0))
        s1 = support_function(GridField(v.domain, c * v.values), prob.L).sigma
        s0 = support_function(v, prob.L).sigma
        worst_hom = max(worst_hom, abs(s1 - c * s0) / max(abs(c * s0), 1e-300))
    worst_sub = 0.0
    for _ in range(pairs):
        p = rng.normal(size=prob.basis.size)
        q = rng.normal(size=prob.basis.size)
        g = subgradient(p, prob).coeffs
        Jp, Jq = eval_J(p, prob), eval_J(q, prob)
        worst_sub = max(worst_sub, (Jp + float(g @ (q - p)) - Jq) / max(1.0, abs(Jq)))
    rep = minimize_dual(prob)
    sc = extract_control(rep.p_f, prob, rep)
    vx = vertex(prob, rep.p_f.coeffs)
    pairing = float(np.sum(sc.control.values * vx.V) * cell)
    defect = abs(primal_cost(sc.control, prob) + 0.5 * vx.H ** 2 - pairing) / max(abs(pairing), 1e-300)
    return [
        _check("fenchel", "sigma_homogeneity_rel", worst_hom, 1e-12),
        _check("fenchel", "subgradient_inequality", worst_sub, 1e-10),
        _check("fenchel", "dual_converged", 0.0 if rep.converged else 1.0, 0.0),
        _check("fenchel", "fenchel_equality_rel", defect, 1e-6),
    ]


def mode_forcing(lam: float, T: float, t_on: float, t_off: float) -> float:
    """``int_{t_on}^{t_off} exp(-lam (T - s)) ds`` in closed form."""
    return (np.exp(-lam * (T - t_off)) - np.exp(-lam * (T - t_on))) / lam


def semigroup_suite(rng: np.random.Generator) -> list[CheckResult]:
    """Mode decay, the semigroup law and the Duhamel formula for a mode-shaped control."""
    dom = Domain.interval(1.0, 256)
    basis = build_basis(dom, 64)
    worst_decay = 0.0
    for k in (1, 2, 5, 17, 64):
        for t in (0.0, 1e-3, 0.05, 0.5):
            got = semigroup_apply(basis, t, mode(basis, k)).coeffs[k - 1]
            worst_decay = max(worst_decay, abs(got - np.exp(-basis.eigenvalues[k - 1] * t)))
    worst_law = 0.0
    for _ in range(20):
        v = ModeVector(basis, rng.normal(size=basis.size))
        t, s = rng.uniform(0.0, 0.2, size=2)
        a = semigroup_apply(basis, t + s, v).coeffs
        b = semigroup_apply(basis, t, semigroup_apply(basis, s, v)).coeffs
        worst_law = max(worst_law, float(np.max(np.abs(a - b))) / max(1.0, float(np.max(np.abs(a)))))
    # phi_1 is the only nonnegative mode, so it serves as the admissible control shape.
    T = 0.5
    tg = TimeGrid(T, 128)
    on = (tg.edges[:-1] >= 0.125) & (tg.edges[1:] <= 0.375)
    values = np.where(on[:, None], basis.phi[0][None, :], 0.0)
    u = ControlTrajectory(tg, dom, values)
    got = duhamel_modes(basis, u, tg).coeffs
    ref = np.zeros(basis.size)
    ref[0] = mode_forcing(basis.eigenvalues[0], T, 0.125, 0.375)
    duhamel_err = float(np.max(np.abs(got - ref)))
    return [
        _check("semigroup", "mode_decay_abs", worst_decay, 1e-12),
        _check("semigroup", "semigroup_law_rel", worst_law, 1e-12),
        _check("semigroup", "duhamel_closed_form_abs", duhamel_err, 1e-8),
    ]


def run_selftest(seed: int = 0, fields: int = 1000) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return bathtub_suite(rng, fields) + fenchel_suite(rng) + semigroup_suite(rng)
