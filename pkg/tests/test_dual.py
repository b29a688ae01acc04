import numpy as np
import pytest

from bangbang.dual import (
    ControlProblem,
    DualOptions,
    apply_LT,
    capped_distance,
    cone_distance,
    duality_gap,
    eval_H,
    eval_J,
    minimize_dual,
    primal_cost,
    ray_value,
    subgradient,
)
from bangbang.spectral import ControlTrajectory, Domain, GridField, TimeGrid, build_basis, to_modes
from bangbang.studies import ball_mask
from bangbang.synth import extract_control

from oracles import H_PHI1_CONT


def bump(x, center, width):
    r = (x - center) / width
    out = np.zeros_like(x)
    inside = np.abs(r) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
    return out


@pytest.fixture(scope="module")
def basis():
    return build_basis(Domain.interval(1.0, 256), 64)


@pytest.fixture(scope="module")
def problem(basis):
    dom = basis.domain
    yf = GridField(dom, bump(dom.axis_nodes(), 0.5, 0.2))
    return ControlProblem(basis, TimeGrid(0.5, 128), GridField(dom, np.zeros(256)), yf, 0.1 * yf.norm(), 0.3)


@pytest.fixture(scope="module")
def report(problem):
    return minimize_dual(problem)


def phi1(basis):
    c = np.zeros(basis.size)
    c[0] = 1.0
    return c


def test_problem_validation(problem):
    with pytest.raises(ValueError):
        problem.with_eps(0.0)
    with pytest.raises(ValueError, match=r"L must lie in \(0,1\)"):
        ControlProblem(problem.basis, problem.grid, problem.y0, problem.yf, 0.1, 1.5)
    assert problem.nontrivial and problem.admissible


def test_eval_H_examples(basis, problem):
    assert eval_H(np.zeros(basis.size), problem) == 0.0
    assert eval_H(-phi1(basis), problem) == 0.0
    half = ControlProblem(basis, problem.grid, problem.y0, problem.yf, problem.eps, 0.5)
    H = eval_H(phi1(basis), half)
    refined = eval_H(phi1(basis), half.with_grid(problem.grid.refined()))
    assert H > 0
    assert abs(refined - H) <= 1e-6 * H
    # grid sum of the top half of phi_1 versus the continuous integral
    assert H == pytest.approx(H_PHI1_CONT, rel=1e-4)


def test_eval_J_examples(basis, problem):
    assert eval_J(np.zeros(basis.size), problem) == 0.0
    d = problem.d.coeffs
    assert eval_J(-d, problem) >= float(d @ d)


def test_ray_parabola(basis, problem):
    rng = np.random.default_rng(0)
    q = rng.normal(size=basis.size)
    lams = np.array([0.5, 1.0, 2.0])
    a, b, c = np.polyfit(lams, [eval_J(l * q, problem) for l in lams], 2)
    H = eval_H(q, problem)
    assert a == pytest.approx(0.5 * H * H, rel=1e-9)
    assert b == pytest.approx(-float(problem.d.coeffs @ q) + problem.eps * np.linalg.norm(q), rel=1e-8)
    assert abs(c) <= 1e-8 * max(abs(a), abs(b))
    s, R = ray_value(q, problem)
    if s > 0:
        assert eval_J(s * q, problem) == pytest.approx(-0.5 * R * R, rel=1e-10)


def test_subgradient_at_zero(basis, problem):
    g = subgradient(np.zeros(basis.size), problem).coeffs
    np.testing.assert_array_equal(g, -problem.d.coeffs)


def test_subgradient_norm_term_only(basis, problem):
    zero_target = ControlProblem(basis, problem.grid, problem.y0, problem.y0, 1.0, 0.3)
    p = -2.0 * phi1(basis)
    g = subgradient(p, zero_target).coeffs
    np.testing.assert_allclose(g, p / np.linalg.norm(p), atol=1e-15)


def test_subgradient_inequality(basis, problem):
    rng = np.random.default_rng(1)
    for _ in range(30):
        p = rng.normal(size=basis.size) * 1e-3
        g = subgradient(p, problem).coeffs
        Jp = eval_J(p, problem)
        for delta in (1e-2, 1e-4):
            q = rng.normal(size=basis.size)
            assert eval_J(p + delta * q, problem) >= Jp + delta * float(g @ q) - 1e-12 * max(1.0, abs(Jp))


def test_convexity_and_homogeneity(basis, problem):
    rng = np.random.default_rng(2)
    for _ in range(20):
        p, q = rng.normal(size=(2, basis.size))
        mid = eval_J(0.5 * (p + q), problem)
        assert mid <= 0.5 * eval_J(p, problem) + 0.5 * eval_J(q, problem) + 1e-10
        lam = rng.uniform(0.1, 10)
        assert eval_H(lam * p, problem) == pytest.approx(lam * eval_H(p, problem), rel=1e-12)


def test_coercivity_witness(basis, problem):
    rng = np.random.default_rng(3)
    q = rng.normal(size=basis.size)
    ratios = [eval_J(l * q, problem) / l for l in (1.0, 10.0, 100.0)]
    assert eval_H(q, problem) > 0 and ratios[0] < ratios[1] < ratios[2]
    neg = -phi1(basis)
    assert eval_H(neg, problem) == 0.0
    assert np.all(problem.yf.values >= 0)
    for lam in (1.0, 1e3):
        assert eval_J(lam * neg, problem) / lam >= problem.eps - 1e-12


def test_trivial_target(basis, problem):
    inside = problem.with_eps(2.0 * problem.d_norm)
    rep = minimize_dual(inside)
    assert rep.status == "trivial" and rep.converged
    assert rep.H == 0.0 and not np.any(rep.p_f.coeffs)
    gap = duality_gap(rep.p_f, ControlTrajectory.zeros(problem.grid, basis.domain), inside)
    assert gap.feasible and gap.gap == 0.0


def test_converged_report_invariants(problem, report):
    assert report.status == "converged"
    assert report.J <= 0 and report.H > 0
    assert report.gap >= -1e-8
    assert report.gap <= 1e-3 * (1 + abs(report.J))
    assert abs(report.residual - problem.eps) <= 1e-3 * problem.eps
    assert report.Pi == pytest.approx(0.5 * report.H ** 2)
    best = [h[1] for h in report.history]
    assert np.all(np.diff(best) >= 0)


def test_eps_doubled(problem, report):
    wider = minimize_dual(problem.with_eps(2 * problem.eps))
    assert wider.J >= report.J - 1e-9 * abs(report.J)
    assert wider.H <= report.H * (1 + 1e-9)


def test_duality_gap_certificates(problem, report):
    sc = extract_control(report.p_f, problem, report)
    gap = duality_gap(report.p_f, sc.control, problem)
    assert gap.feasible and gap.gap >= -1e-8
    assert gap.gap <= 1e-3 * abs(report.J)
    rng = np.random.default_rng(4)
    perturbed = report.p_f.coeffs + 0.05 * np.linalg.norm(report.p_f.coeffs) * rng.normal(size=problem.basis.size) / 8
    assert duality_gap(perturbed, sc.control, problem).gap > gap.gap
    infeasible = duality_gap(report.p_f, ControlTrajectory.zeros(problem.grid, problem.basis.domain), problem)
    assert not infeasible.feasible and np.isnan(infeasible.gap)
    assert infeasible.residual == pytest.approx(problem.d_norm)


def test_primal_cost_scaling(problem, report):
    sc = extract_control(report.p_f, problem, report)
    assert primal_cost(sc.control.scaled(2.0), problem) == pytest.approx(4 * primal_cost(sc.control, problem))
    assert primal_cost(sc.control, problem) == pytest.approx(0.5 * report.H ** 2, rel=1e-9)


def test_resolution_flag_is_reported(report):
    assert np.isfinite(report.resolution_change)
    assert report.under_resolved == (report.resolution_change > 1e-6)


def test_subgradient_method_agrees(basis):
    dom = Domain.interval(1.0, 64)
    b = build_basis(dom, 16)
    yf = GridField(dom, bump(dom.axis_nodes(), 0.5, 0.25))
    prob = ControlProblem(b, TimeGrid(0.3, 32, "graded"), GridField(dom, np.zeros(64)), yf, 0.1 * yf.norm(), 0.3)
    ref = minimize_dual(prob)
    sub = minimize_dual(prob, DualOptions(method="subgradient", subgradient_max_iter=3000))
    assert ref.converged
    assert sub.J >= ref.J - 1e-9 * abs(ref.J)
    assert sub.J <= ref.J * (1 - 1e-2)  # within 1 % of the optimal value
    assert np.isfinite(sub.upper) and sub.upper >= ref.H * (1 - 1e-6)


def test_unknown_method(problem):
    with pytest.raises(ValueError):
        minimize_dual(problem, DualOptions(method="newton"))


def test_unreachable_when_support_is_forbidden(basis):
    dom = basis.domain
    yf = GridField(dom, bump(dom.axis_nodes(), 0.5, 0.12))
    prob = ControlProblem(
        basis, TimeGrid(0.02, 128), GridField(dom, np.zeros(256)), yf, 0.05 * yf.norm(), 0.3,
        ball_mask(basis, 0.5, 0.15),
    )
    rep = minimize_dual(prob)
    assert rep.status == "unreachable" and rep.certified
    assert rep.distance > prob.eps
    cd = cone_distance(prob)
    assert cd.certified and cd.residual == pytest.approx(rep.distance, rel=1e-6)


def test_capped_distance_brackets(problem, report):
    below = capped_distance(problem, 0.9 * report.H)
    assert below.lower <= below.upper
    assert below.lower > problem.eps
    above = capped_distance(problem, 1.01 * report.H)
    assert above.upper <= problem.eps * (1 + 1e-6)


def test_apply_LT_matches_duhamel(problem):
    rng = np.random.default_rng(5)
    U = rng.random((problem.grid.m, problem.basis.domain.size))
    from bangbang.spectral import duhamel_modes

    ref = duhamel_modes(problem.basis, ControlTrajectory(problem.grid, problem.basis.domain, U), problem.grid)
    np.testing.assert_allclose(apply_LT(problem, U), ref.coeffs, rtol=1e-12, atol=1e-15)
    assert to_modes(problem.yf, problem.basis).coeffs @ problem.d.coeffs > 0
