import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import linprog

from otcloak.errors import InvalidCost, ShapeError
from otcloak.ot import (CostMatrix, SinkhornConfig, conditional_entropies, cost_gradient, entropic_objective,
                        kl_divergence, plan_entropy, row_masses, sinkhorn, sinkhorn_batch, sinkhorn_iterates,
                        transport_cost)

TIGHT = SinkhornConfig(epsilon=0.2, max_iterations=100000, marginal_tolerance=1e-13)

# symmetric 2x2 closed form at eps = 1: u = v, P = c^2 K with c^2 = 0.5 / (1 + e^-1)
C_SYM = np.array([[0.0, 1.0], [1.0, 0.0]])
DIAG = 0.5 / (1 + math.exp(-1))
OFF = DIAG * math.exp(-1)


def simplex(rng, n):
    w = rng.random(n) + 0.05
    return w / w.sum()


def exact_ot(C, a, b):
    """Exact OT value by linear programming over the transport polytope."""
    m, n = C.shape
    A_eq = np.zeros((m + n, m * n))
    for i in range(m):
        A_eq[i, i * n:(i + 1) * n] = 1
    for j in range(n):
        A_eq[m + j, j::n] = 1
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    assert res.success
    return res.fun


@st.composite
def problems(draw, max_side=6):
    m = draw(st.integers(1, max_side))
    n = draw(st.integers(1, max_side))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    return rng.random((m, n)) * draw(st.floats(0.1, 5)), simplex(rng, m), simplex(rng, n)


def test_defaults():
    cfg = SinkhornConfig()
    assert (cfg.epsilon, cfg.max_iterations, cfg.marginal_tolerance) == (0.2, 30, 1e-6)


def test_one_by_one_plan():
    plan = sinkhorn(np.array([[3.7]]))
    assert plan.P.tolist() == [[1.0]]
    assert plan.converged


def test_symmetric_closed_form():
    plan = sinkhorn(C_SYM, SinkhornConfig(epsilon=1.0, max_iterations=1000, marginal_tolerance=1e-14))
    np.testing.assert_allclose(plan.P, [[DIAG, OFF], [OFF, DIAG]], rtol=1e-12)
    assert plan.P[0, 0] == pytest.approx(0.36553, abs=5e-6)
    assert plan.P[0, 1] == pytest.approx(0.13447, abs=5e-6)


def test_large_epsilon_gives_uniform_plan():
    plan = sinkhorn(C_SYM, SinkhornConfig(epsilon=1e8, max_iterations=100))
    np.testing.assert_allclose(plan.P, 0.25, atol=1e-8)


def test_transport_cost_examples():
    assert transport_cost(sinkhorn(np.array([[2.5]])), np.array([[2.5]])) == 2.5
    Z = np.zeros((3, 2))
    assert transport_cost(sinkhorn(Z), Z) == 0.0
    plan = sinkhorn(C_SYM, SinkhornConfig(epsilon=1.0, max_iterations=1000, marginal_tolerance=1e-14))
    assert transport_cost(plan, C_SYM) == pytest.approx(2 * OFF, rel=1e-12)
    assert transport_cost(plan, C_SYM) == pytest.approx(0.26894, abs=5e-6)
    assert plan.cost == pytest.approx(2 * OFF, rel=1e-12)


def test_transport_cost_shape_mismatch():
    with pytest.raises(ShapeError):
        transport_cost(sinkhorn(np.zeros((2, 2))), np.zeros((2, 3)))


def test_row_masses_examples():
    np.testing.assert_allclose(row_masses(sinkhorn(np.zeros((2, 2)))), [0.5, 0.5])
    a = np.array([0.2, 0.3, 0.5])
    plan = sinkhorn(CostMatrix(np.random.default_rng(0).random((3, 4)), a, None), TIGHT)
    np.testing.assert_allclose(row_masses(plan), a, atol=1e-12)
    np.testing.assert_allclose(row_masses(sinkhorn(np.ones((1, 5)))), [1.0])


def test_conditional_entropy_examples():
    assert conditional_entropies(np.diag([0.5, 0.5])) == (0.0, 0.0)
    h_row, h_col = conditional_entropies(np.full((2, 2), 0.25))
    assert h_row == pytest.approx(math.log(2), abs=1e-15)
    assert h_col == pytest.approx(math.log(2), abs=1e-15)


def entropy_identity_gap(P):
    a, b = P.sum(axis=1), P.sum(axis=0)
    h_row, h_col = conditional_entropies(P)
    return h_row + h_col - 2 * plan_entropy(P) - np.sum(a * np.log(a)) - np.sum(b * np.log(b))


@given(problems())
def test_entropy_identity_on_plans(prob):
    C, a, b = prob
    assert abs(entropy_identity_gap(sinkhorn(CostMatrix(C, a, b)).P)) <= 1e-10


def test_cost_gradient_one_by_one():
    assert cost_gradient(sinkhorn(np.array([[1.3]]))).tolist() == [[1.0]]


def fd_objective(C, a, b, cfg, h=1e-5):
    G = np.zeros_like(C)
    for i in range(C.shape[0]):
        for j in range(C.shape[1]):
            Cp, Cm = C.copy(), C.copy()
            Cp[i, j] += h
            Cm[i, j] -= h
            G[i, j] = (sinkhorn(CostMatrix(Cp, a, b), cfg).objective
                       - sinkhorn(CostMatrix(Cm, a, b), cfg).objective) / (2 * h)
    return G


def test_cost_gradient_symmetric_fd():
    cfg = SinkhornConfig(epsilon=1.0, max_iterations=1000, marginal_tolerance=1e-14)
    a = b = np.array([0.5, 0.5])
    # a constant shift keeps the plan and lets h step below the zero entries
    C = C_SYM + 1.0
    grad = cost_gradient(sinkhorn(CostMatrix(C, a, b), cfg))
    fd = fd_objective(C, a, b, cfg)
    assert np.max(np.abs(grad - fd) / np.abs(fd)) <= 1e-3
    np.testing.assert_allclose(grad, [[DIAG, OFF], [OFF, DIAG]], rtol=1e-10)


def test_cost_gradient_zero_cost_is_product():
    rng = np.random.default_rng(3)
    a, b = simplex(rng, 3), simplex(rng, 4)
    grad = cost_gradient(sinkhorn(CostMatrix(np.zeros((3, 4)), a, b), TIGHT))
    np.testing.assert_allclose(grad, np.outer(a, b), atol=1e-13)


def test_cost_gradient_warns_when_unconverged():
    C = np.random.default_rng(0).random((5, 5)) * 5
    plan = sinkhorn(C, SinkhornConfig(epsilon=0.05, max_iterations=1, marginal_tolerance=1e-12))
    assert not plan.converged
    with pytest.warns(RuntimeWarning):
        g = cost_gradient(plan)
    assert np.array_equal(g, plan.P)


@pytest.mark.parametrize("bad", [np.array([[np.nan, 1.0]]), np.array([[np.inf]]), np.array([[-1.0, 0.0]])])
def test_invalid_costs(bad):
    with pytest.raises(InvalidCost):
        sinkhorn(bad)


def test_invalid_marginals_and_shapes():
    with pytest.raises(ShapeError):
        CostMatrix(np.zeros((2, 2)), np.array([1.0]), None)
    with pytest.raises(InvalidCost):
        CostMatrix(np.zeros((2, 2)), np.array([0.7, 0.7]), None)
    with pytest.raises(InvalidCost):
        CostMatrix(np.zeros((2, 2)), np.array([1.0, 0.0]), None)
    with pytest.raises(InvalidCost):
        SinkhornConfig(epsilon=0.0)


@given(problems(max_side=8))
def test_marginals_after_convergence(prob):
    C, a, b = prob
    cfg = SinkhornConfig(epsilon=0.3, max_iterations=5000, marginal_tolerance=1e-9)
    plan = sinkhorn(CostMatrix(C, a, b), cfg)
    assert plan.converged
    assert np.abs(plan.P.sum(axis=1) - a).sum() <= 1e-9
    assert np.abs(plan.P.sum(axis=0) - b).sum() <= 1e-9


@given(problems(), st.sampled_from([0.01, 0.2, 1.0]))
def test_scaling_identity(prob, eps):
    C, a, b = prob
    plan = sinkhorn(CostMatrix(C, a, b), SinkhornConfig(epsilon=eps, max_iterations=200))
    logP = plan.log_u[:, None] - C / eps + plan.log_v[None, :]
    np.testing.assert_allclose(plan.P, np.exp(logP), rtol=1e-10, atol=0)
    if not plan.log_domain:
        np.testing.assert_allclose(plan.P, plan.u[:, None] * np.exp(-C / eps) * plan.v[None, :], rtol=1e-10)


def test_log_domain_switch():
    C = np.random.default_rng(0).random((3, 3))
    assert sinkhorn(C, SinkhornConfig(epsilon=0.01)).log_domain
    assert not sinkhorn(C, SinkhornConfig(epsilon=0.2)).log_domain
    # kernel entries would underflow below 1e-300
    assert sinkhorn(C * 200, SinkhornConfig(epsilon=0.2)).log_domain


def test_log_domain_matches_plain_domain():
    rng = np.random.default_rng(5)
    C, a, b = rng.random((4, 5)), simplex(rng, 4), simplex(rng, 5)
    from otcloak import ot
    cfg = SinkhornConfig(epsilon=0.1, max_iterations=500, marginal_tolerance=1e-12)
    Cb, ab, bb = ot._pad([CostMatrix(C, a, b)])
    plain = ot._solve_scaling(Cb, ab, bb, 0.1, cfg)[0][0]
    logd = ot._solve_log(Cb, ab, bb, 0.1, cfg)[0][0]
    np.testing.assert_allclose(plain, logd, rtol=1e-9)


def test_huge_costs_stay_finite():
    C = np.array([[0.0, 1e4], [1e4, 0.0]])
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        plan = sinkhorn(C, SinkhornConfig(epsilon=0.2))
    assert np.isfinite(plan.P).all()
    np.testing.assert_allclose(plan.P, np.diag([0.5, 0.5]), atol=1e-12)


@given(st.lists(problems(max_side=5), min_size=1, max_size=6))
def test_batch_equals_single_solves(probs):
    costs = [CostMatrix(C, a, b) for C, a, b in probs]
    batch = sinkhorn_batch(costs)
    for c, p in zip(costs, batch):
        single = sinkhorn(c)
        np.testing.assert_allclose(p.P, single.P, rtol=1e-12, atol=1e-300)
        assert p.iterations == single.iterations


@given(problems())
def test_objective_is_shifted_kl(prob):
    C, a, b = prob
    cfg = SinkhornConfig(epsilon=0.5)
    K = np.exp(-C / cfg.epsilon)
    for P, _, _ in sinkhorn_iterates(C, SinkhornConfig(epsilon=0.5, max_iterations=5), a, b):
        lhs = np.sum(P * C) + cfg.epsilon * np.sum(P * np.log(P) - P)
        assert lhs == pytest.approx(cfg.epsilon * kl_divergence(P, K) - cfg.epsilon * K.sum(), abs=1e-10)


@given(problems(), st.sampled_from([0.1, 0.5, 1.0]))
def test_iterations_approach_optimum_monotonically(prob, eps):
    C, a, b = prob
    cfg = SinkhornConfig(epsilon=eps, max_iterations=40)
    P_star = sinkhorn(CostMatrix(C, a, b), SinkhornConfig(epsilon=eps, max_iterations=100000,
                                                            marginal_tolerance=1e-14)).P
    kls, duals = [], []
    for P, f, g in sinkhorn_iterates(C, cfg, a, b):
        kls.append(kl_divergence(P_star, P))
        duals.append(f @ a + g @ b - eps * P.sum())
    assert np.all(np.diff(kls) <= 1e-12)
    assert np.all(np.diff(duals) >= -1e-12)


def test_entropic_objective_matches_plan_field():
    rng = np.random.default_rng(9)
    C = rng.random((3, 4))
    plan = sinkhorn(C)
    assert entropic_objective(plan, C) == pytest.approx(plan.objective, rel=1e-14)


@pytest.mark.parametrize("seed", range(10))
def test_small_lp_oracle(seed):
    rng = np.random.default_rng(seed)
    m, n = rng.integers(1, 5, size=2)
    C, a, b = rng.random((m, n)), simplex(rng, m), simplex(rng, n)
    plan = sinkhorn(CostMatrix(C, a, b), SinkhornConfig(epsilon=1e-3, max_iterations=20000,
                                                         marginal_tolerance=1e-10))
    exact = exact_ot(C, a, b)
    assert plan.log_domain
    assert abs(plan.cost - exact) <= 0.02 * exact
