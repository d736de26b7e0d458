import itertools

import numpy as np
import pytest

from zslc import engine as en
from zslc import ot
from oracles import central_diff, rel_err


def lp_transport_oracle(cost):
    """Exact optimum of the K x K transport LP with uniform marginals.

    Vertices of the scaled Birkhoff polytope are permutation matrices / K,
    so brute-force enumeration of permutations is exact.
    """
    k = cost.shape[0]
    best = np.inf
    for perm in itertools.permutations(range(k)):
        val = sum(cost[i, p] for i, p in enumerate(perm)) / k
        best = min(best, val)
    return best


# ---------------------------------------------------------------------------
# class centers


def test_centers_one_sample_per_class():
    g = en.Graph()
    rows = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    centers, counts, ids = ot.class_centers(g.constant(rows), [2, 0, 1])
    assert np.array_equal(ids, [0, 1, 2])
    assert np.array_equal(centers.data, rows[[1, 2, 0]])
    assert np.array_equal(counts, [1, 1, 1])


def test_centers_mean_of_equal_samples():
    g = en.Graph()
    rows = np.array([[2.0, 2.0], [2.0, 2.0]])
    centers, _, _ = ot.class_centers(g.constant(rows), [0, 0])
    assert np.array_equal(centers.data, [[2.0, 2.0]])


def test_centers_match_loop_oracle():
    rng = np.random.default_rng(1)
    rows = rng.normal(size=(20, 4))
    labels = rng.integers(0, 3, size=20)
    g = en.Graph()
    centers, counts, ids = ot.class_centers(g.constant(rows), labels)
    for k, cid in enumerate(ids):
        member_rows = [rows[i] for i in range(20) if labels[i] == cid]
        expect = sum(member_rows) / len(member_rows)
        assert np.allclose(centers.data[k], expect, atol=1e-14)
        assert counts[k] == len(member_rows)


def test_centers_empty_batch_rejected():
    g = en.Graph()
    with pytest.raises(en.ShapeError):
        ot.class_centers(g.constant(np.zeros((0, 3))), [])


def test_centers_differentiable():
    g = en.Graph()
    h = g.leaf(np.arange(8.0).reshape(4, 2), requires_grad=True)
    centers, _, _ = ot.class_centers(h, [0, 0, 1, 1])
    grads = en.backward(en.sum_axis(centers), [h])
    assert np.allclose(grads[h], np.full((4, 2), 0.5))


# ---------------------------------------------------------------------------
# cost matrix


def test_cost_zero_diagonal_when_equal():
    g = en.Graph()
    a = g.constant(np.random.default_rng(2).normal(size=(3, 4)))
    dis = ot.cost_matrix(a, a)
    assert np.allclose(np.diag(dis.data), 0.0, atol=1e-12)


def test_cost_hand_value():
    g = en.Graph()
    dis = ot.cost_matrix(g.constant([[0.0, 0.0]]), g.constant([[3.0, 4.0]]))
    assert dis.data[0, 0] == pytest.approx(25.0, abs=1e-12)


def test_cost_symmetry():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(3, 2)), rng.normal(size=(4, 2))
    g = en.Graph()
    ab = ot.cost_matrix(g.constant(a), g.constant(b)).data
    ba = ot.cost_matrix(g.constant(b), g.constant(a)).data
    assert np.allclose(ab, ba.T, atol=1e-12)


def test_cost_dim_mismatch():
    g = en.Graph()
    with pytest.raises(en.ShapeError):
        ot.cost_matrix(g.constant(np.ones((2, 3))), g.constant(np.ones((2, 4))))


# ---------------------------------------------------------------------------
# sinkhorn


def test_sinkhorn_forced_1x1():
    plan = ot.sinkhorn_plan(ot.TransportProblem([[5.0]], [1.0], [1.0], 0.1))
    assert np.allclose(plan.plan, [[1.0]], atol=1e-9)
    assert plan.transport_cost == pytest.approx(5.0, abs=1e-9)


def test_sinkhorn_antidiagonal_2x2():
    # exact LP optimum is 0 (plan = I/2); entropic cost must be tiny
    prob = ot.TransportProblem([[0.0, 1.0], [1.0, 0.0]], [0.5, 0.5], [0.5, 0.5], 1e-3)
    plan = ot.sinkhorn_plan(prob, max_iter=2000, tol=1e-10)
    assert np.allclose(plan.plan, np.eye(2) / 2, atol=1e-6)
    assert plan.transport_cost < 1e-2


def test_sinkhorn_large_epsilon_outer_product():
    rng = np.random.default_rng(4)
    cost = rng.uniform(0, 1, (3, 3))
    r = np.array([0.2, 0.3, 0.5])
    c = np.array([0.4, 0.4, 0.2])
    plan = ot.sinkhorn_plan(ot.TransportProblem(cost, r, c, 1e4), max_iter=2000, tol=1e-12)
    assert np.allclose(plan.plan, np.outer(r, c), atol=1e-5)


def test_sinkhorn_marginals_and_interior():
    rng = np.random.default_rng(5)
    cost = rng.uniform(0, 1, (4, 4))
    marg = np.full(4, 0.25)
    plan = ot.sinkhorn_plan(ot.TransportProblem(cost, marg, marg, 0.05), max_iter=5000, tol=1e-10)
    assert plan.converged
    assert np.allclose(plan.plan.sum(axis=1), marg, atol=1e-9)
    assert np.allclose(plan.plan.sum(axis=0), marg, atol=1e-9)
    assert np.all(plan.plan > 0)  # entropic interior


def test_sinkhorn_dual_monotone():
    rng = np.random.default_rng(6)
    for eps in (1e-3, 0.05, 0.5):
        cost = rng.uniform(0, 1, (4, 4))
        marg = np.full(4, 0.25)
        plan = ot.sinkhorn_plan(ot.TransportProblem(cost, marg, marg, eps), max_iter=300, tol=0.0)
        duals = np.array(plan.dual_history)
        assert np.all(np.diff(duals) >= -1e-10)


def test_sinkhorn_approaches_lp_oracle():
    eps = 1e-3
    rng = np.random.default_rng(7)
    for k in (2, 3, 4):
        for _ in range(5):
            cost = rng.uniform(0, 1, (k, k))
            marg = np.full(k, 1.0 / k)
            plan = ot.sinkhorn_plan(ot.TransportProblem(cost, marg, marg, eps),
                                    max_iter=3000, tol=1e-7)
            exact = lp_transport_oracle(cost)
            assert abs(plan.transport_cost - exact) <= 5 * eps * np.log(k * k)


def test_sinkhorn_rejects_bad_epsilon_and_marginals():
    with pytest.raises(ValueError):
        ot.TransportProblem([[1.0]], [1.0], [1.0], 0.0)
    with pytest.raises(ValueError):
        ot.TransportProblem([[1.0, 0.0]], [1.0], [0.7, 0.7], 0.1)
    with pytest.raises(ValueError):
        ot.TransportProblem([[np.inf]], [1.0], [1.0], 0.1)


# ---------------------------------------------------------------------------
# alignment loss


def test_alignment_zero_when_centers_match_attrs():
    attrs = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
    g = en.Graph()
    hhat = g.constant(attrs.copy())
    loss, plan = ot.alignment_loss(hhat, [0, 1, 2], attrs, epsilon=1e-3,
                                   max_iter=2000, tol=1e-10)
    assert loss.item() < 1e-2


def test_alignment_single_class_exact():
    attrs = np.array([[2.0, 1.0]])
    g = en.Graph()
    hhat = g.constant([[0.0, 0.0], [1.0, 1.0]])  # center (0.5, 0.5)
    loss, _ = ot.alignment_loss(hhat, [0, 0], attrs, epsilon=0.1)
    assert loss.item() == pytest.approx((2 - 0.5) ** 2 + (1 - 0.5) ** 2, abs=1e-9)


def test_alignment_nonnegative():
    rng = np.random.default_rng(8)
    attrs = rng.uniform(0, 1, (3, 4))
    g = en.Graph()
    hhat = g.constant(rng.uniform(0, 1, (9, 4)))
    loss, _ = ot.alignment_loss(hhat, np.arange(9) % 3, attrs, epsilon=0.05)
    assert loss.item() >= 0.0


def test_alignment_gradient_matches_finite_differences():
    rng = np.random.default_rng(9)
    attrs = rng.uniform(0, 1, (3, 2)) * 2.0
    h0 = rng.uniform(0, 1, (6, 2))
    labels = np.array([0, 0, 1, 1, 2, 2])

    def f(arrays):
        g = en.Graph()
        loss, _ = ot.alignment_loss(g.constant(arrays[0]), labels, attrs,
                                    epsilon=1e-3, max_iter=1500, tol=1e-11)
        return loss.item()

    g = en.Graph()
    hhat = g.leaf(h0.copy(), requires_grad=True)
    loss, _ = ot.alignment_loss(hhat, labels, attrs, epsilon=1e-3,
                                max_iter=1500, tol=1e-11)
    analytic = en.backward(loss, [hhat])[hhat]
    fd = central_diff(f, [h0.copy()])
    assert rel_err([analytic], fd) < 1e-4


def test_alignment_translation_continuity():
    rng = np.random.default_rng(10)
    attrs = rng.uniform(0, 1, (2, 3))
    h0 = rng.uniform(0, 1, (4, 3))
    labels = np.array([0, 0, 1, 1])
    losses = []
    for shift in (0.0, 1e-4, 2e-4):
        g = en.Graph()
        loss, _ = ot.alignment_loss(g.constant(h0 + shift), labels, attrs, epsilon=0.05)
        losses.append(loss.item())
    assert abs(losses[1] - losses[0]) < 1e-2
    assert abs(losses[2] - losses[1]) < 1e-2
