"""Entropic optimal transport between class centers of predicted attributes
and ground-truth attribute vectors (log-domain Sinkhorn)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import engine as en


@dataclass
class TransportProblem:
    cost: np.ndarray          # dis[i, j] >= 0, predicted centers x true centers
    r: np.ndarray             # row marginal, sums to 1
    c: np.ndarray             # column marginal, sums to 1
    epsilon: float

    def __post_init__(self):
        self.cost = np.asarray(self.cost, dtype=np.float64)
        self.r = np.asarray(self.r, dtype=np.float64)
        self.c = np.asarray(self.c, dtype=np.float64)
        if self.epsilon <= 0:
            raise ValueError(f"sinkhorn epsilon must be > 0, got {self.epsilon}")
        if not np.all(np.isfinite(self.cost)):
            raise ValueError("cost matrix must be finite")
        if self.r.min() < 0 or self.c.min() < 0:
            raise ValueError("marginals must be nonnegative")
        for name, m in (("r", self.r), ("c", self.c)):
            if abs(m.sum() - 1.0) > 1e-12:
                raise ValueError(f"marginal {name} must sum to 1 (got {m.sum()!r})")
        if self.cost.shape != (len(self.r), len(self.c)):
            raise en.ShapeError(f"cost {self.cost.shape} vs marginals {len(self.r)}x{len(self.c)}")


@dataclass
class TransportPlan:
    plan: np.ndarray
    objective: float          # sum(dis * x) - eps * H(X), H(X) = -sum x(log x - 1)
    transport_cost: float     # sum(dis * x)
    iterations: int
    converged: bool
    marginal_error: float
    dual_history: list = field(default_factory=list)


def _lse(a: np.ndarray, axis: int) -> np.ndarray:
    m = np.max(a, axis=axis, keepdims=True)
    return (m + np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True))).squeeze(axis=axis)


def sinkhorn_plan(problem: TransportProblem, max_iter: int = 500, tol: float = 1e-9) -> TransportPlan:
    """Alternating row/column scaling of exp(-dis/eps), in the log domain.

    Stops when the worst marginal violation drops below ``tol``.  Each half
    update is an exact coordinate-ascent step on the dual, so the recorded
    dual values increase monotonically.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    cost, r, c, eps = problem.cost, problem.r, problem.c, problem.epsilon
    logr = np.log(r)
    logc = np.log(c)
    f = np.zeros(len(r))
    g = np.zeros(len(c))
    dual_history = []
    converged = False
    it = 0
    plan = None
    for it in range(1, max_iter + 1):
        f = eps * (logr - _lse((g[None, :] - cost) / eps, axis=1))
        g = eps * (logc - _lse((f[:, None] - cost) / eps, axis=0))
        plan = np.exp((f[:, None] + g[None, :] - cost) / eps)
        if not np.all(np.isfinite(plan)):
            raise en.NumericalError(f"sinkhorn diverged (NaN in scalings) at epsilon={eps}")
        dual_history.append(float(f @ r + g @ c - eps * plan.sum()))
        err = max(np.abs(plan.sum(axis=1) - r).max(), np.abs(plan.sum(axis=0) - c).max())
        if err < tol:
            converged = True
            break
    err = max(np.abs(plan.sum(axis=1) - r).max(), np.abs(plan.sum(axis=0) - c).max())
    transport_cost = float(np.sum(plan * cost))
    with np.errstate(divide="ignore"):
        logp = np.where(plan > 0, np.log(np.where(plan > 0, plan, 1.0)), 0.0)
    entropy = -float(np.sum(plan * (logp - 1.0)))
    return TransportPlan(plan, transport_cost - eps * entropy, transport_cost,
                         it, converged, float(err), dual_history)


def class_centers(hhat: en.Tensor, labels) -> tuple[en.Tensor, np.ndarray, np.ndarray]:
    """Per-class means of predicted attribute rows, differentiable w.r.t. hhat.

    Returns (centers [K x d], counts, class ids present), classes sorted.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if hhat.shape[0] == 0:
        raise en.ShapeError("class_centers of an empty batch")
    if labels.shape != (hhat.shape[0],):
        raise en.ShapeError(f"labels {labels.shape} vs batch {hhat.shape[0]}")
    class_ids, counts = np.unique(labels, return_counts=True)
    sel = np.zeros((len(class_ids), hhat.shape[0]))
    for k, cid in enumerate(class_ids):
        sel[k, labels == cid] = 1.0 / counts[k]
    centers = en.matmul(hhat.graph.constant(sel), hhat)
    return centers, counts, class_ids


def cost_matrix(a: en.Tensor, b: en.Tensor) -> en.Tensor:
    """Squared Euclidean distances dis[i, j] = ||a_i - b_j||^2."""
    if a.shape[1] != b.shape[1]:
        raise en.ShapeError(f"cost_matrix: {a.shape} vs {b.shape}")
    a_sq = en.sum_axis(en.mul(a, a), axis=1, keepdims=True)           # K x 1
    b_sq = en.reshape(en.sum_axis(en.mul(b, b), axis=1), (1, b.shape[0]))
    cross = en.scale(en.matmul(a, en.transpose(b)), -2.0)
    # relu guards against -1e-16 from cancellation when a_i == b_j
    return en.relu(en.add(en.add(a_sq, b_sq), cross))


def alignment_loss(hhat: en.Tensor, labels, true_attr: np.ndarray, epsilon: float,
                   max_iter: int = 500, tol: float = 1e-9):
    """Sinkhorn transport cost between predicted class centers and true
    attributes.

    The plan is treated as a constant for differentiation (envelope
    gradient): gradients reach ``hhat`` only through the cost entries.
    Returns (loss tensor, TransportPlan).
    """
    labels = np.asarray(labels, dtype=np.int64)
    true_attr = np.asarray(true_attr, dtype=np.float64)
    centers, _, class_ids = class_centers(hhat, labels)
    attr = true_attr[class_ids]
    dis = cost_matrix(centers, hhat.graph.constant(attr))
    k = len(class_ids)
    marg = np.full(k, 1.0 / k)
    plan = sinkhorn_plan(TransportProblem(dis.data, marg, marg, epsilon), max_iter, tol)
    loss = en.sum_axis(en.mul(hhat.graph.constant(plan.plan), dis))
    return loss, plan
