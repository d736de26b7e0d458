"""Objective terms: the two conditional Wasserstein critics with gradient
penalty, the classification constraint, the joint pair critic, and the
weighted compositions the trainer optimizes."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import engine as en
from . import networks as nets


@dataclass
class HyperParams:
    """All scalar knobs of the objectives and the optimizer."""

    beta: float = 0.01          # classification weight
    gp_lambda: float = 10.0     # gradient-penalty weight
    gamma: float = 1.0          # semantic alignment weight
    alpha1: float = 1.0         # inference objective weight
    alpha2: float = 1.0         # joint-max objective weight
    epsilon: float = 0.05       # sinkhorn entropy
    n_critic: int = 5           # critic steps per generator step
    lr: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 100
    n_syn: int = 200            # synthesized features per unseen class
    seed: int = 0

    def __post_init__(self):
        if self.gp_lambda <= 0:
            raise ValueError("gp_lambda must be > 0")
        if self.n_critic < 1:
            raise ValueError("n_critic must be >= 1")
        for name in ("beta", "gamma", "alpha1", "alpha2", "epsilon"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class LossReport:
    """All objective terms computed at one step (raw, unweighted values).

    For a generator phase the composition identity is
        total = (wgan1 + beta*cls) + alpha1*(wgan2 + gamma*align) + alpha2*joint_max
    and for a critic phase
        total = wgan1 + wgan2 + joint_d3
    where wgan1/wgan2 hold the phase's own view of those terms (full critic
    values with penalty during critic phases, the generator-side adversarial
    terms otherwise).
    """

    step: int
    phase: str                  # "critic" | "generator"
    wgan1: float = 0.0
    wgan2: float = 0.0
    joint_d3: float = 0.0
    joint_max: float = 0.0
    cls: float = 0.0
    align: float = 0.0
    total: float = 0.0

    def recombined(self, hp: HyperParams) -> float:
        if self.phase == "critic":
            return self.wgan1 + self.wgan2 + self.joint_d3
        return ((self.wgan1 + hp.beta * self.cls)
                + hp.alpha1 * (self.wgan2 + hp.gamma * self.align)
                + hp.alpha2 * self.joint_max)

    def composition_residual(self, hp: HyperParams) -> float:
        return abs(self.total - self.recombined(hp))

    def to_dict(self) -> dict:
        return asdict(self)


def interpolate(real: en.Tensor, fake: en.Tensor, rng: en.RngStream = None,
                alpha: np.ndarray = None) -> en.Tensor:
    """Per-sample convex combination alpha*real + (1-alpha)*fake.

    Returned as a grad-enabled leaf: it is the point the critic's input
    gradient is taken at, not a function of G or I.  Pass ``alpha`` to share
    one draw across two slots (the joint critic case).
    """
    if real.shape != fake.shape:
        raise en.ShapeError(f"interpolate: {real.shape} vs {fake.shape}")
    if alpha is None:
        alpha = rng.uniform((real.shape[0], 1))
    data = alpha * real.data + (1.0 - alpha) * fake.data
    return real.graph.leaf(data, requires_grad=True)


def _unit_norm_penalty(scores: en.Tensor, slots: list[en.Tensor], lam: float) -> en.Tensor:
    grads = en.grad(scores, slots)
    g = grads[0] if len(slots) == 1 else en.concat(grads)
    dev = en.row_l2_norm(g) - 1.0
    return en.scale(en.reduce_mean(en.mul(dev, dev)), lam)


def gradient_penalty(d_model: nets.MlpModel, interp: en.Tensor, cond: en.Tensor,
                     lam: float) -> en.Tensor:
    """lam * mean((||grad_interp D(interp, cond)||_2 - 1)^2), differentiable
    w.r.t. the critic parameters (double backprop)."""
    scores = nets.forward_critic(d_model, interp, cond)
    return _unit_norm_penalty(scores, [interp], lam)


def wgan_critic_value(d_model: nets.MlpModel, real_pair, fake_pair, interp_pair,
                      lam: float) -> en.Tensor:
    """E[D(real)] - E[D(fake)] - gradient penalty; the critic ascends this."""
    real_score = en.reduce_mean(nets.forward_critic(d_model, *real_pair))
    fake_score = en.reduce_mean(nets.forward_critic(d_model, *fake_pair))
    return real_score - fake_score - gradient_penalty(d_model, interp_pair[0], interp_pair[1], lam)


def cls_loss(classifier: nets.MlpModel, xhat: en.Tensor, labels, beta: float):
    """beta * cross-entropy of the frozen pretrained classifier on x-hat.

    Returns (weighted tensor, raw tensor); gradients reach the generator
    only (the classifier binds as constants).
    """
    logits = nets.forward_classifier(classifier, xhat, trainable=False)
    raw = en.softmax_cross_entropy(logits, labels)
    return en.scale(raw, beta), raw


def joint_critic_value(d3: nets.MlpModel, x_real, hhat, xhat, h_real, xt, ht,
                       lam: float) -> en.Tensor:
    """E[D3(x, h-hat)] - E[D3(x-hat, h)] minus a penalty on the joint input
    gradient: one Euclidean norm over the concatenated (dx~, dh~) gradient."""
    pos = en.reduce_mean(nets.forward_critic(d3, x_real, hhat))
    neg = en.reduce_mean(nets.forward_critic(d3, xhat, h_real))
    scores = nets.forward_critic(d3, xt, ht)
    return pos - neg - _unit_norm_penalty(scores, [xt, ht], lam)


def joint_max_loss(d3: nets.MlpModel, x_real, hhat, xhat, h_real) -> en.Tensor:
    """-(E[D3(x, h-hat)] - E[D3(x-hat, h)]); D3 binds frozen, so gradients
    reach G and I only."""
    pos = en.reduce_mean(nets.forward_critic(d3, x_real, hhat, trainable=False))
    neg = en.reduce_mean(nets.forward_critic(d3, xhat, h_real, trainable=False))
    return en.neg(pos - neg)


def generator_objective(adv: en.Tensor, cls_raw: en.Tensor, beta: float) -> en.Tensor:
    return adv + en.scale(cls_raw, beta)


def inference_objective(adv: en.Tensor, align_raw: en.Tensor, gamma: float) -> en.Tensor:
    return adv + en.scale(align_raw, gamma)


def total_objective(l_gen: en.Tensor, l_inf: en.Tensor, l_jm: en.Tensor,
                    alpha1: float, alpha2: float) -> en.Tensor:
    return l_gen + en.scale(l_inf, alpha1) + en.scale(l_jm, alpha2)
