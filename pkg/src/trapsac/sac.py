"""Discrete soft actor-critic with automatic temperature and a KL pull toward a prior."""

from dataclasses import dataclass, asdict
import math

import numpy as np

from .approx import Adam, Mlp, policy_head, soft_update
from .dynamics import N_ACTIONS
from .env import OBS_DIM


class SacConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SacConfig:
    gamma: float = 0.8
    lr_actor: float = 5e-4
    lr_critic: float = 1e-3
    batch: int = 64
    buffer_cap: int = 50_000
    target_entropy: float = -1.0
    alpha_init: float = 0.01
    alpha_lr: float = 1e-3
    kl_ratio: float = 200.0  # xi = kl_ratio * alpha
    tau: float = 0.005
    hidden: tuple = (256, 256)
    warmup: int = 1000
    margin_weight: float = 1.0
    log_alpha_min: float = -20.0
    p_rule: float = 0.9
    dtype: str = "float32"

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise SacConfigError("gamma must lie in (0, 1)")
        if self.alpha_init <= 0:
            raise SacConfigError("alpha_init must be positive")
        if self.batch < 1 or self.buffer_cap < self.batch:
            raise SacConfigError("buffer must hold at least one batch")
        if not 0.0 <= self.tau <= 1.0:
            raise SacConfigError("tau must lie in [0, 1]")
        if self.kl_ratio < 0 or self.margin_weight < 0:
            raise SacConfigError("loss weights must be non-negative")

    @property
    def w_kl_init(self) -> float:
        return self.kl_ratio * self.alpha_init

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class Batch:
    """Column arrays of sampled transitions.

    ``rule_a`` holds the rule controller's action in each ``s`` (needed by the
    KL term); ``is_demo`` marks rows drawn from the demonstration store.
    """

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    done: np.ndarray
    is_demo: np.ndarray
    rule_a: np.ndarray

    def __len__(self):
        return self.a.shape[0]


# closed-form pieces -------------------------------------------------------

def soft_state_value(q1, q2, probs, log_probs, alpha: float):
    """``sum_a pi(a) * (min(q1, q2)(a) - alpha * log pi(a))`` along the last axis."""
    q = np.minimum(q1, q2)
    return np.sum(probs * (q - alpha * log_probs), axis=-1)


def kl_divergence(probs, log_probs, prior):
    """Exact ``KL(pi || prior)`` over the action axis; ``prior`` must be positive."""
    return np.sum(probs * (log_probs - np.log(prior)), axis=-1)


def entropy(probs, log_probs):
    return -np.sum(probs * log_probs, axis=-1)


def td_targets(r, done, v_next, gamma: float):
    return r + gamma * (1.0 - done) * v_next


def margin_terms(q, a_demo):
    """Q-filtered large-margin loss per row and its gradient w.r.t. ``q``.

    The loss is ``max_a[q(a) + l(a_demo, a)] - q(a_demo)`` with unit margin,
    kept only on rows where ``a_demo`` is already a (possibly tied) argmax.
    """
    n = q.shape[0]
    rows = np.arange(n)
    q_demo = q[rows, a_demo]
    passes = q_demo >= q.max(axis=1)
    shifted = q + 1.0
    shifted[rows, a_demo] = q_demo
    best = shifted.argmax(axis=1)
    loss = np.where(passes, shifted[rows, best] - q_demo, 0.0)
    grad = np.zeros_like(q)
    on = passes & (best != a_demo)
    grad[rows[on], best[on]] += 1.0
    grad[rows[on], a_demo[on]] -= 1.0
    return loss, grad


def actor_objective(probs, log_probs, q_min, alpha: float, xi: float = 0.0, prior=None):
    """Per-state actor loss and its gradient with respect to the policy logits.

    ``sum_a pi(a) * (alpha log pi(a) - q(a)) + xi * KL(pi || prior)``.  The
    softmax Jacobian collapses to ``pi * (c - <pi, c>)`` with
    ``c = (alpha + xi) log pi - q - xi log prior``.
    """
    c = (alpha + xi) * log_probs - q_min
    if xi:
        if prior is None:
            raise SacConfigError("KL weight set but no prior distribution given")
        c = c - xi * np.log(prior)
    loss = np.sum(probs * c, axis=-1)
    grad = probs * (c - np.sum(probs * c, axis=-1, keepdims=True))
    return loss, grad


class DiscreteSac:
    """Actor, twin critics with Polyak targets, and a log-parameterised temperature."""

    def __init__(self, config: SacConfig = SacConfig(), rng: np.random.Generator | None = None,
                 obs_dim: int = OBS_DIM, n_actions: int = N_ACTIONS,
                 soft_constraint: bool = False):
        if rng is None:
            raise ValueError("DiscreteSac needs an explicit generator")
        self.config = config
        self.soft_constraint = soft_constraint
        dtype = np.dtype(config.dtype)
        sizes = (obs_dim, *config.hidden, n_actions)
        self.actor = Mlp(sizes, rng, dtype=dtype)
        self.q1 = Mlp(sizes, rng, dtype=dtype)
        self.q2 = Mlp(sizes, rng, dtype=dtype)
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.actor_opt = Adam(self.actor.buffer, config.lr_actor)
        self.q1_opt = Adam(self.q1.buffer, config.lr_critic)
        self.q2_opt = Adam(self.q2.buffer, config.lr_critic)
        self.log_alpha = math.log(config.alpha_init)
        self._alpha_m = 0.0
        self._alpha_v = 0.0
        self._alpha_t = 0
        self.updates = 0

    # -- temperature --------------------------------------------------------
    @property
    def alpha(self) -> float:
        return math.exp(self.log_alpha)

    @property
    def xi(self) -> float:
        return self.config.kl_ratio * self.alpha if self.soft_constraint else 0.0

    # -- acting -------------------------------------------------------------
    def policy(self, obs) -> tuple[np.ndarray, np.ndarray]:
        obs = np.atleast_2d(obs)
        probs, logp = policy_head(self.actor(obs).astype(np.float64))
        return probs, logp

    def act(self, obs, rng: np.random.Generator | None = None, greedy: bool = False):
        """Sample (or argmax) one action; returns ``(action, probs)``."""
        probs, _ = self.policy(obs)
        probs = probs[0]
        if greedy:
            return int(np.argmax(probs)), probs
        if rng is None:
            raise ValueError("stochastic acting needs a generator")
        # inverse CDF on one uniform keeps the stream cost fixed per step
        u = rng.random()
        a = int(np.searchsorted(np.cumsum(probs), u * probs.sum(), side="right"))
        return min(a, probs.shape[0] - 1), probs

    # -- losses -------------------------------------------------------------
    def critic_loss(self, batch: Batch, demo_margin: bool = False):
        """TD losses (and parameter gradients) for both critics."""
        cfg = self.config
        alpha = self.alpha
        probs2, logp2 = policy_head(self.actor(batch.s2).astype(np.float64))
        v2 = soft_state_value(self.q1_target(batch.s2), self.q2_target(batch.s2),
                              probs2, logp2, alpha)
        y = td_targets(batch.r, batch.done, v2, cfg.gamma)
        n = len(batch)
        rows = np.arange(n)
        out = {"target_mean": float(y.mean())}
        grads = []
        for name, net in (("q1", self.q1), ("q2", self.q2)):
            q, acts = net.forward(batch.s, cache=True)
            err = q[rows, batch.a].astype(np.float64) - y
            loss = float(np.mean(err * err))
            g = np.zeros(q.shape)
            g[rows, batch.a] = 2.0 * err / n
            if demo_margin and batch.is_demo.any():
                d = batch.is_demo
                m_loss, m_grad = margin_terms(q[d].astype(np.float64), batch.a[d])
                k = int(d.sum())
                loss += cfg.margin_weight * float(m_loss.mean())
                g[d] += cfg.margin_weight * m_grad / k
                out[f"{name}_margin"] = float(m_loss.mean())
            out[f"{name}_loss"] = loss
            grads.append((net, acts, g))
        return out, grads

    def actor_loss(self, batch: Batch):
        from .heuristic import rule_distributions
        logits, acts = self.actor.forward(batch.s, cache=True)
        probs, logp = policy_head(logits.astype(np.float64))
        q_min = np.minimum(self.q1(batch.s), self.q2(batch.s)).astype(np.float64)
        xi = self.xi
        prior = None
        if self.soft_constraint:
            if batch.rule_a is None or np.any(batch.rule_a < 0):
                raise SacConfigError("soft constraint needs the rule action for every row")
            prior = rule_distributions(batch.rule_a, self.config.p_rule)
        loss, g = actor_objective(probs, logp, q_min, self.alpha, xi, prior)
        n = len(batch)
        out = {"actor_loss": float(loss.mean()), "entropy": float(entropy(probs, logp).mean())}
        if prior is not None:
            out["kl"] = float(kl_divergence(probs, logp, prior).mean())
        return out, (acts, g / n), probs, logp

    # -- updates ------------------------------------------------------------
    def critic_update(self, batch: Batch, demo_margin: bool = False) -> dict:
        out, grads = self.critic_loss(batch, demo_margin)
        for (net, acts, g), opt in zip(grads, (self.q1_opt, self.q2_opt)):
            opt.step(net.buffer, net.backward(g, acts, flat=True))
        return out

    def actor_update(self, batch: Batch):
        out, (acts, g), probs, logp = self.actor_loss(batch)
        self.actor_opt.step(self.actor.buffer, self.actor.backward(g, acts, flat=True))
        return out, probs, logp

    def alpha_update(self, probs, log_probs) -> float:
        """One Adam step on ``log alpha`` for ``L = E_s[alpha * (H(s) - eta)]``.

        Returns the new alpha.
        """
        cfg = self.config
        h = float(entropy(probs, log_probs).mean())
        grad = self.alpha * (h - cfg.target_entropy)
        b1, b2, eps = 0.9, 0.999, 1e-8
        self._alpha_t += 1
        self._alpha_m = b1 * self._alpha_m + (1 - b1) * grad
        self._alpha_v = b2 * self._alpha_v + (1 - b2) * grad * grad
        m_hat = self._alpha_m / (1 - b1 ** self._alpha_t)
        v_hat = self._alpha_v / (1 - b2 ** self._alpha_t)
        self.log_alpha -= cfg.alpha_lr * m_hat / (math.sqrt(v_hat) + eps)
        self.log_alpha = max(self.log_alpha, cfg.log_alpha_min)
        return self.alpha

    def target_soft_update(self, tau: float | None = None) -> None:
        tau = self.config.tau if tau is None else tau
        soft_update(self.q1_target, self.q1, tau)
        soft_update(self.q2_target, self.q2, tau)

    def update(self, batch: Batch, demo_margin: bool = False) -> dict:
        """Critic, actor, temperature, then target networks."""
        stats = self.critic_update(batch, demo_margin)
        a_stats, probs, logp = self.actor_update(batch)
        stats.update(a_stats)
        stats["alpha"] = self.alpha_update(probs, logp)
        self.target_soft_update()
        self.updates += 1
        return stats

    # -- persistence --------------------------------------------------------
    def networks(self) -> dict:
        return {"actor": self.actor, "q1": self.q1, "q2": self.q2,
                "q1_target": self.q1_target, "q2_target": self.q2_target}
