"""DDPM over standardized Youla coefficients with classifier-free guidance."""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .nn import AdamState, Diverged, adam_step, mlp_backward, mlp_forward, time_embed

log = logging.getLogger(__name__)

X_DIM = 6
COND_DIM = 8
EMBED_DIM = 32
HIDDEN = (256, 256, 256)

T_STEPS = 200
BETA_1 = 1e-4
BETA_T = 0.05
LR_SCHEDULES = ("constant", "cosine")


class SamplerDiverged(FloatingPointError):
    pass


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Per-step arrays; entry ``t - 1`` belongs to diffusion step ``t``."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def to_dict(self):
        return {"T": self.T, "beta_1": float(self.beta[0]), "beta_T": float(self.beta[-1])}


def make_schedule(T=T_STEPS, beta_1=BETA_1, beta_T=BETA_T):
    if T < 2 or not 0 < beta_1 <= beta_T < 1:
        raise ValueError("need T >= 2 and 0 < beta_1 <= beta_T < 1")
    beta = np.linspace(beta_1, beta_T, T)
    alpha = 1.0 - beta
    return NoiseSchedule(int(T), beta, alpha, np.cumprod(alpha), np.sqrt(beta))


@dataclass(frozen=True)
class GuidanceConfig:
    lam: float = 1.1
    n_shots: int = 15
    cond_drop_p: float = 0.1

    def __post_init__(self):
        if self.lam < 0 or self.n_shots < 1 or not 0 <= self.cond_drop_p < 1:
            raise ValueError(f"invalid guidance config {self}")


def input_width():
    return X_DIM + COND_DIM + 1 + EMBED_DIM


def net_sizes(hidden=HIDDEN):
    return (input_width(), *hidden, X_DIM)


def eps_input(x_t, cond, null, t):
    """Network input ``[x_t, cond * (1 - null), null, embed(t)]`` (batched)."""
    null = np.asarray(null, dtype=float).reshape(-1, 1)
    cond = np.where(null > 0, 0.0, cond)
    return np.hstack([x_t, cond, null, time_embed(t, EMBED_DIM)])


def eps_predict(net, x_t, cond, null, t):
    out, _ = mlp_forward(net, eps_input(x_t, cond, null, t))
    return out


def q_sample(x0, t, noise, sched):
    """``x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise``; ``t`` may be an array of steps."""
    ab = sched.alpha_bar[np.asarray(t) - 1]
    ab = np.asarray(ab)[..., None] if np.ndim(t) else ab
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise


@dataclass
class TrainResult:
    losses: list = field(default_factory=list)
    null_count: int = 0
    adam: AdamState = None


def lr_at(base, step, steps, schedule="constant"):
    """Learning rate for 0-based ``step``; ``cosine`` decays from ``base`` towards 0."""
    if schedule == "constant":
        return base
    if schedule == "cosine":
        return base * 0.5 * (1.0 + math.cos(math.pi * step / steps))
    raise ValueError(f"unknown lr schedule {schedule!r}; choose from {LR_SCHEDULES}")


def train(x, cond, net, sched, gcfg, steps, rng, batch=256, adam=None, log_every=1000,
          lr_schedule="constant"):
    """Minibatch epsilon-matching with conditioning dropout; updates ``net`` in place.

    ``x`` and ``cond`` are the standardized training arrays. The optimizer's
    ``lr`` is the base rate for ``lr_schedule`` and is restored on return.
    Returns the per-step loss trace, the number of null-conditioned rows
    presented and the optimizer state.
    """
    x = np.asarray(x, float)
    cond = np.asarray(cond, float)
    adam = adam or AdamState.for_params(net.params)
    if lr_schedule not in LR_SCHEDULES:
        raise ValueError(f"unknown lr schedule {lr_schedule!r}; choose from {LR_SCHEDULES}")
    base_lr = adam.lr
    res = TrainResult(adam=adam)
    try:
        _train_loop(x, cond, net, sched, gcfg, steps, rng, batch, adam, log_every,
                    lr_schedule, base_lr, res)
    finally:
        adam.lr = base_lr
    return res


def _train_loop(x, cond, net, sched, gcfg, steps, rng, batch, adam, log_every, lr_schedule,
                base_lr, res):
    n = x.shape[0]
    for step in range(steps):
        adam.lr = lr_at(base_lr, step, steps, lr_schedule)
        idx = rng.integers(0, n, size=batch)
        t = rng.integers(1, sched.T + 1, size=batch)
        eps = rng.standard_normal((batch, x.shape[1]))
        null = rng.random(batch) < gcfg.cond_drop_p
        res.null_count += int(np.count_nonzero(null))

        x_t = q_sample(x[idx], t, eps, sched)
        out, cache = mlp_forward(net, eps_input(x_t, cond[idx], null, t))
        diff = out - eps
        loss = float(np.sum(diff * diff) / batch)
        if not np.isfinite(loss):
            raise Diverged(f"diverged: loss {loss} at step {step}")
        res.losses.append(loss)
        grads, _ = mlp_backward(net, cache, (2.0 / batch) * diff)
        adam_step(net.params, grads, adam)
        if log_every and (step + 1) % log_every == 0:
            log.info("step %d loss %.4f", step + 1, np.mean(res.losses[-log_every:]))


def blend(eps_u, eps_c, lam):
    """``eps_u + lam (eps_c - eps_u)``, written so ``lam`` in {0, 1} is exact."""
    return (1.0 - lam) * eps_u + lam * eps_c


def sample_cfg(net, sched, cond, lam, rng, n=None):
    """Guided reverse process from ``x_T ~ N(0, I)`` down to ``x_0``.

    ``cond`` is one standardized condition (broadcast over ``n`` shots) or a
    ``(n, 8)`` array. Returns a ``(n, 6)`` array of standardized samples; all
    noise comes from ``rng`` in a fixed order.
    """
    cond = np.atleast_2d(np.asarray(cond, float))
    if n is None:
        n = cond.shape[0]
    cond = np.broadcast_to(cond, (n, cond.shape[1]))
    x = rng.standard_normal((n, X_DIM))
    need_u, need_c = lam != 1.0, lam != 0.0
    rows = np.vstack([cond] * (need_u + need_c))
    null = np.r_[np.ones(n * need_u), np.zeros(n * need_c)]
    # overflow is reported as SamplerDiverged below, not as a warning
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(sched.T, 0, -1):
            z = rng.standard_normal((n, X_DIM)) if t > 1 else np.zeros((n, X_DIM))
            tt = np.full(rows.shape[0], t)
            out = eps_predict(net, np.vstack([x] * (need_u + need_c)), rows, null, tt)
            eps_u = out[:n] if need_u else 0.0
            eps_c = out[n * need_u:] if need_c else 0.0
            eps = blend(eps_u, eps_c, lam)
            a, ab = sched.alpha[t - 1], sched.alpha_bar[t - 1]
            x = (x - (1.0 - a) / np.sqrt(1.0 - ab) * eps) / np.sqrt(a) + sched.sigma[t - 1] * z
            if not np.all(np.isfinite(x)):
                raise SamplerDiverged("sampler diverged")
    return x


def sample_unconditional(net, sched, n, rng):
    """Reverse process using only the null-conditioned prediction."""
    return sample_cfg(net, sched, np.zeros(COND_DIM), 0.0, rng, n)
