"""Training machinery: MAE loss, ADAM, gradient clipping, monotonicity.

Gradient clipping is opt-in; default training relies on the bounded loss
and the periodic nonlinearity for stability.  The monotone clipper and the
soft-monotonicity regularizer both target 1-D primary arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grids import apply_nonlinearity, nonlinearity_deriv


@dataclass
class StepDecay:
    factor: float = 0.5
    every: int = 1000


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8192
    steps: int = 0          # 0: task picks its default
    epochs: int = 0
    seed: int = 0
    scheduler: StepDecay | None = None
    clipping: str = "none"  # none | symmetric | monotone
    kappa: float = 0.0
    mono_eps: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if self.mono_eps > 0:
            raise ValueError("mono_eps must be <= 0")


def mae_loss(pred, target):
    """Mean absolute error and its gradient w.r.t. pred.

    Gradient is sign(pred - target) / n with sign(0) = 0, n = element count.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {target.shape}")
    if pred.size == 0:
        raise ValueError("empty input")
    diff = pred - target
    loss = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / diff.size
    return loss, grad


class Adam:
    """Standard bias-corrected ADAM over a list of parameter arrays.

    Updates happen in place; moments mirror the parameter shapes and start
    at zero, so a zero gradient leaves parameters untouched.
    """

    def __init__(self, params, config: TrainConfig):
        self.params = list(params)
        self.config = config
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads, lr=None):
        if len(grads) != len(self.params):
            raise ValueError("one gradient per parameter array required")
        cfg = self.config
        if lr is None:
            lr = lr_schedule(self.t, cfg)
        self.t += 1
        b1, b2 = cfg.beta1, cfg.beta2
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError(
                    f"gradient shape {g.shape} != parameter {p.shape}")
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            p -= (lr / bc1) * m / (np.sqrt(v / bc2) + cfg.adam_eps)


def lr_schedule(step, config: TrainConfig):
    """Learning rate at a given optimizer step."""
    sched = config.scheduler
    if sched is None:
        return config.learning_rate
    return config.learning_rate * sched.factor ** (step // sched.every)


def clip_symmetric(grad, resolution, learning_rate):
    """Clamp every entry to +-1 / (2 N alpha), the half cell-diagonal
    bound for a primary array; in place."""
    bound = 1.0 / (2.0 * resolution * learning_rate)
    np.clip(grad, -bound, bound, out=grad)
    return bound


def clip_monotone(grad, array, learning_rate, margin=0.999):
    """Per-cell clipping that preserves strict monotonicity of a 1-D array.

    After the plain descent step c[i] -= alpha * g[i], each interior cell
    stays strictly between the midpoints to its neighbors; boundary cells
    are pinned (zero gradient).  The paper's open bounds are realized as
    closed bounds shrunk by ``margin``.
    """
    if array.dims != 1 or array.channels != 1:
        raise ValueError("monotone clipping applies to 1-D single-channel "
                         "arrays")
    c = array.cells[:, 0].astype(np.float64)
    if np.any(np.diff(c) <= 0):
        raise ValueError("array cells are not strictly increasing")
    g = grad[:, 0]
    n = c.shape[0]
    inv = margin / (2.0 * learning_rate)
    # displacement -alpha*g must stay in ((c[i-1]-c[i])/2, (c[i+1]-c[i])/2)
    lo = (c[1:-1] - c[2:]) * inv
    hi = (c[1:-1] - c[:-2]) * inv
    g[1:-1] = np.clip(g[1:-1], lo, hi)
    g[0] = 0.0
    g[n - 1] = 0.0
    # The midpoint bounds guarantee order in exact arithmetic, but a gap
    # near the rounding scale can still collapse; zero out any gradient
    # whose simulated step would break strict ordering.
    for _ in range(n):
        trial = array.cells[:, 0] - learning_rate * g
        bad = np.diff(trial) <= 0
        if not bad.any():
            break
        g[:-1][bad] = 0.0
        g[1:][bad] = 0.0


def soft_monotonicity(array, kappa, eps, grad_out=None):
    """Penalty (kappa/N) sum_i relu(eps + F(c[i]) - F(c[i+1])) on a 1-D
    array, encouraging F(c[i+1]) - F(c[i]) > eps.

    The neighbor term F(c[i+1]) is treated as a detached copy: gradients
    flow only through the left operand, so each active term pushes its own
    cell down.  Accumulates into ``grad_out`` when given.
    """
    if kappa < 0 or eps > 0:
        raise ValueError("need kappa >= 0 and eps <= 0")
    if array.dims != 1 or array.channels != 1:
        raise ValueError("soft monotonicity applies to 1-D single-channel "
                         "arrays")
    if kappa == 0.0:
        return 0.0
    c = array.cells[:, 0]
    n = c.shape[0]
    fv = apply_nonlinearity(array.nonlinearity, c, array.sine_n)
    terms = eps + fv[:-1] - fv[1:]
    active = terms > 0
    value = float(kappa / n * np.sum(terms[active]))
    if grad_out is not None:
        fp = nonlinearity_deriv(array.nonlinearity, c, array.sine_n)
        g = np.zeros(n, dtype=grad_out.dtype)
        g[:-1][active] = kappa / n * fp[:-1][active]
        grad_out[:, 0] += g
    return value


@dataclass
class TrainState:
    """Bundles the optimizer with per-step bookkeeping used by the tasks."""

    optimizer: Adam
    config: TrainConfig
    losses: list = field(default_factory=list)

    def step(self, grads):
        lr = lr_schedule(self.optimizer.t, self.config)
        self.optimizer.step(grads, lr=lr)
