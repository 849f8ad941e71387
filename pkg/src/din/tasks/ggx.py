"""Isotropic-GGX normal distribution approximated by a 16^2 -> 8^2 net.

The analytic reference D(h_z, a) = a^4 / (pi * (1 + (a^4 - 1) h_z^2)^2)
is fit over the inference-time input distribution: cosine-weighted h_z and
a roughness law biased toward low values.  Quality is reported as PSNR
after normalizing errors by the 99th-percentile reference value, since D
is unbounded near (h_z -> 1, a -> 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..grids import GridArray, init_identity_ramp
from ..network import DInNetwork, backward, forward
from ..optim import Adam, StepDecay, TrainConfig, lr_schedule, mae_loss

ALPHA_MIN = 1e-3


def ggx_reference(h_z, alpha_h):
    """Analytic isotropic GGX distribution value."""
    h_z = np.asarray(h_z, dtype=np.float64)
    alpha_h = np.asarray(alpha_h, dtype=np.float64)
    if np.any(alpha_h <= 0):
        raise ValueError("alpha_h must be > 0 (distribution is singular)")
    if np.any((h_z < 0) | (h_z > 1)):
        raise ValueError("h_z must lie in [0, 1]")
    a4 = alpha_h ** 4
    denom = (1.0 + (a4 - 1.0) * h_z ** 2) ** 2
    return a4 / (math.pi * denom)


def sample_ggx_inputs(rng, count):
    """Training inputs: h_z = sqrt(u) (cosine hemisphere), roughness
    u'^2 floored at 1e-3 (low-roughness bias)."""
    h_z = np.sqrt(rng.random(count))
    alpha_h = np.clip(rng.random(count) ** 2, ALPHA_MIN, 1.0)
    return h_z, alpha_h


def default_ggx_train_config():
    return TrainConfig(learning_rate=2e-2, batch_size=4096, steps=8000,
                       scheduler=StepDecay(factor=0.5, every=3000))


@dataclass
class GgxTaskConfig:
    n_primary: int = 16
    n_cascaded: int = 8
    train: TrainConfig = field(default_factory=default_ggx_train_config)


def build_ggx_network(config: GgxTaskConfig):
    """16x16x2 triangle primary (identity ramp), 8x8x1 plain cascaded
    initialized to 0.5."""
    primary = GridArray((config.n_primary, config.n_primary), channels=2,
                        nonlinearity="triangle")
    init_identity_ramp(primary)
    cascaded = GridArray((config.n_cascaded, config.n_cascaded),
                         channels=1, nonlinearity="none")
    cascaded.cells[:] = 0.5
    return DInNetwork([primary], cascaded, [(0, 0), (0, 1)])


def ggx_inputs_to_coords(h_z, alpha_h):
    """Primary coordinate layout: axis 0 roughness, axis 1 h_z."""
    return np.stack([alpha_h, h_z], axis=1)


def train_ggx(config: GgxTaskConfig | None = None, loss_log=None,
              checkpoint_every=0, checkpoint_fn=None):
    """Fit the network to the analytic reference with an MAE loss."""
    if config is None:
        config = GgxTaskConfig()
    net = build_ggx_network(config)
    tc = config.train
    steps = tc.steps or 12000
    rng = np.random.default_rng(tc.seed)
    opt = Adam([a.cells for a in net.arrays()], tc)
    for step in range(steps):
        h_z, alpha_h = sample_ggx_inputs(rng, tc.batch_size)
        coords = ggx_inputs_to_coords(h_z, alpha_h)
        target = ggx_reference(h_z, alpha_h)[:, None]
        pred = forward(net, [coords])
        loss, up = mae_loss(pred, target.astype(np.float32))
        grads = net.zeros_grads()
        backward(net, [coords], up, grads)
        opt.step(grads, lr=lr_schedule(opt.t, tc))
        if loss_log is not None:
            loss_log.append(loss)
        if checkpoint_fn is not None and checkpoint_every:
            if (step + 1) % checkpoint_every == 0:
                checkpoint_fn(step + 1, net)
    return net


def eval_ggx(net, count=100_000, seed=1234):
    """Held-out PSNR over the input distribution.

    The distribution is unbounded (heavy-tailed near h_z -> 1, a -> 0), so
    both prediction and reference are normalized by the 99th-percentile
    reference value and clamped to [0, 1] before the MSE; otherwise the
    rare singular samples dominate regardless of fit quality.
    """
    rng = np.random.default_rng(seed)
    h_z, alpha_h = sample_ggx_inputs(rng, count)
    ref = ggx_reference(h_z, alpha_h)
    coords = ggx_inputs_to_coords(h_z, alpha_h)
    pred = np.maximum(forward(net, [coords])[:, 0].astype(np.float64), 0.0)
    p99 = np.percentile(ref, 99)
    err = np.clip(pred / p99, 0.0, 1.0) - np.clip(ref / p99, 0.0, 1.0)
    mse = float(np.mean(err ** 2))
    value = float("inf") if mse == 0 else -10.0 * np.log10(mse)
    return value


def write_eval_grid_csv(net, path, resolution=64):
    """(h_z, alpha_h, D_ref, D_net) grid for external plotting."""
    h_z = np.linspace(0.0, 1.0, resolution)
    alpha_h = np.linspace(ALPHA_MIN, 1.0, resolution)
    hh, aa = np.meshgrid(h_z, alpha_h)
    ref = ggx_reference(hh.ravel(), aa.ravel())
    pred = np.maximum(
        forward(net, [ggx_inputs_to_coords(hh.ravel(), aa.ravel())])[:, 0],
        0.0)
    with open(path, "w") as fh:
        fh.write("h_z,alpha_h,d_ref,d_net\n")
        for h, a, r, p in zip(hh.ravel(), aa.ravel(), ref, pred):
            fh.write(f"{h:.6g},{a:.6g},{r:.6g},{p:.6g}\n")
