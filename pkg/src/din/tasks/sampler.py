"""Filtered neural texture sampler trained against a proxy mip sampler.

The proxy emulates hardware trilinear filtering in software: a 2x2
box-filter mip chain, bilinear taps on the two bracketing levels, and a
linear blend by the fractional level of detail.  The network takes uv plus
a scalar pixel footprint (0 = most detailed, 1 = least) through two
primaries feeding a 4D cascaded array shaped N_c^3 x N_lod.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..grids import GridArray, init_identity_ramp
from ..images import ImageBuffer, bilinear_sample
from ..network import (DInNetwork, Layout, backward, forward,
                       solve_layout_sampler)
from ..optim import Adam, StepDecay, TrainConfig, lr_schedule, mae_loss
from .image import cascaded_init_values, stratified_uv_batch


class MipChain:
    """Pyramid of 2x2 box-filtered halvings, level 0 = base, last 1x1."""

    def __init__(self, levels):
        self.levels = levels

    @property
    def base_resolution(self):
        return self.levels[0].width

    def __len__(self):
        return len(self.levels)


def build_mip_chain(img: ImageBuffer):
    n = img.width
    if img.width != img.height or n & (n - 1) != 0 or n < 1:
        raise ValueError("mip chain needs a square power-of-two image")
    levels = [img]
    data = img.data
    while data.shape[0] > 1:
        data = (data[0::2, 0::2] + data[1::2, 0::2]
                + data[0::2, 1::2] + data[1::2, 1::2]) / 4.0
        levels.append(ImageBuffer(data))
    return MipChain(levels)


def proxy_trilinear(chain: MipChain, uv, footprint):
    """Reference trilinear sample at continuous LOD
    clamp(log2(max(f, 1/N) * N), 0, L-1)."""
    uv = np.atleast_2d(np.asarray(uv, dtype=np.float64))
    f = np.atleast_1d(np.asarray(footprint, dtype=np.float64))
    if f.shape[0] == 1 and uv.shape[0] > 1:
        f = np.full(uv.shape[0], f[0])
    n = chain.base_resolution
    levels = len(chain)
    lam = np.clip(np.log2(np.maximum(f, 1.0 / n) * n), 0.0, levels - 1)
    l0 = np.floor(lam).astype(np.int64)
    l1 = np.minimum(l0 + 1, levels - 1)
    frac = (lam - l0)[:, None]
    out = np.zeros((uv.shape[0], chain.levels[0].channels),
                   dtype=np.float64)
    for lvl in range(levels):
        m0 = l0 == lvl
        m1 = l1 == lvl
        if m0.any():
            out[m0] += (1.0 - frac[m0]) * bilinear_sample(
                chain.levels[lvl], uv[m0])
        if m1.any():
            out[m1] += frac[m1] * bilinear_sample(chain.levels[lvl], uv[m1])
    return out.astype(np.float32)


def lod_exponent(n_base, p=0.5):
    """Power n = log_p(1/N) so a fraction p of u^n samples land at LOD 0."""
    if not 0.0 < p < 1.0 or n_base < 2:
        raise ValueError("need 0 < p < 1 and n_base >= 2")
    return float(np.log(1.0 / n_base) / np.log(p))


def lod_lambda(p, t):
    """Rate of the exponential footprint alternative: -ln(1-p) / t."""
    if not 0.0 < p < 1.0 or t <= 0:
        raise ValueError("need 0 < p < 1 and t > 0")
    return float(-np.log(1.0 - p) / t)


@dataclass
class FootprintSampleConfig:
    n_base: int
    p: float = 0.5
    exponential: bool = False

    @property
    def t(self):
        return 1.0 / self.n_base

    @property
    def n(self):
        return lod_exponent(self.n_base, self.p)

    @property
    def lambda_e(self):
        return lod_lambda(self.p, self.t)


def sample_footprints(config: FootprintSampleConfig, rng, count):
    """Footprints biased toward detailed LODs.

    Default: x = u^n with CDF x^(1/n).  The exponential mode concentrates
    even harder near zero and is off by default.
    """
    u = rng.random(count)
    if config.exponential:
        x = -np.log(np.maximum(u, 1e-300)) / config.lambda_e
        return np.clip(x, 0.0, 1.0)
    return u ** config.n


def footprint_from_derivatives(ddx_uv, ddy_uv):
    """Footprint scalar from screen-space uv derivatives: magnitude of the
    2D cross product of the two derivative vectors."""
    ddx_uv = np.asarray(ddx_uv, dtype=np.float64)
    ddy_uv = np.asarray(ddy_uv, dtype=np.float64)
    cross = (ddx_uv[..., 0] * ddy_uv[..., 1]
             - ddx_uv[..., 1] * ddy_uv[..., 0])
    return np.abs(cross)


def default_sampler_train_config():
    return TrainConfig(learning_rate=3e-3, batch_size=8192, epochs=30,
                       scheduler=StepDecay(factor=0.5, every=320))


@dataclass
class SamplerTaskConfig:
    compression: float = 6.0
    rho: float = 4.0
    p: float = 0.5
    footprint_aware: bool = True  # False: ablation, footprint wired to 0
    train: TrainConfig = field(default_factory=default_sampler_train_config)


def build_sampler_network(layout: Layout, k):
    uv_primary = GridArray((layout.n_primary, layout.n_primary),
                           channels=3, nonlinearity="triangle")
    init_identity_ramp(uv_primary)
    lod_primary = GridArray((layout.n_p1,), channels=1,
                            nonlinearity="triangle")
    init_identity_ramp(lod_primary)
    casc_shape = (layout.n_cascaded,) * 3 + (layout.n_lod,)
    cascaded = GridArray(casc_shape, channels=k, nonlinearity="none")
    cascaded.cells[:] = cascaded_init_values(k)
    wiring = [(0, 0), (0, 1), (0, 2), (1, 0)]
    return DInNetwork([uv_primary, lod_primary], cascaded, wiring)


def train_sampler(img: ImageBuffer, config: SamplerTaskConfig,
                  layout: Layout | None = None, loss_log=None):
    """Fit (uv, footprint) -> filtered color against the proxy sampler."""
    chain = build_mip_chain(img)
    if layout is None:
        layout = solve_layout_sampler(img.width, img.channels,
                                      config.compression, config.rho)
    net = build_sampler_network(layout, img.channels)
    tc = config.train
    epochs = tc.epochs or 30
    fcfg = FootprintSampleConfig(img.width, config.p)
    rng = np.random.default_rng(tc.seed)
    opt = Adam([a.cells for a in net.arrays()], tc)
    for _ in range(epochs):
        uv = stratified_uv_batch(img.width, img.height, rng)
        order = rng.permutation(uv.shape[0])
        for start in range(0, uv.shape[0], tc.batch_size):
            batch_uv = uv[order[start:start + tc.batch_size]]
            foot = sample_footprints(fcfg, rng, batch_uv.shape[0])
            target = proxy_trilinear(chain, batch_uv, foot)
            net_foot = foot if config.footprint_aware else np.zeros_like(
                foot)
            inputs = [batch_uv, net_foot[:, None]]
            pred = forward(net, inputs)
            loss, up = mae_loss(pred, target)
            grads = net.zeros_grads()
            backward(net, inputs, up, grads)
            opt.step(grads, lr=lr_schedule(opt.t, tc))
            if loss_log is not None:
                loss_log.append(loss)
    return net


def eval_sampler(net, img: ImageBuffer, footprints=(0.0, 0.125, 0.25, 0.5,
                                                    1.0),
                 count=4096, seed=0, footprint_aware=True):
    """Per-footprint PSNR against the proxy reference; rows of
    (footprint, psnr_db)."""
    chain = build_mip_chain(img)
    rng = np.random.default_rng(seed)
    uv = rng.random((count, 2))
    rows = []
    for f in footprints:
        foot = np.full(count, f)
        ref = proxy_trilinear(chain, uv, foot)
        net_foot = foot if footprint_aware else np.zeros_like(foot)
        pred = np.clip(forward(net, [uv, net_foot[:, None]]), 0.0, 1.0)
        mse = float(np.mean((pred.astype(np.float64) - ref) ** 2))
        value = float("inf") if mse == 0 else 10.0 * np.log10(1.0 / mse)
        rows.append((float(f), value))
    return rows


def write_footprint_csv(rows, path):
    with open(path, "w") as fh:
        fh.write("footprint,psnr_db\n")
        for f, value in rows:
            fh.write(f"{f:.6g},{value:.6g}\n")


def sampler_psnr(net, img, footprint, count=8192, seed=0,
                 footprint_aware=True):
    rows = eval_sampler(net, img, footprints=(footprint,), count=count,
                        seed=seed, footprint_aware=footprint_aware)
    return rows[0][1]
