"""Compact image representation: 2D primary -> 4D cascaded indirection.

The primary is a 4-channel uv-ramp (uv repeated twice), the cascaded a
k-channel array indexed by the primary's output.  Targets come from a
vertex-centered bilinear sampler over the source image, drawn by stratified
sampling with one jittered sample per texel per epoch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..grids import GridArray, init_identity_ramp
from ..images import (ImageBuffer, bilinear_sample, psnr, read_ppm,
                      resize_bilinear)
from ..network import (DInNetwork, Layout, backward, forward,
                       solve_layout_image)
from ..optim import Adam, StepDecay, TrainConfig, lr_schedule, mae_loss

# Cascaded initialization by channel role: albedo (grey), AO (white),
# normal (light blue), roughness (grey); any further channels start at 0.
_ROLE_VALUES = (0.5, 0.5, 0.5, 1.0, 0.5, 0.5, 1.0, 0.5)


def bundled_test_image():
    """The 512x512 RGB test image shipped with the package."""
    from importlib import resources

    ref = resources.files("din") / "data" / "test_image_512.ppm"
    with resources.as_file(ref) as path:
        return read_ppm(str(path))


def default_rho(base_resolution, e):
    """Pseudo-optimal primary/cascaded side ratios for RGB textures."""
    if base_resolution >= 4096:
        table = {3: 128.0, 6: 128.0, 12: 80.0, 24: 72.0}
        key = min(table, key=lambda c: abs(c - e))
        return table[key]
    if base_resolution >= 1024:
        return 64.0
    # Small desk-scale images need a finer search granularity.
    return 16.0


def default_image_train_config():
    return TrainConfig(learning_rate=3e-3, batch_size=8192, epochs=30,
                       scheduler=StepDecay(factor=0.5, every=320))


@dataclass
class ImageTaskConfig:
    compression: float = 6.0
    rho: float = 0.0            # 0: resolution-dependent default
    cascaded_dims: int = 4
    train: TrainConfig = field(default_factory=default_image_train_config)

    def __post_init__(self):
        if self.compression <= 1:
            raise ValueError("compression must be > 1")


def cascaded_init_values(channels):
    vals = np.zeros(channels, dtype=np.float32)
    for i in range(min(channels, len(_ROLE_VALUES))):
        vals[i] = _ROLE_VALUES[i]
    return vals


def stratified_uv_batch(width, height, rng):
    """One uniformly jittered uv sample per texel stratum, in texel order."""
    ii, jj = np.meshgrid(np.arange(width), np.arange(height))
    jitter = rng.random((height * width, 2))
    uv = np.empty((height * width, 2))
    uv[:, 0] = (ii.ravel() + jitter[:, 0]) / width
    uv[:, 1] = (jj.ravel() + jitter[:, 1]) / height
    return uv


def build_image_network(layout: Layout, cascaded_dims=4):
    primary = GridArray((layout.n_primary, layout.n_primary),
                        channels=cascaded_dims, nonlinearity="triangle")
    init_identity_ramp(primary)
    casc_shape = (layout.n_cascaded,) * cascaded_dims
    cascaded = GridArray(casc_shape, channels=layout.channels,
                         nonlinearity="none")
    cascaded.cells[:] = cascaded_init_values(layout.channels)
    wiring = [(0, c) for c in range(cascaded_dims)]
    return DInNetwork([primary], cascaded, wiring)


def solve_layout(img: ImageBuffer, config: ImageTaskConfig):
    base = max(img.width, img.height)
    rho = config.rho or default_rho(base, config.compression)
    return solve_layout_image(base, img.channels, config.compression, rho,
                              primary_channels=config.cascaded_dims,
                              cascaded_dims=config.cascaded_dims)


def train_image(img: ImageBuffer, config: ImageTaskConfig,
                layout: Layout | None = None, loss_log=None):
    """Fit the indirection to the image; returns the trained network."""
    if layout is None:
        layout = solve_layout(img, config)
    net = build_image_network(layout, config.cascaded_dims)
    tc = config.train
    epochs = tc.epochs or 30
    rng = np.random.default_rng(tc.seed)
    params = [a.cells for a in net.arrays()]
    opt = Adam(params, tc)
    for _ in range(epochs):
        uv = stratified_uv_batch(img.width, img.height, rng)
        order = rng.permutation(uv.shape[0])
        for start in range(0, uv.shape[0], tc.batch_size):
            batch = uv[order[start:start + tc.batch_size]]
            target = bilinear_sample(img, batch)
            pred = forward(net, [batch])
            loss, up = mae_loss(pred, target)
            grads = net.zeros_grads()
            backward(net, [batch], up, grads)
            opt.step(grads, lr=lr_schedule(opt.t, tc))
            if loss_log is not None:
                loss_log.append(loss)
    return net


def decode_image(net, width, height):
    """Dense forward evaluation at texel centers, clamped to [0, 1]."""
    us = np.linspace(0.0, 1.0, width)
    vs = np.linspace(0.0, 1.0, height)
    uu, vv = np.meshgrid(us, vs)
    uv = np.stack([uu.ravel(), vv.ravel()], axis=1)
    out = np.empty((height * width, net.cascaded.channels),
                   dtype=np.float32)
    chunk = 1 << 16
    for start in range(0, uv.shape[0], chunk):
        out[start:start + chunk] = forward(net, [uv[start:start + chunk]])
    out = np.clip(out, 0.0, 1.0)
    return ImageBuffer(out.reshape(height, width, net.cascaded.channels))


def baseline_downsample_psnr(img: ImageBuffer, e):
    """Bilinear downsample by sqrt(e) per side, upsample back, PSNR."""
    factor = float(np.sqrt(e))
    small_w = max(1, int(round(img.width / factor)))
    small_h = max(1, int(round(img.height / factor)))
    small = resize_bilinear(img, small_w, small_h)
    rebuilt = resize_bilinear(small, img.width, img.height)
    return psnr(rebuilt, img)


def eval_image(net, img: ImageBuffer):
    """PSNR of the dense decode against the source texels."""
    decoded = decode_image(net, img.width, img.height)
    return psnr(decoded, img), decoded
