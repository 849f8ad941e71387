"""Truncated signed distance fields over analytic shapes in the unit cube.

Targets are signed distances quantized to +-1 (inside negative, ties to
+1), sampled mostly near the surface.  The cascaded 3D grid is
pre-initialized from the nearest training sample before gradient descent
refines both arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ..grids import GridArray, init_identity_ramp
from ..network import DInNetwork, backward, forward, solve_layout_sdf
from ..optim import Adam, StepDecay, TrainConfig, lr_schedule, mae_loss


class AnalyticSdf:
    """Exact signed distance oracle; negative inside."""

    def distance(self, pos):
        raise NotImplementedError

    def surface_points(self, rng, count):
        """Uniform-ish surface samples and outward unit normals."""
        raise NotImplementedError


@dataclass
class Sphere(AnalyticSdf):
    center: tuple = (0.5, 0.5, 0.5)
    radius: float = 0.25

    def distance(self, pos):
        p = np.asarray(pos, dtype=np.float64) - self.center
        return np.linalg.norm(p, axis=-1) - self.radius

    def surface_points(self, rng, count):
        d = rng.normal(size=(count, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return np.asarray(self.center) + self.radius * d, d


@dataclass
class Box(AnalyticSdf):
    center: tuple = (0.5, 0.5, 0.5)
    half_extents: tuple = (0.2, 0.2, 0.2)

    def distance(self, pos):
        p = np.abs(np.asarray(pos, dtype=np.float64) - self.center)
        q = p - np.asarray(self.half_extents)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def surface_points(self, rng, count):
        h = np.asarray(self.half_extents)
        areas = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]])
        areas = np.repeat(areas, 2)
        probs = areas / areas.sum()
        face = rng.choice(6, size=count, p=probs)
        pts = rng.uniform(-1.0, 1.0, size=(count, 3)) * h
        normals = np.zeros((count, 3))
        axis = face // 2
        sign = np.where(face % 2 == 0, 1.0, -1.0)
        pts[np.arange(count), axis] = sign * h[axis]
        normals[np.arange(count), axis] = sign
        return np.asarray(self.center) + pts, normals


@dataclass
class Torus(AnalyticSdf):
    center: tuple = (0.5, 0.5, 0.5)
    major_radius: float = 0.25
    minor_radius: float = 0.1

    def distance(self, pos):
        p = np.asarray(pos, dtype=np.float64) - self.center
        ring = np.sqrt(p[..., 0] ** 2 + p[..., 1] ** 2) - self.major_radius
        return np.sqrt(ring ** 2 + p[..., 2] ** 2) - self.minor_radius

    def surface_points(self, rng, count):
        theta = rng.uniform(0.0, 2 * np.pi, count)
        phi = rng.uniform(0.0, 2 * np.pi, count)
        ct, st = np.cos(theta), np.sin(theta)
        cp, sp = np.cos(phi), np.sin(phi)
        ring = self.major_radius + self.minor_radius * cp
        pts = np.stack([ring * ct, ring * st, self.minor_radius * sp],
                       axis=1)
        normals = np.stack([cp * ct, cp * st, sp], axis=1)
        return np.asarray(self.center) + pts, normals


SHAPES = {"sphere": Sphere, "box": Box, "torus": Torus}


def sdf_reference(shape: AnalyticSdf, pos):
    return shape.distance(pos)


def quantize_distance(d):
    """Truncate to +-1; the boundary (d == 0) counts as outside."""
    return np.where(np.asarray(d) >= 0, 1.0, -1.0)


@dataclass
class SdfSampleSet:
    positions: np.ndarray  # (N, 3) in [0, 1]^3
    targets: np.ndarray    # (N,) in {-1, +1}
    near_count: int
    uniform_count: int


def sample_sdf_training_set(shape: AnalyticSdf, near_count=2_000_000,
                            uniform_count=None, sigma=0.01, rng=None):
    """Near-surface samples (surface + normal-direction Gaussian offset)
    plus uniform volume samples, default 50:1."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if rng is None:
        rng = np.random.default_rng(0)
    if uniform_count is None:
        uniform_count = max(1, near_count // 50)
    surf, normals = shape.surface_points(rng, near_count)
    offsets = rng.normal(0.0, sigma, near_count)
    near = np.clip(surf + offsets[:, None] * normals, 0.0, 1.0)
    uniform = rng.random((uniform_count, 3))
    positions = np.concatenate([near, uniform], axis=0)
    targets = quantize_distance(shape.distance(positions))
    return SdfSampleSet(positions=positions, targets=targets,
                        near_count=near_count,
                        uniform_count=uniform_count)


def init_cascaded_from_samples(cascaded: GridArray, samples: SdfSampleSet,
                               brute_force=False):
    """Set each voxel to the truncated distance of its nearest training
    sample (vertex-centered voxel positions)."""
    if samples.positions.shape[0] == 0:
        raise ValueError("empty sample set")
    axes = [np.linspace(0.0, 1.0, n) for n in cascaded.shape]
    grid = np.meshgrid(*axes, indexing="ij")
    voxels = np.stack([g.ravel() for g in grid], axis=1)
    if brute_force:
        idx = np.empty(voxels.shape[0], dtype=np.int64)
        for i, v in enumerate(voxels):
            idx[i] = np.argmin(
                np.sum((samples.positions - v) ** 2, axis=1))
    else:
        tree = cKDTree(samples.positions)
        _, idx = tree.query(voxels, workers=1)
    cascaded.cells[..., 0] = samples.targets[idx].reshape(
        cascaded.shape).astype(cascaded.cells.dtype)


def default_sdf_train_config():
    return TrainConfig(learning_rate=2e-3, batch_size=16384, epochs=16,
                       scheduler=StepDecay(factor=0.5, every=500))


@dataclass
class SdfTaskConfig:
    budget_bytes: int = 3 * 64 ** 3 + 32 ** 3
    rho: float = 2.0
    sigma: float = 0.01
    near_count: int = 2_000_000
    quantize_targets: bool = True
    train: TrainConfig = field(default_factory=default_sdf_train_config)


def build_sdf_network(layout):
    primary = GridArray((layout.n_primary,) * 3, channels=3,
                        nonlinearity="triangle")
    init_identity_ramp(primary)
    cascaded = GridArray((layout.n_cascaded,) * 3, channels=1,
                         nonlinearity="none")
    return DInNetwork([primary], cascaded, [(0, 0), (0, 1), (0, 2)])


def train_sdf(shape: AnalyticSdf, config: SdfTaskConfig | None = None,
              loss_log=None, pre_initialize=True):
    """Train the TSDF representation; sign(forward) classifies occupancy.

    With ``quantize_targets`` off, raw signed distances are regressed with
    a relative (MAPE-style) loss instead; kept for comparison runs only.
    """
    if config is None:
        config = SdfTaskConfig()
    layout = solve_layout_sdf(config.budget_bytes, config.rho)
    net = build_sdf_network(layout)
    tc = config.train
    rng = np.random.default_rng(tc.seed)
    samples = sample_sdf_training_set(shape, config.near_count,
                                      sigma=config.sigma, rng=rng)
    if pre_initialize:
        init_cascaded_from_samples(net.cascaded, samples)
    raw = None
    if not config.quantize_targets:
        raw = shape.distance(samples.positions)
    opt = Adam([a.cells for a in net.arrays()], tc)
    total = samples.positions.shape[0]
    epochs = tc.epochs or 12
    for _ in range(epochs):
        order = rng.permutation(total)
        for start in range(0, total, tc.batch_size):
            pick = order[start:start + tc.batch_size]
            pos = samples.positions[pick]
            pred = forward(net, [pos])
            if config.quantize_targets:
                target = samples.targets[pick][:, None]
                loss, up = mae_loss(pred, target.astype(np.float32))
            else:
                ref = raw[pick][:, None]
                rel = np.abs(ref) + 1e-4
                loss = float(np.mean(np.abs(pred - ref) / rel))
                up = np.sign(pred - ref) / (rel * pred.size)
            grads = net.zeros_grads()
            backward(net, [pos], up, grads)
            opt.step(grads, lr=lr_schedule(opt.t, tc))
            if loss_log is not None:
                loss_log.append(loss)
    return net


def sample_test_points(shape, count=100_000, sigma=0.01, seed=999):
    """Uniform near-surface evaluation points with analytic labels."""
    rng = np.random.default_rng(seed)
    surf, normals = shape.surface_points(rng, count)
    offsets = rng.normal(0.0, sigma, count)
    pts = np.clip(surf + offsets[:, None] * normals, 0.0, 1.0)
    return pts


def eval_sdf(net, shape, test_points):
    """IoU of inside/outside classifications and TSDF-MAE against +-1.

    IoU is None when neither classification contains an inside point.
    """
    pred = forward(net, [test_points])[:, 0]
    ref_d = shape.distance(test_points)
    ref_inside = ref_d < 0
    pred_inside = pred < 0
    both = int(np.sum(ref_inside & pred_inside))
    either = int(np.sum(ref_inside | pred_inside))
    iou = None if either == 0 else both / either
    mae = float(np.mean(np.abs(pred - quantize_distance(ref_d))))
    return iou, mae


def sign_grid(net, resolution):
    """Dense u8 inside-mask (1 = inside) for external surface extraction."""
    axes = [np.linspace(0.0, 1.0, resolution)] * 3
    grid = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grid], axis=1)
    out = np.empty(pts.shape[0], dtype=np.uint8)
    chunk = 1 << 17
    for start in range(0, pts.shape[0], chunk):
        vals = forward(net, [pts[start:start + chunk]])[:, 0]
        out[start:start + chunk] = (vals < 0).astype(np.uint8)
    return out.reshape((resolution,) * 3)


def export_sign_grid(net, resolution, path):
    """Raw u8 dump with a 3 x u32 little-endian resolution header."""
    grid = sign_grid(net, resolution)
    with open(path, "wb") as fh:
        fh.write(np.asarray(grid.shape, dtype="<u4").tobytes())
        fh.write(grid.tobytes())
