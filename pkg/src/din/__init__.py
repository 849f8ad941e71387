"""Differentiable indirection: trainable cascaded lookup arrays."""

from .grids import (GridArray, apply_nonlinearity, bake_nonlinearity,
                    grad_cells, grad_coords, init_identity_ramp,
                    interpolate, nonlinearity_deriv, quantize8)
from .network import (ConfigError, DInNetwork, FormatError,
                      InfeasibleLayoutError, Layout, backward, forward,
                      load, save, solve_layout_image, solve_layout_sampler,
                      solve_layout_sdf)
from .optim import (Adam, StepDecay, TrainConfig, clip_monotone,
                    clip_symmetric, lr_schedule, mae_loss,
                    soft_monotonicity)
from .images import (ImageBuffer, bilinear_sample, psnr, read_image_stack,
                     read_ppm, resize_bilinear, write_image_stack,
                     write_ppm)

__all__ = [
    "GridArray", "apply_nonlinearity", "bake_nonlinearity", "grad_cells",
    "grad_coords", "init_identity_ramp", "interpolate",
    "nonlinearity_deriv", "quantize8",
    "ConfigError", "DInNetwork", "FormatError", "InfeasibleLayoutError",
    "Layout", "backward", "forward", "load", "save", "solve_layout_image",
    "solve_layout_sampler", "solve_layout_sdf",
    "Adam", "StepDecay", "TrainConfig", "clip_monotone", "clip_symmetric",
    "lr_schedule", "mae_loss", "soft_monotonicity",
    "ImageBuffer", "bilinear_sample", "psnr", "read_image_stack",
    "read_ppm", "resize_bilinear", "write_image_stack", "write_ppm",
]

__version__ = "0.1.0"
