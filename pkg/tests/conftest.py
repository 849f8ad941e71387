"""Session-scoped trained models shared between task tests and the
acceptance suite, so expensive trainings run at most once per session."""

import numpy as np
import pytest

from din.tasks.ggx import GgxTaskConfig, eval_ggx, train_ggx
from din.tasks.image import (ImageTaskConfig, bundled_test_image,
                             eval_image, solve_layout, train_image)
from din.tasks.sampler import SamplerTaskConfig, train_sampler
from din.tasks.sdf import (SHAPES, SdfTaskConfig, eval_sdf,
                           sample_test_points, train_sdf)


@pytest.fixture(scope="session")
def bundled_image():
    return bundled_test_image()


@pytest.fixture(scope="session")
def image_model_e6(bundled_image):
    """Default-settings image codec at 6x compression: (net, psnr, layout)."""
    cfg = ImageTaskConfig(compression=6.0, rho=16.0)
    layout = solve_layout(bundled_image, cfg)
    net = train_image(bundled_image, cfg, layout=layout)
    value, _ = eval_image(net, bundled_image)
    return net, value, layout


@pytest.fixture(scope="session")
def ggx_model():
    """Default-settings microfacet net: (net, psnr)."""
    net = train_ggx(GgxTaskConfig())
    return net, eval_ggx(net)


@pytest.fixture(scope="session")
def sdf_sphere_model():
    shape = SHAPES["sphere"]()
    net = train_sdf(shape, SdfTaskConfig())
    pts = sample_test_points(shape)
    iou, mae = eval_sdf(net, shape, pts)
    return net, shape, pts, iou, mae


@pytest.fixture(scope="session")
def sdf_torus_model():
    shape = SHAPES["torus"]()
    net = train_sdf(shape, SdfTaskConfig())
    pts = sample_test_points(shape)
    iou, mae = eval_sdf(net, shape, pts)
    return net, shape, pts, iou, mae


@pytest.fixture(scope="session")
def sampler_pair(bundled_image):
    """Footprint-aware net and its footprint-ignorant ablation twin."""
    aware = train_sampler(bundled_image,
                          SamplerTaskConfig(compression=6.0, rho=4.0))
    blind = train_sampler(bundled_image,
                          SamplerTaskConfig(compression=6.0, rho=4.0,
                                            footprint_aware=False))
    return aware, blind
