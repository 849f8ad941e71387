"""Image-compression task tests: sampling, layout, training smoke checks."""

import numpy as np
import pytest

from din import ImageBuffer, forward, load, save
from din.optim import StepDecay, TrainConfig
from din.tasks.image import (ImageTaskConfig, build_image_network,
                             bundled_test_image, cascaded_init_values,
                             decode_image, default_rho, eval_image,
                             solve_layout, stratified_uv_batch, train_image)


class TestBundledImage:
    def test_shape(self):
        img = bundled_test_image()
        assert (img.height, img.width, img.channels) == (512, 512, 3)
        assert img.data.min() >= 0.0 and img.data.max() <= 1.0


class TestDefaults:
    def test_rho_table_large(self):
        assert default_rho(4096, 3) == 128.0
        assert default_rho(4096, 12) == 80.0
        assert default_rho(4096, 24) == 72.0
        assert default_rho(4096, 20) == 72.0

    def test_rho_safe_defaults(self):
        assert default_rho(1024, 12) == 64.0
        assert default_rho(512, 6) == 16.0

    def test_bad_compression(self):
        with pytest.raises(ValueError):
            ImageTaskConfig(compression=1.0)

    def test_cascaded_init_roles(self):
        vals = cascaded_init_values(7)
        assert vals == pytest.approx([0.5, 0.5, 0.5, 1.0, 0.5, 0.5, 1.0])
        assert cascaded_init_values(8)[7] == 0.5
        assert np.all(cascaded_init_values(10)[8:] == 0.0)


class TestStratifiedSampling:
    def test_one_sample_per_stratum(self):
        rng = np.random.default_rng(0)
        uv = stratified_uv_batch(8, 4, rng)
        assert uv.shape == (32, 2)
        counts = np.zeros((4, 8), dtype=int)
        for u, v in uv:
            counts[min(int(v * 4), 3), min(int(u * 8), 7)] += 1
        assert np.all(counts == 1)

    def test_counts_exactly_equal_over_epochs(self):
        rng = np.random.default_rng(1)
        counts = np.zeros((2, 2), dtype=int)
        epochs = 200
        for _ in range(epochs):
            for u, v in stratified_uv_batch(2, 2, rng):
                counts[min(int(v * 2), 1), min(int(u * 2), 1)] += 1
        assert np.all(counts == epochs)

    def test_single_texel_uniform(self):
        rng = np.random.default_rng(2)
        uv = np.concatenate([stratified_uv_batch(1, 1, rng)
                             for _ in range(2000)])
        assert uv.min() >= 0.0 and uv.max() <= 1.0
        assert np.abs(uv.mean(axis=0) - 0.5).max() < 0.02


class TestNetworkShape:
    def test_build_matches_layout(self):
        img = ImageBuffer(np.zeros((512, 512, 3)))
        cfg = ImageTaskConfig(compression=6.0, rho=16.0)
        lay = solve_layout(img, cfg)
        net = build_image_network(lay)
        assert net.primaries[0].shape == (lay.n_primary, lay.n_primary)
        assert net.primaries[0].channels == 4
        assert net.cascaded.shape == (lay.n_cascaded,) * 4
        assert net.cascaded.channels == 3

    def test_untrained_decode_is_init_color(self):
        img = ImageBuffer(np.zeros((512, 512, 3)))
        lay = solve_layout(img, ImageTaskConfig(compression=6.0, rho=16.0))
        net = build_image_network(lay)
        out = decode_image(net, 16, 16)
        assert out.data == pytest.approx(0.5, abs=1e-5)


class TestTraining:
    def test_constant_grey_converges_fast(self):
        img = ImageBuffer(np.full((64, 64, 3), 0.37, dtype=np.float32))
        cfg = ImageTaskConfig(
            compression=6.0, rho=4.0,
            train=TrainConfig(learning_rate=3e-3, batch_size=1024,
                              epochs=50, scheduler=StepDecay(0.5, 25)))
        net = train_image(img, cfg)
        value, _ = eval_image(net, img)
        assert value >= 50.0

    def test_decode_deterministic_after_round_trip(self, tmp_path):
        rng = np.random.default_rng(3)
        img = ImageBuffer(rng.random((32, 32, 3)).astype(np.float32))
        cfg = ImageTaskConfig(
            compression=4.0, rho=4.0,
            train=TrainConfig(learning_rate=3e-3, batch_size=1024, epochs=2))
        net = train_image(img, cfg)
        before = decode_image(net, 32, 32)
        path = tmp_path / "m.din"
        save(net, path)
        after = decode_image(load(path), 32, 32)
        assert np.array_equal(before.data, after.data)

    def test_same_seed_same_model(self):
        rng = np.random.default_rng(4)
        img = ImageBuffer(rng.random((32, 32, 3)).astype(np.float32))
        cfg = ImageTaskConfig(
            compression=4.0, rho=4.0,
            train=TrainConfig(learning_rate=3e-3, batch_size=1024, epochs=2,
                              seed=7))
        a = train_image(img, cfg)
        b = train_image(img, cfg)
        for x, y in zip(a.arrays(), b.arrays()):
            assert np.array_equal(x.cells, y.cells)

    def test_loss_trend_downward(self):
        rng = np.random.default_rng(5)
        base = np.linspace(0, 1, 64)
        img = ImageBuffer((0.4 * np.add.outer(base, base)[:, :, None]
                           + 0.1 * rng.random((64, 64, 3))).astype(
                               np.float32))
        log = []
        cfg = ImageTaskConfig(
            compression=6.0, rho=4.0,
            train=TrainConfig(learning_rate=3e-3, batch_size=1024,
                              epochs=12, scheduler=StepDecay(0.5, 24)))
        train_image(img, cfg, loss_log=log)
        third = max(1, len(log) // 3)
        assert np.mean(log[-third:]) < np.mean(log[:third])

    def test_higher_cascaded_dims_help(self, bundled_image, image_model_e6):
        _, psnr_4d, _ = image_model_e6
        cfg = ImageTaskConfig(compression=6.0, rho=4.0, cascaded_dims=2)
        net = train_image(bundled_image, cfg)
        psnr_2d, _ = eval_image(net, bundled_image)
        assert psnr_4d >= psnr_2d
