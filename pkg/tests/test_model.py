"""Backbone assembly: configs, counts, determinism, schedules, ERF."""

import numpy as np
import pytest

from a2 import model as M
from a2.attention import adaptive_dilation
from a2.errors import ConfigError, ResolutionError
from a2.fixtures import checkpoint_bytes
from a2.tensor import no_grad

from _oracles import backward_reach_interval, model_reach_layers

TOY = dict(
    channels=[8, 16, 32, 64],
    blocks=[1, 1, 1, 1],
    heads=[2, 2, 2, 2],
    window_sizes=[7, 5, 3, 3],
    num_classes=10,
    in_channels=3,
)


def toy_config(**overrides):
    kw = dict(TOY)
    kw.update(overrides)
    return M.ModelConfig(**kw).validate()


class TestConfig:
    def test_variant_table(self):
        small = M.variant_config("small")
        assert small.channels == [64, 128, 320, 512]
        assert small.blocks == [2, 4, 12, 4]
        assert small.heads == [2, 4, 10, 16]
        assert small.window_sizes == [11, 9, 7, 7]

    def test_all_variants_valid(self):
        for name in ("nano", "tiny", "small", "base", "large"):
            M.variant_config(name).validate()

    def test_channel_head_divisibility_enforced(self):
        with pytest.raises(ConfigError, match="channels"):
            toy_config(channels=[6, 16, 32, 64])

    def test_even_window_rejected(self):
        with pytest.raises(ConfigError, match="window_sizes"):
            toy_config(window_sizes=[8, 5, 3, 3])

    def test_json_roundtrip(self, tmp_path):
        cfg = toy_config()
        path = tmp_path / "cfg.json"
        cfg.to_json(path)
        again = M.ModelConfig.from_json(path)
        assert again == cfg

    def test_unknown_json_field_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text('{"channels": [8, 16, 32, 64], "bogus": 3}')
        with pytest.raises(ConfigError, match="bogus"):
            M.ModelConfig.from_json(path)


class TestBuild:
    def test_nano_parameter_band(self):
        count = M.param_count(M.build_model(M.variant_config("nano"), seed=0))
        assert 3.4e6 <= count <= 4.6e6

    def test_tiny_parameter_band(self):
        count = M.param_count(M.build_model(M.variant_config("tiny"), seed=0))
        assert 12.7e6 <= count <= 17.3e6

    def test_same_seed_bit_identical(self):
        a = M.build_model(toy_config(), seed=7)
        b = M.build_model(toy_config(), seed=7)
        assert checkpoint_bytes(a.store) == checkpoint_bytes(b.store)

    def test_different_seed_differs(self):
        a = M.build_model(toy_config(), seed=1)
        b = M.build_model(toy_config(), seed=2)
        assert checkpoint_bytes(a.store) != checkpoint_bytes(b.store)

    def test_pointwise_conv_count_matches_hand_formula(self):
        model = M.build_model(toy_config(), seed=0)
        c = 8  # stage-1 width
        gate = model.store["stage1.block0.mixer.gate_w"]
        bias = model.store["stage1.block0.mixer.gate_b"]
        assert gate.size + bias.size == c * c + c

    def test_total_is_sum_of_entries(self):
        model = M.build_model(toy_config(), seed=0)
        assert M.param_count(model) == sum(t.size for t in model.store.tensors())


class TestForward:
    def test_toy_smoke_logits_shape(self):
        model = M.build_model(toy_config(), seed=0)
        x = np.random.default_rng(0).normal(size=(1, 3, 64, 64))
        with no_grad():
            logits = M.forward_classify(model, x)
        assert logits.shape == (1, 10)
        assert np.isfinite(logits.data).all()

    def test_stage_shape_schedule(self):
        model = M.build_model(toy_config(), seed=0)
        x = np.random.default_rng(1).normal(size=(2, 3, 96, 64))
        with no_grad():
            feats = M.forward_features(model, x)
        assert feats[0].shape == (2, 8, 24, 16)
        assert feats[1].shape == (2, 16, 12, 8)
        assert feats[2].shape == (2, 32, 6, 4)
        assert feats[3].shape == (2, 64, 3, 2)

    def test_indivisible_resolution_names_multiple(self):
        model = M.build_model(toy_config(), seed=0)
        with pytest.raises(ResolutionError, match="32"):
            with no_grad():
                M.forward_classify(model, np.zeros((1, 3, 60, 64)))

    def test_deterministic_logits(self):
        model = M.build_model(toy_config(), seed=3)
        x = np.random.default_rng(2).normal(size=(1, 3, 64, 64))
        with no_grad():
            a = M.forward_classify(model, x).data
            b = M.forward_classify(model, x).data
        np.testing.assert_array_equal(a, b)

    def test_resolution_change_recomputes_dilation(self):
        model = M.build_model(toy_config(), seed=0)
        rng = np.random.default_rng(3)
        with no_grad():
            l64 = M.forward_classify(model, rng.normal(size=(1, 3, 64, 64)))
            l96 = M.forward_classify(model, rng.normal(size=(1, 3, 96, 96)))
        assert l64.shape == l96.shape == (1, 10)
        # stage-1 maps are 16 and 24 wide; window 7 gives different rates
        assert adaptive_dilation(16, 16, 7) == (2, 2)
        assert adaptive_dilation(24, 24, 7) == (3, 3)

    def test_stage_dilations_at_224(self):
        # table windows [11, 9, 7, 7] against the /4../32 schedule of 224
        sizes = [56, 28, 14, 7]
        windows = [11, 9, 7, 7]
        got = [adaptive_dilation(s, s, k) for s, k in zip(sizes, windows)]
        assert got == [(5, 5), (3, 3), (2, 2), (1, 1)]

    def test_batch_equivariance(self):
        model = M.build_model(toy_config(), seed=4)
        rng = np.random.default_rng(4)
        xs = rng.normal(size=(1, 3, 64, 64))
        ys = rng.normal(size=(1, 3, 64, 64))
        both = np.concatenate([xs, ys], axis=0)
        with no_grad():
            joint = M.forward_classify(model, both).data
            lone_x = M.forward_classify(model, xs).data
            lone_y = M.forward_classify(model, ys).data
        np.testing.assert_allclose(joint, np.concatenate([lone_x, lone_y]), atol=1e-12)


class TestErf:
    def test_zero_input_zero_bias_model_gives_zero_map(self):
        model = M.build_model(toy_config(), seed=0)
        for name, t in model.store.items():
            t.data[:] = 0.0
        erf = M.erf_map(model, np.zeros((1, 3, 64, 64)))
        np.testing.assert_array_equal(erf, np.zeros((64, 64)))

    def test_full_model_support_exceeds_ninety_percent(self):
        model = M.build_model(toy_config(window_sizes=[11, 9, 7, 7]), seed=0)
        x = np.random.default_rng(5).normal(size=(2, 3, 64, 64))
        erf = M.erf_map(model, x)
        assert M.erf_support_fraction(erf) > 0.9

    def test_attention_only_support_within_reach_bound(self):
        cfg = toy_config(
            blocks=[2, 0, 0, 0],
            window_sizes=[3, 3, 3, 3],
            attention_mode="sla_only",
            ssm_mode="none",
        )
        model = M.build_model(cfg, seed=0)
        size = 224
        x = np.random.default_rng(6).normal(size=(1, 3, size, size))
        erf = M.erf_map(model, x)

        layers = model_reach_layers(cfg, size)
        center = (size // 32) // 2
        lo, hi = backward_reach_interval(layers, center, center)
        lo = max(lo, 0)
        hi = min(hi, size - 1)
        box = (hi - lo + 1) ** 2 / size**2
        assert box < 1.0, "bound must be informative for this config"

        support = erf > 1e-6
        rows, cols = np.where(support)
        assert rows.min() >= lo and rows.max() <= hi
        assert cols.min() >= lo and cols.max() <= hi
        assert M.erf_support_fraction(erf) <= box

    def test_scan_only_model_reaches_earlier_raster_positions(self):
        cfg = toy_config(blocks=[1, 0, 0, 0], window_sizes=[3, 3, 3, 3], ssm_mode="vanilla")
        model = M.build_model(cfg, seed=1)
        x = np.random.default_rng(7).normal(size=(1, 3, 64, 64))
        erf = M.erf_map(model, x)
        assert M.erf_support_fraction(erf) > 0.0
