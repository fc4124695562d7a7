import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tadevoc import autodiff as ad
from tadevoc import nn
from tadevoc.errors import ConfigurationError, InputError
from tadevoc.features import MelSpectrogram
from tadevoc.generator import (
    NUM_STAGES,
    TOTAL_UPSAMPLING,
    GeneratorConfig,
    add_weight_norm_conv,
    conditioning_reach,
    count_parameters,
    generate,
    generator_forward,
    init_generator,
    resblock_names,
    sample_noise,
    tade_forward,
    tade_res_block,
    transform_path_prefixes,
)

from _util import TINY


@pytest.fixture(scope="module")
def default_params():
    return init_generator(seed=0)


@pytest.fixture(scope="module")
def tiny_params():
    return init_generator(TINY, seed=0)


def mel_for(frames, mels=80, seed=0):
    return np.random.default_rng(seed).standard_normal((mels, frames)).astype(np.float32)


def zero_conv(params, prefix, bias=0.0):
    params[f"{prefix}.weight_g"] = np.zeros_like(params[f"{prefix}.weight_g"])
    params[f"{prefix}.bias"] = np.full_like(params[f"{prefix}.bias"], bias)


def silence_transform_paths(params):
    params = dict(params)
    for block in resblock_names():
        for prefix in transform_path_prefixes(block):
            zero_conv(params, prefix)
    return params


class TestArchitecture:
    def test_total_upsampling(self):
        assert TOTAL_UPSAMPLING == 256 and NUM_STAGES == 8

    def test_every_conv_is_weight_normalized(self, default_params):
        convs = {k.rsplit(".", 1)[0] for k in default_params}
        for conv in convs:
            for field in ("weight_v", "weight_g", "bias"):
                assert f"{conv}.{field}" in default_params

    def test_channel_widths(self, default_params):
        assert default_params["input_conv.weight_v"].shape == (64, 128, 9)
        assert default_params["final.conv.weight_v"].shape == (1, 64, 9)
        assert default_params["stage3.resblock.tade1.gamma_conv.weight_v"].shape == (64, 64, 9)
        assert default_params["stage3.resblock.tade1.cond_conv.weight_v"].shape == (64, 80, 5)

    def test_initial_effective_weight_equals_raw_draw(self, default_params):
        v, g = default_params["stage0.resblock.conv1_gate.weight_v"], default_params["stage0.resblock.conv1_gate.weight_g"]
        np.testing.assert_allclose(nn.apply_weight_norm(v, g), v, rtol=1e-5)
        assert not np.any(default_params["stage0.resblock.conv1_gate.bias"])

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigurationError):
            GeneratorConfig(kernel_size=8)


class TestCountParameters:
    def test_single_conv(self):
        assert count_parameters({"w": np.zeros((64, 64, 9)), "b": np.zeros(64)}) == 64 * 64 * 9 + 64 == 36928

    def test_single_weight_normalized_conv_counts_magnitudes(self):
        params = {}
        add_weight_norm_conv(params, np.random.default_rng(0), "c", 64, 64, 9, 0.02)
        assert count_parameters(params) == 64 * 64 * 9 + 64 + 64 == 36992

    def test_empty(self):
        assert count_parameters({}) == 0

    def test_default_budget(self, default_params):
        n = count_parameters(default_params)
        assert 3.86e6 * 0.8 <= n <= 3.86e6 * 1.2


class TestTade:
    def setup_method(self):
        self.p = init_generator(TINY, seed=1)
        rng = np.random.default_rng(2)
        self.x = rng.standard_normal((4, 16))
        self.cond = rng.standard_normal((3, 4))
        self.prefix = "stage0.resblock.tade1"

    def test_identity_modulation(self):
        zero_conv(self.p, f"{self.prefix}.gamma_conv", bias=1.0)
        zero_conv(self.p, f"{self.prefix}.beta_conv", bias=0.0)
        out, _ = tade_forward(self.x, self.cond, ad.constants(self.p), self.prefix)
        np.testing.assert_allclose(out.value, nn.instance_norm(self.x), rtol=1e-6)

    def test_pure_style(self):
        zero_conv(self.p, f"{self.prefix}.gamma_conv")
        a, _ = tade_forward(self.x, self.cond, ad.constants(self.p), self.prefix)
        b, _ = tade_forward(self.x * 7 + 3, self.cond, ad.constants(self.p), self.prefix)
        np.testing.assert_array_equal(a.value, b.value)

    def test_shape_and_resampled_condition(self):
        out, cond = tade_forward(self.x, self.cond, ad.constants(self.p), self.prefix)
        assert out.shape == self.x.shape
        np.testing.assert_array_equal(cond.value, np.repeat(self.cond, 4, axis=-1))

    def test_incompatible_condition_length(self):
        with pytest.raises(ConfigurationError):
            tade_forward(self.x, np.ones((3, 5)), ad.constants(self.p), self.prefix)

    def test_modulation_is_local_in_conditioning(self):
        """gamma/beta at step t only see conditioning within the cond/gamma kernel reach."""
        p = ad.constants(self.p)
        x = np.random.default_rng(5).standard_normal((4, 64))
        cond = np.random.default_rng(6).standard_normal((3, 16))
        bumped = cond.copy()
        bumped[:, 8] += 1.0
        a, _ = tade_forward(x, cond, p, self.prefix)
        b, _ = tade_forward(x, bumped, p, self.prefix)
        changed = np.nonzero(np.any(a.value != b.value, axis=0))[0]
        reach = TINY.cond_kernel_size // 2 + TINY.kernel_size // 2
        assert changed.min() >= 8 * 4 - reach and changed.max() <= 9 * 4 - 1 + reach


class TestResBlock:
    def test_zero_transform_path_is_identity(self):
        p = silence_transform_paths(init_generator(TINY, seed=3))
        x = np.random.default_rng(0).standard_normal((4, 32))
        out = tade_res_block(x, np.random.default_rng(1).standard_normal((3, 8)), ad.constants(p), "stage2.resblock")
        np.testing.assert_array_equal(out.value, x)

    def test_input_jacobian_is_identity_at_zero_weights(self):
        p = silence_transform_paths(init_generator(TINY, seed=3))
        rng = np.random.default_rng(0)
        x, cond, m = rng.standard_normal((4, 32)), rng.standard_normal((3, 8)), rng.standard_normal((4, 32))
        tape = ad.Tape()
        xv = tape.leaf("x", x)
        out = tade_res_block(xv, cond, ad.constants(p), "stage2.resblock")
        np.testing.assert_allclose(ad.backward(tape, ad.total(out * m))["x"], m, atol=1e-12)

    @settings(max_examples=10, deadline=None)
    @given(t=st.integers(1, 6), seed=st.integers(0, 1000))
    def test_shape_preserved(self, t, seed):
        p = init_generator(TINY, seed=seed)
        x = np.random.default_rng(seed).standard_normal((4, 4 * t))
        out = tade_res_block(x, np.random.default_rng(seed + 1).standard_normal((3, t)), ad.constants(p), "stage0.resblock")
        assert out.shape == x.shape

    def test_channel_mismatch(self):
        p = ad.constants(init_generator(TINY, seed=3))
        with pytest.raises(ConfigurationError):
            tade_res_block(np.ones((5, 8)), np.ones((3, 2)), p, "stage0.resblock")


class TestGeneratorForward:
    @pytest.mark.parametrize("frames", [1, 2, 40, 87])
    def test_length_contract(self, default_params, frames):
        out = generate(mel_for(frames), default_params, seed=0)
        assert out.shape == (256 * frames,)

    def test_range_and_dtype(self, default_params):
        out = generate(mel_for(12), default_params, seed=3)
        assert out.dtype == np.float32
        assert np.all(np.abs(out) <= 1.0)

    def test_deterministic(self, default_params):
        a = generate(mel_for(10), default_params, seed=11)
        b = generate(mel_for(10), default_params, seed=11)
        assert np.array_equal(a, b)

    def test_seed_dependence(self, default_params):
        assert not np.array_equal(generate(mel_for(10), default_params, 1), generate(mel_for(10), default_params, 2))

    def test_accepts_mel_spectrogram(self, tiny_params):
        mel = MelSpectrogram(mel_for(3, mels=3), 22050, 256)
        np.testing.assert_array_equal(generate(mel, tiny_params, 0), generate(mel.data, tiny_params, 0))

    def test_frame_mismatch(self, tiny_params):
        with pytest.raises(InputError):
            generator_forward(np.zeros((4, 5), np.float32), mel_for(6, mels=3), tiny_params)

    def test_batched_matches_single(self, tiny_params):
        rng = np.random.default_rng(0)
        z, mel = sample_noise(rng, 3, 4, batch=2), rng.standard_normal((2, 3, 3)).astype(np.float32)
        both = generator_forward(z, mel, tiny_params)
        np.testing.assert_allclose(both[1], generator_forward(z[1], mel[1], tiny_params), rtol=1e-5, atol=1e-7)

    def test_residual_identity_reduces_to_projection(self, tiny_params):
        p = silence_transform_paths(tiny_params)
        rng = np.random.default_rng(4)
        z, mel = sample_noise(rng, 3, 4), rng.standard_normal((3, 3)).astype(np.float32)
        w_in = nn.apply_weight_norm(p["input_conv.weight_v"], p["input_conv.weight_g"])
        w_out = nn.apply_weight_norm(p["final.conv.weight_v"], p["final.conv.weight_g"])
        h = nn.upsample_nearest(nn.conv1d_raw(z, w_in, p["input_conv.bias"]), 256)
        expected = np.tanh(nn.conv1d_raw(h, w_out, p["final.conv.bias"]))[0]
        np.testing.assert_allclose(generator_forward(z, mel, p), expected, rtol=1e-5, atol=1e-6)

    def test_conditioning_sensitivity_is_bounded(self, default_params):
        """A mel frame acts through convolutions within ``conditioning_reach``; instance-norm
        statistics carry only a small global residue beyond it."""
        reach = conditioning_reach(default_params)
        frames, f = 100, 50
        assert reach < (frames - f - 1) * 256
        rng = np.random.default_rng(0)
        mel, z = mel_for(frames), sample_noise(rng, frames)
        bumped = mel.copy()
        bumped[:, f] += 1.0
        diff = np.abs(generator_forward(z, mel, default_params) - generator_forward(z, bumped, default_params))
        inside = np.zeros(diff.shape, bool)
        inside[max(0, f * 256 - reach) : (f + 1) * 256 + reach] = True
        assert diff[inside].max() > 0
        assert diff[~inside].max() <= 0.02 * diff[inside].max()

    def test_conditioning_reach_arithmetic(self, default_params):
        # stage 0 dominates: ceil-halving of the x half-width converges to 12, plus the
        # TADE1 conditioning path (8 + 4 + 4 + 2), times 256 output samples per stage-0 step
        assert conditioning_reach(default_params) == 30 * 256
