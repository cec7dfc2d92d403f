import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import finite_diff_grads, max_relative_error
from onestep_sr.errors import ConfigError, ShapeError, VocabError
from onestep_sr.networks import (
    VAE,
    CrossAttention,
    LoRAConfig,
    LQModulator,
    UNet,
    UNetConfig,
    VAEConfig,
    adapter_parameters,
    inject_adapters,
    is_cross_attention_site,
    lora_freeze,
    lora_inject,
    lora_sites,
    param_count,
    pixel_shuffle,
    pixel_unshuffle,
    trainable_params,
)
from onestep_sr.schedule import NoiseSchedule

SMALL_UNET = UNetConfig(base_width=32, attn_heads=4, text_dim=32, time_dim=64)


def small_unet(with_lqfm=True, seed=0):
    torch.manual_seed(seed)
    return UNet(SMALL_UNET, with_lqfm=with_lqfm)


class TestVAE:
    def test_encode_decode_shapes(self):
        torch.manual_seed(0)
        vae = VAE(VAEConfig(base_width=16))
        x = torch.rand(2, 3, 64, 64)
        z = vae.encode(x)
        assert z.shape == (2, 4, 16, 16)
        out = vae.decode(z)
        assert out.shape == (2, 3, 64, 64)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_indivisible_input(self):
        vae = VAE(VAEConfig(base_width=16))
        with pytest.raises(ShapeError):
            vae.encode(torch.rand(1, 3, 30, 30))

    def test_bad_config(self):
        with pytest.raises(ConfigError):
            VAEConfig(downscale=3)

    def test_latent_scale_calibration(self):
        torch.manual_seed(1)
        vae = VAE(VAEConfig(base_width=16))
        x = torch.rand(4, 3, 64, 64)
        vae.calibrate_latent_scale(x)
        with torch.no_grad():
            z = vae.encode(x)
        assert abs(float(z.std()) - 1.0) < 1e-4

    def test_features_resolutions(self):
        vae = VAE(VAEConfig(base_width=16))
        feats = vae.features(torch.rand(1, 3, 64, 64))
        assert [f.shape[-1] for f in feats] == [64, 32, 16]


class TestPixelUnshuffle:
    def test_identity_at_r1(self):
        x = torch.rand(1, 3, 4, 4)
        assert torch.equal(pixel_unshuffle(x, 1), x)

    def test_row_major_2x2(self):
        x = torch.tensor([[1.0, 2.0], [3.0, 4.0]]).view(1, 1, 2, 2)
        out = pixel_unshuffle(x, 2)
        assert out.shape == (1, 4, 1, 1)
        assert out.flatten().tolist() == [1.0, 2.0, 3.0, 4.0]

    def test_bijection(self):
        x = torch.rand(2, 3, 8, 8)
        assert torch.equal(pixel_shuffle(pixel_unshuffle(x, 4), 4), x)

    @settings(max_examples=25, deadline=None)
    @given(r=st.sampled_from([1, 2, 4]), c=st.integers(1, 3), hw=st.sampled_from([4, 8]))
    def test_bijection_property(self, r, c, hw):
        x = torch.arange(c * hw * hw, dtype=torch.float32).view(1, c, hw, hw)
        assert torch.equal(pixel_shuffle(pixel_unshuffle(x, r), r), x)

    def test_indivisible(self):
        with pytest.raises(ShapeError):
            pixel_unshuffle(torch.rand(1, 1, 5, 5), 2)


class TestModulator:
    def test_identity_at_init(self):
        torch.manual_seed(0)
        mod = LQModulator(feat_channels=8, unshuffle=2)
        feat = torch.randn(1, 8, 4, 4)
        img = torch.rand(1, 3, 8, 8)
        assert torch.equal(mod(feat, img, 3.7), feat)

    def test_doubling_with_unit_gamma(self):
        mod = LQModulator(feat_channels=4, unshuffle=2)
        with torch.no_grad():
            mod.out.weight.zero_()
            mod.out.bias.zero_()
            mod.out.bias[:4] = 1.0  # gamma = 1, beta = 0
        feat = torch.randn(1, 4, 4, 4)
        out = mod(feat, torch.rand(1, 3, 8, 8), 1.0)
        assert torch.allclose(out, 2.0 * feat)

    def test_beta_shift(self):
        mod = LQModulator(feat_channels=4, unshuffle=2)
        with torch.no_grad():
            mod.out.weight.zero_()
            mod.out.bias.zero_()
            mod.out.bias[4:] = 0.5  # gamma = 0, beta = 0.5
        feat = torch.zeros(1, 4, 4, 4)
        out = mod(feat, torch.rand(1, 3, 8, 8), 2.0)
        assert torch.allclose(out, torch.full_like(feat, 1.0))

    def test_spatial_mismatch(self):
        mod = LQModulator(feat_channels=4, unshuffle=2)
        with pytest.raises(ShapeError):
            mod(torch.zeros(1, 4, 4, 4), torch.rand(1, 3, 16, 16), 1.0)

    def test_modulate_uses_schedule_coefficient(self):
        sched = NoiseSchedule(alpha_bar=np.array([1.0, 0.8]), lambda_max=100.0)
        mod = LQModulator(feat_channels=4, unshuffle=2)
        with torch.no_grad():
            mod.out.weight.zero_()
            mod.out.bias.zero_()
            mod.out.bias[:4] = 1.0
        feat = torch.ones(1, 4, 4, 4)
        out = mod.modulate(feat, torch.rand(1, 3, 8, 8), 1, sched)
        # lambda_1 = 2, so output = (1 + 2) * feat
        assert torch.allclose(out, 3.0 * feat)

    def test_gradient_matches_finite_differences(self):
        torch.manual_seed(3)
        mod = LQModulator(feat_channels=8, unshuffle=2, hidden=8).double()
        with torch.no_grad():
            mod.out.weight.normal_(0, 0.3)
            mod.out.bias.normal_(0, 0.3)
        feat = torch.randn(1, 8, 4, 4, dtype=torch.float64)
        img = torch.rand(1, 3, 8, 8, dtype=torch.float64)
        probe = torch.randn(1, 8, 4, 4, dtype=torch.float64)
        params = list(mod.parameters())

        def scalar():
            return float((mod(feat, img, 1.3) * probe).sum())

        loss = (mod(feat, img, 1.3) * probe).sum()
        analytic = torch.autograd.grad(loss, params)
        numeric = finite_diff_grads(scalar, params, step=1e-3)
        assert max_relative_error(analytic, numeric) <= 1e-4


class TestUNet:
    def test_output_shape(self):
        unet = small_unet()
        z = torch.randn(2, 4, 16, 16)
        tokens = torch.tensor([[1, 2], [3, 0]])
        eps, attn = unet(z, 100, tokens)
        assert eps.shape == z.shape
        assert len(attn) == 5  # depth 2 down + mid + depth 2 up

    def test_attention_rows_sum_to_one(self):
        unet = small_unet()
        z = torch.randn(1, 4, 16, 16)
        tokens = torch.tensor([[1, 2, 3]])
        _, attn = unet(z, 50, tokens)
        for amap in attn:
            sums = amap.sum(dim=-1)
            assert torch.allclose(sums, torch.ones_like(sums), atol=1e-5)

    def test_attention_map_resolutions(self):
        unet = small_unet()
        _, attn = unet(torch.randn(1, 4, 16, 16), 10, torch.tensor([[1]]))
        assert [tuple(a.shape[1:3]) for a in attn] == [
            (16, 16), (8, 8), (4, 4), (8, 8), (16, 16)
        ]

    def test_unknown_token(self):
        unet = small_unet()
        with pytest.raises(VocabError):
            unet(torch.randn(1, 4, 16, 16), 10, torch.tensor([[999]]))

    def test_lqfm_noop_at_init(self):
        unet = small_unet(with_lqfm=True)
        z = torch.randn(1, 4, 16, 16)
        tokens = torch.tensor([[2]])
        lq = torch.rand(1, 3, 64, 64)
        sched = NoiseSchedule.scaled_linear()
        eps_without, _ = unet.predict(z, 100, tokens, sched)
        eps_with, _ = unet.predict(z, 100, tokens, sched, lqfm_input=lq)
        assert torch.equal(eps_without, eps_with)

    def test_cond_image_requires_modulator(self):
        unet = small_unet(with_lqfm=False)
        with pytest.raises(ConfigError):
            unet(torch.randn(1, 4, 16, 16), 10, torch.tensor([[1]]),
                 cond_image=torch.rand(1, 3, 64, 64), mod_coeff=1.0)

    def test_stem_input_identical_with_and_without_lqfm(self):
        # modulation must act on the stem output, never on the latent input
        unet = small_unet(with_lqfm=True)
        z = torch.randn(1, 4, 16, 16)
        tokens = torch.tensor([[1]])
        sched = NoiseSchedule.scaled_linear()
        captured = []
        handle = unet.conv_in.register_forward_pre_hook(
            lambda mod, args: captured.append(args[0].clone())
        )
        try:
            unet.predict(z, 100, tokens, sched)
            unet.predict(z, 100, tokens, sched, lqfm_input=torch.rand(1, 3, 64, 64))
        finally:
            handle.remove()
        assert torch.equal(captured[0], captured[1])

    def test_timestep_changes_output(self):
        unet = small_unet()
        z = torch.randn(1, 4, 16, 16)
        tokens = torch.tensor([[1]])
        a, _ = unet(z, 10, tokens)
        b, _ = unet(z, 400, tokens)
        assert not torch.allclose(a, b)


class TestCrossAttentionGradient:
    def test_matches_finite_differences(self):
        torch.manual_seed(4)
        attn = CrossAttention(channels=8, text_dim=6, heads=2).double()
        x = torch.randn(1, 8, 4, 4, dtype=torch.float64)
        txt = torch.randn(1, 3, 6, dtype=torch.float64)
        probe = torch.randn(1, 8, 4, 4, dtype=torch.float64)
        params = list(attn.parameters())

        def scalar():
            out, _ = attn(x, txt)
            return float((out * probe).sum())

        out, _ = attn(x, txt)
        analytic = torch.autograd.grad((out * probe).sum(), params)
        numeric = finite_diff_grads(scalar, params, step=1e-3)
        assert max_relative_error(analytic, numeric) <= 1e-4


class TestLoRA:
    def test_zero_init_noop(self):
        unet = small_unet()
        z = torch.randn(1, 4, 16, 16)
        tokens = torch.tensor([[1, 2]])
        before, _ = unet(z, 100, tokens)
        inject_adapters(unet, rank=4, tag="stage1",
                        generator=torch.Generator().manual_seed(0))
        after, _ = unet(z, 100, tokens)
        assert torch.equal(before, after)

    def test_parameter_count(self):
        lin = torch.nn.Linear(32, 32, bias=False)
        model = torch.nn.Sequential(lin)
        lora_inject(model, "0", rank=4)
        added = param_count(adapter_parameters(model, "stage1"))
        assert added == 4 * (32 + 32)

    def test_duplicate_injection_rejected(self):
        model = torch.nn.Sequential(torch.nn.Linear(8, 8))
        lora_inject(model, "0", rank=2, tag="stage1")
        with pytest.raises(ConfigError):
            lora_inject(model, "0", rank=2, tag="stage1")

    def test_stacked_tags_allowed(self):
        model = torch.nn.Sequential(torch.nn.Linear(8, 8))
        lora_inject(model, "0", rank=2, tag="stage1")
        lora_inject(model, "0", rank=2, tag="stage2")
        assert set(model[0].adapters.keys()) == {"stage1", "stage2"}

    def test_missing_site(self):
        with pytest.raises(ConfigError):
            lora_inject(torch.nn.Sequential(), "nope", rank=2)

    def test_sites_skip_wrapper_internals(self):
        model = torch.nn.Sequential(torch.nn.Linear(8, 8), torch.nn.Linear(8, 8))
        lora_inject(model, "0", rank=2)
        sites = lora_sites(model)
        assert sites == ["0", "1"]

    def test_freeze_and_trainable_set(self):
        unet = small_unet()
        for p in unet.parameters():
            p.requires_grad_(False)
        gen = torch.Generator().manual_seed(0)
        inject_adapters(unet, rank=4, tag="stage1", generator=gen)
        inject_adapters(unet, rank=4, tag="stage2",
                        predicate=is_cross_attention_site, generator=gen)
        lora_freeze(unet, "stage1")
        stage2 = set(map(id, adapter_parameters(unet, "stage2")))
        remaining = set(map(id, trainable_params(unet)))
        assert remaining == stage2
        assert remaining

    def test_cross_attention_predicate(self):
        unet = small_unet()
        sites = lora_sites(unet, is_cross_attention_site)
        assert sites
        assert all(s.rsplit(".", 1)[-1] in ("to_q", "to_k", "to_v", "to_out") for s in sites)

    def test_conv_adapter_changes_output_after_update(self):
        torch.manual_seed(5)
        conv = torch.nn.Conv2d(3, 5, 3, padding=1)
        model = torch.nn.Sequential(conv)
        lora_inject(model, "0", rank=2, generator=torch.Generator().manual_seed(1))
        x = torch.randn(1, 3, 8, 8)
        before = model(x)
        with torch.no_grad():
            model[0].adapters["stage1"].up.weight.normal_(0, 0.1)
        assert not torch.allclose(before, model(x))

    def test_lora_config_validation(self):
        with pytest.raises(ConfigError):
            LoRAConfig(rank_encoder=0)
