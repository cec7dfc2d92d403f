import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from onestep_sr.errors import ShapeError, VocabError
from onestep_sr.guidance import (
    NounMaskEntry,
    aggregate_attention,
    attention_debug_png,
    downsample_mask,
    filter_nouns,
    in_mask_fraction,
    positive_area_loss,
    prepare_noun_masks,
    sample_attention_stats,
    validate_mask,
)


class TestFilterNouns:
    def test_drops_adjectives(self):
        assert filter_nouns([("shiny", "adj"), ("circle", "noun")]) == ["circle"]

    def test_all_adjectives_empty(self):
        assert filter_nouns([("big", "adj"), ("red", "adj")]) == []

    def test_deduplicates(self):
        tagged = [("circle", "noun"), ("circle", "noun")]
        assert filter_nouns(tagged) == ["circle"]

    def test_order_preserving(self):
        tagged = [("ring", "noun"), ("big", "adj"), ("dot", "noun"), ("ring", "noun")]
        assert filter_nouns(tagged) == ["ring", "dot"]

    @settings(max_examples=40, deadline=None)
    @given(
        st.lists(
            st.tuples(
                st.sampled_from(["circle", "dot", "ring", "shiny", "dark"]),
                st.sampled_from(["noun", "adj", "other"]),
            ),
            max_size=8,
        )
    )
    def test_idempotent(self, tagged):
        once = filter_nouns(tagged)
        assert filter_nouns([(w, "noun") for w in once]) == once


class TestValidateMask:
    def test_all_zero_invalid(self):
        assert not validate_mask(np.zeros((16, 16)))

    def test_all_one_valid(self):
        assert validate_mask(np.ones((16, 16)))

    def test_single_pixel_of_256_invalid(self):
        mask = np.zeros((16, 16))
        mask[3, 3] = 1.0
        # 1/256 ~ 0.0039 < 0.005
        assert not validate_mask(mask, threshold=0.005)

    def test_two_pixels_of_256_valid(self):
        mask = np.zeros((16, 16))
        mask[3, 3] = mask[4, 4] = 1.0
        assert validate_mask(mask, threshold=0.005)


class TestDownsampleMask:
    def test_area_average_binarize(self):
        mask = np.zeros((8, 8))
        mask[0:4, 0:4] = 1.0  # fully covers latent cell (0,0)
        mask[0:2, 4:8] = 1.0  # covers half of latent cell (0,1)
        out = downsample_mask(mask, (2, 2))
        assert out[0, 0] == 1.0
        assert out[0, 1] == 1.0  # exactly 0.5 rounds up
        assert out[1, 0] == 0.0 and out[1, 1] == 0.0

    def test_indivisible(self):
        with pytest.raises(ShapeError):
            downsample_mask(np.zeros((9, 9)), (2, 2))


class TestAggregateAttention:
    def test_uniform_single_layer(self):
        amap = torch.full((4, 4, 5), 1.0 / 5.0)
        out = aggregate_attention([amap], token_position=2, latent_hw=(4, 4))
        assert torch.allclose(out, torch.full((4, 4), 0.2))

    def test_two_layers_average(self):
        rng = torch.Generator().manual_seed(0)
        p = torch.rand(4, 4, 3, generator=rng)
        q = torch.rand(4, 4, 3, generator=rng)
        out = aggregate_attention([p, q], 1, (4, 4))
        assert torch.allclose(out, (p[..., 1] + q[..., 1]) / 2.0)

    def test_bilinear_upsample_matches_oracle(self):
        src = torch.zeros(2, 2, 1)
        src[0, 1, 0] = 1.0
        out = aggregate_attention([src], 0, (4, 4))
        expected = oracles.bilinear_resize(src[..., 0].numpy().astype(np.float64), 4, 4)
        assert np.allclose(out.numpy(), expected, atol=1e-6)

    def test_token_out_of_range(self):
        with pytest.raises(VocabError):
            aggregate_attention([torch.rand(4, 4, 2)], 5, (4, 4))

    def test_empty_layer_list(self):
        with pytest.raises(ShapeError):
            aggregate_attention([], 0, (4, 4))

    def test_non_negative(self):
        amap = torch.rand(8, 8, 4)
        out = aggregate_attention([amap], 3, (16, 16))
        assert (out >= 0).all()


class TestPositiveAreaLoss:
    def test_all_mass_inside(self):
        att = torch.zeros(4, 4)
        att[1, 1] = 3.0
        mask = torch.zeros(4, 4)
        mask[1, 1] = 1.0
        loss = positive_area_loss([att], [mask])
        assert float(loss) == pytest.approx(0.0, abs=1e-6)

    def test_all_mass_outside(self):
        att = torch.zeros(4, 4)
        att[0, 0] = 2.0
        mask = torch.zeros(4, 4)
        mask[3, 3] = 1.0
        assert float(positive_area_loss([att], [mask])) == pytest.approx(1.0, abs=1e-6)

    def test_uniform_attention_quarter_mask(self):
        att = torch.full((4, 4), 0.25)
        mask = torch.zeros(4, 4)
        mask[:2, :2] = 1.0  # 25% of cells
        assert float(positive_area_loss([att], [mask])) == pytest.approx(0.75, abs=1e-6)

    def test_empty_set_is_noop(self):
        loss = positive_area_loss([], [])
        assert float(loss) == 0.0
        assert not loss.requires_grad

    def test_range_and_mean_over_nouns(self):
        rng = torch.Generator().manual_seed(1)
        atts = [torch.rand(4, 4, generator=rng) for _ in range(3)]
        masks = [(torch.rand(4, 4, generator=rng) > 0.5).float() for _ in range(3)]
        loss = float(positive_area_loss(atts, masks))
        assert 0.0 <= loss <= 1.0

    def test_mismatched_lengths(self):
        with pytest.raises(ShapeError):
            positive_area_loss([torch.rand(2, 2)], [])

    def test_gradient_step_increases_in_mask_fraction(self):
        torch.manual_seed(2)
        for trial in range(5):
            logits = torch.randn(6, 6, requires_grad=True)
            mask = torch.zeros(6, 6)
            mask[2:5, 1:4] = 1.0
            att = torch.softmax(logits.view(-1), dim=0).view(6, 6)
            before = in_mask_fraction(att, mask)
            loss = positive_area_loss([att], [mask])
            loss.backward()
            with torch.no_grad():
                stepped = logits - 1e-2 * logits.grad
            att_after = torch.softmax(stepped.view(-1), dim=0).view(6, 6)
            assert in_mask_fraction(att_after, mask) > before

    def test_gradient_matches_finite_differences(self):
        from gradcheck import finite_diff_grads, max_relative_error

        torch.manual_seed(3)
        att = torch.rand(4, 4, dtype=torch.float64) + 0.05
        att.requires_grad_(True)
        mask = torch.zeros(4, 4, dtype=torch.float64)
        mask[1:3, 1:3] = 1.0

        loss = positive_area_loss([att], [mask])
        analytic = torch.autograd.grad(loss, [att])

        def scalar():
            return float(positive_area_loss([att.detach()], [mask]))

        numeric = finite_diff_grads(scalar, [att], step=1e-5)
        assert max_relative_error(analytic, numeric) <= 1e-4


class TestSampleStats:
    def test_prepare_noun_masks(self):
        prompt = (("bright", "adj"), ("circle", "noun"), ("dot", "noun"))
        masks = [np.zeros((16, 16)), np.zeros((16, 16))]
        masks[0][:8, :8] = 1.0  # circle: valid
        # dot mask stays empty: invalid
        entries = prepare_noun_masks(prompt, ("circle", "dot"), masks, (4, 4))
        assert len(entries) == 2
        assert entries[0].token_position == 1 and entries[0].valid
        assert entries[1].token_position == 2 and not entries[1].valid

    def test_sample_attention_stats_skips_invalid(self):
        entries = [
            NounMaskEntry(0, np.ones((4, 4), dtype=np.float32), True),
            NounMaskEntry(1, np.zeros((4, 4), dtype=np.float32), False),
        ]
        amap = torch.rand(4, 4, 2)
        loss, atts, masks = sample_attention_stats([amap], entries, (4, 4))
        assert len(atts) == 1 and len(masks) == 1
        assert float(loss) == pytest.approx(0.0, abs=1e-6)  # mask covers everything


def test_attention_debug_png(tmp_path):
    from PIL import Image

    att = torch.rand(8, 8)
    path = tmp_path / "attn.png"
    attention_debug_png(att, path)
    img = np.asarray(Image.open(path))
    assert img.shape == (8, 8)
    assert img.max() == 255
