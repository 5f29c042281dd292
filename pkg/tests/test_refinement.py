import numpy as np
import pytest
import torch

from conftest import TINY_ARCH

from lowlight.bundle import build_bundle
from lowlight.errors import InvalidInputError, ShapeError
from lowlight.refinement import (
    ChannelGuidance,
    ColorEnhancement,
    OverExposureCorrection,
    enhance,
    recompose,
    run_pipeline,
    saturation_prior,
)


def tiny_bundle(seed=0):
    return build_bundle({"arch": TINY_ARCH}, seed=seed)


class TestChannelGuidance:
    def test_shape_and_range(self):
        cg = ChannelGuidance(width=6, reduction=2)
        r = torch.rand(2, 3, 16, 16) * 0.98 + 0.01
        out = cg(r)
        assert out.shape == r.shape
        assert (out >= 0).all() and (out <= 1).all()

    def test_zero_residual_is_identity(self):
        cg = ChannelGuidance(width=6, reduction=2)
        with torch.no_grad():
            cg.refine_out.weight.zero_()
            cg.refine_out.bias.zero_()
        r = torch.rand(1, 3, 12, 12) * 0.9 + 0.05
        assert torch.equal(cg(r), r)

    def test_channel_attention_hand_trace(self):
        # tiny fixed weights, constant input: attention must equal
        # sigmoid(W2 @ relu(W1 @ gap)) computed by hand
        cg = ChannelGuidance(width=2, reduction=2)
        with torch.no_grad():
            cg.feat[0].weight.zero_()
            cg.feat[0].bias.copy_(torch.tensor([0.3, 0.7]))
            w1 = torch.tensor([[0.5, -0.2]])
            w2 = torch.tensor([[1.0], [-1.5]])
            cg.channel_mlp[0].weight.copy_(w1)
            cg.channel_mlp[0].bias.zero_()
            cg.channel_mlp[2].weight.copy_(w2)
            cg.channel_mlp[2].bias.zero_()
        r = torch.full((1, 3, 10, 10), 0.4)
        with torch.no_grad():
            feats = cg.feat(r)
            att = cg.channel_attention(feats).squeeze().numpy()
        gap = np.array([0.3, 0.7])  # constant feature maps equal their bias
        hidden = np.maximum(w1.numpy() @ gap, 0.0)
        expected = 1.0 / (1.0 + np.exp(-(w2.numpy() @ hidden).ravel()))
        assert np.allclose(att, expected, atol=1e-6)

    def test_equal_statistics_give_equal_attention(self):
        cg = ChannelGuidance(width=4, reduction=2)
        with torch.no_grad():
            # identical rows: every feature channel computes the same map
            cg.feat[0].weight.copy_(cg.feat[0].weight[0:1].repeat(4, 1, 1, 1))
            cg.feat[0].bias.fill_(0.1)
            for lin in (cg.channel_mlp[0], cg.channel_mlp[2]):
                lin.weight.fill_(0.25)
                lin.bias.zero_()
        feats = cg.feat(torch.rand(1, 3, 12, 12))
        att = cg.channel_attention(feats).squeeze()
        assert torch.allclose(att, att[0].expand_as(att), atol=1e-7)

    def test_wrong_channels(self):
        with pytest.raises(ShapeError):
            ChannelGuidance(width=4)(torch.rand(1, 1, 12, 12))


class TestColorEnhancement:
    def test_shape_and_range(self):
        ce = ColorEnhancement(width=4, reduction=2)
        l = torch.rand(2, 1, 16, 16)
        out = ce(l)
        assert out.shape == l.shape
        assert (out > 0).all() and (out < 1).all()

    def test_zero_mlp_gives_half_weights(self):
        ce = ColorEnhancement(width=4, reduction=2)
        with torch.no_grad():
            for lin in (ce.mlp[0], ce.mlp[2]):
                lin.weight.zero_()
                lin.bias.zero_()
        feats = torch.cat([torch.relu(conv(torch.rand(1, 1, 12, 12))) for conv in ce.scales], dim=1)
        weights = ce.correction_weights(feats)
        assert torch.allclose(weights, torch.full_like(weights, 0.5))

    def test_wrong_channels(self):
        with pytest.raises(ShapeError):
            ColorEnhancement(width=4)(torch.rand(1, 3, 12, 12))


class TestRecompose:
    def test_plain_product(self):
        r = torch.full((1, 3, 8, 8), 0.5)
        l = torch.full((1, 1, 8, 8), 0.25)
        out = recompose(r, l, 1.0)
        assert torch.allclose(out, torch.full_like(out, 0.125))

    def test_sqrt_exponent(self):
        r = torch.full((1, 3, 8, 8), 0.5)
        l = torch.full((1, 1, 8, 8), 0.25)
        out = recompose(r, l, 0.5)
        assert torch.allclose(out, torch.full_like(out, 0.25))

    def test_unit_illumination_identity(self):
        r = torch.rand(1, 3, 8, 8)
        l = torch.ones(1, 1, 8, 8)
        for exponent in (0.2, 0.7, 1.0, 2.0):
            assert torch.allclose(recompose(r, l, exponent), r)

    def test_invalid_exponent(self):
        r = torch.rand(1, 3, 8, 8)
        l = torch.rand(1, 1, 8, 8)
        for bad in (0.0, -0.5):
            with pytest.raises(InvalidInputError):
                recompose(r, l, bad)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            recompose(torch.rand(1, 3, 8, 8), torch.rand(1, 1, 9, 8), 1.0)
        with pytest.raises(ShapeError):
            recompose(torch.rand(1, 1, 8, 8), torch.rand(1, 1, 8, 8), 1.0)

    def test_monotone_in_illumination(self):
        rng = torch.Generator().manual_seed(0)
        r = torch.rand(1, 3, 8, 8, generator=rng)
        l1 = torch.rand(1, 1, 8, 8, generator=rng) * 0.5
        l2 = l1 + torch.rand(1, 1, 8, 8, generator=rng) * 0.4
        for exponent in (0.2, 1.0, 1.7):
            assert (recompose(r, l2, exponent) >= recompose(r, l1, exponent) - 1e-7).all()

    def test_brightening_below_unit_exponent(self):
        l = torch.rand(1, 1, 8, 8) * 0.98 + 0.01
        r = torch.ones(1, 3, 8, 8)
        out = recompose(r, l, 0.2)
        assert (out >= l.expand_as(out) - 1e-7).all()

    def test_output_in_unit_range(self):
        r = torch.rand(1, 3, 8, 8)
        l = torch.rand(1, 1, 8, 8)
        out = recompose(r, l, 0.3)
        assert (out >= 0).all() and (out <= 1).all()


class TestOverExposureCorrection:
    def test_mask_zero_is_identity(self):
        oec = OverExposureCorrection(width=6)
        img = torch.rand(1, 3, 16, 16)
        out, mask = oec(img, mask_override=0.0)
        assert torch.equal(out, img)
        assert torch.equal(mask, torch.zeros_like(mask))

    def test_mask_one_is_corrected_branch(self):
        oec = OverExposureCorrection(width=6)
        img = torch.rand(1, 3, 16, 16)
        corrected, _ = oec(img, mask_override=1.0)
        half, _ = oec(img, mask_override=0.5)
        assert torch.allclose(half, 0.5 * corrected + 0.5 * img, atol=1e-7)

    def test_learned_mask_in_unit_range(self):
        oec = OverExposureCorrection(width=6)
        out, mask = oec(torch.rand(2, 3, 16, 16))
        assert (mask > 0).all() and (mask < 1).all()
        assert (out >= 0).all() and (out <= 1).all()

    def test_saturation_prior_thresholds(self):
        img = torch.full((1, 3, 8, 8), 0.5)
        assert torch.equal(saturation_prior(img), torch.zeros(1, 1, 8, 8))
        img[0, :, 2, 3] = 0.99
        prior = saturation_prior(img)
        assert prior[0, 0, 2, 3] == 1.0
        assert prior.sum() == 1.0


class TestPipeline:
    def test_enhance_contract(self):
        bundle = tiny_bundle()
        img = np.random.default_rng(0).uniform(0, 0.3, (3, 32, 32)).astype(np.float32)
        out = enhance(bundle, img)
        assert out.image.shape == img.shape
        assert np.isfinite(out.image).all()
        assert out.image.min() >= 0.0 and out.image.max() <= 1.0
        assert out.blend_mask.shape == (1, 32, 32)
        assert out.blend_mask.min() >= 0.0 and out.blend_mask.max() <= 1.0

    def test_enhance_deterministic(self):
        bundle = tiny_bundle()
        img = np.random.default_rng(1).uniform(0, 1, (3, 16, 16)).astype(np.float32)
        a = enhance(bundle, img)
        b = enhance(bundle, img)
        assert np.array_equal(a.image, b.image)

    def test_toggles_are_identity_passthrough(self):
        bundle = tiny_bundle()
        x = torch.rand(1, 3, 16, 16)
        arts = run_pipeline(bundle, x, use_cg=False, use_ce=False, use_oec=False)
        assert torch.equal(arts.reflectance_f, arts.reflectance)
        assert torch.equal(arts.illumination_f, arts.illumination)
        assert torch.equal(arts.enhanced, arts.recomposed)
        assert torch.equal(arts.blend_mask, torch.zeros_like(arts.blend_mask))

    def test_no_oec_enhanced_equals_recompose(self):
        bundle = tiny_bundle()
        x = torch.rand(1, 3, 16, 16)
        arts = run_pipeline(bundle, x, use_oec=False)
        expected = recompose(arts.reflectance_f, arts.illumination_f, bundle.manifest["lambda"])
        assert torch.equal(arts.enhanced, expected)


def test_enhance_gradients_match_finite_differences():
    # scalar sum of the full pipeline vs central differences, fp64
    torch.manual_seed(0)
    bundle = tiny_bundle(seed=5).clone(dtype=torch.float64)
    for net in bundle.networks().values():
        net.train()
    x = (torch.rand(1, 3, 8, 8, dtype=torch.float64) * 0.8 + 0.05).requires_grad_(False)

    def forward_sum():
        arts = run_pipeline(bundle, x)
        return arts.enhanced.sum()

    loss = forward_sum()
    loss.backward()
    rng = np.random.default_rng(0)
    checked = 0
    for name, p in bundle.named_parameters():
        flat_grad = p.grad.view(-1) if p.grad is not None else torch.zeros(p.numel(), dtype=torch.float64)
        idx = int(rng.integers(0, p.numel()))
        with torch.no_grad():
            orig = p.view(-1)[idx].item()
            h = 1e-4
            p.view(-1)[idx] = orig + h
            up = forward_sum().item()
            p.view(-1)[idx] = orig - h
            down = forward_sum().item()
            p.view(-1)[idx] = orig
        numeric = (up - down) / (2 * h)
        analytic = flat_grad[idx].item()
        assert abs(analytic - numeric) <= 1e-3 * max(abs(analytic), abs(numeric), 1e-6), name
        checked += 1
    assert checked > 20
