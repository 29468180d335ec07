import math

import pytest
import torch

from covcast import BackboneConfig, PatchConfig
from covcast.backbone import PeriodPatchBackbone

from conftest import tiny_backbone_cfg


def make_backbone(patch_len=4, **overrides) -> PeriodPatchBackbone:
    torch.manual_seed(0)
    bb = PeriodPatchBackbone(PatchConfig(patch_len=patch_len), tiny_backbone_cfg(**overrides))
    return bb.double().eval()


class TestEncodeDecode:
    def test_weekly_to_daily_single_token(self):
        bb = make_backbone(patch_len=24, max_input_patches=8)
        out = bb.encode_decode(torch.randn(168, dtype=torch.float64), horizon=24)
        assert out.shape == (8, 1)

    def test_two_tokens_for_double_horizon(self):
        bb = make_backbone(patch_len=24, max_input_patches=8)
        out = bb.encode_decode(torch.randn(48, dtype=torch.float64), horizon=48)
        assert out.shape == (8, 2)

    def test_deterministic_without_dropout(self):
        bb = make_backbone()
        x = torch.randn(12, dtype=torch.float64)
        assert torch.equal(bb.encode_decode(x, 8), bb.encode_decode(x, 8))

    def test_nonfinite_input_rejected(self):
        bb = make_backbone()
        x = torch.full((12,), torch.nan, dtype=torch.float64)
        with pytest.raises(ValueError, match="non-finite"):
            bb.encode_decode(x, 4)

    def test_token_count_law(self):
        bb = make_backbone(patch_len=4, max_horizon_tokens=16)
        for horizon in range(1, 40):
            tokens, _, _ = bb.channel_tokens(torch.randn(1, 1, 8, dtype=torch.float64), horizon)
            assert tokens.shape[-1] == math.ceil(horizon / 4)


class TestChannelIndependence:
    def test_per_channel_outputs_independent(self):
        bb = make_backbone()
        x = torch.randn(1, 3, 12, dtype=torch.float64)
        tokens, _, _ = bb.channel_tokens(x, 8)
        perturbed = x.clone()
        perturbed[0, 2] += 5.0
        tokens_p, _, _ = bb.channel_tokens(perturbed, 8)
        assert torch.equal(tokens[0, 0], tokens_p[0, 0])
        assert torch.equal(tokens[0, 1], tokens_p[0, 1])
        assert not torch.equal(tokens[0, 2], tokens_p[0, 2])

    def test_permuting_channels_permutes_tokens(self):
        bb = make_backbone()
        x = torch.randn(1, 3, 12, dtype=torch.float64)
        tokens, _, _ = bb.channel_tokens(x, 8)
        perm = [2, 0, 1]
        tokens_p, _, _ = bb.channel_tokens(x[:, perm], 8)
        assert torch.equal(tokens_p, tokens[:, perm])

    def test_covariate_channel_shares_target_path(self):
        bb = make_backbone()
        series = torch.randn(1, 1, 12, dtype=torch.float64)
        as_target, _, _ = bb.channel_tokens(series, 8)
        as_covariate, _, _ = bb.channel_tokens(series, 8)  # same entry point by construction
        assert torch.equal(as_target, as_covariate)

    def test_empty_channel_block(self):
        bb = make_backbone()
        tokens, _, _ = bb.channel_tokens(torch.zeros(2, 0, 12, dtype=torch.float64), 8)
        assert tokens.shape == (2, 0, 8, 2)


class TestHead:
    def test_no_truncation_exact_fit(self):
        bb = make_backbone(patch_len=24, max_input_patches=8)
        tokens = torch.randn(1, 1, 8, 1, dtype=torch.float64)
        assert bb.head_apply(tokens, 24).shape == (1, 1, 24)

    def test_truncation_rule(self):
        bb = make_backbone(patch_len=24, max_input_patches=8)
        tokens = torch.randn(1, 1, 8, 2, dtype=torch.float64)
        full = bb.head_apply(tokens, 48)
        cut = bb.head_apply(tokens, 36)
        assert cut.shape == (1, 1, 36)
        assert torch.equal(cut, full[..., :36])

    def test_zero_tokens_bias_only_and_shared(self):
        bb = make_backbone()
        tokens = torch.zeros(1, 3, 8, 2, dtype=torch.float64)
        out = bb.head_apply(tokens, 8)
        expected = bb.head.bias.detach().repeat(2)[:8]
        for v in range(3):
            assert torch.equal(out[0, v], expected)

    def test_bias_free_application(self):
        bb = make_backbone()
        tokens = torch.zeros(1, 1, 8, 1, dtype=torch.float64)
        out = bb.head_apply(tokens, 4, include_bias=False)
        assert torch.equal(out, torch.zeros(1, 1, 4, dtype=torch.float64))

    def test_head_sharing_one_parameter_set(self):
        bb = make_backbone()
        tokens = torch.randn(1, 1, 8, 1, dtype=torch.float64)
        before_a = bb.head_apply(tokens, 4)
        with torch.no_grad():
            bb.head.weight += 1.0
        after_a = bb.head_apply(tokens, 4)
        after_b = bb.head_apply(tokens, 4, include_bias=False) + bb.head.bias[:4]
        assert not torch.equal(before_a, after_a)
        assert torch.allclose(after_a, after_b)


class TestInstanceNorm:
    def test_stats_round_trip(self):
        bb = make_backbone()
        x = torch.randn(2, 3, 12, dtype=torch.float64) * 5 + 7
        mu, sigma = bb.instance_stats(x)
        normed = (x - mu) / sigma
        assert torch.allclose(normed * sigma + mu, x)
        assert normed.mean(dim=-1).abs().max() < 1e-9

    def test_disabled_instance_norm_is_identity(self):
        bb = make_backbone(instance_norm=False)
        x = torch.randn(1, 1, 12, dtype=torch.float64)
        mu, sigma = bb.instance_stats(x)
        assert torch.equal(mu, torch.zeros_like(mu))
        assert torch.equal(sigma, torch.ones_like(sigma))


class TestConfigValidation:
    def test_heads_must_divide_dim(self):
        with pytest.raises(ValueError, match="divisible"):
            BackboneConfig(latent_dim=10, n_heads=4)

    def test_capacity_limits_enforced(self):
        bb = make_backbone(patch_len=2, max_input_patches=3)
        with pytest.raises(ValueError, match="max_input_patches"):
            bb.channel_tokens(torch.randn(1, 1, 20, dtype=torch.float64), 4)
        bb2 = make_backbone(patch_len=2, max_horizon_tokens=2)
        with pytest.raises(ValueError, match="max_horizon_tokens"):
            bb2.channel_tokens(torch.randn(1, 1, 8, dtype=torch.float64), 10)
