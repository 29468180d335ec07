"""Two-stage post-decoder MLP fusion and the assembled covariate forecaster.

Stage 1 mixes the decoded target tokens with the decoded past-covariate
tokens (concatenate along the variable axis, flatten per token, LayerNorm,
MLP). Stage 2 concatenates the result with the horizon-aligned
future-covariate embeddings and produces one refined token per decoder
token. The refined tokens are tiled across all target channels (future
drivers are treated as shared, system-level signals) and projected through
the same output head as the backbone tokens; the two projections add up to
the final forecast.

The final linear layer of the stage-2 MLP is zero-initialized, so at the
start of fine-tuning the residual branch is a no-op and the full model
reproduces the plain backbone forecast exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn

from .backbone import BackboneConfig, PeriodPatchBackbone
from .patching import PatchConfig, FutureCovEmbedder

_ACTIVATIONS = {"gelu": nn.GELU, "relu": nn.ReLU, "tanh": nn.Tanh, "silu": nn.SiLU}


@dataclass(frozen=True)
class FusionConfig:
    """Shared architecture of the two fusion MLPs (separate parameters).

    hidden_dim=None resolves to latent_dim // 4. depth counts linear layers:
    depth 1 is a single in->out linear preceded by LayerNorm; depth L >= 2
    inserts L-1 hidden layers of width hidden_dim. mf_zero_mode picks the
    no-future-covariate pathway: "apply" keeps stage 2 with a latent-dim
    input, "bypass" skips it entirely.
    """

    hidden_dim: int | None = None
    depth: int = 1
    activation: str = "gelu"
    zero_init: bool = True
    residual_head_bias: bool = False
    mf_zero_mode: str = "apply"

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.hidden_dim is not None and self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {sorted(_ACTIVATIONS)}")
        if self.mf_zero_mode not in ("apply", "bypass"):
            raise ValueError("mf_zero_mode must be 'apply' or 'bypass'")

    def resolve_hidden(self, latent_dim: int) -> int:
        return max(1, latent_dim // 4) if self.hidden_dim is None else self.hidden_dim


def _build_mlp(in_dim: int, out_dim: int, hidden_dim: int, depth: int, activation: str) -> nn.Sequential:
    act = _ACTIVATIONS[activation]
    if depth == 1:
        return nn.Sequential(nn.Linear(in_dim, out_dim))
    layers: list[nn.Module] = [nn.Linear(in_dim, hidden_dim), act()]
    for _ in range(depth - 2):
        layers += [nn.Linear(hidden_dim, hidden_dim), act()]
    layers.append(nn.Linear(hidden_dim, out_dim))
    return nn.Sequential(*layers)


def _zero_final_linear(mlp: nn.Sequential) -> None:
    final = mlp[-1]
    nn.init.zeros_(final.weight)
    nn.init.zeros_(final.bias)


def flatten_token_variables(tokens: torch.Tensor) -> torch.Tensor:
    """(batch, variables, latent_dim, n_tokens) -> (batch, n_tokens, variables*latent_dim).

    Per token, the variables x latent matrix is flattened variable-major, so
    each variable owns a contiguous block of the fused input vector.
    """
    batch, n_vars, dim, n_tokens = tokens.shape
    return tokens.permute(0, 3, 1, 2).reshape(batch, n_tokens, n_vars * dim)


def tile_refined(refined: torch.Tensor, n_targets: int) -> torch.Tensor:
    """Replicate the refined tokens across target channels (value semantics).

    (batch, latent_dim, n_tokens) -> (batch, n_targets, latent_dim, n_tokens)
    with every channel slice an identical copy.
    """
    if n_targets < 1:
        raise ValueError("n_targets must be >= 1")
    return refined.unsqueeze(1).repeat(1, n_targets, 1, 1)


class TokenFusion(nn.Module):
    """Trainable plug-in state: future-cov embedding plus the two fusion MLPs."""

    def __init__(self, latent_dim: int, n_targets: int, n_past: int, n_future: int,
                 cfg: FusionConfig, patch_cfg: PatchConfig):
        super().__init__()
        if n_targets < 1 or n_past < 0 or n_future < 0:
            raise ValueError("need n_targets >= 1, n_past >= 0, n_future >= 0")
        self.cfg = cfg
        self.n_targets = n_targets
        self.n_past = n_past
        self.n_future = n_future
        hidden = cfg.resolve_hidden(latent_dim)

        self.past_in_dim = (n_targets + n_past) * latent_dim
        self.norm_past = nn.LayerNorm(self.past_in_dim)
        self.mlp_past = _build_mlp(self.past_in_dim, latent_dim, hidden, cfg.depth, cfg.activation)

        self.bypass_stage2 = n_future == 0 and cfg.mf_zero_mode == "bypass"
        if self.bypass_stage2:
            self.future_in_dim = 0
            self.norm_future = None
            self.mlp_future = None
            if cfg.zero_init:
                _zero_final_linear(self.mlp_past)
        else:
            self.future_in_dim = (1 + n_future) * latent_dim
            self.norm_future = nn.LayerNorm(self.future_in_dim)
            self.mlp_future = _build_mlp(self.future_in_dim, latent_dim, hidden, cfg.depth, cfg.activation)
            if cfg.zero_init:
                _zero_final_linear(self.mlp_future)

        if n_future > 0:
            self.future_embed = FutureCovEmbedder(latent_dim, patch_cfg.effective_future_patch_len,
                                                  patch_cfg.resample_future_tokens)
        else:
            self.future_embed = None

    def stage1_past_fusion(self, target_tokens: torch.Tensor,
                           past_tokens: torch.Tensor) -> torch.Tensor:
        """(B, C, D, O) + (B, Mp, D, O) -> (B, D, O) intermediate tokens."""
        if target_tokens.shape[-1] != past_tokens.shape[-1] and past_tokens.shape[1] > 0:
            raise ValueError(
                f"token-count mismatch: targets {target_tokens.shape[-1]} vs past {past_tokens.shape[-1]}")
        mixed = torch.cat([target_tokens, past_tokens], dim=1)
        flat = flatten_token_variables(mixed)
        if flat.shape[-1] != self.past_in_dim:
            raise ValueError(f"stage-1 input is {flat.shape[-1]}-dim, expected {self.past_in_dim}")
        out = self.mlp_past(self.norm_past(flat))  # (B, O, D)
        return out.transpose(1, 2)

    def stage2_future_fusion(self, mixed_tokens: torch.Tensor,
                             future_tokens: torch.Tensor | None) -> torch.Tensor:
        """(B, D, O) + optional (B, Mf, D, O) -> (B, D, O) refined tokens."""
        if self.bypass_stage2:
            return mixed_tokens
        per_token = mixed_tokens.transpose(1, 2)  # (B, O, D)
        if self.n_future > 0:
            if future_tokens is None:
                raise ValueError(f"model expects {self.n_future} future covariate(s)")
            if future_tokens.shape[-1] != mixed_tokens.shape[-1]:
                raise ValueError(
                    f"token-count mismatch: fused {mixed_tokens.shape[-1]} vs future {future_tokens.shape[-1]}")
            flat_future = flatten_token_variables(future_tokens)
            per_token = torch.cat([per_token, flat_future], dim=-1)
        if per_token.shape[-1] != self.future_in_dim:
            raise ValueError(f"stage-2 input is {per_token.shape[-1]}-dim, expected {self.future_in_dim}")
        out = self.mlp_future(self.norm_future(per_token))
        return out.transpose(1, 2)

    def refine(self, target_tokens: torch.Tensor, past_tokens: torch.Tensor,
               future_tokens: torch.Tensor | None) -> torch.Tensor:
        return self.stage2_future_fusion(
            self.stage1_past_fusion(target_tokens, past_tokens), future_tokens)


class CovariateForecaster(nn.Module):
    """Backbone plus optional fusion plug-in; 64-bit parameters throughout."""

    def __init__(self, patch_cfg: PatchConfig, backbone_cfg: BackboneConfig,
                 fusion_cfg: FusionConfig | None = None,
                 n_targets: int = 1, n_past: int = 0, n_future: int = 0):
        super().__init__()
        self.patch_cfg = patch_cfg
        self.backbone_cfg = backbone_cfg
        self.fusion_cfg = fusion_cfg
        self.n_targets = n_targets
        self.n_past = n_past
        self.n_future = n_future
        self.backbone = PeriodPatchBackbone(patch_cfg, backbone_cfg)
        if fusion_cfg is not None:
            self.fusion = TokenFusion(backbone_cfg.latent_dim, n_targets, n_past, n_future,
                                      fusion_cfg, patch_cfg)
        else:
            self.fusion = None
        self.double()

    @staticmethod
    def _as_batched(x: torch.Tensor) -> tuple[torch.Tensor, bool]:
        if x.dim() == 2:
            return x.unsqueeze(0), True
        return x, False

    def forward(self, x_target: torch.Tensor, x_past: torch.Tensor | None = None,
                y_future: torch.Tensor | None = None, horizon: int = 24) -> torch.Tensor:
        """Forecast (batch, n_targets, horizon) from history and covariates."""
        x_target, squeeze = self._as_batched(x_target)
        batch, channels, _ = x_target.shape
        if channels != self.n_targets:
            raise ValueError(f"expected {self.n_targets} target channel(s), got {channels}")

        target_tokens, mu, sigma = self.backbone.channel_tokens(x_target, horizon)
        out = self.backbone.head_apply(target_tokens, horizon)

        if self.fusion is not None:
            n_tokens = target_tokens.shape[-1]
            if self.n_past > 0:
                if x_past is None:
                    raise ValueError(f"model expects {self.n_past} past covariate(s)")
                x_past_b = self._as_batched(x_past)[0]
                past_tokens, _, _ = self.backbone.channel_tokens(x_past_b, horizon)
            else:
                past_tokens = target_tokens.new_zeros(batch, 0, self.backbone_cfg.latent_dim, n_tokens)
            if self.n_future > 0:
                if y_future is None:
                    raise ValueError(f"model expects {self.n_future} future covariate(s)")
                y_future_b = self._as_batched(y_future)[0]
                if y_future_b.shape[-1] != horizon:
                    raise ValueError(f"y_future covers {y_future_b.shape[-1]} steps, horizon is {horizon}")
                future_tokens = self.fusion.future_embed(y_future_b, n_tokens)
            else:
                future_tokens = None
            refined = self.fusion.refine(target_tokens, past_tokens, future_tokens)
            tiled = tile_refined(refined, self.n_targets)
            out = out + self.backbone.head_apply(tiled, horizon,
                                                 include_bias=self.fusion_cfg.residual_head_bias)

        out = out * sigma + mu
        return out.squeeze(0) if squeeze else out

    def backbone_forecast(self, x_target: torch.Tensor, horizon: int = 24) -> torch.Tensor:
        """Plug-in branch switched off: the plain period-patch forecast."""
        x_target, squeeze = self._as_batched(x_target)
        target_tokens, mu, sigma = self.backbone.channel_tokens(x_target, horizon)
        out = self.backbone.head_apply(target_tokens, horizon)
        out = out * sigma + mu
        return out.squeeze(0) if squeeze else out

    def parameter_count(self, trainable_only: bool = False) -> int:
        return sum(p.numel() for p in self.parameters()
                   if p.requires_grad or not trainable_only)
