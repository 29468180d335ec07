"""Compact channel-independent encoder-decoder over period patches.

Each channel's history is patched, linearly projected into the latent space
and encoded by a small Transformer. Decoding is parallel: one learned query
per horizon token cross-attends to the encoder output in a single pass, so
there is no autoregressive rollout. A shared linear head maps each decoder
token back to a patch-length segment of the forecast.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .patching import PatchConfig, num_patches, patch

INSTANCE_NORM_EPS = 1e-8


@dataclass(frozen=True)
class BackboneConfig:
    latent_dim: int = 64
    n_enc_layers: int = 2
    n_dec_layers: int = 1
    n_heads: int = 4
    ff_dim: int = 128
    dropout: float = 0.1
    max_input_patches: int = 64
    max_horizon_tokens: int = 32
    instance_norm: bool = True

    def __post_init__(self):
        if self.latent_dim % self.n_heads != 0:
            raise ValueError(f"latent_dim {self.latent_dim} not divisible by n_heads {self.n_heads}")
        for name in ("latent_dim", "n_enc_layers", "n_dec_layers", "n_heads", "ff_dim",
                     "max_input_patches", "max_horizon_tokens"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


class _FeedForward(nn.Module):
    def __init__(self, dim: int, ff_dim: int, dropout: float):
        super().__init__()
        self.lin1 = nn.Linear(dim, ff_dim)
        self.lin2 = nn.Linear(ff_dim, dim)
        self.drop = nn.Dropout(dropout)

    def forward(self, x):
        return self.lin2(self.drop(F.gelu(self.lin1(x))))


class _EncoderLayer(nn.Module):
    """Pre-norm self-attention block."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.latent_dim)
        self.attn = nn.MultiheadAttention(cfg.latent_dim, cfg.n_heads,
                                          dropout=cfg.dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(cfg.latent_dim)
        self.ff = _FeedForward(cfg.latent_dim, cfg.ff_dim, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.drop(self.attn(h, h, h, need_weights=False)[0])
        return x + self.drop(self.ff(self.norm2(x)))


class _DecoderLayer(nn.Module):
    """Pre-norm block: query self-attention, cross-attention to memory, feed-forward."""

    def __init__(self, cfg: BackboneConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.latent_dim)
        self.self_attn = nn.MultiheadAttention(cfg.latent_dim, cfg.n_heads,
                                               dropout=cfg.dropout, batch_first=True)
        self.norm2 = nn.LayerNorm(cfg.latent_dim)
        self.cross_attn = nn.MultiheadAttention(cfg.latent_dim, cfg.n_heads,
                                                dropout=cfg.dropout, batch_first=True)
        self.norm3 = nn.LayerNorm(cfg.latent_dim)
        self.ff = _FeedForward(cfg.latent_dim, cfg.ff_dim, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, q, memory):
        h = self.norm1(q)
        q = q + self.drop(self.self_attn(h, h, h, need_weights=False)[0])
        h = self.norm2(q)
        q = q + self.drop(self.cross_attn(h, memory, memory, need_weights=False)[0])
        return q + self.drop(self.ff(self.norm3(q)))


class PeriodPatchBackbone(nn.Module):
    """Patch -> encode -> parallel-decode -> shared linear head."""

    def __init__(self, patch_cfg: PatchConfig, cfg: BackboneConfig):
        super().__init__()
        self.patch_cfg = patch_cfg
        self.cfg = cfg
        dim = cfg.latent_dim
        self.input_proj = nn.Linear(patch_cfg.patch_len, dim)
        self.enc_pos = nn.Parameter(torch.empty(cfg.max_input_patches, dim))
        self.query_emb = nn.Parameter(torch.empty(cfg.max_horizon_tokens, dim))
        nn.init.normal_(self.enc_pos, std=0.02)
        nn.init.normal_(self.query_emb, std=0.02)
        self.emb_drop = nn.Dropout(cfg.dropout)
        self.encoder = nn.ModuleList(_EncoderLayer(cfg) for _ in range(cfg.n_enc_layers))
        self.enc_norm = nn.LayerNorm(dim)
        self.decoder = nn.ModuleList(_DecoderLayer(cfg) for _ in range(cfg.n_dec_layers))
        self.dec_norm = nn.LayerNorm(dim)
        self.head = nn.Linear(dim, patch_cfg.patch_len)

    def decoder_token_count(self, horizon: int) -> int:
        return num_patches(horizon, self.patch_cfg.patch_len)

    def instance_stats(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-series shift/scale over the lookback axis: (..., T) -> (..., 1), (..., 1)."""
        if not self.cfg.instance_norm:
            ones = torch.ones(*x.shape[:-1], 1, dtype=x.dtype, device=x.device)
            return torch.zeros_like(ones), ones
        mu = x.mean(dim=-1, keepdim=True)
        var = x.var(dim=-1, unbiased=False, keepdim=True)
        return mu, torch.sqrt(var + INSTANCE_NORM_EPS)

    def channel_tokens(self, x: torch.Tensor, horizon: int
                       ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Run every channel independently through the encoder-decoder.

        x: (batch, channels, lookback). Returns decoder tokens
        (batch, channels, latent_dim, n_tokens) plus the per-channel instance
        shift/scale used on the way in.
        """
        if x.dim() != 3:
            raise ValueError(f"expected (batch, channels, lookback), got {tuple(x.shape)}")
        batch, channels, lookback = x.shape
        n_tokens = self.decoder_token_count(horizon)
        if n_tokens > self.cfg.max_horizon_tokens:
            raise ValueError(f"horizon needs {n_tokens} tokens, max_horizon_tokens={self.cfg.max_horizon_tokens}")
        if channels == 0:
            empty = x.new_zeros(batch, 0, self.cfg.latent_dim, n_tokens)
            stat = x.new_zeros(batch, 0, 1)
            return empty, stat, stat.clone() + 1.0
        mu, sigma = self.instance_stats(x)
        if not torch.isfinite(x).all():
            raise ValueError("non-finite input")
        flat = ((x - mu) / sigma).reshape(batch * channels, lookback)

        grid = patch(flat, self.patch_cfg.patch_len)
        n_in = grid.n_patches
        if n_in > self.cfg.max_input_patches:
            raise ValueError(f"lookback needs {n_in} patches, max_input_patches={self.cfg.max_input_patches}")
        tokens = self.input_proj(grid.values) + self.enc_pos[:n_in]
        tokens = self.emb_drop(tokens)
        for layer in self.encoder:
            tokens = layer(tokens)
        memory = self.enc_norm(tokens)

        queries = self.query_emb[:n_tokens].unsqueeze(0).expand(batch * channels, -1, -1)
        for layer in self.decoder:
            queries = layer(queries, memory)
        decoded = self.dec_norm(queries)  # (B*V, O, D)

        decoded = decoded.reshape(batch, channels, n_tokens, self.cfg.latent_dim)
        return decoded.permute(0, 1, 3, 2), mu, sigma

    def encode_decode(self, history: torch.Tensor, horizon: int) -> torch.Tensor:
        """Single-channel convenience: (lookback,) -> (latent_dim, n_tokens)."""
        tokens, _, _ = self.channel_tokens(history.reshape(1, 1, -1), horizon)
        return tokens[0, 0]

    def head_apply(self, tokens: torch.Tensor, horizon: int,
                   include_bias: bool = True) -> torch.Tensor:
        """Project tokens to the horizon: (..., latent_dim, n_tokens) -> (..., horizon).

        Each token yields one patch-length segment; segments concatenate and
        truncate to the horizon. One parameter set serves every call site.
        """
        n_tokens = tokens.shape[-1]
        per_token = tokens.transpose(-1, -2)  # (..., n_tokens, latent_dim)
        bias = self.head.bias if include_bias else None
        segments = F.linear(per_token, self.head.weight, bias)  # (..., n_tokens, patch_len)
        flat = segments.reshape(*segments.shape[:-2], n_tokens * self.patch_cfg.patch_len)
        return flat[..., :horizon]

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())
