"""Period-aware patching and the linear embedding of future-known covariates.

A series is segmented into consecutive patches whose length equals its
dominant cycle, so each token covers one period. When the length is not a
multiple of the patch length, the series is left-padded by repeating its
earliest value: the most recent patch stays intact, which is what matters
for forecasting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

from .errors import TokenCountError


@dataclass(frozen=True)
class PatchConfig:
    """Patch lengths for history/horizon segmentation.

    future_patch_len defaults to patch_len, which makes future-covariate
    tokens line up one-to-one with the decoder tokens. When they differ,
    resample_future_tokens enables nearest-patch resampling onto the decoder
    token grid; otherwise a mismatch is an error.
    """

    patch_len: int = 24
    future_patch_len: int | None = None
    resample_future_tokens: bool = False

    def __post_init__(self):
        if self.patch_len < 1:
            raise ValueError("patch_len must be >= 1")
        if self.future_patch_len is not None and self.future_patch_len < 1:
            raise ValueError("future_patch_len must be >= 1")

    @property
    def effective_future_patch_len(self) -> int:
        return self.patch_len if self.future_patch_len is None else self.future_patch_len


@dataclass(frozen=True)
class PatchGrid:
    """Patched view of a channel block: values (channels, n_patches, patch_len)."""

    values: torch.Tensor
    pad_mask: torch.Tensor  # bool (n_patches, patch_len), True where the position is real data

    @property
    def n_patches(self) -> int:
        return self.values.shape[-2]


def num_patches(length: int, patch_len: int) -> int:
    return math.ceil(length / patch_len)


def patch(series: torch.Tensor, patch_len: int) -> PatchGrid:
    """Segment (..., L) into ceil(L/patch_len) patches of patch_len steps.

    Left-pads with the earliest value when patch_len does not divide L; the
    pad_mask flags padded positions as invalid.
    """
    length = series.shape[-1]
    if length < 1:
        raise ValueError("cannot patch an empty series")
    n = num_patches(length, patch_len)
    pad = n * patch_len - length
    if pad:
        lead = series[..., :1].expand(*series.shape[:-1], pad)
        series = torch.cat([lead, series], dim=-1)
    values = series.reshape(*series.shape[:-1], n, patch_len)
    mask = torch.ones(n * patch_len, dtype=torch.bool, device=series.device)
    mask[:pad] = False
    return PatchGrid(values, mask.reshape(n, patch_len))


def embed_future_patches(y_future: torch.Tensor, weight: torch.Tensor,
                         patch_len: int) -> torch.Tensor:
    """Project each horizon patch into the latent space: out[..., m, :, j] = weight @ patch(m, j).

    y_future: (..., Mf, F); weight: (latent_dim, patch_len). Returns
    (..., Mf, latent_dim, n_tokens).
    """
    if weight.shape[1] != patch_len:
        raise ValueError(f"weight is {tuple(weight.shape)}, expected (*, {patch_len})")
    grid = patch(y_future, patch_len)
    # (..., Mf, n, P) x (D, P) -> (..., Mf, D, n)
    return torch.einsum("dp,...mjp->...mdj", weight, grid.values)


def align_token_count(tokens: torch.Tensor, target_count: int, resample: bool) -> torch.Tensor:
    """Match the last (token) dimension of `tokens` to the decoder token count.

    With resample=False a mismatch raises; with resample=True each decoder
    token takes the nearest source token.
    """
    source_count = tokens.shape[-1]
    if source_count == target_count:
        return tokens
    if not resample:
        raise TokenCountError(
            f"future-covariate tokens ({source_count}) do not match decoder tokens "
            f"({target_count}); set resample_future_tokens or use matching patch lengths"
        )
    centers = (torch.arange(target_count, dtype=torch.float64) + 0.5) * source_count / target_count
    idx = centers.floor().long().clamp(max=source_count - 1)
    return tokens[..., idx]


class FutureCovEmbedder(torch.nn.Module):
    """Trainable linear embedding of future-known covariate patches."""

    def __init__(self, latent_dim: int, patch_len: int, resample: bool = False):
        super().__init__()
        self.patch_len = patch_len
        self.resample = resample
        self.weight = torch.nn.Parameter(torch.empty(latent_dim, patch_len))
        torch.nn.init.normal_(self.weight, std=0.02)

    def forward(self, y_future: torch.Tensor, decoder_tokens: int) -> torch.Tensor:
        """(..., Mf, F) -> (..., Mf, latent_dim, decoder_tokens)."""
        tokens = embed_future_patches(y_future, self.weight, self.patch_len)
        return align_token_count(tokens, decoder_tokens, self.resample)
