"""Swin-style encoder-decoder segmentor with per-scale latent injection.

The encoder partitions the image into patches and runs four stages of
windowed-attention blocks separated by patch-merging downsamples. The decoder
climbs back up with transposed convolutions, concatenating at each level the
matching encoder skip and a latent grid sampled from the probabilistic net,
and emits a per-pixel softmax over classes.

Tensor layout is (B, C, H, W) at module boundaries; attention blocks operate
on (B, H, W, C) tokens internally.
"""

from __future__ import annotations

import torch
from torch import nn

from .config import SegmentorConfig
from .errors import ConfigError, ShapeError


def window_partition(x: torch.Tensor, window: int) -> torch.Tensor:
    """(B, H, W, C) -> (B * nWindows, window*window, C)."""
    b, h, w, c = x.shape
    x = x.view(b, h // window, window, w // window, window, c)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(-1, window * window, c)


def window_reverse(win: torch.Tensor, window: int, h: int, w: int) -> torch.Tensor:
    """Inverse of window_partition back to (B, H, W, C)."""
    b = win.shape[0] // ((h // window) * (w // window))
    x = win.view(b, h // window, w // window, window, window, -1)
    return x.permute(0, 1, 3, 2, 4, 5).reshape(b, h, w, -1)


def _check_window_divisibility(h: int, w: int, window: int) -> None:
    if h % window or w % window:
        raise ShapeError(f"feature sides ({h}, {w}) not divisible by window {window}")


class WindowAttention(nn.Module):
    """Multi-head self-attention within non-overlapping windows, with a
    learned relative position bias per head."""

    def __init__(self, dim: int, window: int, num_heads: int):
        super().__init__()
        if dim % num_heads:
            raise ConfigError(f"dim {dim} not divisible by num_heads {num_heads}")
        self.dim = dim
        self.window = window
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)
        self.relative_bias = nn.Parameter(
            torch.zeros((2 * window - 1) ** 2, num_heads)
        )
        coords = torch.stack(
            torch.meshgrid(torch.arange(window), torch.arange(window), indexing="ij")
        ).flatten(1)
        rel = coords[:, :, None] - coords[:, None, :]
        rel = rel.permute(1, 2, 0) + (window - 1)
        index = rel[:, :, 0] * (2 * window - 1) + rel[:, :, 1]
        self.register_buffer("relative_index", index, persistent=False)
        nn.init.trunc_normal_(self.relative_bias, std=0.02)

    def forward(
        self, x: torch.Tensor, mask: torch.Tensor | None = None, return_weights: bool = False
    ):
        """x: (nW*B, window*window, C); mask: (nWindows, N, N) additive or None."""
        bw, n, c = x.shape
        qkv = (
            self.qkv(x)
            .reshape(bw, n, 3, self.num_heads, c // self.num_heads)
            .permute(2, 0, 3, 1, 4)
        )
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q * self.scale) @ k.transpose(-2, -1)
        bias = self.relative_bias[self.relative_index.view(-1)].view(n, n, -1)
        attn = attn + bias.permute(2, 0, 1).unsqueeze(0)
        if mask is not None:
            nw = mask.shape[0]
            attn = attn.view(bw // nw, nw, self.num_heads, n, n) + mask.unsqueeze(0).unsqueeze(2)
            attn = attn.view(bw, self.num_heads, n, n)
        attn = attn.softmax(dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(bw, n, c)
        out = self.proj(out)
        if return_weights:
            return out, attn
        return out


def _shift_mask(h: int, w: int, window: int, shift: int, device) -> torch.Tensor:
    """Additive mask (-100 on cross-region pairs) for shifted-window attention."""
    region = torch.zeros(1, h, w, 1, device=device)
    cnt = 0
    for hs in (slice(0, -window), slice(-window, -shift), slice(-shift, None)):
        for ws in (slice(0, -window), slice(-window, -shift), slice(-shift, None)):
            region[:, hs, ws, :] = cnt
            cnt += 1
    win = window_partition(region, window).squeeze(-1)
    mask = win.unsqueeze(1) - win.unsqueeze(2)
    return torch.where(mask == 0, 0.0, -100.0)


class SwinBlock(nn.Module):
    """Pre-norm windowed attention + MLP, each with a residual connection."""

    def __init__(self, dim: int, num_heads: int, window: int, shift: int, mlp_ratio: float):
        super().__init__()
        self.window = window
        self.shift = shift
        self.norm1 = nn.LayerNorm(dim)
        self.attn = WindowAttention(dim, window, num_heads)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: (B, H, W, C)."""
        _, h, w, _ = x.shape
        _check_window_divisibility(h, w, self.window)
        shift = self.shift if min(h, w) > self.window else 0

        y = self.norm1(x)
        if shift:
            y = torch.roll(y, shifts=(-shift, -shift), dims=(1, 2))
            mask = _shift_mask(h, w, self.window, shift, x.device)
        else:
            mask = None
        y = window_partition(y, self.window)
        y = self.attn(y, mask=mask)
        y = window_reverse(y, self.window, h, w)
        if shift:
            y = torch.roll(y, shifts=(shift, shift), dims=(1, 2))
        x = x + y
        return x + self.mlp(self.norm2(x))


class PatchPartition(nn.Module):
    """Non-overlapping patch embedding: conv with kernel = stride = patch."""

    def __init__(self, patch: int, in_channels: int, dim: int):
        super().__init__()
        self.patch = patch
        self.proj = nn.Conv2d(in_channels, dim, kernel_size=patch, stride=patch)
        self.norm = nn.LayerNorm(dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, C_in, H, W) -> (B, H/patch, W/patch, dim)."""
        if x.shape[-2] % self.patch or x.shape[-1] % self.patch:
            raise ShapeError(
                f"image sides {tuple(x.shape[-2:])} not divisible by patch {self.patch}"
            )
        return self.norm(self.proj(x).permute(0, 2, 3, 1))


class PatchMerging(nn.Module):
    """2x2 neighborhood concatenation followed by a linear 4C -> 2C reduction."""

    def __init__(self, dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(4 * dim)
        self.reduce = nn.Linear(4 * dim, 2 * dim, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(B, H, W, C) -> (B, H/2, W/2, 2C)."""
        _, h, w, _ = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"patch merging requires even sides, got ({h}, {w})")
        x = torch.cat(
            [x[:, 0::2, 0::2], x[:, 1::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 1::2]],
            dim=-1,
        )
        return self.reduce(self.norm(x))


def _num_groups(channels: int) -> int:
    g = 8
    while channels % g:
        g //= 2
    return g


class ConvBlock(nn.Module):
    """Two 3x3 conv + group norm + GELU layers."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, out_channels, 3, padding=1),
            nn.GroupNorm(_num_groups(out_channels), out_channels),
            nn.GELU(),
            nn.Conv2d(out_channels, out_channels, 3, padding=1),
            nn.GroupNorm(_num_groups(out_channels), out_channels),
            nn.GELU(),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.body(x)


class FeaturePyramid:
    """Encoder outputs: per-stage levels (fine to coarse) plus the stem."""

    def __init__(self, levels: list[torch.Tensor], stem: torch.Tensor):
        self.levels = levels
        self.stem = stem


class SegmentorNet(nn.Module):
    """S(X, z): encode an image, decode with one latent grid per level."""

    def __init__(self, cfg: SegmentorConfig):
        super().__init__()
        chans = list(cfg.stage_channels)
        for lo, hi in zip(chans, chans[1:]):
            if hi != 2 * lo:
                raise ConfigError(f"stage channels must double per stage, got {chans}")
        self.cfg = cfg
        self.patch = PatchPartition(cfg.patch_size, 1, chans[0])
        self.stages = nn.ModuleList()
        self.merges = nn.ModuleList()
        for i, depth in enumerate(cfg.stage_depths):
            blocks = [
                SwinBlock(
                    chans[i],
                    cfg.num_heads[i],
                    cfg.window_size,
                    (cfg.window_size // 2) if d % 2 else 0,
                    cfg.mlp_ratio,
                )
                for d in range(depth)
            ]
            self.stages.append(nn.ModuleList(blocks))
            if i + 1 < len(chans):
                self.merges.append(PatchMerging(chans[i]))

        k = cfg.latent_channels_per_scale
        inject = cfg.latent_injection
        n = len(chans)
        # Decoder level j runs at the side of encoder stage (n-1-j).
        self.bottleneck = ConvBlock(
            chans[-1] + (k if inject == "all" else 0), chans[-1]
        )
        self.ups = nn.ModuleList()
        self.dec_blocks = nn.ModuleList()
        for j in range(1, n):
            c_out = chans[n - 1 - j]
            self.ups.append(nn.ConvTranspose2d(chans[n - j], c_out, 2, stride=2))
            extra = k if (inject == "all" or j == n - 1) else 0
            skip = c_out + (chans[0] if j == n - 1 else 0)
            self.dec_blocks.append(ConvBlock(c_out + skip + extra, c_out))
        self.final_up = nn.ConvTranspose2d(
            chans[0], chans[0], cfg.patch_size, stride=cfg.patch_size
        )
        self.head = nn.Conv2d(chans[0], cfg.num_classes, 1)
        self.apply(self._init_weights)
        # Start near a background-dominant prediction; foreground classes in
        # this domain are thin structures, and a neutral start wastes many
        # steps before the foreground logit lifts off.
        with torch.no_grad():
            self.head.bias.zero_()
            self.head.bias[0] = 2.0

    @staticmethod
    def _init_weights(m: nn.Module) -> None:
        if isinstance(m, nn.Linear):
            nn.init.trunc_normal_(m.weight, std=0.02)
            if m.bias is not None:
                nn.init.zeros_(m.bias)

    def encode(self, x: torch.Tensor) -> FeaturePyramid:
        """(B, 1, H, W) -> pyramid with levels at sides H/(patch * 2^i)."""
        tokens = self.patch(x)
        stem = tokens.permute(0, 3, 1, 2)
        levels = []
        for i, blocks in enumerate(self.stages):
            for block in blocks:
                tokens = block(tokens)
            levels.append(tokens.permute(0, 3, 1, 2))
            if i < len(self.merges):
                tokens = self.merges[i](tokens)
        return FeaturePyramid(levels, stem)

    def decode(self, pyr: FeaturePyramid, z: list[torch.Tensor]) -> torch.Tensor:
        """Latents z ordered coarse -> fine, one per decoder level; -> (B, C, H, W) probs."""
        n = len(self.stages)
        if len(z) != n:
            raise ShapeError(f"expected {n} latent grids, got {len(z)}")
        inject = self.cfg.latent_injection

        def check(zi: torch.Tensor, ref: torch.Tensor, name: str) -> torch.Tensor:
            if zi.shape[-2:] != ref.shape[-2:]:
                raise ShapeError(
                    f"latent {name} spatial shape {tuple(zi.shape[-2:])} does not match "
                    f"decoder level {tuple(ref.shape[-2:])}"
                )
            return zi

        x = pyr.levels[-1]
        if inject == "all":
            x = torch.cat([x, check(z[0], x, "0")], dim=1)
        x = self.bottleneck(x)
        for j in range(1, n):
            x = self.ups[j - 1](x)
            skip = pyr.levels[n - 1 - j]
            parts = [x, skip]
            if j == n - 1:
                parts.append(pyr.stem)
            if inject == "all" or j == n - 1:
                parts.append(check(z[j], x, str(j)))
            x = self.dec_blocks[j - 1](torch.cat(parts, dim=1))
        x = self.final_up(x)
        return torch.softmax(self.head(x), dim=1)

    def forward(self, x: torch.Tensor, z: list[torch.Tensor]) -> torch.Tensor:
        return self.decode(self.encode(x), z)

    segment = forward
