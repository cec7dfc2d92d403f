"""Trainable components.

A small convolutional VAE compresses 64px images into a 4x-downscaled
latent space, and a text-conditioned U-Net predicts the noise to remove
in the single recovery step.  Low-rank adapters can be stacked onto any
linear or convolutional layer, and an optional modulation block injects
the uncompressed (pixel-unshuffled) input image into the U-Net stem
feature as a time-weighted spatial affine transform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .dataset import VOCABULARY
from .errors import ConfigError, ShapeError, VocabError


@dataclass(frozen=True)
class VAEConfig:
    downscale: int = 4
    latent_channels: int = 4
    base_width: int = 32

    def __post_init__(self):
        if self.downscale < 2 or self.downscale & (self.downscale - 1):
            raise ConfigError(f"downscale must be a power of two >= 2, got {self.downscale}")
        if self.base_width % 8:
            raise ConfigError(f"base_width must be divisible by 8, got {self.base_width}")

    @property
    def num_stages(self) -> int:
        return self.downscale.bit_length() - 1


@dataclass(frozen=True)
class UNetConfig:
    base_width: int = 64
    depth: int = 2
    attn_heads: int = 4
    text_dim: int = 64
    vocab_size: int = len(VOCABULARY)
    latent_channels: int = 4
    time_dim: int = 128

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.base_width % 8 or self.base_width % self.attn_heads:
            raise ConfigError(
                f"base_width {self.base_width} must be divisible by 8 and by "
                f"attn_heads {self.attn_heads}"
            )


@dataclass(frozen=True)
class LoRAConfig:
    rank_encoder: int = 4
    rank_unet: int = 16
    rank_crossattn_stage2: int = 16
    scaling: float = 1.0

    def __post_init__(self):
        if min(self.rank_encoder, self.rank_unet, self.rank_crossattn_stage2) < 1:
            raise ConfigError("LoRA ranks must be >= 1")


def pixel_unshuffle(x: torch.Tensor, r: int) -> torch.Tensor:
    """Space-to-depth: each r x r block becomes r*r channels (row-major)."""
    if r < 1:
        raise ConfigError(f"unshuffle factor must be >= 1, got {r}")
    if r == 1:
        return x
    if x.shape[-2] % r or x.shape[-1] % r:
        raise ShapeError(f"spatial dims {tuple(x.shape[-2:])} not divisible by {r}")
    return F.pixel_unshuffle(x, r)


def pixel_shuffle(x: torch.Tensor, r: int) -> torch.Tensor:
    """Inverse of :func:`pixel_unshuffle`."""
    if r < 1:
        raise ConfigError(f"shuffle factor must be >= 1, got {r}")
    if r == 1:
        return x
    if x.shape[-3] % (r * r):
        raise ShapeError(f"channel dim {x.shape[-3]} not divisible by {r * r}")
    return F.pixel_shuffle(x, r)


class VAE(nn.Module):
    """Convolutional encoder/decoder pair with diagonal-Gaussian posterior.

    ``latent_scale`` is calibrated once after reconstruction pretraining so
    encoded latents are roughly unit variance; encode/decode apply it
    transparently.
    """

    def __init__(self, config: VAEConfig = VAEConfig()):
        super().__init__()
        self.config = config
        widths = [config.base_width * 2**i for i in range(config.num_stages + 1)]
        self.enc_stem = nn.Conv2d(3, widths[0], 3, padding=1)
        self.enc_stages = nn.ModuleList(
            nn.Sequential(
                nn.SiLU(),
                nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1),
                nn.SiLU(),
                nn.Conv2d(widths[i + 1], widths[i + 1], 3, padding=1),
            )
            for i in range(config.num_stages)
        )
        self.mu_head = nn.Conv2d(widths[-1], config.latent_channels, 1)
        self.logvar_head = nn.Conv2d(widths[-1], config.latent_channels, 1)
        self.dec_stem = nn.Conv2d(config.latent_channels, widths[-1], 3, padding=1)
        self.dec_stages = nn.ModuleList(
            nn.Sequential(
                nn.SiLU(),
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(widths[i + 1], widths[i], 3, padding=1),
                nn.SiLU(),
                nn.Conv2d(widths[i], widths[i], 3, padding=1),
            )
            for i in reversed(range(config.num_stages))
        )
        self.dec_out = nn.Conv2d(widths[0], 3, 3, padding=1)
        self.register_buffer("latent_scale", torch.ones(()))

    def _check_image(self, x: torch.Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected (B, 3, H, W) image batch, got {tuple(x.shape)}")
        if x.shape[-2] % self.config.downscale or x.shape[-1] % self.config.downscale:
            raise ShapeError(
                f"spatial dims {tuple(x.shape[-2:])} not divisible by {self.config.downscale}"
            )

    def features(self, x: torch.Tensor) -> list[torch.Tensor]:
        """Encoder trunk activations, one per resolution."""
        self._check_image(x)
        h = self.enc_stem(x)
        feats = [h]
        for stage in self.enc_stages:
            h = stage(h)
            feats.append(h)
        return feats

    def encode_dist(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h = self.features(x)[-1]
        return self.mu_head(h), self.logvar_head(h)

    def encode(self, x: torch.Tensor) -> torch.Tensor:
        mu, _ = self.encode_dist(x)
        return mu * self.latent_scale

    def decode(self, z: torch.Tensor) -> torch.Tensor:
        if z.ndim != 4 or z.shape[1] != self.config.latent_channels:
            raise ShapeError(
                f"expected (B, {self.config.latent_channels}, h, w) latent, got {tuple(z.shape)}"
            )
        h = self.dec_stem(z / self.latent_scale)
        for stage in self.dec_stages:
            h = stage(h)
        return torch.sigmoid(self.dec_out(h))

    @torch.no_grad()
    def calibrate_latent_scale(self, images: torch.Tensor) -> float:
        mu, _ = self.encode_dist(images)
        std = mu.std().clamp_min(1e-6)
        self.latent_scale.fill_(1.0 / std)
        return float(self.latent_scale)


class LQModulator(nn.Module):
    """Spatial affine modulation of the U-Net stem feature.

    The conditioning image is pixel-unshuffled to the feature resolution
    and mapped through two 1x1 convolutions to per-cell (gamma, beta).
    The final layer is zero-initialized, so the block is an exact no-op
    until trained.  ``coeff`` is the time-dependent modulation strength.
    """

    def __init__(self, feat_channels: int, unshuffle: int = 4,
                 image_channels: int = 3, hidden: int = 64):
        super().__init__()
        self.unshuffle = unshuffle
        self.mix = nn.Conv2d(image_channels * unshuffle**2, hidden, 1)
        self.out = nn.Conv2d(hidden, 2 * feat_channels, 1)
        nn.init.zeros_(self.out.weight)
        nn.init.zeros_(self.out.bias)

    def forward(self, feat: torch.Tensor, image: torch.Tensor, coeff) -> torch.Tensor:
        x = pixel_unshuffle(image, self.unshuffle)
        if x.shape[-2:] != feat.shape[-2:]:
            raise ShapeError(
                f"unshuffled image spatial {tuple(x.shape[-2:])} does not match "
                f"feature spatial {tuple(feat.shape[-2:])}"
            )
        gamma, beta = self.out(F.silu(self.mix(x))).chunk(2, dim=1)
        return (1.0 + coeff * gamma) * feat + coeff * beta

    def modulate(self, feat: torch.Tensor, image: torch.Tensor, t: int, schedule) -> torch.Tensor:
        return self(feat, image, schedule.mod_coeff(t))


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / (half - 1)
    ).to(t.device)
    args = t.double()[:, None] * freqs[None]
    return torch.cat([torch.cos(args), torch.sin(args)], dim=-1)


class ResBlock(nn.Module):
    def __init__(self, cin: int, cout: int, time_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, cout)
        self.norm2 = nn.GroupNorm(8, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time_proj(temb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class CrossAttention(nn.Module):
    """Multi-head attention from spatial cells to prompt tokens.

    Returns the residual-updated feature and the head-averaged attention
    map with one row per cell, softmax-normalized over tokens.
    """

    def __init__(self, channels: int, text_dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.norm = nn.GroupNorm(8, channels)
        self.to_q = nn.Linear(channels, channels, bias=False)
        self.to_k = nn.Linear(text_dim, channels, bias=False)
        self.to_v = nn.Linear(text_dim, channels, bias=False)
        self.to_out = nn.Linear(channels, channels)

    def forward(self, x: torch.Tensor, txt: torch.Tensor):
        b, c, h, w = x.shape
        dh = c // self.heads
        q = self.to_q(self.norm(x).flatten(2).transpose(1, 2))
        k = self.to_k(txt)
        v = self.to_v(txt)

        def split(z):
            return z.view(b, -1, self.heads, dh).transpose(1, 2)

        q, k, v = split(q), split(k), split(v)
        attn = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(dh), dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, h * w, c)
        out = self.to_out(out).transpose(1, 2).view(b, c, h, w)
        attn_map = attn.mean(dim=1).view(b, h, w, -1)
        return x + out, attn_map


class UNet(nn.Module):
    """Noise-prediction U-Net conditioned on prompt tokens and timestep.

    ``with_lqfm`` attaches the LQ modulation block after the stem
    convolution; the stem input itself is never modulated.
    """

    def __init__(self, config: UNetConfig = UNetConfig(), with_lqfm: bool = True,
                 lqfm_unshuffle: int = 4, lqfm_hidden: int = 64):
        super().__init__()
        self.config = config
        w, depth, tdim = config.base_width, config.depth, config.time_dim
        widths = [w * 2**i for i in range(depth)]

        self.token_embed = nn.Embedding(config.vocab_size, config.text_dim)
        self.time_mlp = nn.Sequential(
            nn.Linear(tdim, tdim), nn.SiLU(), nn.Linear(tdim, tdim)
        )
        self.conv_in = nn.Conv2d(config.latent_channels, w, 3, padding=1)
        self.modulator = (
            LQModulator(w, unshuffle=lqfm_unshuffle, hidden=lqfm_hidden) if with_lqfm else None
        )

        self.down_res = nn.ModuleList()
        self.down_attn = nn.ModuleList()
        self.downsample = nn.ModuleList()
        cin = w
        for i in range(depth):
            self.down_res.append(ResBlock(cin, widths[i], tdim))
            self.down_attn.append(CrossAttention(widths[i], config.text_dim, config.attn_heads))
            self.downsample.append(nn.Conv2d(widths[i], widths[i], 3, stride=2, padding=1))
            cin = widths[i]

        mid = widths[-1]
        self.mid_res1 = ResBlock(mid, mid, tdim)
        self.mid_attn = CrossAttention(mid, config.text_dim, config.attn_heads)
        self.mid_res2 = ResBlock(mid, mid, tdim)

        self.up_res = nn.ModuleList()
        self.up_attn = nn.ModuleList()
        cin = mid
        for i in reversed(range(depth)):
            self.up_res.append(ResBlock(cin + widths[i], widths[i], tdim))
            self.up_attn.append(CrossAttention(widths[i], config.text_dim, config.attn_heads))
            cin = widths[i]

        self.out_norm = nn.GroupNorm(8, w)
        self.conv_out = nn.Conv2d(w, config.latent_channels, 3, padding=1)

    def _check_tokens(self, tokens: torch.Tensor) -> torch.Tensor:
        if tokens.ndim != 2:
            raise ShapeError(f"tokens must be (B, L), got {tuple(tokens.shape)}")
        if tokens.numel() and (
            int(tokens.min()) < 0 or int(tokens.max()) >= self.config.vocab_size
        ):
            raise VocabError(
                f"token ids must be in [0, {self.config.vocab_size}), got "
                f"[{int(tokens.min())}, {int(tokens.max())}]"
            )
        return tokens.long()

    def forward(self, z: torch.Tensor, t, tokens: torch.Tensor,
                cond_image: torch.Tensor | None = None, mod_coeff: float | None = None):
        if z.ndim != 4 or z.shape[1] != self.config.latent_channels:
            raise ShapeError(
                f"expected (B, {self.config.latent_channels}, h, w) latent, got {tuple(z.shape)}"
            )
        tokens = self._check_tokens(tokens)
        if not torch.is_tensor(t):
            t = torch.full((z.shape[0],), float(t), device=z.device)
        temb = self.time_mlp(timestep_embedding(t, self.config.time_dim).to(z.dtype))
        txt = self.token_embed(tokens)

        h = self.conv_in(z)
        if cond_image is not None:
            if self.modulator is None:
                raise ConfigError("model was built without the LQ modulation block")
            if mod_coeff is None:
                raise ConfigError("mod_coeff is required when cond_image is given")
            h = self.modulator(h, cond_image, mod_coeff)

        attn_maps = []
        skips = []
        for res, attn, down in zip(self.down_res, self.down_attn, self.downsample):
            h = res(h, temb)
            h, amap = attn(h, txt)
            attn_maps.append(amap)
            skips.append(h)
            h = down(h)

        h = self.mid_res1(h, temb)
        h, amap = self.mid_attn(h, txt)
        attn_maps.append(amap)
        h = self.mid_res2(h, temb)

        for res, attn in zip(self.up_res, self.up_attn):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = res(torch.cat([h, skips.pop()], dim=1), temb)
            h, amap = attn(h, txt)
            attn_maps.append(amap)

        eps = self.conv_out(F.silu(self.out_norm(h)))
        return eps, attn_maps

    def predict(self, z_t: torch.Tensor, t: int, tokens: torch.Tensor, schedule,
                lqfm_input: torch.Tensor | None = None):
        """Forward pass with the modulation strength taken from the schedule."""
        coeff = schedule.mod_coeff(t) if lqfm_input is not None else None
        return self(z_t, t, tokens, cond_image=lqfm_input, mod_coeff=coeff)


# ---------------------------------------------------------------------------
# low-rank adapters


class LoRAAdapter(nn.Module):
    def __init__(self, down: nn.Module, up: nn.Module, scaling: float):
        super().__init__()
        self.down = down
        self.up = up
        self.scaling = scaling

    def forward(self, x):
        return self.up(self.down(x)) * self.scaling


class LoRAWrapper(nn.Module):
    """Base layer plus a stack of tagged low-rank deltas.

    Each adapter's up-projection starts at zero, so adding an adapter
    never changes the wrapped layer's output until it is trained.
    """

    def __init__(self, base: nn.Module):
        super().__init__()
        if not isinstance(base, (nn.Linear, nn.Conv2d)):
            raise ConfigError(f"cannot wrap {type(base).__name__} with a low-rank adapter")
        self.base = base
        self.adapters = nn.ModuleDict()

    def add_adapter(self, tag: str, rank: int, scaling: float = 1.0,
                    generator: torch.Generator | None = None) -> None:
        if tag in self.adapters:
            raise ConfigError(f"adapter {tag!r} already present at this site")
        base = self.base
        if isinstance(base, nn.Linear):
            down = nn.Linear(base.in_features, rank, bias=False)
            up = nn.Linear(rank, base.out_features, bias=False)
        else:
            if base.groups != 1:
                raise ConfigError("grouped convolutions are not supported")
            down = nn.Conv2d(
                base.in_channels, rank, base.kernel_size, stride=base.stride,
                padding=base.padding, dilation=base.dilation, bias=False,
            )
            up = nn.Conv2d(rank, base.out_channels, 1, bias=False)
        with torch.no_grad():
            down.weight.normal_(0.0, rank**-0.5, generator=generator)
            up.weight.zero_()
        adapter = LoRAAdapter(down, up, scaling)
        adapter.to(dtype=base.weight.dtype, device=base.weight.device)
        self.adapters[tag] = adapter

    def forward(self, x):
        out = self.base(x)
        for adapter in self.adapters.values():
            out = out + adapter(x)
        return out


def _resolve_parent(model: nn.Module, path: str) -> tuple[nn.Module, str]:
    parts = path.split(".")
    parent = model
    for name in parts[:-1]:
        parent = getattr(parent, name)
    return parent, parts[-1]


def lora_inject(model: nn.Module, site: str, rank: int, scaling: float = 1.0,
                tag: str = "stage1", generator: torch.Generator | None = None) -> LoRAWrapper:
    """Attach a low-rank adapter at ``site`` (dotted module path)."""
    try:
        module = model.get_submodule(site)
    except AttributeError as exc:
        raise ConfigError(f"no module at site {site!r}") from exc
    if isinstance(module, LoRAWrapper):
        wrapper = module
    else:
        wrapper = LoRAWrapper(module)
        parent, name = _resolve_parent(model, site)
        setattr(parent, name, wrapper)
    wrapper.add_adapter(tag, rank, scaling, generator)
    return wrapper


def lora_sites(model: nn.Module, predicate=None) -> list[str]:
    """Dotted paths of adapter-eligible layers, skipping wrapper internals."""
    sites = []
    for name, module in model.named_modules():
        if isinstance(module, LoRAWrapper):
            sites.append(name)
        elif isinstance(module, (nn.Linear, nn.Conv2d)):
            parts = set(name.split("."))
            if "adapters" in parts or "base" in parts:
                continue
            sites.append(name)
    if predicate is not None:
        sites = [s for s in sites if predicate(s)]
    return sites


ATTENTION_PROJECTIONS = ("to_q", "to_k", "to_v", "to_out")


def is_cross_attention_site(site: str) -> bool:
    return site.rsplit(".", 1)[-1] in ATTENTION_PROJECTIONS


def inject_adapters(model: nn.Module, rank: int, tag: str, scaling: float = 1.0,
                    predicate=None, generator: torch.Generator | None = None) -> list[str]:
    sites = lora_sites(model, predicate)
    for site in sites:
        lora_inject(model, site, rank, scaling, tag, generator)
    return sites


def adapter_parameters(model: nn.Module, tag: str):
    for name, module in model.named_modules():
        if isinstance(module, LoRAWrapper) and tag in module.adapters:
            yield from module.adapters[tag].parameters()


def lora_freeze(model: nn.Module, tag: str) -> None:
    """Remove a tag's adapters from the trainable set."""
    for p in adapter_parameters(model, tag):
        p.requires_grad_(False)


def trainable_params(model: nn.Module) -> list[nn.Parameter]:
    return [p for p in model.parameters() if p.requires_grad]


def param_count(params) -> int:
    return sum(p.numel() for p in params)
