"""Checkpoint archive: format tag, JSON-able configs, schedule, parameters.

One ``torch.save`` archive carries everything needed to rebuild a model:
the plain-dict configuration header, the schedule's text serialization,
and the named parameter arrays.  ``stages`` records which adapter tags
must be injected before the state dict fits.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import torch

from .adaptive_noise import PiecewiseParams
from .errors import StateError
from .networks import (
    UNet,
    UNetConfig,
    VAE,
    VAEConfig,
    LoRAConfig,
    inject_adapters,
    is_cross_attention_site,
)
from .schedule import NoiseSchedule

FORMAT_TAG = "onestep-sr/checkpoint-v1"

DEFAULT_TIMESTEP = 100


def make_model_config(
    vae_cfg: VAEConfig = VAEConfig(),
    unet_cfg: UNetConfig = UNetConfig(),
    lora_cfg: LoRAConfig = LoRAConfig(),
    *,
    with_lqfm: bool = True,
    adaptive_noise: bool = True,
    noise_params: PiecewiseParams = PiecewiseParams(),
    patch: int = 16,
    default_timestep: int = DEFAULT_TIMESTEP,
    stages: tuple[str, ...] = (),
) -> dict:
    return {
        "vae": asdict(vae_cfg),
        "unet": asdict(unet_cfg),
        "lora": asdict(lora_cfg),
        "with_lqfm": bool(with_lqfm),
        "adaptive_noise": bool(adaptive_noise),
        "noise_params": asdict(noise_params),
        "patch": int(patch),
        "default_timestep": int(default_timestep),
        "stages": list(stages),
    }


def vae_encoder_site(site: str) -> bool:
    return site.startswith(("enc_stem", "enc_stages", "mu_head"))


def unet_stage1_site(site: str) -> bool:
    return not site.startswith("modulator")


def inject_stage1_adapters(vae: VAE, unet: UNet, lora_cfg: LoRAConfig, seed: int = 0):
    gen = torch.Generator().manual_seed(seed)
    inject_adapters(vae, lora_cfg.rank_encoder, "stage1", lora_cfg.scaling,
                    predicate=vae_encoder_site, generator=gen)
    inject_adapters(unet, lora_cfg.rank_unet, "stage1", lora_cfg.scaling,
                    predicate=unet_stage1_site, generator=gen)


def inject_stage2_adapters(unet: UNet, lora_cfg: LoRAConfig, seed: int = 1):
    gen = torch.Generator().manual_seed(seed)
    inject_adapters(unet, lora_cfg.rank_crossattn_stage2, "stage2", lora_cfg.scaling,
                    predicate=is_cross_attention_site, generator=gen)


def build_models(config: dict) -> tuple[VAE, UNet]:
    """Instantiate the model pair described by a config header."""
    torch.manual_seed(0)
    vae = VAE(VAEConfig(**config["vae"]))
    unet_cfg = UNetConfig(**config["unet"])
    vae_cfg = vae.config
    unet = UNet(unet_cfg, with_lqfm=config["with_lqfm"], lqfm_unshuffle=vae_cfg.downscale)
    lora_cfg = LoRAConfig(**config["lora"])
    if "stage1" in config["stages"]:
        inject_stage1_adapters(vae, unet, lora_cfg)
    if "stage2" in config["stages"]:
        inject_stage2_adapters(unet, lora_cfg)
    return vae, unet


@dataclass
class Checkpoint:
    config: dict
    schedule: NoiseSchedule
    vae: VAE
    unet: UNet
    phase: str
    step: int
    extra: dict

    @property
    def noise_params(self) -> PiecewiseParams:
        return PiecewiseParams(**self.config["noise_params"])


def save_checkpoint(
    path,
    config: dict,
    schedule: NoiseSchedule,
    vae: VAE,
    unet: UNet,
    *,
    phase: str = "",
    step: int = 0,
    extra: dict | None = None,
) -> None:
    payload = {
        "format": FORMAT_TAG,
        "config": config,
        "schedule": schedule.to_text(),
        "vae_state": vae.state_dict(),
        "unet_state": unet.state_dict(),
        "phase": phase,
        "step": int(step),
        "extra": extra or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise StateError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise StateError(f"unreadable checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or payload.get("format") != FORMAT_TAG:
        raise StateError(f"{path} is not a {FORMAT_TAG} archive")
    config = payload["config"]
    vae, unet = build_models(config)
    vae.load_state_dict(payload["vae_state"])
    unet.load_state_dict(payload["unet_state"])
    return Checkpoint(
        config=config,
        schedule=NoiseSchedule.from_text(payload["schedule"]),
        vae=vae,
        unet=unet,
        phase=payload.get("phase", ""),
        step=payload.get("step", 0),
        extra=payload.get("extra", {}),
    )
