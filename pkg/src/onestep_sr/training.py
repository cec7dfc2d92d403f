"""Two-stage optimization protocol.

Stage 1 substitutes for fine-tuning a pretrained model at desk scale:
a reconstruction warm-up trains the VAE, a base warm-up trains the raw
U-Net on the restoration objective with plain Gaussian noise, then the
base is frozen and low-rank adapters plus the LQ modulation block are
optimized with content, perceptual, and adversarial losses under the
gradient-adaptive noise.

Stage 2 freezes everything from stage 1, injects fresh adapters into the
cross-attention projections only, and trains them with a distillation
penalty against the frozen stage-1 teacher plus the positive-area
attention loss.
"""

from __future__ import annotations

import copy
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import checkpoint as ckpt
from . import guidance, metrics, pipeline
from .adaptive_noise import PiecewiseParams
from .dataset import AnnotatedSample
from .errors import ConfigError, ShapeError, StateError, TrainingError
from .networks import (
    LoRAConfig,
    UNet,
    UNetConfig,
    VAE,
    VAEConfig,
    adapter_parameters,
    lora_freeze,
    trainable_params,
)
from .schedule import NoiseSchedule, TimestepRange

_PHASE_IDS = {"vae": 1, "base": 2, "stage1": 3, "stage2": 4, "eval": 5}


@dataclass(frozen=True)
class Stage1Config:
    steps: int = 800
    batch_size: int = 16
    lr: float = 5e-5
    w_content: float = 1.0
    w_perceptual: float = 1.0
    w_adversarial: float = 0.05
    timestep_range: TimestepRange = field(default_factory=TimestepRange)
    seed: int = 0
    vae_warmup_steps: int = 300
    base_warmup_steps: int = 500
    vae_lr: float = 1e-3
    base_lr: float = 3e-4
    disc_lr: float = 1e-4
    kl_weight: float = 1e-4

    def __post_init__(self):
        if min(self.w_content, self.w_perceptual, self.w_adversarial) < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")


@dataclass(frozen=True)
class Stage2Config:
    steps: int = 200
    lr: float = 5e-5
    batch_size: int = 16
    eta_pos: float = 1.0
    vsd_weight: float = 2.0
    timestep_range: TimestepRange = field(default_factory=TimestepRange)
    seed: int = 0

    def __post_init__(self):
        if self.eta_pos < 0:
            raise ConfigError("eta_pos must be >= 0")


@dataclass
class LossReport:
    step: int
    phase: str
    components: dict
    total: float

    def to_json(self) -> str:
        return json.dumps(
            {"step": self.step, "phase": self.phase, "total": self.total,
             **self.components},
            sort_keys=True,
        )


def step_rng(seed: int, phase: str, step: int) -> np.random.Generator:
    """Stateless per-step generator so interrupted runs resume exactly."""
    return np.random.default_rng((seed, _PHASE_IDS[phase], step))


class PatchDiscriminator(nn.Module):
    """Three strided convolution stages onto patch logits."""

    def __init__(self, width: int = 32):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(3, width, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(width, width * 2, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(width * 2, width * 4, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(width * 4, 1, 3, padding=1),
        )

    def forward(self, x):
        return self.net(x)


def adversarial_terms(real: torch.Tensor, fake: torch.Tensor, disc: nn.Module):
    """Non-saturating logistic losses: (generator term, discriminator term)."""
    if real.shape != fake.shape:
        raise ShapeError(f"real batch {tuple(real.shape)} vs fake batch {tuple(fake.shape)}")
    gen_loss = F.softplus(-disc(fake)).mean()
    disc_loss = 0.5 * (
        F.softplus(-disc(real)).mean() + F.softplus(disc(fake.detach())).mean()
    )
    return gen_loss, disc_loss


def perceptual_distance(a: torch.Tensor, b: torch.Tensor, extractor) -> torch.Tensor:
    """Mean squared distance between frozen-extractor feature maps."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    feats_a, feats_b = extractor(a), extractor(b)
    dist = sum(F.mse_loss(fa, fb) for fa, fb in zip(feats_a, feats_b))
    return dist / len(feats_a)


def make_perceptual_extractor(vae: VAE):
    """Frozen copy of the VAE encoder trunk as the feature extractor."""
    frozen = copy.deepcopy(vae)
    frozen.requires_grad_(False)
    frozen.eval()

    def extract(x):
        return frozen.features(x)

    return extract


class PreparedData:
    """Dataset records upsampled, weight-mapped, and tokenized once."""

    def __init__(
        self,
        samples: list[AnnotatedSample],
        factor: int,
        patch: int,
        params: PiecewiseParams,
        latent_hw: tuple[int, int],
    ):
        if not samples:
            raise TrainingError("dataset is empty")
        self.samples = samples
        self.prepared = [pipeline.prepare_sample(s, factor, patch, params) for s in samples]
        self.hq = torch.stack([pipeline.to_tensor(s.hq) for s in samples])
        self.lq_up = torch.stack([pipeline.to_tensor(p.lq_up) for p in self.prepared])
        self.noun_entries = [
            guidance.prepare_noun_masks(s.prompt, s.nouns, s.masks, latent_hw)
            for s in samples
        ]
        self.latent_hw = latent_hw

    def __len__(self):
        return len(self.samples)

    def pick(self, rng: np.random.Generator, batch_size: int) -> np.ndarray:
        n = len(self.samples)
        return rng.choice(n, size=batch_size, replace=n < batch_size)


def _check_finite(value: torch.Tensor, phase: str, step: int) -> None:
    if not torch.isfinite(value):
        raise TrainingError(f"non-finite loss in phase {phase!r} at step {step}")


def non_stage2_sha256(vae: VAE, unet: UNet) -> str:
    """Digest of every parameter and buffer outside stage-2 adapters."""
    digest = hashlib.sha256()
    for prefix, module in (("vae", vae), ("unet", unet)):
        for name, tensor in sorted(module.state_dict().items()):
            if ".adapters.stage2." in name:
                continue
            digest.update(f"{prefix}.{name}".encode())
            digest.update(tensor.detach().cpu().numpy().tobytes())
    return digest.hexdigest()


class TwoStageTrainer:
    """Owns the models and drives every training phase.

    The CLI and the tests construct one of these, run the phases they
    need, and save checkpoints at phase boundaries.  All randomness is
    derived from (seed, phase, step), so any phase can be resumed from a
    checkpoint and reproduce the uninterrupted run exactly.
    """

    def __init__(
        self,
        samples: list[AnnotatedSample],
        stage1: Stage1Config = Stage1Config(),
        stage2: Stage2Config = Stage2Config(),
        vae_cfg: VAEConfig = VAEConfig(),
        unet_cfg: UNetConfig = UNetConfig(),
        lora_cfg: LoRAConfig = LoRAConfig(),
        *,
        use_rgpa: bool = True,
        use_lqfm: bool = True,
        use_tmg: bool = True,
        noise_params: PiecewiseParams = PiecewiseParams(),
        patch: int = 16,
        schedule: NoiseSchedule | None = None,
        default_timestep: int = ckpt.DEFAULT_TIMESTEP,
        log_path=None,
    ):
        self.stage1_cfg = stage1
        self.stage2_cfg = stage2
        self.vae_cfg = vae_cfg
        self.unet_cfg = unet_cfg
        self.lora_cfg = lora_cfg
        self.use_rgpa = use_rgpa
        self.use_lqfm = use_lqfm
        self.use_tmg = use_tmg
        self.noise_params = noise_params
        self.patch = patch
        self.default_timestep = default_timestep
        self.schedule = schedule or NoiseSchedule.scaled_linear()
        stage1.timestep_range.validate_against(self.schedule)
        self.log_path = Path(log_path) if log_path else None

        torch.manual_seed(stage1.seed)
        self.vae = VAE(vae_cfg)
        self.unet = UNet(unet_cfg, with_lqfm=use_lqfm, lqfm_unshuffle=vae_cfg.downscale)
        self.disc = PatchDiscriminator(width=max(16, vae_cfg.base_width))
        self.teacher: UNet | None = None
        self.extractor = None
        self.opt: torch.optim.Optimizer | None = None
        self.disc_opt: torch.optim.Optimizer | None = None
        self.phase = "init"
        self.step = 0
        self.stages: list[str] = []

        upscale = vae_cfg.downscale
        sample_hw = samples[0].hq.shape[:2]
        latent_hw = (sample_hw[0] // upscale, sample_hw[1] // upscale)
        self.data = PreparedData(samples, upscale, patch, noise_params, latent_hw)

    # -- bookkeeping --------------------------------------------------

    def model_config(self) -> dict:
        return ckpt.make_model_config(
            self.vae_cfg, self.unet_cfg, self.lora_cfg,
            with_lqfm=self.use_lqfm, adaptive_noise=self.use_rgpa,
            noise_params=self.noise_params, patch=self.patch,
            default_timestep=self.default_timestep, stages=tuple(self.stages),
        )

    def _log(self, report: LossReport) -> None:
        if self.log_path is not None:
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.log_path, "a", encoding="utf-8") as fh:
                record = json.loads(report.to_json())
                record["wall_time"] = time.time()
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def save(self, path, extra: dict | None = None) -> None:
        ckpt.save_checkpoint(
            path, self.model_config(), self.schedule, self.vae, self.unet,
            phase=self.phase, step=self.step, extra=extra or {},
        )

    def save_resumable(self, path) -> None:
        extra = {
            "opt": self.opt.state_dict() if self.opt else None,
            "disc_opt": self.disc_opt.state_dict() if self.disc_opt else None,
            "disc": self.disc.state_dict(),
        }
        self.save(path, extra=extra)

    # -- phase 1a: VAE reconstruction warm-up --------------------------

    def run_vae_warmup(self, steps: int | None = None) -> list[LossReport]:
        cfg = self.stage1_cfg
        steps = cfg.vae_warmup_steps if steps is None else steps
        pool = torch.cat([self.data.hq, self.data.lq_up])
        opt = torch.optim.AdamW(self.vae.parameters(), lr=cfg.vae_lr)
        reports = []
        self.phase = "vae"
        for step in range(steps):
            rng = step_rng(cfg.seed, "vae", step)
            idx = rng.choice(pool.shape[0], size=cfg.batch_size,
                             replace=pool.shape[0] < cfg.batch_size)
            x = pool[torch.from_numpy(np.ascontiguousarray(idx))]
            mu, logvar = self.vae.encode_dist(x)
            noise = torch.from_numpy(
                rng.standard_normal(tuple(mu.shape)).astype(np.float32)
            )
            z = mu + torch.exp(0.5 * logvar) * noise
            recon = self.vae.decode(z)
            rec_loss = F.l1_loss(recon, x)
            kl = -0.5 * torch.mean(1 + logvar - mu.pow(2) - logvar.exp())
            loss = rec_loss + cfg.kl_weight * kl
            _check_finite(loss, "vae", step)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            report = LossReport(step, "vae", {"recon": float(rec_loss), "kl": float(kl)},
                                float(loss))
            reports.append(report)
            self._log(report)
        with torch.no_grad():
            calib = pool[: min(64, pool.shape[0])]
            self.vae.calibrate_latent_scale(calib)
        self.vae.requires_grad_(False)
        self.extractor = make_perceptual_extractor(self.vae)
        return reports

    # -- phase 1b: base U-Net warm-up ----------------------------------

    def run_base_warmup(self, steps: int | None = None) -> list[LossReport]:
        """Train the raw U-Net on the restoration objective.

        Uses uniform Gaussian latent noise and no modulation, independent
        of the ablation flags, so every variant shares one base model.
        """
        cfg = self.stage1_cfg
        steps = cfg.base_warmup_steps if steps is None else steps
        params = [p for n, p in self.unet.named_parameters()
                  if not n.startswith("modulator")]
        opt = torch.optim.AdamW(params, lr=cfg.base_lr)
        reports = []
        self.phase = "base"
        for step in range(steps):
            rng = step_rng(cfg.seed, "base", step)
            idx = self.data.pick(rng, cfg.batch_size)
            prepared = [self.data.prepared[i] for i in idx]
            hq = self.hq_tensors(idx)
            t_s = cfg.timestep_range.sample(rng)
            result = pipeline.restore_batch(
                self.vae, self.unet, self.schedule, prepared, t_s, rng,
                adaptive=False, use_lqfm=False,
            )
            with torch.no_grad():
                z_target = self.vae.encode(hq)
            content = F.l1_loss(result.images, hq)
            latent = F.mse_loss(result.latents, z_target)
            loss = content + latent
            _check_finite(loss, "base", step)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            report = LossReport(step, "base",
                                {"content": float(content), "latent": float(latent)},
                                float(loss))
            reports.append(report)
            self._log(report)
        return reports

    def hq_tensors(self, idx) -> torch.Tensor:
        return self.data.hq[torch.from_numpy(np.ascontiguousarray(idx))]

    # -- phase 1c: adapter training ------------------------------------

    def inject_stage1(self) -> None:
        self.vae.requires_grad_(False)
        self.unet.requires_grad_(False)
        ckpt.inject_stage1_adapters(self.vae, self.unet, self.lora_cfg,
                                    seed=self.stage1_cfg.seed)
        if self.unet.modulator is not None:
            self.unet.modulator.requires_grad_(True)
        self.stages.append("stage1")
        self._make_stage1_optimizers()
        self.phase = "stage1"
        self.step = 0

    def _make_stage1_optimizers(self) -> None:
        cfg = self.stage1_cfg
        self.opt = torch.optim.AdamW(
            trainable_params(self.vae) + trainable_params(self.unet), lr=cfg.lr
        )
        self.disc_opt = torch.optim.AdamW(self.disc.parameters(), lr=cfg.disc_lr)

    def stage1_step(self, step: int) -> LossReport:
        """One adapter-phase update: restoration losses plus GAN terms."""
        cfg = self.stage1_cfg
        rng = step_rng(cfg.seed, "stage1", step)
        idx = self.data.pick(rng, cfg.batch_size)
        prepared = [self.data.prepared[i] for i in idx]
        hq = self.hq_tensors(idx)
        t_s = cfg.timestep_range.sample(rng)
        result = pipeline.restore_batch(
            self.vae, self.unet, self.schedule, prepared, t_s, rng,
            adaptive=self.use_rgpa, use_lqfm=self.use_lqfm,
        )
        content = F.l1_loss(result.images, hq)
        perceptual = perceptual_distance(result.images, hq, self.extractor)
        gen_adv, disc_loss = adversarial_terms(hq, result.images, self.disc)
        total = (cfg.w_content * content + cfg.w_perceptual * perceptual
                 + cfg.w_adversarial * gen_adv)
        _check_finite(total, "stage1", step)
        self.opt.zero_grad(set_to_none=True)
        total.backward()
        self.opt.step()
        self.disc_opt.zero_grad(set_to_none=True)
        disc_loss.backward()
        self.disc_opt.step()
        report = LossReport(
            step, "stage1",
            {"content": float(content), "perceptual": float(perceptual),
             "adversarial": float(gen_adv), "disc": float(disc_loss),
             "timestep": t_s},
            float(total),
        )
        self._log(report)
        return report

    def run_stage1_steps(self, steps: int | None = None) -> list[LossReport]:
        cfg = self.stage1_cfg
        end = cfg.steps if steps is None else self.step + steps
        reports = []
        while self.step < end:
            reports.append(self.stage1_step(self.step))
            self.step += 1
        return reports

    def run_stage1(self) -> list[LossReport]:
        """All of stage 1: warm-ups, adapter injection, adapter training."""
        self.run_vae_warmup()
        self.run_base_warmup()
        self.inject_stage1()
        return self.run_stage1_steps()

    # -- stage 2 -------------------------------------------------------

    def start_stage2(self) -> None:
        """Freeze stage-1 results, snapshot the teacher, add new adapters."""
        if "stage1" not in self.stages:
            raise StateError("stage 2 requires a completed stage-1 model")
        if self.extractor is None:
            self.extractor = make_perceptual_extractor(self.vae)
        self.teacher = copy.deepcopy(self.unet)
        self.teacher.requires_grad_(False)
        self.teacher.eval()
        self.vae.requires_grad_(False)
        self.unet.requires_grad_(False)
        lora_freeze(self.vae, "stage1")
        lora_freeze(self.unet, "stage1")
        ckpt.inject_stage2_adapters(self.unet, self.lora_cfg, seed=self.stage2_cfg.seed)
        self.stages.append("stage2")
        self.opt = torch.optim.AdamW(
            list(adapter_parameters(self.unet, "stage2")), lr=self.stage2_cfg.lr
        )
        self.phase = "stage2"
        self.step = 0

    def stage2_step(self, step: int) -> LossReport:
        """One cross-attention adapter update with distillation and the
        positive-area attention loss."""
        cfg = self.stage2_cfg
        if self.teacher is None:
            raise StateError("start_stage2 must run before stage2_step")
        rng = step_rng(cfg.seed, "stage2", step)
        idx = self.data.pick(rng, cfg.batch_size)
        prepared = [self.data.prepared[i] for i in idx]
        hq = self.hq_tensors(idx)
        t_s = cfg.timestep_range.sample(rng)
        result = pipeline.restore_batch(
            self.vae, self.unet, self.schedule, prepared, t_s, rng,
            adaptive=self.use_rgpa, use_lqfm=self.use_lqfm,
        )
        content = F.l1_loss(result.images, hq)
        perceptual = perceptual_distance(result.images, hq, self.extractor)

        # score-matching surrogate: re-noise the student's output latent at a
        # fresh timestep and match the teacher's prediction on it
        t_d = cfg.timestep_range.sample(rng)
        eps_d = torch.from_numpy(
            rng.standard_normal(tuple(result.latents.shape)).astype(np.float32)
        )
        z_td = self.schedule.forward_diffuse(result.latents, eps_d, t_d)
        lq_up = torch.stack([pipeline.to_tensor(p.lq_up) for p in prepared])
        tokens = pipeline.pad_token_batch([p.token_ids for p in prepared])
        lqfm_input = lq_up if (self.use_lqfm and self.unet.modulator is not None) else None
        eps_student, _ = self.unet.predict(z_td, t_d, tokens, self.schedule,
                                           lqfm_input=lqfm_input)
        eps_teacher, _ = self.teacher.predict(z_td, t_d, tokens, self.schedule,
                                              lqfm_input=lqfm_input)
        distill = F.mse_loss(eps_student, eps_teacher)

        if self.use_tmg and cfg.eta_pos > 0:
            atts, masks = [], []
            for row, sample_index in enumerate(idx):
                entries = self.data.noun_entries[sample_index]
                per_sample_maps = [amap[row] for amap in result.attn_maps]
                _, sample_atts, sample_masks = guidance.sample_attention_stats(
                    per_sample_maps, entries, self.data.latent_hw
                )
                atts.extend(sample_atts)
                masks.extend(sample_masks)
            tmg_loss = guidance.positive_area_loss(atts, masks)
        else:
            tmg_loss = torch.zeros(())

        total = content + perceptual + cfg.vsd_weight * distill + cfg.eta_pos * tmg_loss
        _check_finite(total, "stage2", step)
        self.opt.zero_grad(set_to_none=True)
        total.backward()
        self.opt.step()
        report = LossReport(
            step, "stage2",
            {"content": float(content), "perceptual": float(perceptual),
             "distill": float(distill), "tmg": float(tmg_loss), "timestep": t_s},
            float(total),
        )
        self._log(report)
        return report

    def run_stage2_steps(self, steps: int | None = None) -> list[LossReport]:
        cfg = self.stage2_cfg
        end = cfg.steps if steps is None else self.step + steps
        reports = []
        while self.step < end:
            reports.append(self.stage2_step(self.step))
            self.step += 1
        return reports

    # -- restore from checkpoints --------------------------------------

    def adopt_checkpoint(self, loaded: ckpt.Checkpoint) -> None:
        """Replace models with a loaded pair (must match this trainer's configs)."""
        self.vae = loaded.vae
        self.unet = loaded.unet
        self.schedule = loaded.schedule
        self.stages = list(loaded.config["stages"])
        self.phase = loaded.phase
        self.step = loaded.step
        self.vae.requires_grad_(False)
        self.unet.requires_grad_(False)
        self.extractor = make_perceptual_extractor(self.vae)

    def resume_stage1(self, loaded: ckpt.Checkpoint) -> None:
        """Continue an interrupted adapter phase with its optimizer state."""
        if "stage1" not in loaded.config["stages"]:
            raise StateError("checkpoint has no stage-1 adapters to resume")
        self.adopt_checkpoint(loaded)
        for p in adapter_parameters(self.vae, "stage1"):
            p.requires_grad_(True)
        for p in adapter_parameters(self.unet, "stage1"):
            p.requires_grad_(True)
        if self.unet.modulator is not None:
            self.unet.modulator.requires_grad_(True)
        self._make_stage1_optimizers()
        extra = loaded.extra
        if extra.get("opt"):
            self.opt.load_state_dict(extra["opt"])
        if extra.get("disc_opt"):
            self.disc_opt.load_state_dict(extra["disc_opt"])
        if extra.get("disc"):
            self.disc.load_state_dict(extra["disc"])
        self.phase = "stage1"


# ---------------------------------------------------------------------------
# evaluation helpers


@torch.no_grad()
def evaluate_model(
    vae: VAE,
    unet: UNet,
    schedule: NoiseSchedule,
    samples: list[AnnotatedSample],
    t_s: int,
    seed: int = 0,
    *,
    adaptive: bool = True,
    use_lqfm: bool = True,
    noise_params: PiecewiseParams = PiecewiseParams(),
    patch: int = 16,
    batch_size: int = 16,
    with_attention: bool = False,
) -> list[metrics.MetricReport]:
    """Restore every sample and measure it against its reference."""
    factor = vae.config.downscale
    prepared = [pipeline.prepare_sample(s, factor, patch, noise_params) for s in samples]
    latent_hw = (samples[0].hq.shape[0] // factor, samples[0].hq.shape[1] // factor)
    rng = np.random.default_rng((seed, _PHASE_IDS["eval"]))
    reports = []
    for lo in range(0, len(samples), batch_size):
        chunk = prepared[lo : lo + batch_size]
        result = pipeline.restore_batch(
            vae, unet, schedule, chunk, t_s, rng, adaptive=adaptive, use_lqfm=use_lqfm
        )
        for row, p in enumerate(chunk):
            out = pipeline.to_image(result.images[row])
            sample = p.sample
            attention = None
            if with_attention:
                entries = guidance.prepare_noun_masks(
                    sample.prompt, sample.nouns, sample.masks, latent_hw
                )
                fractions = [
                    guidance.in_mask_fraction(
                        guidance.aggregate_attention(
                            [amap[row] for amap in result.attn_maps],
                            e.token_position, latent_hw,
                        ),
                        torch.from_numpy(e.mask),
                    )
                    for e in entries
                    if e.valid
                ]
                if fractions:
                    attention = float(np.mean(fractions))
            reports.append(
                metrics.MetricReport(
                    psnr_y=metrics.psnr_y(out, sample.hq),
                    ssim=metrics.ssim(out, sample.hq),
                    hf_energy=metrics.hf_energy(out),
                    in_mask_attention=attention,
                )
            )
    return reports


def baseline_reports(samples: list[AnnotatedSample], factor: int = 4) -> list[metrics.MetricReport]:
    """Metrics for plain bicubic upsampling of each LQ input."""
    out = []
    for s in samples:
        up = pipeline.upsample_image(s.lq, factor)
        out.append(
            metrics.MetricReport(
                psnr_y=metrics.psnr_y(up, s.hq),
                ssim=metrics.ssim(up, s.hq),
                hf_energy=metrics.hf_energy(up),
            )
        )
    return out


def mean_psnr(reports: list[metrics.MetricReport]) -> float:
    return float(np.mean([r.psnr_y for r in reports]))


def mean_ssim(reports: list[metrics.MetricReport]) -> float:
    return float(np.mean([r.ssim for r in reports]))


def mean_hf(reports: list[metrics.MetricReport]) -> float:
    return float(np.mean([r.hf_energy for r in reports]))
