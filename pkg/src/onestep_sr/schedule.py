"""Closed-form one-step diffusion algebra.

A schedule holds the cumulative signal coefficients alpha_bar[t] for
t in [0, T] and derives the two time-dependent scalars the restoration
pipeline needs: the noise coefficient w_t that scales the residual in the
one-step recovery, and the modulation coefficient lambda_t = 1/w_t that
makes feature modulation time-aware.

Forward noising and one-step recovery are pure element-wise affine maps,
so they work on numpy arrays and torch tensors alike.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, RangeError, ShapeError

DEFAULT_TIMESTEPS = 1000
DEFAULT_BETA_START = 0.00085
DEFAULT_BETA_END = 0.012
DEFAULT_LAMBDA_MAX = 50.0

_FILE_HEADER = "# onestep-sr noise schedule v1"


def scaled_linear_alpha_bar(
    num_timesteps: int = DEFAULT_TIMESTEPS,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> np.ndarray:
    """Cumulative alpha_bar for a scaled-linear beta schedule.

    Betas are spaced linearly in sqrt space, the convention used by
    latent-diffusion models.  Index 0 is the clean state (alpha_bar = 1).
    """
    if num_timesteps < 1:
        raise ConfigError(f"num_timesteps must be >= 1, got {num_timesteps}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    betas = np.linspace(beta_start**0.5, beta_end**0.5, num_timesteps, dtype=np.float64) ** 2
    alpha_bar = np.empty(num_timesteps + 1, dtype=np.float64)
    alpha_bar[0] = 1.0
    np.cumprod(1.0 - betas, out=alpha_bar[1:])
    return alpha_bar


@dataclass(frozen=True)
class NoiseSchedule:
    """Discrete noise schedule with its derived one-step coefficients.

    alpha_bar must satisfy alpha_bar[0] == 1, stay in (0, 1], and be
    strictly decreasing for t >= 1.  ``beta_start``/``beta_end`` are kept
    only so the schedule can be rebuilt from a serialized file; schedules
    constructed from a raw alpha_bar array cannot be saved.
    """

    alpha_bar: np.ndarray
    lambda_max: float = DEFAULT_LAMBDA_MAX
    beta_start: float | None = None
    beta_end: float | None = None

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        object.__setattr__(self, "alpha_bar", ab)
        if ab.ndim != 1 or ab.size < 2:
            raise ConfigError("alpha_bar must be a 1-D array of length T+1 with T >= 1")
        if ab[0] != 1.0:
            raise ConfigError(f"alpha_bar[0] must be exactly 1, got {ab[0]}")
        if np.any(ab <= 0.0) or np.any(ab > 1.0):
            raise ConfigError("alpha_bar values must lie in (0, 1]")
        if np.any(np.diff(ab[1:]) >= 0.0):
            raise ConfigError("alpha_bar must be strictly decreasing for t >= 1")
        if self.lambda_max <= 0.0:
            raise ConfigError(f"lambda_max must be positive, got {self.lambda_max}")

    @classmethod
    def scaled_linear(
        cls,
        num_timesteps: int = DEFAULT_TIMESTEPS,
        beta_start: float = DEFAULT_BETA_START,
        beta_end: float = DEFAULT_BETA_END,
        lambda_max: float = DEFAULT_LAMBDA_MAX,
    ) -> "NoiseSchedule":
        return cls(
            alpha_bar=scaled_linear_alpha_bar(num_timesteps, beta_start, beta_end),
            lambda_max=lambda_max,
            beta_start=beta_start,
            beta_end=beta_end,
        )

    @property
    def num_timesteps(self) -> int:
        return self.alpha_bar.size - 1

    def _check_t(self, t: int, minimum: int = 0) -> int:
        t = int(t)
        if not minimum <= t <= self.num_timesteps:
            raise RangeError(f"timestep {t} outside [{minimum}, {self.num_timesteps}]")
        return t

    def noise_coeff(self, t: int) -> float:
        """w_t = sqrt(1 - alpha_bar_t) / sqrt(alpha_bar_t); zero at t = 0."""
        t = self._check_t(t)
        ab = self.alpha_bar[t]
        return math.sqrt(1.0 - ab) / math.sqrt(ab)

    def mod_coeff(self, t: int) -> float:
        """lambda_t = 1 / w_t, clamped to lambda_max.  Diverges at t = 0."""
        t = self._check_t(t, minimum=1)
        return min(1.0 / self.noise_coeff(t), self.lambda_max)

    def forward_diffuse(self, z, eps, t: int):
        """Noisy latent sqrt(ab_t) * z + sqrt(1 - ab_t) * eps."""
        t = self._check_t(t)
        if tuple(z.shape) != tuple(eps.shape):
            raise ShapeError(f"latent shape {tuple(z.shape)} != noise shape {tuple(eps.shape)}")
        ab = self.alpha_bar[t]
        return math.sqrt(ab) * z + math.sqrt(1.0 - ab) * eps

    def reverse_recover(self, z_t, eps_pred, t: int):
        """One-step recovery (z_t - sqrt(1 - ab_t) * eps_pred) / sqrt(ab_t).

        At t = 0 the latent is already clean and is returned unchanged.
        """
        t = self._check_t(t)
        if tuple(z_t.shape) != tuple(eps_pred.shape):
            raise ShapeError(
                f"latent shape {tuple(z_t.shape)} != prediction shape {tuple(eps_pred.shape)}"
            )
        if t == 0:
            return z_t
        ab = self.alpha_bar[t]
        return (z_t - math.sqrt(1.0 - ab) * eps_pred) / math.sqrt(ab)

    def save(self, path) -> None:
        """Write the schedule as a small key=value text file."""
        if self.beta_start is None or self.beta_end is None:
            raise ConfigError("only scaled-linear schedules with beta endpoints can be saved")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    def to_text(self) -> str:
        if self.beta_start is None or self.beta_end is None:
            raise ConfigError("only scaled-linear schedules with beta endpoints can be saved")
        lines = [
            _FILE_HEADER,
            f"T={self.num_timesteps}",
            f"beta_start={self.beta_start!r}",
            f"beta_end={self.beta_end!r}",
            f"lambda_max={self.lambda_max!r}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "NoiseSchedule":
        fields = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"malformed schedule line: {line!r}")
            key, value = line.split("=", 1)
            fields[key.strip()] = value.strip()
        try:
            return cls.scaled_linear(
                num_timesteps=int(fields["T"]),
                beta_start=float(fields["beta_start"]),
                beta_end=float(fields["beta_end"]),
                lambda_max=float(fields["lambda_max"]),
            )
        except KeyError as exc:
            raise ConfigError(f"schedule file missing field {exc}") from exc

    @classmethod
    def load(cls, path) -> "NoiseSchedule":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_text(fh.read())


@dataclass(frozen=True)
class TimestepRange:
    """Inclusive range the training loop samples timesteps from."""

    t_min: int = 20
    t_max: int = 400

    def __post_init__(self):
        if not 1 <= self.t_min <= self.t_max:
            raise ConfigError(f"need 1 <= t_min <= t_max, got [{self.t_min}, {self.t_max}]")

    def validate_against(self, schedule: NoiseSchedule) -> None:
        if self.t_max > schedule.num_timesteps:
            raise ConfigError(
                f"t_max {self.t_max} exceeds schedule length {schedule.num_timesteps}"
            )

    def sample(self, rng: np.random.Generator) -> int:
        """Uniform integer timestep in [t_min, t_max]."""
        return int(rng.integers(self.t_min, self.t_max + 1))


def sample_timestep(trange: TimestepRange, rng: np.random.Generator) -> int:
    return trange.sample(rng)
