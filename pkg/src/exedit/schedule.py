"""Noise schedules for deterministic inversion and sampling.

A schedule is the cumulative signal-retention curve of the diffusion process
(``alphas_bar``) plus the ascending subsequence of timesteps visited by the
sampler. The clean latent is anchored at timestep 0; a run with S sampling
steps therefore traverses S+1 states.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import ScheduleError


@dataclass(frozen=True)
class NoiseSchedule:
    alphas_bar: np.ndarray           # [T], strictly decreasing, in (0, 1]
    timesteps: tuple[int, ...]       # ascending sampling subsequence, length S

    def __post_init__(self):
        a = np.asarray(self.alphas_bar, dtype=np.float64)
        object.__setattr__(self, "alphas_bar", a)
        object.__setattr__(self, "timesteps", tuple(int(t) for t in self.timesteps))
        if a.ndim != 1 or a.size < 1:
            raise ScheduleError("alphas_bar must be a non-empty 1-D array")
        if not np.all(np.isfinite(a)):
            raise ScheduleError("alphas_bar contains non-finite values")
        if np.any(a <= 0.0) or np.any(a > 1.0):
            raise ScheduleError("alphas_bar values must lie in (0, 1]")
        if a.size > 1 and not np.all(np.diff(a) < 0.0):
            raise ScheduleError("alphas_bar must be strictly decreasing")
        ts = self.timesteps
        if not ts:
            raise ScheduleError("timestep subsequence is empty")
        if any(t < 0 or t >= a.size for t in ts):
            raise ScheduleError(f"timesteps must lie in [0, {a.size - 1}]")
        if any(t1 >= t2 for t1, t2 in zip(ts, ts[1:])):
            raise ScheduleError("timestep subsequence must be strictly ascending")

    @property
    def num_train_steps(self) -> int:
        return int(self.alphas_bar.size)

    @property
    def num_steps(self) -> int:
        """S, the number of sampling steps."""
        return len(self.timesteps)

    @property
    def chain_timesteps(self) -> tuple[int, ...]:
        """Timesteps of the S+1 trajectory states, clean anchor first."""
        return (0,) + self.timesteps

    @property
    def chain_alphas(self) -> np.ndarray:
        """alphas_bar evaluated along the chain, index-aligned with t_index."""
        return self.alphas_bar[np.array(self.chain_timesteps)]

    def digest(self) -> str:
        """Content hash used to detect schedule mismatches between runs."""
        h = hashlib.sha256()
        h.update(self.alphas_bar.tobytes())
        h.update(np.array(self.timesteps, dtype=np.int64).tobytes())
        return h.hexdigest()

    # ------------------------------------------------------------------
    # Constructors
    # ------------------------------------------------------------------

    @classmethod
    def from_alphas(cls, alphas_bar: np.ndarray, num_steps: int) -> "NoiseSchedule":
        """Evenly spaced subsequence ending at the last training timestep."""
        t = np.asarray(alphas_bar).size
        if num_steps < 1 or num_steps > t:
            raise ScheduleError(f"num_steps must be in [1, {t}]")
        steps = tuple(((i + 1) * t) // num_steps - 1 for i in range(num_steps))
        return cls(alphas_bar=alphas_bar, timesteps=steps)

    @classmethod
    def scaled_linear(cls, num_train_steps: int = 1000, num_steps: int = 50,
                      beta_start: float = 0.00085, beta_end: float = 0.012) -> "NoiseSchedule":
        """The common latent-diffusion schedule (sqrt-space linear betas)."""
        betas = np.linspace(beta_start**0.5, beta_end**0.5, num_train_steps) ** 2
        alphas_bar = np.cumprod(1.0 - betas)
        return cls.from_alphas(alphas_bar, num_steps)

    @classmethod
    def dyadic(cls, num_steps: int) -> "NoiseSchedule":
        """Geometric schedule whose per-step scale factors are exact powers
        of two, so pure rescaling trajectories round-trip bit-exactly."""
        alphas_bar = 4.0 ** -np.arange(num_steps + 1, dtype=np.float64)
        return cls(alphas_bar=alphas_bar, timesteps=tuple(range(1, num_steps + 1)))
