"""Deterministic DDIM inversion and sampling (eta = 0).

Both directions share one transition rule between adjacent chain states at
signal levels a (current) and b (target):

    x0_hat = (z - sqrt(1 - a) * eps) / sqrt(a)
    z'     = sqrt(b) * x0_hat + sqrt(1 - b) * eps

with eps predicted at the *current* state. Inversion walks the chain up
(clean -> noise); sampling mirrors it back down. With eps identically zero
the two passes are pure rescalings and invert each other.
"""

from __future__ import annotations

import hashlib
import logging

import numpy as np

from .backend import DiffusionBackend, LatentState
from .errors import NumericDivergenceError
from .hooks import HookRuntime, InjectionRecord
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)

DEFAULT_MAGNITUDE_CEILING = 1e6


def _check_latent(z: np.ndarray, step: int, t: int, ceiling: float) -> None:
    if not np.all(np.isfinite(z)):
        raise NumericDivergenceError(f"non-finite latent at step {step} (t={t})")
    peak = float(np.max(np.abs(z)))
    if peak > ceiling:
        raise NumericDivergenceError(
            f"latent magnitude {peak:.3e} exceeded ceiling {ceiling:.1e} "
            f"at step {step} (t={t})"
        )


def _transition(z: np.ndarray, eps: np.ndarray, a: float, b: float) -> np.ndarray:
    x0_hat = (z - np.sqrt(1.0 - a) * eps) / np.sqrt(a)
    return np.sqrt(b) * x0_hat + np.sqrt(1.0 - b) * eps


def ddim_invert(z0: LatentState, schedule: NoiseSchedule,
                context: np.ndarray | None, backend: DiffusionBackend,
                magnitude_ceiling: float = DEFAULT_MAGNITUDE_CEILING,
                ) -> tuple[LatentState, list[LatentState]]:
    """Walk a clean latent up the chain to the fully noised state.

    Returns the final state and the full trajectory of S+1 states (input
    included). Divergence checks run every step and fail loudly with the
    offending step named.
    """
    if z0.t_index != 0:
        raise ValueError(f"inversion starts from t_index 0, got {z0.t_index}")
    levels = schedule.chain_alphas
    chain_t = schedule.chain_timesteps
    z = np.asarray(z0.z, dtype=np.float64)
    _check_latent(z, 0, chain_t[0], magnitude_ceiling)
    trajectory = [LatentState(z.copy(), 0)]
    for i in range(schedule.num_steps):
        eps = backend.predict_noise(z, chain_t[i], context)
        z = _transition(z, eps, levels[i], levels[i + 1])
        _check_latent(z, i + 1, chain_t[i + 1], magnitude_ceiling)
        trajectory.append(LatentState(z.copy(), i + 1))
    return trajectory[-1], trajectory


def ddim_sample(zT: LatentState, schedule: NoiseSchedule,
                context: np.ndarray | None, backend: DiffusionBackend,
                hooks: HookRuntime | None = None,
                guidance_scale: float = 1.0,
                magnitude_ceiling: float = DEFAULT_MAGNITUDE_CEILING,
                ) -> tuple[LatentState, InjectionRecord | None]:
    """Deterministic reverse pass from the fully noised state to a clean one.

    ``step`` counts sampling steps from the start (highest noise first);
    that is the index space hooks and injection records live in. With
    ``guidance_scale`` != 1 the conditional and unconditional predictions
    are blended classifier-free-guidance style.
    """
    S = schedule.num_steps
    if zT.t_index != S:
        raise ValueError(f"sampling starts from t_index {S}, got {zT.t_index}")
    if hooks is not None and hooks.num_steps != S:
        raise ValueError(
            f"hook runtime sized for {hooks.num_steps} steps, schedule has {S}"
        )
    levels = schedule.chain_alphas
    chain_t = schedule.chain_timesteps
    z = np.asarray(zT.z, dtype=np.float64)
    _check_latent(z, 0, chain_t[S], magnitude_ceiling)
    guided = guidance_scale != 1.0 and context is not None
    for step in range(S):
        i = S - step  # chain position of the current state
        t = chain_t[i]
        step_hooks = hooks.step_view(step) if hooks is not None else None
        if guided:
            eps_uncond = backend.predict_noise(z, t, None, hooks=step_hooks)
            eps_cond = backend.predict_noise(z, t, context, hooks=step_hooks)
            eps = eps_uncond + guidance_scale * (eps_cond - eps_uncond)
        else:
            eps = backend.predict_noise(z, t, context, hooks=step_hooks)
        z = _transition(z, eps, levels[i], levels[i - 1])
        _check_latent(z, step + 1, chain_t[i - 1], magnitude_ceiling)
    record = hooks.finalize() if hooks is not None and hooks.mode == "record" else None
    return LatentState(z, 0), record


def trajectory_digest(trajectory: list[LatentState],
                      schedule: NoiseSchedule) -> list[dict]:
    """Debug-friendly view of a trajectory: step index, timestep, checksum."""
    chain_t = schedule.chain_timesteps
    out = []
    for state in trajectory:
        checksum = hashlib.sha256(
            np.ascontiguousarray(state.z).tobytes()
        ).hexdigest()[:16]
        out.append({
            "step": state.t_index,
            "t": chain_t[state.t_index],
            "checksum": checksum,
        })
    return out
