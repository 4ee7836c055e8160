"""Abstract denoiser handle and latent-space state.

A backend wraps one pretrained (or toy) latent-diffusion denoiser: noise
prediction under optional cross-attention conditioning, an image codec into
latent space, and a stable catalog of the hookable layers on its upsampling
path. One handle serves one run at a time; parallel jobs take separate
handles.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedBackendError
from .hooks import StepHooks

RESIDUAL_UP = "residual-up"
SELF_ATTENTION = "self-attention"


@dataclass(frozen=True)
class LatentState:
    """A latent tensor pinned to a position in the sampling chain.

    ``t_index`` 0 is the clean end; ``t_index`` S is the fully inverted end.
    """

    z: np.ndarray
    t_index: int


@dataclass(frozen=True)
class LayerRef:
    """One hookable layer: execution position plus a per-kind index."""

    position: int   # execution order over the upsampling path
    kind: str       # RESIDUAL_UP or SELF_ATTENTION
    index: int      # 0-based within its kind


class DiffusionBackend:
    """Interface every denoiser adapter implements."""

    backend_id: str = "abstract"
    seed: int = 0
    resolution: int = 0
    context_dim: int = 0

    def predict_noise(self, z: np.ndarray, t: int, context: np.ndarray | None = None,
                      hooks: StepHooks | None = None) -> np.ndarray:
        """Predict the noise component of ``z`` at training timestep ``t``.

        ``context`` is a [n_ctx, context_dim] cross-attention conditioning
        matrix; None means the unconditional embedding. When ``hooks`` is
        given, the backend must route every residual-block output and every
        self-attention (Q, K, V) on its upsampling path through it.
        """
        raise NotImplementedError

    def encode_image(self, image: np.ndarray) -> LatentState:
        raise NotImplementedError

    def decode_latent(self, state: LatentState) -> np.ndarray:
        raise NotImplementedError

    def layer_catalog(self) -> tuple[LayerRef, ...]:
        raise NotImplementedError


def enumerate_layers(backend: DiffusionBackend) -> tuple[LayerRef, ...]:
    """The backend's ordered layer catalog, validated for hookability.

    Indices are 0-based per kind in execution order over the upsampling
    path; the mapping is printable via the CLI so deviating conventions in
    other codebases can be remapped in config rather than guessed at.
    """
    catalog = tuple(backend.layer_catalog())
    if not any(ref.kind == SELF_ATTENTION for ref in catalog):
        raise UnsupportedBackendError(
            f"backend {backend.backend_id!r} exposes no self-attention layers"
        )
    return catalog


def format_catalog(catalog: tuple[LayerRef, ...]) -> str:
    lines = [f"{'pos':>4}  {'kind':<16} {'index':>5}"]
    for ref in catalog:
        lines.append(f"{ref.position:>4}  {ref.kind:<16} {ref.index:>5}")
    return "\n".join(lines)
