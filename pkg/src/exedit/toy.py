"""Self-contained toy diffusion backend.

A miniature denoiser with the same structural anatomy the editing pipeline
relies on -- an upsampling path of residual blocks interleaved with
self-attention blocks (each followed by cross-attention over the edit
context) -- but with seeded random weights and an identity image codec, so
every pipeline property can be exercised deterministically in milliseconds.

Three noise predictors, selected by config:

* ``zero``   -- eps == 0 everywhere; trajectories are pure rescalings.
* ``linear`` -- eps = A @ vec(z) (+ a context coupling term), A fixed and
  seeded; the recursion has a closed, independently checkable form.
* ``tiny``   -- the full layer stack drives eps, so feature and Q/K
  injection genuinely changes the output.

The layer stack always executes when instrumentation is attached, whatever
the predictor, so recordings and taps are meaningful in every mode.
"""

from __future__ import annotations

import numpy as np

from .backend import (
    RESIDUAL_UP,
    SELF_ATTENTION,
    DiffusionBackend,
    LatentState,
    LayerRef,
)
from .errors import DimensionError
from .hooks import StepHooks
from .images import as_rgb_array

PREDICTORS = ("zero", "linear", "tiny")
_LINEAR_MAX_LATENT = 2048  # entries; the dense map is quadratic in this

_CROSS_ATTENTION = "cross-attention"


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class ToyDiffusionBackend(DiffusionBackend):
    def __init__(self, resolution: int = 64, channels: int = 3, token_grid: int = 8,
                 hidden_dim: int = 16, attention_dim: int = 8, context_dim: int = 16,
                 num_res_blocks: int = 6, num_self_attention: int = 12,
                 predictor: str = "tiny", seed: int = 0, epsilon_scale: float = 0.05):
        if predictor not in PREDICTORS:
            raise ValueError(f"predictor must be one of {PREDICTORS}, got {predictor!r}")
        if resolution % token_grid != 0:
            raise ValueError(
                f"resolution {resolution} must be a multiple of token_grid {token_grid}"
            )
        self.resolution = resolution
        self.channels = channels
        self.token_grid = token_grid
        self.hidden_dim = hidden_dim
        self.attention_dim = attention_dim
        self.context_dim = context_dim
        self.num_res_blocks = num_res_blocks
        self.num_self_attention = num_self_attention
        self.predictor = predictor
        self.seed = seed
        self.epsilon_scale = epsilon_scale
        self.backend_id = (
            f"toy:{predictor}:seed={seed}:res={resolution}x{channels}"
            f":grid={token_grid}:arch={num_res_blocks}r{num_self_attention}a"
            f":h={hidden_dim}:a={attention_dim}:ctx={context_dim}:eps={epsilon_scale}"
        )

        self._plan = self._build_plan()
        self._init_weights(np.random.default_rng(seed))

    # ------------------------------------------------------------------
    # Architecture
    # ------------------------------------------------------------------

    def _build_plan(self) -> list[tuple[str, int]]:
        """Interleave residual and attention blocks proportionally; every
        self-attention block is chased by a cross-attention block."""
        plan: list[tuple[str, int]] = []
        r = a = 0
        while r < self.num_res_blocks or a < self.num_self_attention:
            take_res = r < self.num_res_blocks and (
                a >= self.num_self_attention
                or r * self.num_self_attention <= a * self.num_res_blocks
            )
            if take_res:
                plan.append((RESIDUAL_UP, r))
                r += 1
            else:
                plan.append((SELF_ATTENTION, a))
                plan.append((_CROSS_ATTENTION, a))
                a += 1
        return plan

    def _init_weights(self, rng: np.random.Generator) -> None:
        # Drawn in a fixed order; reordering these lines changes every seed.
        h, d, c, ctx = self.hidden_dim, self.attention_dim, self.channels, self.context_dim
        n = self.token_grid**2

        def w(rows, cols):
            return rng.normal(scale=rows**-0.5, size=(rows, cols))

        self._w_in = w(c, h)
        self._pos = rng.normal(scale=0.1, size=(n, h))
        self._t_freqs = rng.normal(scale=0.02, size=h)
        self._res_w = [w(h, h) for _ in range(self.num_res_blocks)]
        self._sa_q = [w(h, d) for _ in range(self.num_self_attention)]
        self._sa_k = [w(h, d) for _ in range(self.num_self_attention)]
        self._sa_v = [w(h, d) for _ in range(self.num_self_attention)]
        self._sa_o = [w(d, h) for _ in range(self.num_self_attention)]
        self._ca_q = [w(h, d) for _ in range(self.num_self_attention)]
        self._ca_k = [w(ctx, d) for _ in range(self.num_self_attention)]
        self._ca_v = [w(ctx, d) for _ in range(self.num_self_attention)]
        self._ca_o = [w(d, h) for _ in range(self.num_self_attention)]
        self._w_out = w(h, c)

        if self.predictor == "linear":
            size = c * self.resolution**2
            if size > _LINEAR_MAX_LATENT:
                raise ValueError(
                    f"linear predictor supports latents up to {_LINEAR_MAX_LATENT} "
                    f"entries, got {size}; use a smaller resolution"
                )
            # spectral norm approximately epsilon_scale
            self._linear_map = rng.normal(size=(size, size)) * (
                self.epsilon_scale / (2.0 * size**0.5)
            )
            self._linear_ctx = rng.normal(scale=self.epsilon_scale, size=(size, ctx))

    # ------------------------------------------------------------------
    # DiffusionBackend interface
    # ------------------------------------------------------------------

    def layer_catalog(self) -> tuple[LayerRef, ...]:
        refs = []
        for kind, idx in self._plan:
            if kind in (RESIDUAL_UP, SELF_ATTENTION):
                refs.append(LayerRef(position=len(refs), kind=kind, index=idx))
        return tuple(refs)

    @property
    def null_context(self) -> np.ndarray:
        """The unconditional embedding: a single all-zero context token,
        which makes cross-attention a no-op."""
        return np.zeros((1, self.context_dim))

    def predict_noise(self, z: np.ndarray, t: int, context: np.ndarray | None = None,
                      hooks: StepHooks | None = None) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        expected = (self.channels, self.resolution, self.resolution)
        if z.shape != expected:
            raise DimensionError(f"latent shape {z.shape} != backend shape {expected}")
        if context is not None:
            context = np.asarray(context, dtype=np.float64)
            if context.ndim != 2 or context.shape[1] != self.context_dim:
                raise DimensionError(
                    f"context must be [n, {self.context_dim}], got {context.shape}"
                )

        x = None
        if self.predictor == "tiny" or hooks is not None:
            x = self._run_stack(z, t, context, hooks)

        if self.predictor == "zero":
            return np.zeros_like(z)
        if self.predictor == "linear":
            eps = self._linear_map @ z.ravel()
            if context is not None:
                eps = eps + self._linear_ctx @ context.mean(axis=0)
            return eps.reshape(z.shape)
        return self._readout(x)

    def encode_image(self, image: np.ndarray) -> LatentState:
        as_rgb_array(image)
        if self.channels != 3:
            raise DimensionError(
                f"identity codec needs a 3-channel backend, configured {self.channels}"
            )
        if image.shape[:2] != (self.resolution, self.resolution):
            raise DimensionError(
                f"image {image.shape[:2]} does not match configured resolution "
                f"{self.resolution}x{self.resolution}"
            )
        z = image.transpose(2, 0, 1).astype(np.float64) / 255.0
        return LatentState(z=z, t_index=0)

    def decode_latent(self, state: LatentState) -> np.ndarray:
        z = np.asarray(state.z, dtype=np.float64)
        expected = (self.channels, self.resolution, self.resolution)
        if z.shape != expected:
            raise DimensionError(f"latent shape {z.shape} != backend shape {expected}")
        pixels = np.rint(np.clip(z, 0.0, 1.0) * 255.0).astype(np.uint8)
        return pixels.transpose(1, 2, 0)

    # ------------------------------------------------------------------
    # The tiny network
    # ------------------------------------------------------------------

    def _pool_tokens(self, z: np.ndarray) -> np.ndarray:
        g = self.token_grid
        f = self.resolution // g
        pooled = z.reshape(self.channels, g, f, g, f).mean(axis=(2, 4))
        return pooled.transpose(1, 2, 0).reshape(g * g, self.channels)

    def _run_stack(self, z: np.ndarray, t: int, context: np.ndarray | None,
                   hooks: StepHooks | None) -> np.ndarray:
        ctx = context if context is not None else self.null_context
        x = self._pool_tokens(z) @ self._w_in
        x = x + np.sin(self._t_freqs * float(t))[None, :] + self._pos
        scale = 1.0 / np.sqrt(self.attention_dim)
        for kind, idx in self._plan:
            if kind == RESIDUAL_UP:
                x = x + 0.5 * np.tanh(x @ self._res_w[idx])
                if hooks is not None:
                    x = hooks.feature(idx, x)
            elif kind == SELF_ATTENTION:
                q = x @ self._sa_q[idx]
                k = x @ self._sa_k[idx]
                v = x @ self._sa_v[idx]
                if hooks is not None:
                    q, k = hooks.self_attention(idx, q, k, v)
                attn = _softmax(q @ k.T * scale)
                x = x + 0.5 * ((attn @ v) @ self._sa_o[idx])
            else:  # cross-attention over the edit context
                q = x @ self._ca_q[idx]
                k = ctx @ self._ca_k[idx]
                v = ctx @ self._ca_v[idx]
                attn = _softmax(q @ k.T * scale)
                x = x + 0.5 * ((attn @ v) @ self._ca_o[idx])
        return x

    def _readout(self, x: np.ndarray) -> np.ndarray:
        g = self.token_grid
        f = self.resolution // g
        tokens = np.tanh(x @ self._w_out) * self.epsilon_scale  # [n, C]
        grid = tokens.reshape(g, g, self.channels).transpose(2, 0, 1)
        return np.repeat(np.repeat(grid, f, axis=1), f, axis=2)
