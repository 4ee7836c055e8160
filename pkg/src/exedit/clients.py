"""External-model clients: VLM, encoders, feature networks, preference scorer.

Every heavyweight model is consumed through one of the small interfaces
below, so the pipeline itself stays free of model internals. Deterministic
local implementations (scripted VLM, hash-seeded encoders) are shipped
alongside the network-backed ones; they power the toy pipeline, the test
suite, and offline CLI runs.
"""

from __future__ import annotations

import base64
import hashlib
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ExternalModelError, VLMTransportError, VLMUnavailableError
from .images import as_rgb_array, png_bytes

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# VLM
# --------------------------------------------------------------------------

@dataclass
class VLMRequest:
    prompt: str
    images: list[bytes] = field(default_factory=list)  # PNG-encoded
    params: dict = field(default_factory=dict)


@dataclass
class VLMResponse:
    text: str
    model_id: str = ""


class VLMClient:
    """Multimodal text generator. Implementations should honor
    ``params={"temperature": 0}`` by decoding greedily so runs stay
    reproducible."""

    model_id: str = "vlm"

    def generate(self, request: VLMRequest) -> VLMResponse:
        raise NotImplementedError


@dataclass
class RetryPolicy:
    max_attempts: int = 3
    base_delay: float = 0.5
    sleep: Callable[[float], None] = time.sleep


def generate_with_retry(
    vlm: VLMClient, request: VLMRequest, policy: RetryPolicy | None = None
) -> VLMResponse:
    """Call the VLM, retrying transport failures with exponential backoff."""
    policy = policy or RetryPolicy()
    last: VLMTransportError | None = None
    for attempt in range(policy.max_attempts):
        try:
            return vlm.generate(request)
        except VLMTransportError as err:
            last = err
            log.warning("VLM attempt %d/%d failed: %s", attempt + 1, policy.max_attempts, err)
            if attempt + 1 < policy.max_attempts:
                policy.sleep(policy.base_delay * 2**attempt)
    raise VLMUnavailableError(
        f"VLM unreachable after {policy.max_attempts} attempts"
    ) from last


class ScriptedVLM(VLMClient):
    """Returns canned responses in call order; cycles when asked to.

    Used for offline runs and tests. Each pipeline task should get its own
    instance so call order stays aligned with the prompt order.
    """

    def __init__(self, responses: Sequence[str], cycle: bool = False, model_id: str = "scripted-vlm"):
        if not responses:
            raise ValueError("ScriptedVLM needs at least one response")
        self.responses = list(responses)
        self.cycle = cycle
        self.model_id = model_id
        self.calls: list[VLMRequest] = []

    def generate(self, request: VLMRequest) -> VLMResponse:
        self.calls.append(request)
        idx = len(self.calls) - 1
        if idx >= len(self.responses):
            if not self.cycle:
                raise VLMTransportError(
                    f"scripted VLM exhausted after {len(self.responses)} responses"
                )
            idx %= len(self.responses)
        return VLMResponse(text=self.responses[idx], model_id=self.model_id)


class HTTPVLM(VLMClient):
    """Minimal JSON-over-HTTP VLM client.

    Request body: ``{"model", "prompt", "images": [b64 PNG...], ...params}``;
    expected response body: ``{"text": ...}``.
    """

    def __init__(self, endpoint: str, model: str = "", timeout: float = 120.0, transport=None):
        import httpx

        self.endpoint = endpoint
        self.model_id = model or endpoint
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def generate(self, request: VLMRequest) -> VLMResponse:
        import httpx

        body = {
            "model": self.model_id,
            "prompt": request.prompt,
            "images": [base64.b64encode(b).decode("ascii") for b in request.images],
            "temperature": 0,
        }
        body.update(request.params)
        try:
            resp = self._client.post(self.endpoint, json=body)
            resp.raise_for_status()
            payload = resp.json()
        except httpx.HTTPError as err:
            raise VLMTransportError(f"VLM request failed: {err}") from err
        if "text" not in payload:
            raise VLMTransportError(f"VLM response missing 'text': {payload!r}")
        return VLMResponse(text=str(payload["text"]), model_id=self.model_id)


# --------------------------------------------------------------------------
# Encoders
# --------------------------------------------------------------------------

class ImageEncoderClient:
    """Image -> fixed-width embedding vector."""

    model_id: str = "image-encoder"

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class TextEncoderClient:
    """Text -> token matrix [n_tokens, context_dim], the conditioning format
    the denoiser's cross-attention consumes."""

    model_id: str = "text-encoder"
    context_dim: int = 0

    def encode_text(self, text: str) -> np.ndarray:
        raise NotImplementedError


class EmbeddingClient:
    """Joint image/text embedding space used by the similarity metrics."""

    model_id: str = "embedding"

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def embed_text(self, text: str) -> np.ndarray:
        raise NotImplementedError


def _hash_rng(*parts: bytes) -> np.random.Generator:
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return np.random.default_rng(int.from_bytes(h.digest()[:8], "big"))


class HashImageEncoder(ImageEncoderClient, EmbeddingClient):
    """Deterministic content-addressed embeddings: same pixels, same vector.

    A stand-in for a pretrained joint encoder. Embeddings are unit-norm
    Gaussian draws keyed by the SHA-256 of the input, so distinct inputs map
    to (almost surely) distinct directions while identical inputs collide
    exactly -- which is what the capture-delta and metric identities need.
    """

    def __init__(self, dim: int = 32, seed: int = 0, model_id: str = "hash-encoder-v1"):
        self.dim = dim
        self.seed = seed
        self.model_id = model_id

    def _draw(self, payload: bytes) -> np.ndarray:
        rng = _hash_rng(str(self.seed).encode(), payload)
        v = rng.normal(size=self.dim)
        return v / np.linalg.norm(v)

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        as_rgb_array(image)
        return self._draw(b"img" + image.tobytes())

    def embed_text(self, text: str) -> np.ndarray:
        return self._draw(b"txt" + text.encode("utf-8"))


class HashTextEncoder(TextEncoderClient):
    """Deterministic token-matrix encoder (default 77 tokens, CLIP-style)."""

    def __init__(self, dim: int = 16, tokens: int = 77, seed: int = 0, model_id: str = "hash-text-v1"):
        self.context_dim = dim
        self.tokens = tokens
        self.seed = seed
        self.model_id = model_id

    def encode_text(self, text: str) -> np.ndarray:
        rng = _hash_rng(str(self.seed).encode(), b"tok", text.encode("utf-8"))
        return rng.normal(size=(self.tokens, self.context_dim))


# --------------------------------------------------------------------------
# Metric feature extractors
# --------------------------------------------------------------------------

class FeatureNetClient:
    """Backbone for the perceptual distance: per-layer feature maps plus the
    published per-channel calibration weights."""

    model_id: str = "feature-net"

    def features(self, image: np.ndarray) -> list[np.ndarray]:
        """Per-layer feature maps, each [C, H, W]."""
        raise NotImplementedError

    def layer_weights(self) -> list[np.ndarray]:
        """Non-negative calibration weights, one [C] vector per layer."""
        raise NotImplementedError


class HashFeatureNet(FeatureNetClient):
    """Deterministic stand-in feature network.

    Ships ``reference_distance``, a naive loop-based scorer over its own
    features, playing the role of the calibrated scorer distributed with a
    real backbone. The harness's vectorized distance must agree with it.
    """

    def __init__(self, shapes=((8, 16, 16), (16, 8, 8), (32, 4, 4)), seed: int = 0,
                 model_id: str = "hash-featnet-v1"):
        self.shapes = tuple(tuple(s) for s in shapes)
        self.seed = seed
        self.model_id = model_id
        self._weights = [
            np.abs(_hash_rng(str(seed).encode(), b"w", str(i).encode()).normal(size=s[0]))
            for i, s in enumerate(self.shapes)
        ]

    def features(self, image: np.ndarray) -> list[np.ndarray]:
        as_rgb_array(image)
        out = []
        for i, shape in enumerate(self.shapes):
            rng = _hash_rng(str(self.seed).encode(), b"f", str(i).encode(), image.tobytes())
            out.append(rng.normal(size=shape))
        return out

    def layer_weights(self) -> list[np.ndarray]:
        return [w.copy() for w in self._weights]

    def reference_distance(self, a: np.ndarray, b: np.ndarray) -> float:
        """Scalar-loop recomputation of the perceptual distance on this net's
        features; intentionally independent of the vectorized implementation."""
        total = 0.0
        for fa, fb, w in zip(self.features(a), self.features(b), self.layer_weights()):
            c, h, wd = fa.shape
            layer_sum = 0.0
            for y in range(h):
                for x in range(wd):
                    na = sum(fa[k, y, x] ** 2 for k in range(c)) ** 0.5
                    nb = sum(fb[k, y, x] ** 2 for k in range(c)) ** 0.5
                    for k in range(c):
                        ua = fa[k, y, x] / (na + 1e-10)
                        ub = fb[k, y, x] / (nb + 1e-10)
                        layer_sum += w[k] * (ua - ub) ** 2
            total += layer_sum / (h * wd)
        return total


class InceptionFeatureClient:
    """Corpus-level feature extractor feeding the distribution distance."""

    model_id: str = "inception"

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class HashInceptionFeatures(InceptionFeatureClient):
    def __init__(self, dim: int = 64, seed: int = 0, model_id: str = "hash-inception-v1"):
        self.dim = dim
        self.seed = seed
        self.model_id = model_id

    def embed_image(self, image: np.ndarray) -> np.ndarray:
        as_rgb_array(image)
        rng = _hash_rng(str(self.seed).encode(), b"incep", image.tobytes())
        return rng.normal(size=self.dim)


# --------------------------------------------------------------------------
# Human-preference scorer
# --------------------------------------------------------------------------

class HPSClient:
    """External human-preference scorer; deterministic for fixed inputs."""

    model_id: str = "hps"

    def score(self, image: np.ndarray, prompt: str) -> float:
        raise NotImplementedError


class ConstantHPS(HPSClient):
    def __init__(self, value: float = 0.22, model_id: str = "hps-stub-v1"):
        self.value = value
        self.model_id = model_id

    def score(self, image: np.ndarray, prompt: str) -> float:
        as_rgb_array(image)
        return self.value


class UnavailableHPS(HPSClient):
    """Placeholder for a scorer that cannot be reached; always raises."""

    model_id = "hps-unavailable"

    def score(self, image: np.ndarray, prompt: str) -> float:
        raise ExternalModelError("preference scorer unavailable")


def image_request(prompt: str, *images: np.ndarray, params: dict | None = None) -> VLMRequest:
    """Build a VLM request from in-memory images (encoded to PNG bytes)."""
    return VLMRequest(
        prompt=prompt,
        images=[png_bytes(im) for im in images],
        params=dict(params or {}),
    )
