"""The seven evaluation metrics.

Pixel-space kernels (SSIM) and feature-space kernels (perceptual distance,
distribution distance, embedding similarities) are implemented here against
small client interfaces; the heavyweight feature extractors stay external.
Similarity metrics that divide by an edit direction return ``None`` when
that direction is degenerate (zero norm) instead of inventing a score.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .clients import EmbeddingClient, FeatureNetClient, HPSClient
from .errors import DimensionError, ExternalModelError, NumericError
from .images import to_grayscale

log = logging.getLogger(__name__)

DEGENERATE_NORM = 1e-12


# --------------------------------------------------------------------------
# SSIM
# --------------------------------------------------------------------------

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_DYNAMIC_RANGE = 255.0


def _ssim_kernel() -> np.ndarray:
    radius = (SSIM_WINDOW - 1) // 2
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * SSIM_SIGMA**2))
    return k / k.sum()


def _windowed_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable Gaussian window average, cropped to windows fully inside
    the image (boundary mode therefore irrelevant)."""
    pad = (kernel.size - 1) // 2
    out = correlate1d(img, kernel, axis=0, mode="nearest")
    out = correlate1d(out, kernel, axis=1, mode="nearest")
    return out[pad:-pad, pad:-pad]


def _as_gray(image: np.ndarray) -> np.ndarray:
    if image.ndim == 3:
        return to_grayscale(image)
    if image.ndim == 2:
        return np.asarray(image, dtype=np.float64)
    raise DimensionError(f"expected an image, got shape {image.shape}")


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity over an 11x11 Gaussian window (sigma 1.5).

    Inputs are converted to Rec. 601 luma internally; the dynamic range is
    pinned at 255. The stabilizers C1=(0.01 L)^2 and C2=(0.03 L)^2 keep the
    score finite even for constant inputs.
    """
    ga, gb = _as_gray(a), _as_gray(b)
    if ga.shape != gb.shape:
        raise DimensionError(f"shape mismatch: {ga.shape} vs {gb.shape}")
    if min(ga.shape) < SSIM_WINDOW:
        raise DimensionError(
            f"image {ga.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )
    kernel = _ssim_kernel()
    c1 = (SSIM_K1 * SSIM_DYNAMIC_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_DYNAMIC_RANGE) ** 2

    mu_a = _windowed_mean(ga, kernel)
    mu_b = _windowed_mean(gb, kernel)
    mu_aa = _windowed_mean(ga * ga, kernel)
    mu_bb = _windowed_mean(gb * gb, kernel)
    mu_ab = _windowed_mean(ga * gb, kernel)

    var_a = mu_aa - mu_a * mu_a
    var_b = mu_bb - mu_b * mu_b
    cov = mu_ab - mu_a * mu_b

    numerator = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    denominator = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(numerator / denominator))


# --------------------------------------------------------------------------
# Perceptual distance (LPIPS-style, feature network external)
# --------------------------------------------------------------------------

def lpips(a: np.ndarray, b: np.ndarray, net: FeatureNetClient) -> float:
    """Calibrated deep-feature distance.

    Per layer: unit-normalize features across channels at each spatial
    location, take the calibration-weighted squared difference, average
    spatially; the layer terms sum. Weights come with the client.
    """
    fa = net.features(a)
    fb = net.features(b)
    weights = net.layer_weights()
    if not (len(fa) == len(fb) == len(weights)):
        raise ExternalModelError("feature network returned inconsistent layer counts")
    total = 0.0
    for f1, f2, w in zip(fa, fb, weights):
        if f1.shape != f2.shape:
            raise DimensionError(f"feature shapes differ: {f1.shape} vs {f2.shape}")
        if w.shape != (f1.shape[0],):
            raise ExternalModelError(
                f"calibration weights {w.shape} do not match {f1.shape[0]} channels"
            )
        u1 = f1 / (np.sqrt((f1**2).sum(axis=0, keepdims=True)) + 1e-10)
        u2 = f2 / (np.sqrt((f2**2).sum(axis=0, keepdims=True)) + 1e-10)
        diff = (u1 - u2) ** 2
        total += float((diff * w[:, None, None]).sum(axis=0).mean())
    return total


# --------------------------------------------------------------------------
# Distribution distance (Frechet)
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureSet:
    """Extractor embeddings for one image corpus, [n, d]."""

    features: np.ndarray
    extractor_id: str = ""

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        object.__setattr__(self, "features", f)
        if f.ndim != 2 or f.shape[0] < 2:
            raise DimensionError(
                f"feature set must be [n >= 2, d], got {f.shape}"
            )
        if not np.all(np.isfinite(f)):
            raise NumericError("feature set contains non-finite values")


def fid(real: FeatureSet, gen: FeatureSet) -> float:
    """Frechet distance between Gaussian fits of two feature sets.

    ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^{1/2}), with the square-root
    trace taken from the eigenvalues of S1 @ S2 (covariances symmetrized
    first, negative eigenvalues clamped to zero).
    """
    f1, f2 = real.features, gen.features
    if f1.shape[1] != f2.shape[1]:
        raise DimensionError(
            f"feature widths differ: {f1.shape[1]} vs {f2.shape[1]}"
        )
    mu1 = f1.mean(axis=0)
    mu2 = f2.mean(axis=0)
    s1 = np.atleast_2d(np.cov(f1, rowvar=False))
    s2 = np.atleast_2d(np.cov(f2, rowvar=False))
    s1 = (s1 + s1.T) / 2.0
    s2 = (s2 + s2.T) / 2.0
    eigenvalues = np.linalg.eigvals(s1 @ s2)
    eigenvalues = np.clip(eigenvalues.real, 0.0, None)
    trace_sqrt = float(np.sqrt(eigenvalues).sum())
    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(s1) + np.trace(s2) - 2.0 * trace_sqrt)
    return max(value, 0.0)


# --------------------------------------------------------------------------
# Embedding-space similarities
# --------------------------------------------------------------------------

def _cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu < DEGENERATE_NORM or nv < DEGENERATE_NORM:
        raise ExternalModelError("degenerate (zero-norm) embedding")
    return float(np.dot(u, v) / (nu * nv))


def clip_score(image: np.ndarray, caption: str, enc: EmbeddingClient) -> float:
    """100 * max(0, cos) between image and caption embeddings.

    The 100x convention matches reported-score scales; the cited metric's
    2.5x weighting variant would just rescale every method identically.
    """
    if not caption.strip():
        raise ValueError("caption must be non-empty")
    cos = _cosine(enc.embed_image(image), enc.embed_text(caption))
    return 100.0 * max(0.0, cos)


def directional_similarity(y: np.ndarray, y_hat: np.ndarray, caption_src: str,
                           caption_tgt: str, enc: EmbeddingClient) -> float | None:
    """Cosine between the image-embedding change and the text-embedding
    change; ``None`` when either direction is degenerate."""
    if not caption_src.strip() or not caption_tgt.strip():
        raise ValueError("both captions must be non-empty")
    d_img = np.asarray(enc.embed_image(y_hat)) - np.asarray(enc.embed_image(y))
    d_txt = np.asarray(enc.embed_text(caption_tgt)) - np.asarray(enc.embed_text(caption_src))
    if np.linalg.norm(d_img) < DEGENERATE_NORM or np.linalg.norm(d_txt) < DEGENERATE_NORM:
        log.debug("directional similarity degenerate: zero-norm direction")
        return None
    return _cosine(d_img, d_txt)


def s_visual(x: np.ndarray, x_edit: np.ndarray, y: np.ndarray, y_hat: np.ndarray,
             enc: EmbeddingClient) -> float | None:
    """Cosine between the exemplar's embedding delta and the produced edit's
    embedding delta; ``None`` when either delta is degenerate."""
    d_exemplar = np.asarray(enc.embed_image(x_edit)) - np.asarray(enc.embed_image(x))
    d_edit = np.asarray(enc.embed_image(y_hat)) - np.asarray(enc.embed_image(y))
    if (np.linalg.norm(d_exemplar) < DEGENERATE_NORM
            or np.linalg.norm(d_edit) < DEGENERATE_NORM):
        log.debug("visual similarity degenerate: zero-norm delta")
        return None
    return _cosine(d_exemplar, d_edit)


# --------------------------------------------------------------------------
# Human preference
# --------------------------------------------------------------------------

def hps(image: np.ndarray, prompt: str, scorer: HPSClient) -> float:
    """Pass-through of the external preference scorer."""
    value = float(scorer.score(image, prompt))
    if not np.isfinite(value):
        raise ExternalModelError(f"preference scorer returned {value}")
    return value
