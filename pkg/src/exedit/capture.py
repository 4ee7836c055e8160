"""Capture an edit from an exemplar pair in text space and embedding space.

Given a before/after pair ``(x, x_edit)`` and a test image ``y``, this module
produces the conditioning bundle for the editing run:

* ``g_text``    -- a free-form VLM description of the edit,
* ``g_caption`` -- a word-capped VLM description of the desired edited output,
* the edit embedding -- the pooled image-embedding delta between ``x_edit``
  and ``x``, stacked on top of the encoded ``g_caption`` tokens.
"""

from __future__ import annotations

import logging
import string
from contextlib import contextmanager
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .clients import (
    ImageEncoderClient,
    RetryPolicy,
    TextEncoderClient,
    VLMClient,
    generate_with_retry,
    image_request,
)
from .dataset import ExemplarTask
from .errors import CaptureError, DimensionError, NumericError, StageError
from .images import as_rgb_array

log = logging.getLogger(__name__)

GUTTER_WIDTH = 8  # px of white between the two exemplar panels


@dataclass(frozen=True)
class EditText:
    """Text-space half of a captured edit."""

    g_text: str
    g_caption: str
    prompt_version: str


@dataclass(frozen=True)
class EditEmbedding:
    """Embedding-space conditioning: delta tokens stacked over caption tokens."""

    delta_tokens: np.ndarray  # [k, d_ctx]
    text_tokens: np.ndarray   # [n_text, d_ctx]
    combined: np.ndarray      # [k + n_text, d_ctx]

    @property
    def k(self) -> int:
        return self.delta_tokens.shape[0]

    def delta_block(self) -> np.ndarray:
        return self.combined[: self.k]

    def text_block(self) -> np.ndarray:
        return self.combined[self.k:]


@dataclass(frozen=True)
class PromptTemplates:
    """The two instruction templates driving the VLM, pinned by version.

    ``p1`` asks for a description of the edit shown in the exemplar grid;
    ``p2`` asks for a short caption of the edited target image and must
    contain a ``{g_text}`` slot. Both may use ``{max_words}``.
    """

    p1: str
    p2: str
    max_caption_words: int = 20
    version: str = "v1"

    def __post_init__(self):
        if self.max_caption_words < 1:
            raise ValueError("max_caption_words must be >= 1")
        _check_slots("p1", self.p1, required=set(), allowed={"max_words"})
        _check_slots("p2", self.p2, required={"g_text"}, allowed={"g_text", "max_words"})

    @classmethod
    def load_default(cls, max_caption_words: int = 20) -> "PromptTemplates":
        pkg = resources.files("exedit.templates")
        return cls(
            p1=(pkg / "edit_description_v1.txt").read_text(encoding="utf-8"),
            p2=(pkg / "target_caption_v1.txt").read_text(encoding="utf-8"),
            max_caption_words=max_caption_words,
            version="v1",
        )

    @classmethod
    def from_files(cls, p1_path: str | Path, p2_path: str | Path,
                   version: str, max_caption_words: int = 20) -> "PromptTemplates":
        return cls(
            p1=Path(p1_path).read_text(encoding="utf-8"),
            p2=Path(p2_path).read_text(encoding="utf-8"),
            max_caption_words=max_caption_words,
            version=version,
        )


def _check_slots(name: str, template: str, required: set, allowed: set) -> None:
    fields = {f for _, f, _, _ in string.Formatter().parse(template) if f}
    unknown = fields - allowed
    if unknown:
        raise ValueError(f"template {name} uses unknown placeholders {sorted(unknown)}")
    missing = required - fields
    if missing:
        raise ValueError(f"template {name} is missing placeholders {sorted(missing)}")


def compose_exemplar_grid(x: np.ndarray, x_edit: np.ndarray) -> np.ndarray:
    """Place the exemplar pair side by side (original left, edited right)
    with an 8-px white gutter. Both images must share a resolution."""
    as_rgb_array(x)
    as_rgb_array(x_edit)
    if x.shape != x_edit.shape:
        raise DimensionError(
            f"exemplar images differ in shape: {x.shape} vs {x_edit.shape}"
        )
    h, w, _ = x.shape
    grid = np.full((h, 2 * w + GUTTER_WIDTH, 3), 255, dtype=np.uint8)
    grid[:, :w] = x
    grid[:, w + GUTTER_WIDTH:] = x_edit
    return grid


def describe_edit(grid: np.ndarray, templates: PromptTemplates, vlm: VLMClient,
                  retry: RetryPolicy | None = None) -> str:
    """Ask the VLM for a comprehensive description of the edit in the grid."""
    prompt = templates.p1.format(max_words=templates.max_caption_words)
    response = generate_with_retry(
        vlm, image_request(prompt, grid, params={"temperature": 0}), retry
    )
    text = response.text.strip()
    if not text:
        raise CaptureError("VLM returned an empty edit description")
    log.info("edit description (prompt %s, model %s): %s",
             templates.version, response.model_id, text)
    return text


def caption_edited_target(y: np.ndarray, g_text: str, templates: PromptTemplates,
                          vlm: VLMClient, retry: RetryPolicy | None = None) -> str:
    """Ask the VLM to caption the edited version of ``y``; the caption is
    capped at ``templates.max_caption_words`` whitespace-delimited words."""
    if not g_text.strip():
        raise ValueError("g_text must be non-empty")
    prompt = templates.p2.format(g_text=g_text, max_words=templates.max_caption_words)
    response = generate_with_retry(
        vlm, image_request(prompt, y, params={"temperature": 0}), retry
    )
    text = response.text.strip()
    if not text:
        raise CaptureError("VLM returned an empty target caption")
    caption, truncated = truncate_words(text, templates.max_caption_words)
    if truncated:
        log.warning("target caption truncated to %d words (prompt %s)",
                    templates.max_caption_words, templates.version)
    log.info("target caption (prompt %s): %s", templates.version, caption)
    return caption


def truncate_words(text: str, max_words: int) -> tuple[str, bool]:
    """Cut at a word boundary after ``max_words`` whitespace-delimited words."""
    words = text.split()
    if len(words) <= max_words:
        return " ".join(words), False
    return " ".join(words[:max_words]), True


def compute_image_delta(x: np.ndarray, x_edit: np.ndarray,
                        encoder: ImageEncoderClient) -> np.ndarray:
    """Edit direction in the encoder's embedding space: E(x_edit) - E(x),
    prior to any pooling."""
    e_before = np.asarray(encoder.embed_image(x), dtype=np.float64)
    e_after = np.asarray(encoder.embed_image(x_edit), dtype=np.float64)
    delta = e_after - e_before
    if not np.all(np.isfinite(delta)):
        raise NumericError("image-embedding delta contains non-finite entries")
    return delta


def pool_to_context(delta: np.ndarray, d_ctx: int, k: int) -> np.ndarray:
    """Resample the delta to the denoiser's context width and broadcast it.

    The vector is resized to length ``d_ctx`` by 1-D linear interpolation
    over its index axis (the identity map when lengths already agree), then
    replicated across ``k`` context rows.
    """
    delta = np.asarray(delta, dtype=np.float64).ravel()
    if delta.size < 1 or d_ctx < 1 or k < 1:
        raise ValueError("delta length, d_ctx and k must all be >= 1")
    if not np.all(np.isfinite(delta)):
        raise NumericError("cannot pool a non-finite delta")
    if delta.size == 1:
        row = np.full(d_ctx, delta[0])
    else:
        positions = np.linspace(0.0, delta.size - 1.0, d_ctx)
        row = np.interp(positions, np.arange(delta.size), delta)
    return np.tile(row, (k, 1))


def assemble_edit_embedding(delta_tokens: np.ndarray,
                            text_tokens: np.ndarray) -> EditEmbedding:
    """Stack delta rows above caption-token rows without modification."""
    delta_tokens = np.asarray(delta_tokens, dtype=np.float64)
    text_tokens = np.asarray(text_tokens, dtype=np.float64)
    if delta_tokens.ndim != 2 or text_tokens.ndim != 2:
        raise DimensionError("both token blocks must be 2-D matrices")
    if delta_tokens.shape[1] != text_tokens.shape[1]:
        raise DimensionError(
            f"context-width mismatch: delta {delta_tokens.shape[1]} vs "
            f"text {text_tokens.shape[1]}"
        )
    combined = np.vstack([delta_tokens, text_tokens])
    return EditEmbedding(delta_tokens=delta_tokens, text_tokens=text_tokens,
                         combined=combined)


@contextmanager
def _stage(name: str):
    try:
        yield
    except Exception as err:
        raise StageError(name, str(err)) from err


def capture_edit(task: ExemplarTask, templates: PromptTemplates, vlm: VLMClient,
                 image_encoder: ImageEncoderClient, text_encoder: TextEncoderClient,
                 k_delta_tokens: int = 4,
                 retry: RetryPolicy | None = None) -> tuple[EditText, EditEmbedding]:
    """Run the full capture pipeline for one task.

    Deterministic given fixed VLM responses and encoders. Sub-stage failures
    propagate as :class:`StageError` naming the stage, with the original
    exception chained.
    """
    with _stage("compose_exemplar_grid"):
        grid = compose_exemplar_grid(task.x, task.x_edit)
    with _stage("describe_edit"):
        g_text = describe_edit(grid, templates, vlm, retry)
    with _stage("caption_edited_target"):
        g_caption = caption_edited_target(task.y, g_text, templates, vlm, retry)
    with _stage("compute_image_delta"):
        delta = compute_image_delta(task.x, task.x_edit, image_encoder)
    with _stage("encode_caption"):
        text_tokens = np.asarray(text_encoder.encode_text(g_caption), dtype=np.float64)
        if text_tokens.ndim != 2:
            raise DimensionError(
                f"text encoder must return [n_tokens, d_ctx], got {text_tokens.shape}"
            )
    with _stage("pool_to_context"):
        delta_tokens = pool_to_context(delta, d_ctx=text_tokens.shape[1], k=k_delta_tokens)
    with _stage("assemble_edit_embedding"):
        embedding = assemble_edit_embedding(delta_tokens, text_tokens)
    text = EditText(g_text=g_text, g_caption=g_caption, prompt_version=templates.version)
    return text, embedding
