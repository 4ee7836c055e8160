"""Two-pass editing: record the source run, replay it with injection.

The test image's latent is inverted, then denoised once unconditionally
while its features and self-attention projections are recorded, and once
more conditioned on the edit embedding with the recorded tensors injected.
Structure rides in on the injected tensors; appearance comes from the live
values and the conditioning.
"""

from __future__ import annotations

import json
import logging
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .backend import DiffusionBackend, LatentState, enumerate_layers
from .capture import EditEmbedding, EditText, PromptTemplates, capture_edit
from .clients import ImageEncoderClient, TextEncoderClient, VLMClient
from .dataset import ExemplarTask
from .ddim import ddim_invert, ddim_sample
from .errors import DimensionError, MetadataMismatchError, StageError
from .hooks import (
    HookRuntime,
    HookSpec,
    InjectionRecord,
    RunMetadata,
    Tap,
    inject_spec,
    validate_spec_against_catalog,
)
from .images import sha256_array
from .schedule import NoiseSchedule

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EditConfig:
    """The knobs of one editing run."""

    hook_spec: HookSpec = HookSpec()
    steps: int = 50
    guidance_scale: float = 7.5
    k_delta_tokens: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.k_delta_tokens < 1:
            raise ValueError("steps and k_delta_tokens must be positive")
        if self.guidance_scale <= 0:
            raise ValueError("guidance_scale must be positive")


@dataclass
class PipelineClients:
    """Everything a full edit run talks to."""

    vlm: VLMClient
    image_encoder: ImageEncoderClient
    text_encoder: TextEncoderClient
    backend: DiffusionBackend
    schedule: NoiseSchedule
    templates: PromptTemplates


def record_source_run(y_noise: LatentState, schedule: NoiseSchedule,
                      backend: DiffusionBackend, hook_spec: HookSpec,
                      taps: Sequence[Tap] = (),
                      ) -> tuple[InjectionRecord, LatentState]:
    """Unconditional deterministic pass over the inverted latent, recording
    the declared feature and Q/K sites at every hooked step."""
    spec = replace(hook_spec, mode="record")
    validate_spec_against_catalog(spec, enumerate_layers(backend))
    runtime = HookRuntime(
        spec, schedule.num_steps,
        metadata=RunMetadata(
            schedule_hash=schedule.digest(),
            backend_id=backend.backend_id,
            seed=backend.seed,
        ),
        taps=taps,
    )
    y_recon, record = ddim_sample(y_noise, schedule, None, backend, hooks=runtime)
    assert record is not None
    return record, y_recon


def edited_run(y_noise: LatentState, g: EditEmbedding, record: InjectionRecord,
               schedule: NoiseSchedule, backend: DiffusionBackend, cfg: EditConfig,
               taps: Sequence[Tap] = ()) -> LatentState:
    """Replay from the same inverted latent, conditioned on the edit
    embedding, with recorded features and Q/K injected at the declared
    steps and layers (V stays live)."""
    if record.metadata.schedule_hash != schedule.digest():
        raise MetadataMismatchError(
            "record was captured under a different schedule "
            f"(hash {record.metadata.schedule_hash[:12]} vs {schedule.digest()[:12]})"
        )
    if record.metadata.backend_id != backend.backend_id:
        raise MetadataMismatchError(
            f"record was captured on backend {record.metadata.backend_id!r}, "
            f"not {backend.backend_id!r}"
        )
    if cfg.steps != schedule.num_steps or record.num_steps != schedule.num_steps:
        raise MetadataMismatchError(
            f"step counts disagree: cfg={cfg.steps}, schedule={schedule.num_steps}, "
            f"record={record.num_steps}"
        )
    if not record.spec.same_sites(cfg.hook_spec):
        raise MetadataMismatchError(
            f"configured hook sites {cfg.hook_spec} differ from recorded {record.spec}"
        )
    if g.combined.shape[1] != backend.context_dim:
        raise DimensionError(
            f"edit embedding width {g.combined.shape[1]} != backend context "
            f"width {backend.context_dim}"
        )
    runtime = HookRuntime(inject_spec(record), schedule.num_steps,
                          record=record, taps=taps)
    z_edit, _ = ddim_sample(
        y_noise, schedule, g.combined, backend,
        hooks=runtime, guidance_scale=cfg.guidance_scale,
    )
    return z_edit


@dataclass
class EditProvenance:
    """Sidecar record of one edit: inputs, text, seeds, timings, checksums."""

    task_id: str
    g_text: str
    g_caption: str
    prompt_version: str
    seeds: dict
    model_ids: dict
    backend_id: str
    schedule_hash: str
    stage_seconds: dict
    total_seconds: float
    config: dict
    checksums: dict

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


@dataclass
class EditResult:
    image: np.ndarray
    provenance: EditProvenance
    text: EditText
    embedding: EditEmbedding
    reconstruction: np.ndarray = field(repr=False, default=None)


def edit(task: ExemplarTask, cfg: EditConfig, clients: PipelineClients) -> EditResult:
    """Full pipeline for one task: capture, invert, record, inject, decode.

    Deterministic for fixed seeds and deterministic clients. Failures
    propagate as :class:`StageError` naming the stage.
    """
    timings: dict[str, float] = {}
    started = time.perf_counter()

    @contextmanager
    def stage(name: str):
        t0 = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except Exception as err:
            raise StageError(name, str(err)) from err
        finally:
            timings[name] = time.perf_counter() - t0

    with stage("capture_edit"):
        text, embedding = capture_edit(
            task, clients.templates, clients.vlm,
            clients.image_encoder, clients.text_encoder,
            k_delta_tokens=cfg.k_delta_tokens,
        )
    with stage("encode_image"):
        z0 = clients.backend.encode_image(task.y)
    with stage("ddim_invert"):
        y_noise, _ = ddim_invert(z0, clients.schedule, None, clients.backend)
    with stage("record_source_run"):
        record, y_recon = record_source_run(
            y_noise, clients.schedule, clients.backend, cfg.hook_spec
        )
    with stage("edited_run"):
        z_edit = edited_run(
            y_noise, embedding, record, clients.schedule, clients.backend, cfg
        )
    with stage("decode_latent"):
        image = clients.backend.decode_latent(z_edit)

    total = time.perf_counter() - started
    for name, secs in timings.items():
        log.info("stage %-18s %7.3f s", name, secs)
    log.info("edit complete in %.3f s", total)

    provenance = EditProvenance(
        task_id=task.id,
        g_text=text.g_text,
        g_caption=text.g_caption,
        prompt_version=text.prompt_version,
        seeds={"config": cfg.seed, "backend": clients.backend.seed},
        model_ids={
            "vlm": clients.vlm.model_id,
            "image_encoder": clients.image_encoder.model_id,
            "text_encoder": clients.text_encoder.model_id,
        },
        backend_id=clients.backend.backend_id,
        schedule_hash=clients.schedule.digest(),
        stage_seconds=timings,
        total_seconds=total,
        config={
            "steps": cfg.steps,
            "guidance_scale": cfg.guidance_scale,
            "k_delta_tokens": cfg.k_delta_tokens,
            "seed": cfg.seed,
            "hook_spec": {
                "feature_layer": cfg.hook_spec.feature_layer,
                "attn_layers": list(cfg.hook_spec.attn_layers),
                "step_fraction": cfg.hook_spec.step_fraction,
            },
        },
        checksums={
            "x": sha256_array(task.x),
            "x_edit": sha256_array(task.x_edit),
            "y": sha256_array(task.y),
            "output": sha256_array(image),
        },
    )
    return EditResult(
        image=image,
        provenance=provenance,
        text=text,
        embedding=embedding,
        reconstruction=clients.backend.decode_latent(y_recon),
    )
