"""Exemplar-driven image editing.

Capture the edit shown by a before/after exemplar pair -- in text via a
multimodal VLM and in an image-embedding space -- and transfer it onto new
images by conditioning a pretrained latent-diffusion denoiser, using
deterministic inversion plus feature and self-attention injection. Ships a
fully instrumented toy backend, a dataset/manifest layer, and the
seven-metric evaluation harness.
"""

from .backend import DiffusionBackend, LatentState, LayerRef, enumerate_layers
from .capture import (
    EditEmbedding,
    EditText,
    PromptTemplates,
    assemble_edit_embedding,
    capture_edit,
    compose_exemplar_grid,
    compute_image_delta,
    pool_to_context,
)
from .dataset import DatasetManifest, ExemplarTask, load_manifest, validate_dataset
from .ddim import ddim_invert, ddim_sample
from .editor import EditConfig, PipelineClients, edit, edited_run, record_source_run
from .hooks import HookSpec, InjectionRecord
from .metrics import FeatureSet, clip_score, directional_similarity, fid, hps, lpips, s_visual, ssim
from .report import EvalConfig, MetricClients, MetricReport, evaluate
from .schedule import NoiseSchedule
from .toy import ToyDiffusionBackend

__version__ = "0.1.0"

__all__ = [
    "DiffusionBackend",
    "LatentState",
    "LayerRef",
    "enumerate_layers",
    "EditEmbedding",
    "EditText",
    "PromptTemplates",
    "assemble_edit_embedding",
    "capture_edit",
    "compose_exemplar_grid",
    "compute_image_delta",
    "pool_to_context",
    "DatasetManifest",
    "ExemplarTask",
    "load_manifest",
    "validate_dataset",
    "ddim_invert",
    "ddim_sample",
    "EditConfig",
    "PipelineClients",
    "edit",
    "edited_run",
    "record_source_run",
    "HookSpec",
    "InjectionRecord",
    "FeatureSet",
    "clip_score",
    "directional_similarity",
    "fid",
    "hps",
    "lpips",
    "s_visual",
    "ssim",
    "EvalConfig",
    "MetricClients",
    "MetricReport",
    "evaluate",
    "NoiseSchedule",
    "ToyDiffusionBackend",
    "__version__",
]
