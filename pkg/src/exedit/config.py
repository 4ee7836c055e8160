"""Declarative run configuration.

One JSON document describes a whole run -- backend, schedule, hook sites,
clients, templates -- and is resolved and validated before anything loads.
Unknown keys are rejected so typos fail fast instead of silently running
defaults. CLI flags override file values; the resolved snapshot travels in
every provenance record.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .capture import PromptTemplates
from .clients import (
    ConstantHPS,
    HashFeatureNet,
    HashImageEncoder,
    HashInceptionFeatures,
    HashTextEncoder,
    HTTPVLM,
    ScriptedVLM,
    UnavailableHPS,
)
from .editor import EditConfig, PipelineClients
from .errors import ConfigError
from .hooks import HookSpec
from .report import EvalConfig, MetricClients
from .schedule import NoiseSchedule
from .toy import ToyDiffusionBackend

ENV_VLM_ENDPOINT = "EXEDIT_VLM_ENDPOINT"

_DEFAULTS = {
    "schema_version": "1",
    "seed": 0,
    "resolution": 64,
    "output_dir": "out",
    "backend": {},
    "schedule": {},
    "edit": {},
    "clients": {},
    "templates": {},
    "metrics": {},
}


def _section(raw: dict, name: str, defaults: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be an object, got {type(raw).__name__}")
    unknown = set(raw) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    merged = dict(defaults)
    merged.update(raw)
    return merged


@dataclass
class RunConfig:
    raw: dict
    path: Path | None = None
    overrides: dict = field(default_factory=dict)

    # ------------------------------------------------------------------

    @classmethod
    def load(cls, path: str | Path, overrides: dict | None = None) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from err
        cfg = cls(raw=raw, path=path, overrides=dict(overrides or {}))
        cfg.validate()
        return cfg

    @classmethod
    def from_dict(cls, raw: dict, overrides: dict | None = None) -> "RunConfig":
        cfg = cls(raw=raw, overrides=dict(overrides or {}))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        doc = _section(self.raw, "<root>", _DEFAULTS)
        if str(doc["schema_version"]) != "1":
            raise ConfigError(f"unsupported config schema_version {doc['schema_version']!r}")
        self._doc = doc
        # Resolve everything now; a bad config must not get as far as a run.
        self.edit_config()
        self.schedule()
        self.backend_settings()
        self.client_settings()
        self.template_settings()
        self.metric_settings()
        if self.edit_config().steps != self.schedule().num_steps:
            raise ConfigError(
                f"edit.steps ({self.edit_config().steps}) must equal the schedule's "
                f"step count ({self.schedule().num_steps})"
            )
        text_dim = self.client_settings()["text_encoder"]["dim"]
        ctx_dim = self.backend_settings()["context_dim"]
        if text_dim != ctx_dim:
            raise ConfigError(
                f"text_encoder dim ({text_dim}) must match backend context_dim ({ctx_dim})"
            )

    # ------------------------------------------------------------------
    # Resolved values
    # ------------------------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.overrides.get("seed", self._doc["seed"]))

    @property
    def resolution(self) -> int:
        return int(self._doc["resolution"])

    @property
    def output_dir(self) -> Path:
        return Path(self.overrides.get("output_dir", self._doc["output_dir"]))

    def backend_settings(self) -> dict:
        defaults = {
            "kind": "toy",
            "predictor": "tiny",
            "channels": 3,
            "token_grid": 8,
            "hidden_dim": 16,
            "attention_dim": 8,
            "context_dim": 16,
            "num_res_blocks": 6,
            "num_self_attention": 12,
            "epsilon_scale": 0.05,
            "seed": None,
        }
        s = _section(self._doc["backend"], "backend", defaults)
        if s["kind"] != "toy":
            raise ConfigError(
                f"unknown backend kind {s['kind']!r}; this build ships the 'toy' "
                "backend, pretrained adapters plug in via the DiffusionBackend interface"
            )
        if s["seed"] is None:
            s["seed"] = self.seed
        return s

    def build_backend(self) -> ToyDiffusionBackend:
        s = dict(self.backend_settings())
        s.pop("kind")
        return ToyDiffusionBackend(resolution=self.resolution, **s)

    def schedule(self) -> NoiseSchedule:
        defaults = {"kind": "scaled_linear", "num_train_steps": 1000, "num_steps": 50}
        s = _section(self._doc["schedule"], "schedule", defaults)
        if s["kind"] == "scaled_linear":
            return NoiseSchedule.scaled_linear(
                num_train_steps=int(s["num_train_steps"]),
                num_steps=int(s["num_steps"]),
            )
        if s["kind"] == "dyadic":
            return NoiseSchedule.dyadic(int(s["num_steps"]))
        raise ConfigError(f"unknown schedule kind {s['kind']!r}")

    def edit_config(self) -> EditConfig:
        defaults = {
            "steps": 50,
            "guidance_scale": 7.5,
            "k_delta_tokens": 4,
            "feature_layer": 4,
            "attn_layers": [4, 11],
            "step_fraction": 1.0,
        }
        s = _section(self._doc["edit"], "edit", defaults)
        lo, hi = s["attn_layers"]
        return EditConfig(
            hook_spec=HookSpec(
                feature_layer=int(s["feature_layer"]),
                attn_layers=(int(lo), int(hi)),
                mode="record",
                step_fraction=float(s["step_fraction"]),
            ),
            steps=int(s["steps"]),
            guidance_scale=float(s["guidance_scale"]),
            k_delta_tokens=int(s["k_delta_tokens"]),
            seed=self.seed,
        )

    def client_settings(self) -> dict:
        defaults = {
            "vlm": {"kind": "scripted",
                    "responses": ["A global style change applied to the scene.",
                                  "The test image rendered with the exemplar edit applied."],
                    "cycle": True},
            "image_encoder": {"kind": "hash", "dim": 32, "seed": None},
            "text_encoder": {"kind": "hash", "dim": 16, "tokens": 77, "seed": None},
        }
        s = _section(self._doc["clients"], "clients", defaults)
        vlm_defaults = {"kind": "scripted", "responses": defaults["vlm"]["responses"],
                        "cycle": True, "endpoint": "", "model": ""}
        s["vlm"] = _section(s["vlm"], "clients.vlm", vlm_defaults)
        s["image_encoder"] = _section(s["image_encoder"], "clients.image_encoder",
                                      {"kind": "hash", "dim": 32, "seed": None})
        s["text_encoder"] = _section(s["text_encoder"], "clients.text_encoder",
                                     {"kind": "hash", "dim": 16, "tokens": 77, "seed": None})
        for key in ("image_encoder", "text_encoder"):
            if s[key]["kind"] != "hash":
                raise ConfigError(f"unknown {key} kind {s[key]['kind']!r}")
            if s[key]["seed"] is None:
                s[key]["seed"] = self.seed
        if s["vlm"]["kind"] not in ("scripted", "http"):
            raise ConfigError(f"unknown vlm kind {s['vlm']['kind']!r}")
        return s

    def build_vlm(self):
        s = self.client_settings()["vlm"]
        if s["kind"] == "http":
            endpoint = os.environ.get(ENV_VLM_ENDPOINT) or s["endpoint"]
            if not endpoint:
                raise ConfigError(
                    f"http vlm needs an endpoint (config or ${ENV_VLM_ENDPOINT})"
                )
            return HTTPVLM(endpoint=endpoint, model=s["model"])
        return ScriptedVLM(list(s["responses"]), cycle=bool(s["cycle"]))

    def build_image_encoder(self) -> HashImageEncoder:
        s = self.client_settings()["image_encoder"]
        return HashImageEncoder(dim=int(s["dim"]), seed=int(s["seed"]))

    def build_text_encoder(self) -> HashTextEncoder:
        s = self.client_settings()["text_encoder"]
        return HashTextEncoder(dim=int(s["dim"]), tokens=int(s["tokens"]),
                               seed=int(s["seed"]))

    def template_settings(self) -> dict:
        defaults = {"version": "v1", "p1_path": "", "p2_path": "",
                    "max_caption_words": 20}
        return _section(self._doc["templates"], "templates", defaults)

    def build_templates(self) -> PromptTemplates:
        s = self.template_settings()
        if s["p1_path"] or s["p2_path"]:
            if not (s["p1_path"] and s["p2_path"]):
                raise ConfigError("templates need both p1_path and p2_path")
            base = self.path.parent if self.path else Path.cwd()
            return PromptTemplates.from_files(
                base / s["p1_path"], base / s["p2_path"],
                version=s["version"],
                max_caption_words=int(s["max_caption_words"]),
            )
        if s["version"] != "v1":
            raise ConfigError(f"unknown built-in template version {s['version']!r}")
        return PromptTemplates.load_default(max_caption_words=int(s["max_caption_words"]))

    def build_pipeline_clients(self) -> PipelineClients:
        """Fresh client sessions plus backend/schedule; build one per worker."""
        return PipelineClients(
            vlm=self.build_vlm(),
            image_encoder=self.build_image_encoder(),
            text_encoder=self.build_text_encoder(),
            backend=self.build_backend(),
            schedule=self.schedule(),
            templates=self.build_templates(),
        )

    def metric_settings(self) -> dict:
        defaults = {
            "embedding": {"kind": "hash", "dim": 32, "seed": None},
            "feature_net": {"kind": "hash", "seed": None},
            "inception": {"kind": "hash", "dim": 64, "seed": None},
            "hps": {"kind": "constant", "value": 0.22},
        }
        s = _section(self._doc["metrics"], "metrics", defaults)
        s["embedding"] = _section(s["embedding"], "metrics.embedding",
                                  {"kind": "hash", "dim": 32, "seed": None})
        s["feature_net"] = _section(s["feature_net"], "metrics.feature_net",
                                    {"kind": "hash", "seed": None})
        s["inception"] = _section(s["inception"], "metrics.inception",
                                  {"kind": "hash", "dim": 64, "seed": None})
        s["hps"] = _section(s["hps"], "metrics.hps",
                            {"kind": "constant", "value": 0.22})
        for key in ("embedding", "feature_net", "inception"):
            if s[key]["kind"] != "hash":
                raise ConfigError(f"unknown metrics.{key} kind {s[key]['kind']!r}")
            if s[key]["seed"] is None:
                s[key]["seed"] = self.seed
        if s["hps"]["kind"] not in ("constant", "unavailable"):
            raise ConfigError(f"unknown metrics.hps kind {s['hps']['kind']!r}")
        return s

    def build_metric_clients(self) -> MetricClients:
        s = self.metric_settings()
        hps_client = (ConstantHPS(value=float(s["hps"]["value"]))
                      if s["hps"]["kind"] == "constant" else UnavailableHPS())
        return MetricClients(
            embedding=HashImageEncoder(dim=int(s["embedding"]["dim"]),
                                       seed=int(s["embedding"]["seed"])),
            feature_net=HashFeatureNet(seed=int(s["feature_net"]["seed"])),
            inception=HashInceptionFeatures(dim=int(s["inception"]["dim"]),
                                            seed=int(s["inception"]["seed"])),
            hps=hps_client,
        )

    def build_eval_config(self, captions: dict | None = None,
                          exclude: set | None = None) -> EvalConfig:
        return EvalConfig(
            resolution=self.resolution,
            captions=dict(captions or {}),
            exclude=set(exclude or ()),
        )

    def snapshot(self) -> dict:
        return {"raw": self.raw, "overrides": self.overrides}
