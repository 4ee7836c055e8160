"""Corpus-level evaluation: run every metric, aggregate, and render reports.

Per-entry metrics aggregate into a mean and a coefficient of variance
(population standard deviation over mean); the distribution distance is a
single corpus-level number. Entries a metric cannot score (degenerate
directions, scorer outages, missing captions) are excluded from that
metric's n and listed as skips -- never imputed as zero.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics
from .clients import (
    EmbeddingClient,
    FeatureNetClient,
    HPSClient,
    InceptionFeatureClient,
)
from .dataset import DatasetManifest, load_predictions
from .images import load_image, resize
from .metrics import FeatureSet

log = logging.getLogger(__name__)

# Fixed presentation order of the seven metrics.
METRIC_ORDER = (
    "lpips", "fid", "hps", "ssim", "clip_score",
    "directional_similarity", "s_visual",
)
DISPLAY_NAMES = {
    "lpips": "LPIPS",
    "fid": "FID",
    "hps": "HPS",
    "ssim": "SSIM",
    "clip_score": "CLIP Score",
    "directional_similarity": "Dir. Similarity",
    "s_visual": "S-Visual",
}
LOWER_BETTER = {"lpips", "fid"}
FID_SMALL_SAMPLE = 2048  # feature-count rule of thumb below which FID is noisy


@dataclass
class MetricClients:
    embedding: EmbeddingClient | None = None
    feature_net: FeatureNetClient | None = None
    inception: InceptionFeatureClient | None = None
    hps: HPSClient | None = None

    def model_ids(self) -> dict:
        return {
            name: getattr(client, "model_id", None)
            for name, client in (
                ("embedding", self.embedding),
                ("feature_net", self.feature_net),
                ("inception", self.inception),
                ("hps", self.hps),
            )
            if client is not None
        }


@dataclass
class EvalConfig:
    """Evaluation knobs; the snapshot (and its checksum) lands in the report
    so preprocessing-sensitive numbers stay attributable."""

    resolution: int | None = None          # resize everything to this square
    captions: dict = field(default_factory=dict)  # id -> {"target", "source"}
    exclude: set = field(default_factory=set)

    def snapshot(self) -> dict:
        return {
            "resolution": self.resolution,
            "prediction_resize": "bicubic-to-ground-truth",
            "grayscale": "rec601",
            "ssim": {
                "window": metrics.SSIM_WINDOW,
                "sigma": metrics.SSIM_SIGMA,
                "k1": metrics.SSIM_K1,
                "k2": metrics.SSIM_K2,
                "dynamic_range": metrics.SSIM_DYNAMIC_RANGE,
            },
            "clip_score_scale": "100*max(0,cos)",
            "excluded": sorted(self.exclude),
        }


@dataclass
class MetricStat:
    mean: float | None
    cv: float | None
    n: int
    direction: str  # "higher-better" | "lower-better"
    note: str = ""


@dataclass
class MetricReport:
    per_metric: dict            # metric -> MetricStat, in METRIC_ORDER
    per_entry: dict             # id -> {metric: value}
    skips: dict                 # metric -> [{"id", "reason"}]
    model_ids: dict
    config: dict
    config_checksum: str

    @property
    def has_skips(self) -> bool:
        return any(self.skips.values())

    def to_dict(self) -> dict:
        return {
            "per_metric": {
                name: {
                    "display": DISPLAY_NAMES[name],
                    "mean": stat.mean,
                    "cv": stat.cv,
                    "n": stat.n,
                    "direction": stat.direction,
                    "note": stat.note,
                }
                for name, stat in self.per_metric.items()
            },
            "per_entry": self.per_entry,
            "skips": self.skips,
            "model_ids": self.model_ids,
            "config": self.config,
            "config_checksum": self.config_checksum,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["metric", "direction", "mean", "cv", "n"])
        for name in METRIC_ORDER:
            stat = self.per_metric[name]
            writer.writerow([
                DISPLAY_NAMES[name],
                stat.direction,
                "" if stat.mean is None else f"{stat.mean:.6g}",
                "" if stat.cv is None else f"{stat.cv:.6g}",
                stat.n,
            ])
        return buf.getvalue()

    def to_table(self) -> str:
        lines = [f"{'Metric':<18} {'':2} {'mean':>10} {'cv':>10} {'n':>5}"]
        for name in METRIC_ORDER:
            stat = self.per_metric[name]
            arrow = "v" if stat.direction == "lower-better" else "^"
            mean = "-" if stat.mean is None else f"{stat.mean:10.4f}"
            cv = "-" if stat.cv is None else f"{stat.cv:10.4f}"
            lines.append(
                f"{DISPLAY_NAMES[name]:<18} ({arrow}) {mean:>10} {cv:>10} {stat.n:>5}"
                + (f"  [{stat.note}]" if stat.note else "")
            )
        return "\n".join(lines)

    def write(self, directory: str | Path) -> tuple[Path, Path]:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        json_path = directory / "report.json"
        csv_path = directory / "report.csv"
        json_path.write_text(self.to_json() + "\n", encoding="utf-8")
        csv_path.write_text(self.to_csv(), encoding="utf-8")
        return json_path, csv_path


def aggregate(values: list[float]) -> tuple[float | None, float | None]:
    """Mean and coefficient of variance (population std / mean); the cv is
    None when the mean is numerically zero."""
    if not values:
        return None, None
    mean = float(np.mean(values))
    std = float(np.std(values))
    cv = None if abs(mean) < 1e-12 else std / mean
    return mean, cv


def _direction(name: str) -> str:
    return "lower-better" if name in LOWER_BETTER else "higher-better"


def evaluate(manifest: DatasetManifest, predictions_dir: str | Path,
             clients: MetricClients, config: EvalConfig | None = None) -> MetricReport:
    """Score a prediction directory against the corpus.

    Every manifest id must have a prediction image (or appear in
    ``config.exclude``). Returns the full report; nothing is written here.
    """
    config = config or EvalConfig()
    ids = [i for i in manifest.ids() if i not in config.exclude]
    predictions = load_predictions(predictions_dir, ids)

    per_entry: dict[str, dict] = {i: {} for i in ids}
    skips: dict[str, list] = {name: [] for name in METRIC_ORDER}
    gt_images: list[np.ndarray] = []
    pred_images: list[np.ndarray] = []

    def skip(entry_id: str, name: str, reason: str):
        skips[name].append({"id": entry_id, "reason": reason})

    def score(entry_id: str, name: str, fn, degenerate_reason: str = "degenerate"):
        try:
            value = fn()
        except Exception as err:
            skip(entry_id, name, f"error: {err}")
            return
        if value is None:
            skip(entry_id, name, degenerate_reason)
        else:
            per_entry[entry_id][name] = float(value)

    for entry_id in ids:
        task = manifest.load_task(entry_id, resolution=config.resolution)
        pred = load_image(predictions[entry_id])
        if pred.shape != task.y_edit.shape:
            pred = resize(pred, task.y_edit.shape[0])
        gt_images.append(task.y_edit)
        pred_images.append(pred)
        caps = config.captions.get(entry_id, {})
        caption_tgt = caps.get("target", "")
        caption_src = caps.get("source", "")

        score(entry_id, "ssim", lambda: metrics.ssim(task.y_edit, pred))
        if clients.feature_net is not None:
            score(entry_id, "lpips",
                  lambda: metrics.lpips(task.y_edit, pred, clients.feature_net))
        else:
            skip(entry_id, "lpips", "no feature network")
        if clients.embedding is not None:
            if caption_tgt:
                score(entry_id, "clip_score",
                      lambda: metrics.clip_score(pred, caption_tgt, clients.embedding))
            else:
                skip(entry_id, "clip_score", "no target caption")
            if caption_tgt and caption_src:
                score(entry_id, "directional_similarity",
                      lambda: metrics.directional_similarity(
                          task.y, pred, caption_src, caption_tgt, clients.embedding),
                      degenerate_reason="degenerate direction")
            else:
                skip(entry_id, "directional_similarity", "missing captions")
            score(entry_id, "s_visual",
                  lambda: metrics.s_visual(task.x, task.x_edit, task.y, pred,
                                           clients.embedding),
                  degenerate_reason="degenerate delta")
        else:
            for name in ("clip_score", "directional_similarity", "s_visual"):
                skip(entry_id, name, "no embedding client")
        if clients.hps is not None and caption_tgt:
            score(entry_id, "hps", lambda: metrics.hps(pred, caption_tgt, clients.hps))
        elif clients.hps is None:
            skip(entry_id, "hps", "no scorer")
        else:
            skip(entry_id, "hps", "no target caption")

    per_metric: dict[str, MetricStat] = {}
    for name in METRIC_ORDER:
        if name == "fid":
            continue
        values = [per_entry[i][name] for i in ids if name in per_entry[i]]
        mean, cv = aggregate(values)
        per_metric[name] = MetricStat(
            mean=mean, cv=cv, n=len(values), direction=_direction(name)
        )

    if clients.inception is not None and len(ids) >= 2:
        try:
            real = FeatureSet(
                np.stack([clients.inception.embed_image(im) for im in gt_images]),
                extractor_id=clients.inception.model_id,
            )
            gen = FeatureSet(
                np.stack([clients.inception.embed_image(im) for im in pred_images]),
                extractor_id=clients.inception.model_id,
            )
            value = metrics.fid(real, gen)
            note = (f"corpus-level, n={len(ids)}"
                    + ("; small-sample estimate" if len(ids) < FID_SMALL_SAMPLE else ""))
            per_metric["fid"] = MetricStat(
                mean=value, cv=None, n=len(ids),
                direction=_direction("fid"), note=note,
            )
        except Exception as err:
            skips["fid"].append({"id": "<corpus>", "reason": str(err)})
            per_metric["fid"] = MetricStat(None, None, 0, _direction("fid"), "failed")
    else:
        reason = "no inception client" if clients.inception is None else "fewer than 2 entries"
        skips["fid"].append({"id": "<corpus>", "reason": reason})
        per_metric["fid"] = MetricStat(None, None, 0, _direction("fid"), "skipped")

    ordered = {name: per_metric[name] for name in METRIC_ORDER}
    snapshot = config.snapshot()
    checksum = hashlib.sha256(
        json.dumps(snapshot, sort_keys=True).encode()
    ).hexdigest()
    report = MetricReport(
        per_metric=ordered,
        per_entry=per_entry,
        skips={k: v for k, v in skips.items()},
        model_ids=clients.model_ids(),
        config=snapshot,
        config_checksum=checksum,
    )
    for name in METRIC_ORDER:
        if skips[name]:
            log.warning("metric %s skipped %d entries", name, len(skips[name]))
    return report
