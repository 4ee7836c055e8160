"""Evaluation-corpus handling: manifest schema, validation, task loading.

A corpus is a JSON manifest listing tuples ``(x, x_edit, y, y_edit)`` by
relative path, mirroring the shape of a 170-example exemplar-editing
benchmark. Predicted outputs from any method (including external baselines)
are ingested from a directory of images keyed by entry id.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ManifestError
from .images import load_image, resize

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
SOURCES = ("ip2p", "hq-edit", "imagic", "other")
_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


@dataclass
class ExemplarTask:
    """One editing problem: exemplar pair, test image, optional ground truth."""

    id: str
    x: np.ndarray
    x_edit: np.ndarray
    y: np.ndarray
    y_edit: np.ndarray | None = None

    def __post_init__(self):
        for name in ("x", "x_edit", "y"):
            img = getattr(self, name)
            if img.ndim != 3 or img.shape[2] != 3:
                raise ManifestError(f"task {self.id}: {name} is not a 3-channel image")
        shapes = {self.x.shape, self.x_edit.shape, self.y.shape}
        if self.y_edit is not None:
            shapes.add(self.y_edit.shape)
        if len(shapes) != 1:
            raise ManifestError(
                f"task {self.id}: images disagree in shape after preprocessing: {shapes}"
            )


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    x_path: str
    x_edit_path: str
    y_path: str
    y_edit_path: str
    edit_category: str = "uncategorized"
    source: str = "other"


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    root: Path
    schema_version: str = SCHEMA_VERSION

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> list[str]:
        return [e.id for e in self.entries]

    def entry(self, entry_id: str) -> ManifestEntry:
        for e in self.entries:
            if e.id == entry_id:
                return e
        raise ManifestError(f"no entry with id {entry_id!r}")

    def resolve(self, rel_path: str) -> Path:
        return (self.root / rel_path).resolve()

    def load_task(self, entry_id: str, resolution: int | None = None) -> ExemplarTask:
        """Load one entry's images, optionally resizing all four to a square
        working resolution."""
        e = self.entry(entry_id)
        images = {
            "x": load_image(self.resolve(e.x_path)),
            "x_edit": load_image(self.resolve(e.x_edit_path)),
            "y": load_image(self.resolve(e.y_path)),
            "y_edit": load_image(self.resolve(e.y_edit_path)),
        }
        if resolution is not None:
            images = {k: resize(v, resolution) for k, v in images.items()}
        return ExemplarTask(id=e.id, **images)


_ENTRY_FIELDS = ("id", "x_path", "x_edit_path", "y_path", "y_edit_path")


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse and validate a manifest file. Paths must resolve; ids must be
    unique; every entry carries all four image paths."""
    path = Path(path)
    if not path.is_file():
        raise ManifestError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        raise ManifestError(f"manifest is not valid JSON: {err}") from err
    if not isinstance(doc, dict) or "entries" not in doc:
        raise ManifestError("manifest must be an object with an 'entries' list")
    schema_version = str(doc.get("schema_version", ""))
    if schema_version != SCHEMA_VERSION:
        raise ManifestError(
            f"unsupported schema_version {schema_version!r} (expected {SCHEMA_VERSION!r})"
        )

    root = path.parent
    entries: list[ManifestEntry] = []
    seen: set[str] = set()
    for i, raw in enumerate(doc["entries"]):
        if not isinstance(raw, dict):
            raise ManifestError(f"entry #{i} is not an object")
        entry_id = str(raw.get("id", "")) or f"#(index {i})"
        for key in _ENTRY_FIELDS:
            if not raw.get(key):
                raise ManifestError(f"entry {entry_id}: missing required field {key!r}")
        if raw["id"] in seen:
            raise ManifestError(f"duplicate entry id {raw['id']!r}")
        seen.add(raw["id"])
        source = raw.get("source", "other")
        if source not in SOURCES:
            raise ManifestError(
                f"entry {entry_id}: unknown source {source!r} (expected one of {SOURCES})"
            )
        entry = ManifestEntry(
            id=raw["id"],
            x_path=raw["x_path"],
            x_edit_path=raw["x_edit_path"],
            y_path=raw["y_path"],
            y_edit_path=raw["y_edit_path"],
            edit_category=raw.get("edit_category", "uncategorized"),
            source=source,
        )
        for key in _ENTRY_FIELDS[1:]:
            p = (root / getattr(entry, key)).resolve()
            if not p.is_file():
                raise ManifestError(f"entry {entry.id}: {key} does not resolve: {p}")
        entries.append(entry)
    return DatasetManifest(entries=entries, root=root, schema_version=schema_version)


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    doc = {
        "schema_version": manifest.schema_version,
        "entries": [
            {
                "id": e.id,
                "x_path": e.x_path,
                "x_edit_path": e.x_edit_path,
                "y_path": e.y_path,
                "y_edit_path": e.y_edit_path,
                "edit_category": e.edit_category,
                "source": e.source,
            }
            for e in manifest.entries
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


@dataclass
class ValidationReport:
    """Per-entry findings from a read-only pass over the corpus images."""

    failures: dict[str, list[str]] = field(default_factory=dict)
    warnings: dict[str, list[str]] = field(default_factory=dict)
    by_source: Counter = field(default_factory=Counter)
    by_category: Counter = field(default_factory=Counter)
    checked: int = 0

    @property
    def ok(self) -> bool:
        return not self.failures

    def summary(self) -> str:
        lines = [
            f"checked {self.checked} entries: "
            f"{len(self.failures)} failing, {len(self.warnings)} with warnings",
            "per source: " + ", ".join(f"{k}={v}" for k, v in sorted(self.by_source.items())),
            "per category: " + ", ".join(f"{k}={v}" for k, v in sorted(self.by_category.items())),
        ]
        for entry_id, msgs in sorted(self.failures.items()):
            lines += [f"FAIL {entry_id}: {m}" for m in msgs]
        for entry_id, msgs in sorted(self.warnings.items()):
            lines += [f"WARN {entry_id}: {m}" for m in msgs]
        return "\n".join(lines)


def validate_dataset(manifest: DatasetManifest) -> ValidationReport:
    """Check every entry decodes to consistent RGB images.

    Never raises for content problems and never mutates anything; findings
    are collected in the report. A pixel-identical exemplar pair is a
    warning (a null edit), not an error.
    """
    report = ValidationReport()
    for entry in manifest.entries:
        report.checked += 1
        report.by_source[entry.source] += 1
        report.by_category[entry.edit_category] += 1
        failures: list[str] = []
        warnings: list[str] = []
        images: dict[str, np.ndarray] = {}
        for key in _ENTRY_FIELDS[1:]:
            try:
                images[key] = load_image(manifest.resolve(getattr(entry, key)))
            except Exception as err:  # undecodable file
                failures.append(f"{key} failed to decode: {err}")
        if "x_path" in images and "x_edit_path" in images:
            a, b = images["x_path"], images["x_edit_path"]
            if a.shape == b.shape and np.array_equal(a, b):
                warnings.append("x and x_edit are pixel-identical (null edit)")
        if failures:
            report.failures[entry.id] = failures
        if warnings:
            report.warnings[entry.id] = warnings
    return report


def load_predictions(directory: str | Path, ids: list[str],
                     exclude: set[str] | None = None) -> dict[str, Path]:
    """Map entry ids to predicted-image files named ``<id>.<ext>``.

    This is how externally produced outputs (other methods' results) enter
    the evaluation harness. Raises with the full list of unmatched ids.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise ManifestError(f"prediction directory not found: {directory}")
    exclude = exclude or set()
    found: dict[str, Path] = {}
    missing: list[str] = []
    for entry_id in ids:
        if entry_id in exclude:
            continue
        for suffix in _IMAGE_SUFFIXES:
            candidate = directory / f"{entry_id}{suffix}"
            if candidate.is_file():
                found[entry_id] = candidate
                break
        else:
            missing.append(entry_id)
    if missing:
        raise ManifestError(
            "missing predictions for entries: " + ", ".join(missing)
        )
    return found
