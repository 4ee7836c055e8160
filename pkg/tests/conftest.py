import json

import numpy as np
import pytest

from exedit.clients import HashImageEncoder, HashTextEncoder, ScriptedVLM
from exedit.dataset import ExemplarTask
from exedit.images import save_png
from exedit.schedule import NoiseSchedule
from exedit.toy import ToyDiffusionBackend


def structured_image(seed: int, size: int = 64) -> np.ndarray:
    """Deterministic fixture image with gradients, a block, and texture."""
    rng = np.random.default_rng(seed)
    ramp = np.linspace(0, 200, size)
    base = (ramp[:, None] + ramp[None, :]) / 2
    img = np.stack([base, np.roll(base, seed % size, 0), base[::-1]], axis=-1)
    img += rng.normal(0, 12, size=img.shape)
    lo, hi = size // 4, size // 2
    img[lo:hi, lo:hi] = rng.uniform(0, 255, size=3)
    return np.clip(img, 0, 255).astype(np.uint8)


@pytest.fixture
def fixture_task() -> ExemplarTask:
    return ExemplarTask(
        id="fixture",
        x=structured_image(1),
        x_edit=structured_image(2),
        y=structured_image(3),
        y_edit=structured_image(4),
    )


@pytest.fixture
def stub_clients():
    return {
        "vlm": ScriptedVLM([
            "The scene was restyled with a warm orange palette and soft light.",
            "A warm orange version of the test scene with soft light.",
        ]),
        "image_encoder": HashImageEncoder(dim=32, seed=0),
        "text_encoder": HashTextEncoder(dim=16, tokens=77, seed=0),
    }


@pytest.fixture
def tiny_backend() -> ToyDiffusionBackend:
    return ToyDiffusionBackend(resolution=16, channels=3, token_grid=4,
                               predictor="tiny", seed=3, context_dim=16)


@pytest.fixture
def short_schedule() -> NoiseSchedule:
    return NoiseSchedule.scaled_linear(num_train_steps=1000, num_steps=10)


@pytest.fixture
def full_schedule() -> NoiseSchedule:
    return NoiseSchedule.scaled_linear(num_train_steps=1000, num_steps=50)


def make_corpus(root, n=3, size=64):
    """Write a small manifest + images; returns (manifest_path, ids)."""
    images_dir = root / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    categories = ["style", "object-replacement", "style"]
    sources = ["ip2p", "hq-edit", "imagic"]
    for i in range(n):
        entry_id = f"case{i:02d}"
        for role, seed in (("x", 10), ("x_edit", 20), ("y", 30), ("y_edit", 40)):
            save_png(structured_image(seed + i, size), images_dir / f"{entry_id}_{role}.png")
        entries.append({
            "id": entry_id,
            "x_path": f"images/{entry_id}_x.png",
            "x_edit_path": f"images/{entry_id}_x_edit.png",
            "y_path": f"images/{entry_id}_y.png",
            "y_edit_path": f"images/{entry_id}_y_edit.png",
            "edit_category": categories[i % len(categories)],
            "source": sources[i % len(sources)],
        })
    manifest_path = root / "manifest.json"
    manifest_path.write_text(json.dumps({"schema_version": "1", "entries": entries}, indent=2))
    return manifest_path, [e["id"] for e in entries]


@pytest.fixture
def corpus(tmp_path):
    manifest_path, ids = make_corpus(tmp_path)
    return manifest_path, ids


def write_run_config(path, **updates):
    cfg = {"schema_version": "1", "seed": 0, "resolution": 64}
    cfg.update(updates)
    path.write_text(json.dumps(cfg, indent=2))
    return path
