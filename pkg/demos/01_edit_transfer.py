"""Walk through one full exemplar edit transfer on the toy backend.

We build a synthetic exemplar pair (a scene and a "warmed" version of it),
a different test scene, and push everything through the pipeline: VLM text
capture (scripted here), embedding-space delta, inversion, the recording
pass, and the injected edited pass. The toy denoiser demonstrates the
mechanics deterministically; it does not produce semantically meaningful
imagery, so read the outputs as machinery traces, not art.

Run from the repo root:  python demos/01_edit_transfer.py
"""

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from exedit import EditConfig, ExemplarTask, PromptTemplates, edit
from exedit.clients import HashImageEncoder, HashTextEncoder, ScriptedVLM
from exedit.editor import PipelineClients
from exedit.hooks import HookSpec
from exedit.schedule import NoiseSchedule
from exedit.toy import ToyDiffusionBackend

OUT = Path(__file__).parent / "output" / "edit_transfer"
OUT.mkdir(parents=True, exist_ok=True)
RESOLUTION = 64


def scene(seed: int) -> np.ndarray:
    """A deterministic little landscape: sky gradient, sun, ridge line."""
    rng = np.random.default_rng(seed)
    yy = np.linspace(0, 1, RESOLUTION)[:, None] * np.ones((1, RESOLUTION))
    img = np.stack([120 + 60 * yy, 140 + 40 * yy, 200 - 80 * yy], axis=-1)
    cx, cy, r = rng.integers(10, 54), rng.integers(8, 24), 6
    xs, ys = np.meshgrid(np.arange(RESOLUTION), np.arange(RESOLUTION))
    img[(xs - cx) ** 2 + (ys - cy) ** 2 < r**2] = [250, 240, 180]
    ridge = (36 + 10 * np.sin(np.linspace(0, 3 * np.pi, RESOLUTION) + seed)).astype(int)
    for col in range(RESOLUTION):
        img[ridge[col]:, col] = [74, 96, 60]
    img += rng.normal(0, 4, img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def warm(img: np.ndarray) -> np.ndarray:
    """The 'edit': push reds up, blues down -- a global warming filter."""
    shifted = img.astype(np.int16)
    shifted[..., 0] += 45
    shifted[..., 2] -= 35
    return np.clip(shifted, 0, 255).astype(np.uint8)


x = scene(1)
x_edit = warm(x)
y = scene(9)
task = ExemplarTask(id="warmth", x=x, x_edit=x_edit, y=y)

# The VLM is scripted so the run is self-contained; swap in an HTTP client
# (config kind "http") to caption with a real model. Every edit job gets its
# own client session, as the concurrency contract asks.
def make_clients() -> PipelineClients:
    return PipelineClients(
        vlm=ScriptedVLM([
            "The whole image was warmed: reds boosted and blues reduced.",
            "The test scene rendered in warm orange tones.",
        ]),
        image_encoder=HashImageEncoder(dim=32, seed=0),
        text_encoder=HashTextEncoder(dim=16, tokens=77, seed=0),
        backend=ToyDiffusionBackend(resolution=RESOLUTION, seed=0),
        schedule=NoiseSchedule.scaled_linear(1000, 50),
        templates=PromptTemplates.load_default(),
    )


print("captured text and embeddings, running the two-pass edit...")
result = edit(task, EditConfig(hook_spec=HookSpec(), steps=50, guidance_scale=3.0),
              make_clients())

print(f"  g_text:    {result.text.g_text}")
print(f"  g_caption: {result.text.g_caption}")
print(f"  embedding: {result.embedding.combined.shape} "
      f"({result.embedding.k} delta rows + {result.embedding.text_tokens.shape[0]} caption rows)")
for stage, secs in result.provenance.stage_seconds.items():
    print(f"  {stage:<18} {secs:7.3f} s")

# How strongly the conditioning pulls depends on the guidance scale; sweep it.
panels = [("x", x), ("x_edit", x_edit), ("y", y),
          ("reconstruction", result.reconstruction)]
for scale in (1.0, 3.0, 7.5):
    cfg = EditConfig(hook_spec=HookSpec(), steps=50, guidance_scale=scale)
    out = edit(task, cfg, make_clients())
    panels.append((f"edited (cfg {scale})", out.image))

fig, axes = plt.subplots(1, len(panels), figsize=(3 * len(panels), 3.4))
for ax, (title, img) in zip(axes, panels):
    ax.imshow(img)
    ax.set_title(title, fontsize=9)
    ax.axis("off")
fig.tight_layout()
fig.savefig(OUT / "panel.png", dpi=110)
print(f"wrote {OUT / 'panel.png'}")

(OUT / "provenance.json").write_text(result.provenance.to_json())
print(f"wrote {OUT / 'provenance.json'}")
print(json.dumps({"output_checksum": result.provenance.checksums["output"]}, indent=2))
