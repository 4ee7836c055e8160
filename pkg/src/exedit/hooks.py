"""Instrumentation over denoiser internals: recording and injection.

A recording run captures, per sampling step, the feature tensor at one
residual layer of the upsampling path and the (Q, K) pre-softmax projections
of a range of self-attention layers (V is kept for inspection only). An
injecting run replaces those live tensors with the recorded ones, leaving V
and everything else to the live computation.

Layer indices are per kind: the feature layer indexes residual blocks, the
attention range indexes self-attention blocks, both 0-based in execution
order over the upsampling path (see the backend's layer catalog).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Literal, Sequence

import numpy as np

from .errors import HookError, InjectionShapeError

FEATURE = "feature"
SELF_ATTENTION = "self-attention"


@dataclass(frozen=True)
class HookSpec:
    """Which sites fire, and during which leading fraction of the run."""

    feature_layer: int = 4
    attn_layers: tuple[int, int] = (4, 11)  # inclusive bounds
    mode: Literal["record", "inject"] = "record"
    step_fraction: float = 1.0

    def __post_init__(self):
        lo, hi = self.attn_layers
        if lo > hi or lo < 0:
            raise HookError(f"invalid attention range {self.attn_layers}")
        if self.feature_layer < 0:
            raise HookError("feature_layer must be >= 0")
        if not (0.0 < self.step_fraction <= 1.0):
            raise HookError("step_fraction must lie in (0, 1]")
        if self.mode not in ("record", "inject"):
            raise HookError(f"unknown hook mode {self.mode!r}")

    @property
    def attention_indices(self) -> range:
        lo, hi = self.attn_layers
        return range(lo, hi + 1)

    def effective_steps(self, num_steps: int) -> int:
        return math.ceil(self.step_fraction * num_steps)

    def same_sites(self, other: "HookSpec") -> bool:
        return (self.feature_layer == other.feature_layer
                and self.attn_layers == other.attn_layers
                and self.step_fraction == other.step_fraction)


@dataclass(frozen=True)
class RunMetadata:
    schedule_hash: str
    backend_id: str
    seed: int


@dataclass
class InjectionRecord:
    """Everything captured by one recording run."""

    spec: HookSpec
    num_steps: int
    metadata: RunMetadata
    features: dict[int, np.ndarray] = field(default_factory=dict)
    self_attn: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    v_tensors: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)

    def expected_steps(self) -> range:
        return range(self.spec.effective_steps(self.num_steps))

    def validate(self) -> None:
        """Completeness: keys cover exactly the declared steps and layers."""
        steps = set(self.expected_steps())
        if set(self.features) != steps:
            raise HookError(
                f"record holds features for steps {sorted(self.features)}, "
                f"expected {sorted(steps)}"
            )
        expected_attn = {(s, l) for s in steps for l in self.spec.attention_indices}
        if set(self.self_attn) != expected_attn:
            missing = expected_attn - set(self.self_attn)
            extra = set(self.self_attn) - expected_attn
            raise HookError(
                f"attention record incomplete: missing {sorted(missing)[:4]}..., "
                f"unexpected {sorted(extra)[:4]}"
            )
        for key, (q, k) in self.self_attn.items():
            if q.shape[0] != k.shape[0]:
                raise HookError(f"Q/K row mismatch at {key}: {q.shape} vs {k.shape}")


@dataclass(frozen=True)
class HookEvent:
    """What a tap observes each time a hook site executes."""

    site: str                 # FEATURE or SELF_ATTENTION
    step: int
    layer: int
    replaced: bool
    tensors: tuple[np.ndarray, ...]  # live (post-replacement) values

Tap = Callable[[HookEvent], None]


class StepHooks:
    """Hook surface handed to the backend for a single denoising step.

    The backend must call :meth:`feature` after every residual block and
    :meth:`self_attention` inside every self-attention block of its
    upsampling path, whether or not the step is active; inactive or
    undeclared sites pass through untouched but still reach the taps, which
    is how tests prove nothing fires outside the declared set.
    """

    def __init__(self, runtime: "HookRuntime", step: int):
        self._rt = runtime
        self.step = step
        self.active = step < runtime.effective_steps

    def feature(self, layer: int, tensor: np.ndarray) -> np.ndarray:
        rt = self._rt
        declared = self.active and layer == rt.spec.feature_layer
        out = tensor
        replaced = False
        if declared:
            if rt.mode == "record":
                if self.step in rt.record.features:
                    raise HookError(
                        f"duplicate feature recording at step {self.step} "
                        "(is the recording pass running the denoiser more than once per step?)"
                    )
                rt.record.features[self.step] = np.array(tensor, copy=True)
            else:
                stored = rt.record.features[self.step]
                if stored.shape != tensor.shape:
                    raise InjectionShapeError(
                        f"feature at step {self.step}, layer {layer}: recorded "
                        f"{stored.shape} vs live {tensor.shape}"
                    )
                out = stored
                replaced = True
        rt.emit(HookEvent(FEATURE, self.step, layer, replaced, (out,)))
        return out

    def self_attention(self, layer: int, q: np.ndarray, k: np.ndarray,
                       v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        rt = self._rt
        declared = self.active and layer in rt.spec.attention_indices
        out_q, out_k = q, k
        replaced = False
        if declared:
            key = (self.step, layer)
            if rt.mode == "record":
                if key in rt.record.self_attn:
                    raise HookError(f"duplicate attention recording at {key}")
                rt.record.self_attn[key] = (np.array(q, copy=True), np.array(k, copy=True))
                rt.record.v_tensors[key] = np.array(v, copy=True)
            else:
                stored_q, stored_k = rt.record.self_attn[key]
                if stored_q.shape != q.shape or stored_k.shape != k.shape:
                    raise InjectionShapeError(
                        f"self-attention at step {self.step}, layer {layer}: recorded "
                        f"Q{stored_q.shape}/K{stored_k.shape} vs live Q{q.shape}/K{k.shape}"
                    )
                out_q, out_k = stored_q, stored_k
                replaced = True
        rt.emit(HookEvent(SELF_ATTENTION, self.step, layer, replaced, (out_q, out_k)))
        return out_q, out_k


class HookRuntime:
    """Run-local hook state: one per sampling run, never shared."""

    def __init__(self, spec: HookSpec, num_steps: int,
                 metadata: RunMetadata | None = None,
                 record: InjectionRecord | None = None,
                 taps: Sequence[Tap] = ()):
        self.spec = spec
        self.num_steps = num_steps
        self.mode = spec.mode
        self.taps = tuple(taps)
        self.effective_steps = spec.effective_steps(num_steps)
        if spec.mode == "record":
            if metadata is None:
                raise HookError("recording needs run metadata")
            self.record = InjectionRecord(
                spec=spec, num_steps=num_steps, metadata=metadata
            )
        else:
            if record is None:
                raise HookError("injection needs a recorded InjectionRecord")
            if record.num_steps != num_steps:
                raise HookError(
                    f"record covers {record.num_steps} steps, run has {num_steps}"
                )
            if not record.spec.same_sites(spec):
                raise HookError(
                    "hook spec differs from the one used during recording: "
                    f"{spec} vs {record.spec}"
                )
            record.validate()
            self.record = record

    def step_view(self, step: int) -> StepHooks:
        if not (0 <= step < self.num_steps):
            raise HookError(f"step {step} outside run of {self.num_steps} steps")
        return StepHooks(self, step)

    def emit(self, event: HookEvent) -> None:
        for tap in self.taps:
            tap(event)

    def finalize(self) -> InjectionRecord:
        """Validate completeness and hand out the record (record mode only)."""
        if self.mode != "record":
            raise HookError("finalize() only applies to recording runs")
        self.record.validate()
        return self.record


def validate_spec_against_catalog(spec: HookSpec, catalog) -> None:
    """Check that the declared layers exist in a backend's catalog."""
    residual = {ref.index for ref in catalog if ref.kind == "residual-up"}
    attention = {ref.index for ref in catalog if ref.kind == "self-attention"}
    if spec.feature_layer not in residual:
        raise HookError(
            f"feature layer {spec.feature_layer} not in catalog "
            f"(residual layers: {sorted(residual)})"
        )
    missing = set(spec.attention_indices) - attention
    if missing:
        raise HookError(
            f"attention layers {sorted(missing)} not in catalog "
            f"(self-attention layers: {sorted(attention)})"
        )


def inject_spec(record: InjectionRecord) -> HookSpec:
    """The injection-mode twin of the spec a record was captured with."""
    return replace(record.spec, mode="inject")
