"""Exception hierarchy shared across the pipeline."""


class ExeditError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(ExeditError):
    """Array shapes or sizes are incompatible with an operation."""


class NumericError(ExeditError):
    """Non-finite or otherwise unusable numeric input."""


class NumericDivergenceError(NumericError):
    """A latent blew up or went non-finite mid-trajectory; message names the step."""


class CaptureError(ExeditError):
    """The edit-capture stage produced an unusable result (e.g. empty VLM text)."""


class VLMTransportError(ExeditError):
    """A single VLM request failed at the transport level; retriable."""


class VLMUnavailableError(ExeditError):
    """The VLM stayed unreachable after exhausting retries."""


class ExternalModelError(ExeditError):
    """An encoder / feature-network / scorer client failed."""


class ScheduleError(ExeditError):
    """Invalid noise-schedule construction."""


class UnsupportedBackendError(ExeditError):
    """The denoiser does not expose the structure this pipeline needs."""


class HookError(ExeditError):
    """Hook specification does not match the backend's layer catalog, or
    recording/injection bookkeeping is inconsistent."""


class InjectionShapeError(HookError):
    """A recorded tensor does not match the live tensor it should replace;
    message names the step and layer."""


class MetadataMismatchError(ExeditError):
    """An injection record was produced under a different schedule/backend/config."""


class ManifestError(ExeditError):
    """Dataset manifest is missing, malformed, or violates the schema."""


class ConfigError(ExeditError):
    """Run configuration failed validation."""


class StageError(ExeditError):
    """Wraps a failure inside a multi-stage pipeline with the stage name.

    The original exception is preserved as ``__cause__``.
    """

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage
