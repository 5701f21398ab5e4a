"""Exception hierarchy shared by every stage of the pipeline.

Each error carries a machine-readable ``kind`` (the class name), the module it
originated from and a free-form ``context`` dict. The CLI maps
:class:`InputError` to exit code 2 and :class:`NumericalError` to exit code 3.
"""

from __future__ import annotations


class Ch4Error(Exception):
    exit_code = 1
    module = "ch4map"

    def __init__(self, message: str, *, module: str | None = None, **context):
        super().__init__(message)
        self.message = message
        if module is not None:
            self.module = module
        self.context = context

    @property
    def kind(self) -> str:
        return type(self).__name__

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "message": self.message,
            "module": self.module,
            "context": {k: _jsonable(v) for k, v in self.context.items()},
        }


def _jsonable(value):
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    try:
        return float(value)
    except (TypeError, ValueError):
        return str(value)


class InputError(Ch4Error, ValueError):
    """Bad files, shapes or configuration supplied by the caller."""

    exit_code = 2


class NumericalError(Ch4Error, ArithmeticError):
    """The data were well formed but the numerics could not proceed."""

    exit_code = 3


# cube_model
class MissingFile(InputError, FileNotFoundError):
    module = "cube"


class HeaderMismatch(InputError):
    module = "cube"


class MonotonicityViolation(InputError):
    module = "cube"


class EmptyWindow(InputError):
    module = "cube"


class IoFailure(InputError, OSError):
    module = "cube"


# spectral_target
class CoverageGap(InputError):
    module = "target"


class ShapeMismatch(InputError):
    pass


# background_stats
class DegenerateBackground(NumericalError):
    module = "background"


class FactorizationFailure(NumericalError):
    module = "background"


class TooFewPixels(InputError):
    module = "background"


# matched_filter
class ScopeMissingStats(InputError):
    module = "matched_filter"


class NonPositiveQuadraticForm(NumericalError):
    module = "matched_filter"


# diagnostics
class RankDeficient(NumericalError):
    module = "diagnostics"


class ZeroNoise(NumericalError):
    module = "diagnostics"


class NonPositiveRadiance(InputError):
    module = "diagnostics"


class TooFewColumns(InputError):
    module = "diagnostics"


class AllPixelsExcluded(NumericalError):
    module = "diagnostics"


# plume_quant / synth_scene
class EmptyMask(InputError):
    module = "plume"


class NonPositiveWind(InputError):
    module = "plume"


class NonPositiveLength(InputError):
    module = "plume"


class MissingWind(InputError):
    module = "cli"


class NonPositiveGain(InputError):
    module = "synth"


# cli
class ConfigError(InputError):
    module = "config"
