"""Exception hierarchy.

Every error carries a ``context`` mapping so the CLI can emit a
machine-readable ``{error, context}`` record.
"""

from __future__ import annotations

from typing import Any


class CarbosoundError(Exception):
    """Base class for all library errors."""

    def __init__(self, message: str = "", **context: Any) -> None:
        super().__init__(message or self.__class__.__name__)
        self.context = context

    @property
    def name(self) -> str:
        return self.__class__.__name__


# signal_model
class UnreadableFile(CarbosoundError):
    pass


class NonUniformSampling(CarbosoundError, ValueError):
    pass


class EmptySignal(CarbosoundError, ValueError):
    pass


class MismatchedGrids(CarbosoundError, ValueError):
    pass


class InvalidWaveform(CarbosoundError, ValueError):
    pass


class InvalidManifest(CarbosoundError, ValueError):
    pass


# spectral
class UnknownWindow(CarbosoundError, ValueError):
    pass


class AllBelowFloor(CarbosoundError, ValueError):
    pass


# energy_metrics
class ZeroEnergySignal(CarbosoundError, ValueError):
    pass


class NonPositiveImpedance(CarbosoundError, ValueError):
    pass


class ZeroMean(CarbosoundError, ValueError):
    pass


class TooFewValues(CarbosoundError, ValueError):
    pass


# phase_metrics
class InsufficientBins(CarbosoundError, ValueError):
    pass


class UnsortedDays(CarbosoundError, ValueError):
    pass


# harmonic_metrics
class NoFundamental(CarbosoundError, ValueError):
    pass


class NonPositiveInput(CarbosoundError, ValueError):
    pass


class NonPositiveFundamental(CarbosoundError, ValueError):
    pass


class TooFewPoints(CarbosoundError, ValueError):
    pass


# regression
class FitDiverged(CarbosoundError, RuntimeError):
    pass


class DegenerateData(CarbosoundError, ValueError):
    pass


class DegenerateX(DegenerateData):
    pass


class ZeroVariance(CarbosoundError, ValueError):
    pass


# synth_oracle
class AliasedHarmonic(CarbosoundError, ValueError):
    pass


class IoFailure(CarbosoundError, OSError):
    pass
