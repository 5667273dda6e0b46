"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line front end can map
failures onto its documented exit statuses without a lookup table.
"""
from __future__ import annotations


class PolyTransportError(Exception):
    """Base class for all package errors."""

    exit_code = 5


class ConfigError(PolyTransportError):
    exit_code = 2


class GridMismatch(PolyTransportError):
    """Arrays or trajectories defined on incompatible grids."""

    exit_code = 5


class Condition1Error(PolyTransportError):
    """The size operator does not have a simple zero eigenvalue with a gap."""

    exit_code = 3


class ZeroModeMissing(Condition1Error):
    pass


class ZeroModeNotSimple(Condition1Error):
    pass


class SpectralGapViolated(Condition1Error):
    pass


class ComplexEquilibrium(Condition1Error):
    pass


class IllConditionedModeBasis(Condition1Error):
    pass


class Condition2Violated(PolyTransportError):
    """Initial surface data are not in deposition/pickup equilibrium."""

    exit_code = 4


class NumericalFailure(PolyTransportError):
    exit_code = 5


class CFLViolation(NumericalFailure):
    pass


class BlowUp(NumericalFailure):
    pass


class SplittingStepTooLarge(NumericalFailure):
    pass
