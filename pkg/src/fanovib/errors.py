"""Exception and warning types shared across the package."""

from __future__ import annotations


class FanovibError(Exception):
    """Base class for all package errors."""


class ValidationError(FanovibError, ValueError):
    """A parameter or configuration violates a model invariant."""


class ParseError(FanovibError, ValueError):
    """A configuration file could not be parsed."""


class DegenerateGeometry(FanovibError):
    """Two ring monomers coincide (zero separation angle)."""


class SelectionRuleViolation(FanovibError):
    """Ladder factor requested for indices that the first-order coupling
    cannot connect (|v - w| != 1)."""


class TruncationError(FanovibError):
    """A vibrational index exceeds the basis truncation."""


class ConvergenceError(FanovibError):
    """Quadrature failed to converge under node doubling."""


class NoOpenChannel(FanovibError):
    """Every vibrational channel is evanescent at the requested energy."""


class ChannelClosed(FanovibError):
    """The incoming channel is closed at the requested energy."""


class SingularRing(FanovibError):
    """The ring linear system is singular (energy sits on a bound-state
    pole); callers should nudge the energy and retry."""


class BandEdgeSingularity(FanovibError):
    """A channel momentum sits at a band edge where sin(k) vanishes and
    flux normalisation is undefined."""


class PoleAtEigenvalue(FanovibError):
    """Effective potential evaluated exactly at a scatterer eigenvalue."""


class OutOfBand(FanovibError):
    """Energy outside the propagating band |E| < 2J."""


class BadGeometry(FanovibError):
    """Wavepacket overlaps the scattering region at t = 0."""


class StepSizeTooLarge(FanovibError):
    """Norm drift during propagation exceeded tolerance."""


class PrematureExtraction(FanovibError):
    """Transmission extraction attempted before the packet cleared the
    scattering region."""


class FeatureNotFound(FanovibError):
    """No resonance feature (sign change of dT/dE) in the search window."""


class IllConditionedWarning(UserWarning):
    """Channel-mixing matrix condition estimate exceeds 1e12."""


class ZeroPointWarning(UserWarning):
    """Zero-point ratio large enough to strain the first-order coupling."""
