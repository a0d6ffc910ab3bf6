"""Exception types shared across the package.

Every failure mode the library can report deliberately has its own class so
callers (and the CLI exit-code mapping) can dispatch on type instead of
parsing messages.
"""


class LQMFGError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(LQMFGError):
    """A model field has the wrong shape; the message names the field."""


class NotPSD(LQMFGError):
    """A cost weight that must be positive semi-definite is not."""

    def __init__(self, name: str, min_eigenvalue: float):
        self.name = name
        self.min_eigenvalue = min_eigenvalue
        super().__init__(f"{name} is not PSD (most negative eigenvalue {min_eigenvalue:.3e})")


class NotPD(LQMFGError):
    """A control weight that must be positive definite is not."""

    def __init__(self, name: str, min_eigenvalue: float):
        self.name = name
        self.min_eigenvalue = min_eigenvalue
        super().__init__(f"{name} is not PD (smallest eigenvalue {min_eigenvalue:.3e})")


class BadPi(LQMFGError):
    """The type-frequency vector is not a strictly positive probability vector."""


class IndexOutOfRange(LQMFGError):
    """A block or player index is outside its valid range."""


class BlowUp(LQMFGError):
    """A backward integration escaped in finite time; carries the report."""

    def __init__(self, report):
        self.report = report
        super().__init__(
            f"finite escape at node {report.escape_node} "
            f"(l1 norm {report.norm_at_escape:.3e} > {report.threshold:.3e})"
        )


class NonFiniteField(LQMFGError):
    """The ODE field returned NaN/Inf at a finite state (an assembly bug)."""


class AsymmetryDrift(LQMFGError):
    """A state integrated as symmetric drifted beyond tolerance (a field bug)."""


class TimeOutOfRange(LQMFGError):
    """An evaluation time lies outside the solution horizon [0, T]."""


class GridMismatch(LQMFGError):
    """Two objects that must share a time grid do not."""


class KNotOne(LQMFGError):
    """An operation restricted to homogeneous minor players got K != 1."""


class NTooLargeForMemory(LQMFGError):
    """The dense finite-N assembly would exceed the configured size cap."""


class PermutationMismatch(LQMFGError):
    """Dense and symmetric finite-N solves disagree (internal inconsistency)."""


class EmptyType(LQMFGError):
    """A per-type statistic was requested for a type with no players."""


class EmptyBatch(LQMFGError):
    """A batch statistic was requested over zero trajectories."""


class SeedStreamExhausted(LQMFGError):
    """The per-player noise stream ran out (practically unreachable)."""


class NonFiniteState(LQMFGError):
    """A simulated state exploded; the message carries the step index."""


class ModelFileError(LQMFGError):
    """A model file is missing, malformed, or names unknown/missing keys."""
