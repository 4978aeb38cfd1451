"""Exception hierarchy shared across the package.

Every error the public operations can raise derives from WxError so
callers (CLI, HTTP layer) can map them to exit codes / status codes in
one place.
"""


class WxError(Exception):
    """Base class for all domain errors."""


# --- domain / grid geometry ------------------------------------------------

class BrushOutsideParent(WxError):
    """Brushed rectangle does not intersect the parent grid interior."""


class MarginViolation(WxError):
    """Snapped child would breach the required parent-cell margin."""


class TooSmall(WxError):
    """Snapped child grid has fewer than the minimum number of points."""


class IndexOutOfRange(WxError):
    """Grid point index outside [0, nx) x [0, ny)."""


# --- configuration / surrogate model ---------------------------------------

class ValidationFailed(WxError):
    """Run configuration failed validation; carries the report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class InvalidInterval(WxError):
    """start/end timestamps do not bound a positive whole-hour horizon."""


class HorizonTooLong(WxError):
    """Requested horizon exceeds the supported maximum."""


class AbortRequested(WxError):
    """Cooperative cancellation was observed mid-run."""


class NumericFailure(WxError):
    """Model state became non-finite."""


# --- workflow / run lifecycle ----------------------------------------------

class TaskFailed(WxError):
    def __init__(self, task, cause):
        super().__init__(f"task {task} failed: {cause}")
        self.task = task
        self.cause = cause


class InvalidState(WxError):
    """Operation not legal for the run's current status."""


class UnknownProject(WxError):
    pass


class UnknownRun(WxError):
    pass


class UnknownParent(WxError):
    pass


class UnknownEnsemble(WxError):
    pass


class RunActive(WxError):
    """Run is executing and cannot be deleted."""


class IncompatibleMember(WxError):
    """Run does not share the ensemble's root geometry or horizon."""


# --- ingestion / analytics --------------------------------------------------

class CorruptFrame(WxError):
    """Frame file is structurally invalid (quarantined, not retried)."""


class UnknownField(WxError):
    pass


class NothingIngested(WxError):
    """No frames ingested for the requested run/domain."""


class RangeNotIngested(WxError):
    """Requested hour range not fully ingested."""


class MemberNotIngested(WxError):
    """An ensemble member lacks the requested hours."""


class RunIncomplete(WxError):
    """Operation requires the run's full horizon to be ingested."""


class EmptyScenario(WxError):
    """Scenario defines no field condition."""


# --- service ------------------------------------------------------------

class DataDirNotEmpty(WxError):
    """Refusing to seed demo projects into a non-empty data directory."""
