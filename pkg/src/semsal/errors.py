"""Exception hierarchy shared by all semsal modules.

``ValidationError`` covers semantic problems (bad config values, manifest
schema violations, shape/range mismatches); ``FormatError`` covers corrupt or
truncated binary files.  The CLI maps the former to exit code 1 and the
latter, together with plain ``OSError``, to exit code 2.
"""


class SemsalError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(SemsalError):
    """Input data or configuration violates a documented invariant."""


class FormatError(SemsalError):
    """A binary artifact (blob, map, checkpoint) is corrupt or truncated."""


class TrainingError(SemsalError):
    """Optimization produced a non-finite loss or gradient."""
