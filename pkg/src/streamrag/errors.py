"""Exception types shared across the package.

``InputError`` and its subclasses mark problems with user-supplied data
(files, flags, trace contents); everything else propagating out of the
library is treated as an internal error by the CLI.
"""


class InputError(Exception):
    """Bad input data: malformed files, misaligned ids, invalid config."""


class EmptyTraceError(InputError):
    """An utterance trace without words cannot be blocked or simulated."""


class DuplicateDocIdError(InputError):
    """Corpus contains the same doc_id more than once."""


class AlignmentError(InputError):
    """Records that must pair by utterance_id do not."""


class WrongToolError(ValueError):
    """A query of one tool kind was passed to an operation for another."""


class IncompleteSessionError(ValueError):
    """A session outcome is missing the fields a finished run must have."""
