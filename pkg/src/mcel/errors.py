"""Exception taxonomy for the linking engine.

Every error raised on a contract violation derives from :class:`McelError`,
so callers (and the CLI) can distinguish data problems from genuine bugs.
"""

from __future__ import annotations


class McelError(Exception):
    """Base class for all engine errors."""


class ParseError(McelError):
    """A record in an input file could not be parsed."""

    def __init__(self, path: str, line: int, message: str) -> None:
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line
        self.message = message


class DuplicateIdError(McelError):
    """Two ontology records share the same entity id."""

    def __init__(self, entity_id: str) -> None:
        super().__init__(f"duplicate entity id: {entity_id!r}")
        self.entity_id = entity_id


class EmptyTextError(McelError):
    """An empty string was handed to an embedder."""


class DimensionMismatchError(McelError):
    """Vectors of different dimensions were combined."""


class NonPositiveTemperatureError(McelError):
    """The softmax temperature must be strictly positive."""


class EmptyTrainingSetError(McelError):
    """Contrastive training was invoked with no pairs."""


class TooManyOptionsError(McelError):
    """A choice set would exceed the 26-letter symbol alphabet."""


class DuplicateEntityError(McelError):
    """The same entity id appears twice within one choice set."""


class SingleOptionError(McelError):
    """Order-swap augmentation needs at least two options."""


class UnlabeledInstanceError(McelError):
    """A datastore entry was built from a choice set without a gold symbol."""


class RemoteUnavailableError(McelError):
    """A remote backend endpoint could not be reached."""


class MalformedRemoteResponseError(McelError):
    """A remote backend answered with a payload violating the wire contract."""


class CheckpointError(McelError):
    """A persisted encoder/index/datastore file is unreadable or inconsistent."""
