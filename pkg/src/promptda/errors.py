"""Exception types raised by the library.

Every error that callers are expected to handle inherits from
:class:`PromptDAError` so pipelines can catch one base class at stage
boundaries.
"""


class PromptDAError(Exception):
    """Base class for all library errors."""


class ShapeMismatchError(PromptDAError):
    """Array arguments have incompatible shapes."""


class ZeroNormFeatureError(PromptDAError):
    """A feature row has (near-)zero norm and cannot be cosine-normalized."""


class UnknownSampleError(PromptDAError):
    """A sample id was not found in the encoder's sample table."""


class DecodeError(PromptDAError):
    """An image file could not be decoded."""


class SequenceTooLongError(PromptDAError):
    """A token sequence exceeds the text encoder's maximum length."""


class DegenerateEmbeddingError(PromptDAError):
    """A text embedding collapsed to the zero vector before normalization."""


class EmptyClassError(PromptDAError):
    """A class has no usable samples for the requested operation."""


class DivergedLossError(PromptDAError):
    """Source-phase training produced a non-finite loss."""


class NonFiniteLossError(PromptDAError):
    """Target-phase training produced a non-finite loss."""


class EmptyRecordListError(PromptDAError):
    """A pseudo-label record list is empty."""


class EmptyEvalSetError(PromptDAError):
    """An evaluation set contains no samples."""


class ConfigInvalidError(PromptDAError):
    """A configuration value or key is invalid."""


class ClassMismatchAcrossDomainsError(PromptDAError):
    """Domains of a dataset do not expose the identical class set."""


class EmptyDomainError(PromptDAError):
    """A dataset domain contains no samples."""


class DegenerateSpecError(PromptDAError):
    """A synthetic task specification cannot produce a valid task."""


class BackendUnavailableError(PromptDAError):
    """The requested encoder backend cannot be constructed."""


class ChecksumMismatchError(PromptDAError):
    """A frozen asset changed between phases (content hash differs)."""
