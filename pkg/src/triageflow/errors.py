"""Exception types shared across the package.

Everything raised on purpose derives from ``TriageError`` so callers can
catch one base class at the boundary (CLI, HTTP service) and map it to an
exit code or status code.
"""

from __future__ import annotations


class TriageError(Exception):
    """Base class for all errors raised by this package."""


# ---------------------------------------------------------------------------
# Flowchart documents


class FlowchartParseError(TriageError):
    """A flowchart document could not be parsed.

    ``locus`` points at the offending place: a file path, a JSON path such
    as ``nodes[3].kind``, or a line/column pair for syntax errors.
    """

    def __init__(self, message: str, locus: str | None = None) -> None:
        self.locus = locus
        if locus:
            message = f"{message} (at {locus})"
        super().__init__(message)


class DuplicateNodeId(FlowchartParseError):
    """Two nodes in one document share an id."""


class UnknownNodeKindPrefix(FlowchartParseError):
    """A node id does not start with a recognised kind letter."""


class InvalidFlowchart(TriageError):
    """An operation that requires a valid flowchart was given a broken one."""


class EmptyLibrary(TriageError):
    """No usable flowchart survived loading."""


# ---------------------------------------------------------------------------
# Retrieval


class EmbedderFailure(TriageError):
    """The embedding backend failed or returned the wrong shape."""


class IndexFormatError(TriageError):
    """A persisted index file is unreadable or incompatible."""


class SelectorFailure(TriageError):
    """The selection stage failed outright (not merely 'no chart fits')."""


# ---------------------------------------------------------------------------
# Interpretation


class MalformedStructuredOutput(TriageError):
    """Classifier output did not match the required four-field shape."""


class ClassifierFailure(TriageError):
    """The classifier backend failed after retries."""


# ---------------------------------------------------------------------------
# Conversation


class InvalidDemographics(TriageError):
    """Sex or age missing or outside the supported range."""


class SessionClosed(TriageError):
    """A message arrived for a session already in a terminal phase."""


class UnresolvableRedirect(TriageError):
    """A redirect points at a chart the library cannot supply."""


class RedirectDepthExceeded(TriageError):
    """A session hopped through more charts than the configured limit."""


class ComposerFailure(TriageError):
    """Reply composition failed even after falling back to templates."""


# ---------------------------------------------------------------------------
# Provider gateway


class ProviderError(TriageError):
    """Base class for provider transport problems."""


class ProviderTimeout(ProviderError):
    """The provider did not answer inside the deadline (after retries)."""


class RateLimited(ProviderError):
    """The provider kept returning 429 after retries."""


class AuthError(ProviderError):
    """The provider rejected the credentials. Never retried."""


class MalformedProviderResponse(ProviderError):
    """The provider answered with a body we cannot use."""


class PromptRenderError(TriageError):
    """A prompt template was rendered with missing or surplus values."""


# ---------------------------------------------------------------------------
# Evaluation harness


class LabelNotInLibrary(TriageError):
    """An evaluation record is labelled with a chart id the library lacks."""


class UnparsableGeneration(TriageError):
    """A generation response could not be split into the expected sets."""
