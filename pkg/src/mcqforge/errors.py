"""Exception hierarchy shared across the pipeline."""


class MCQForgeError(Exception):
    """Base class for all pipeline errors."""


# -- corpus ingestion ---------------------------------------------------------

class MissingRoot(MCQForgeError):
    pass


class EmptyDocument(MCQForgeError):
    pass


# -- embedding ----------------------------------------------------------------

class BackendUnavailable(MCQForgeError):
    """Remote backend unreachable after retries."""


class DimMismatch(MCQForgeError):
    pass


class ZeroVector(MCQForgeError):
    pass


class Overflow(MCQForgeError):
    """Value outside the binary16 representable range."""


# -- vector store -------------------------------------------------------------

class DuplicateRef(MCQForgeError):
    pass


class KindMismatch(MCQForgeError):
    pass


class EmptyIndex(MCQForgeError):
    pass


class BadMagic(MCQForgeError):
    pass


class VersionUnsupported(MCQForgeError):
    pass


class TruncatedPayload(MCQForgeError):
    pass


class MetaRowMismatch(MCQForgeError):
    pass


# -- LLM gateway --------------------------------------------------------------

class TransientError(MCQForgeError):
    """Retryable failure (429, 5xx, timeout)."""


class PermanentError(MCQForgeError):
    """Non-retryable HTTP failure."""


class MockMiss(MCQForgeError):
    """Scripted mock has no response for this request."""


# -- MCQ synthesis ------------------------------------------------------------

class CandidateRejected(MCQForgeError):
    """A generated candidate failed structural validation.

    Subclass name is the reason code recorded in rejected.jsonl.
    """

    @property
    def reason(self) -> str:
        return type(self).__name__


class ParseFailure(CandidateRejected):
    pass


class OptionCountMismatch(CandidateRejected):
    pass


class AnswerNotInOptions(CandidateRejected):
    pass


class SelfContainmentViolation(CandidateRejected):
    pass


class ScoreParseFailure(CandidateRejected):
    pass


# -- trace distillation -------------------------------------------------------

class LeakUnremovable(MCQForgeError):
    pass


class TraceParseFailure(MCQForgeError):
    pass


# -- evaluation ---------------------------------------------------------------

class QuestionExceedsBudget(MCQForgeError):
    pass


class EmptySubset(MCQForgeError):
    pass


class ZeroBaseline(MCQForgeError):
    pass


# -- pipeline orchestration ---------------------------------------------------

class MissingUpstream(MCQForgeError):
    pass


class ConfigInvalid(MCQForgeError):
    pass


class StageFailed(MCQForgeError):
    pass


class CorruptManifest(MCQForgeError):
    pass
