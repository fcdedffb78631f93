"""Exception types."""


class SemanticMemoryError(Exception):
    pass


class ValidationError(SemanticMemoryError, ValueError):
    """Input violates a documented invariant."""


class ScenarioParseError(ValidationError):
    """Scenario file is malformed (bad JSON, missing or mistyped field)."""


class DegenerateInstanceError(SemanticMemoryError, ValueError):
    """A training sequence has zero probability under the grammar."""


class UnparseableError(SemanticMemoryError, ValueError):
    """No parse tree with nonzero probability exists."""


class BudgetExceededError(SemanticMemoryError, ValueError):
    """A bounded enumeration would visit more strings than allowed."""


class ArtifactVersionError(SemanticMemoryError):
    """A persisted artifact has an unknown or incompatible format version."""


class MissingArtifactError(SemanticMemoryError, FileNotFoundError):
    """A pipeline stage needs artifacts that an earlier stage did not produce."""
