"""Exception types shared across the toolkit.

The CLI maps these onto its stable exit codes: configuration problems
(OntologyError, ConfigError) exit 3, degenerate evaluation inputs exit 4,
plain I/O failures exit 2.
"""


class CxrTriageError(Exception):
    """Base class for all toolkit errors."""


class OntologyError(CxrTriageError):
    """Ontology file fails schema or invariant validation."""


class ConfigError(CxrTriageError):
    """Graph or training configuration is invalid."""


class ShapeError(CxrTriageError):
    """Tensor shapes do not satisfy an operation's contract."""


class NumericError(CxrTriageError):
    """A node produced non-finite values (contract violation)."""


class DegenerateDataError(CxrTriageError):
    """Evaluation input cannot support the requested statistic."""
