"""Exception hierarchy.

Every failure raised by the library derives from :class:`FairlensError`.
The two intermediate classes decide the CLI exit status: validation
problems exit with 3, numerical problems with 4.
"""


class FairlensError(Exception):
    exit_code = 1


class ValidationError(FairlensError):
    exit_code = 3


class NumericError(FairlensError):
    exit_code = 4


# graph-core
class CycleDetected(ValidationError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("cycle detected: " + " -> ".join(self.cycle))


class UnknownNode(ValidationError):
    def __init__(self, node):
        self.node = node
        super().__init__(f"unknown node {node!r}")


class DuplicateEdge(ValidationError):
    pass


class DuplicateNode(ValidationError):
    pass


class NotInterior(ValidationError):
    pass


class EndpointConditioned(ValidationError):
    pass


class OverlappingSets(ValidationError):
    pass


class RolesUnset(ValidationError):
    pass


class PathBudgetExceeded(NumericError):
    pass


# scm
class MissingMechanism(ValidationError):
    pass


class ParentMismatch(ValidationError):
    pass


class BadParameter(ValidationError):
    pass


class UnsupportedMechanism(ValidationError):
    pass


class MissingNoise(ValidationError):
    pass


class SingularSystem(NumericError):
    pass


class DegenerateConditioning(NumericError):
    pass


# effects
class BackdoorViolated(ValidationError):
    pass


class EmptyStratum(NumericError):
    pass


class NoDirectEdge(ValidationError):
    pass


class UnsupportedRegime(ValidationError):
    pass


# counterfactual
class InconsistentRecord(NumericError):
    pass


class NotDescendant(ValidationError):
    pass


class LabelUnknown(ValidationError):
    pass


# fairness metrics
class NonBinaryColumn(ValidationError):
    pass


class EmptyGroup(ValidationError):
    pass


class DegenerateLabels(ValidationError):
    pass


class NoPositivePredictions(ValidationError):
    pass


class ZeroDenominator(NumericError):
    pass


# cli-io
class SpecSyntaxError(ValidationError):
    def __init__(self, message, line, column, expected=()):
        self.line = line
        self.column = column
        self.expected = tuple(expected)
        text = f"{line}:{column}: {message}"
        if self.expected:
            text += " (expected " + ", ".join(self.expected) + ")"
        super().__init__(text)


class SemanticError(ValidationError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{line}:{column}: {message}"
        super().__init__(message)


class MissingColumn(ValidationError):
    pass


class CsvParseError(ValidationError):
    def __init__(self, message, row, column):
        self.row = row
        self.column = column
        super().__init__(f"row {row}, column {column!r}: {message}")
