"""Exception hierarchy.

Every error carries an ``exit_code`` so the command-line front end can map
failures to its documented status codes without inspecting messages.
"""


class ExtCompError(Exception):
    exit_code = 1


class ConfigError(ExtCompError):
    exit_code = 2


class DataError(ExtCompError):
    exit_code = 3


class MissingColumn(DataError):
    pass


class BadValue(DataError):
    def __init__(self, message, row=None, column=None):
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.row = row
        self.column = column


class EstimationError(ExtCompError):
    exit_code = 4


class GlmError(EstimationError):
    pass


class NonConvergence(GlmError):
    pass


class SingularInformation(GlmError):
    pass


class Separation(GlmError):
    pass


class EmptyCell(EstimationError):
    pass


class PositivityViolation(EstimationError):
    pass


class ZeroWeightMass(EstimationError):
    pass


class DegenerateRatio(EstimationError):
    pass


class MissingSharedArm(EstimationError):
    pass


class MissingContributions(EstimationError):
    pass


class TooManyFailedResamples(EstimationError):
    pass


class ScenarioFailure(ExtCompError):
    exit_code = 5
