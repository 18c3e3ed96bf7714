"""Exception types raised by the grasp builder, each carrying the CLI exit code
used when it escapes a command.
"""


class GraspBuilderError(Exception):
    """Root of all grasp builder failures"""

    exit_code = 1


class InputValidationError(GraspBuilderError, ValueError):
    """Bad arguments, malformed files or mismatched dimensions"""

    exit_code = 2


class MeshParseError(InputValidationError):
    """A mesh file line could not be parsed

    Attr:
        line_number (int): 1-based line of the offending input
    """

    def __init__(self, message: str, line_number: int) -> None:
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class HandDescriptionError(InputValidationError):
    """The kinematic tree in a hand file is not a single rooted tree"""


class DegenerateGeometryError(GraspBuilderError, ValueError):
    """Geometry with no usable extent: zero faces, flat hulls, parallel frames"""

    exit_code = 3


class EmptyResultError(GraspBuilderError):
    """A stage produced nothing to pass on"""

    exit_code = 4


class EmptyRegionError(EmptyResultError):
    """No face received a vote"""
