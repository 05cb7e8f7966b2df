"""Exception hierarchy shared by every stage of the pipeline.

The CLI maps these onto exit codes: validation/config problems -> 2,
numeric failures -> 3, I/O problems -> 4.
"""


class TresDiagError(Exception):
    exit_code = 1


class ConfigError(TresDiagError, ValueError):
    exit_code = 2


class ValidationError(TresDiagError, ValueError):
    exit_code = 2


class ShapeError(ValidationError):
    def __init__(self, message, *shapes):
        if shapes:
            message = f"{message} (shapes: {', '.join(str(tuple(s)) for s in shapes)})"
        super().__init__(message)
        self.shapes = tuple(tuple(s) for s in shapes)


class UnsupportedArchitectureError(ValidationError):
    pass


class NumericError(TresDiagError, ArithmeticError):
    exit_code = 3

    def __init__(self, message, coordinate=None, last_good=None):
        super().__init__(message)
        self.coordinate = coordinate
        self.last_good = last_good


class GraphLookupError(TresDiagError, KeyError):
    pass


class DatasetLoadError(TresDiagError, OSError):
    exit_code = 4

    def __init__(self, message, path=None, case_id=None):
        super().__init__(message)
        self.path = path
        self.case_id = case_id
