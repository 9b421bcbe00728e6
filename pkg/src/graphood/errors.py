"""Exception hierarchy.

Each family maps to one CLI exit code: configuration problems exit with 2,
malformed or incompatible data with 3, numerical failures with 4.
"""


class GraphOODError(Exception):
    exit_code = 1


class ConfigError(GraphOODError):
    exit_code = 2


class DatasetError(GraphOODError):
    exit_code = 3

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class MissingFileError(DatasetError):
    pass


class DimensionMismatchError(DatasetError):
    pass


class LabelRangeError(DatasetError):
    pass


class MaskError(DatasetError):
    """Mask file malformed or roles overlap."""


class EdgeError(DatasetError):
    pass


class MissingMaskError(DatasetError):
    """The method needs a node role the dataset does not provide."""


class NumericalError(GraphOODError):
    exit_code = 4


class ShapeError(ValueError):
    pass
