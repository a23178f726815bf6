class GenMixError(Exception):
    pass


class ConfigError(GenMixError, ValueError):
    pass


class DataError(GenMixError, ValueError):
    pass


class IdxFormatError(DataError):

    def __init__(self, path, offset, message):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{self.path} @ byte {offset}: {message}")


class ShapeError(GenMixError, ValueError):

    def __init__(self, layer_name, expected, actual):
        self.layer_name = layer_name
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"layer '{layer_name}' expected input shape {expected}, got {actual}")


class GraphError(GenMixError, RuntimeError):
    pass


class NumericalError(GenMixError, ArithmeticError):
    pass


class DivergenceError(NumericalError):

    def __init__(self, epoch, message="loss became NaN"):
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {message}")


class CheckpointFormatError(GenMixError, ValueError):
    pass


class ArchitectureMismatchError(GenMixError, ValueError):
    pass
