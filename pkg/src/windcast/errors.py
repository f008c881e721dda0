"""Exception hierarchy shared by all windcast modules."""


class WindcastError(Exception):
    """Base class for every error raised by this package."""


class MissingFile(WindcastError, FileNotFoundError):
    pass


class ParseError(WindcastError, ValueError):
    def __init__(self, line: int, message: str = "malformed row"):
        self.line = line
        super().__init__(f"line {line}: {message}")


class CadenceError(WindcastError, ValueError):
    pass


class NegativeSpeed(WindcastError, ValueError):
    def __init__(self, line: int):
        self.line = line
        super().__init__(f"line {line}: negative wind speed")


class EmptyIntersection(WindcastError, ValueError):
    pass


class DegenerateSplit(WindcastError, ValueError):
    pass


class EmptyTrainSet(WindcastError, ValueError):
    pass


class InvalidConfig(WindcastError, ValueError):
    pass


class DimensionMismatch(WindcastError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class RankDeficient(WindcastError, ValueError):
    pass


class StaleCache(WindcastError, RuntimeError):
    pass


class NonFiniteOutput(WindcastError, FloatingPointError):
    pass


class DivergedLoss(WindcastError, FloatingPointError):
    pass


class InsufficientData(WindcastError, ValueError):
    pass


class LpInfeasible(WindcastError, RuntimeError):
    pass


class IterationLimit(WindcastError, RuntimeError):
    pass


class OutOfBounds(WindcastError, ValueError):
    pass


class InvalidInstance(WindcastError, ValueError):
    pass


class ZeroPerfectProfit(WindcastError, ZeroDivisionError):
    pass


class TooShort(WindcastError, ValueError):
    pass


class DegenerateData(WindcastError, ValueError):
    pass


class TooFewInstances(WindcastError, ValueError):
    pass
