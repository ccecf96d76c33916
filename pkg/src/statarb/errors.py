"""Exception types raised across the pipeline."""


class StatArbError(Exception):
    """Base class for all pipeline errors."""


class MalformedRow(StatArbError, ValueError):
    def __init__(self, line: int, reason: str, path: str | None = None):
        self.line = line
        self.reason = reason
        self.path = path
        where = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"{where}: {reason}")


class OverlappingMembership(StatArbError, ValueError):
    pass


class UnknownSicDivision(StatArbError, ValueError):
    pass


class NonPositivePrice(StatArbError, ValueError):
    pass


class TickerMismatch(StatArbError, ValueError):
    pass


class ReturnMismatch(StatArbError, ValueError):
    pass


class OutOfRangeValue(StatArbError, ValueError):
    pass


class InvalidFragment(StatArbError, ValueError):
    pass


class MissingMonthlyLevel(StatArbError, KeyError):
    def __init__(self, ticker: str, month: str):
        self.ticker = ticker
        self.month = month
        super().__init__(f"no monthly level for {ticker} {month}")

    def __str__(self) -> str:
        return self.args[0]


class DuplicateMonth(StatArbError, ValueError):
    pass


class EmptyUniverse(StatArbError, ValueError):
    pass


class InsufficientHistory(StatArbError, ValueError):
    pass


class NegativeSvi(StatArbError, ValueError):
    pass


class ZeroPriorVolume(StatArbError, ValueError):
    pass


class DegenerateDay(StatArbError, ValueError):
    pass


class EmptyPanel(StatArbError, ValueError):
    pass


class SingleClassTrainingSet(StatArbError, ValueError):
    pass


class MissingVariable(StatArbError, KeyError):
    def __str__(self) -> str:
        return f"missing variable(s): {self.args[0]}"


class RangeTooShort(StatArbError, ValueError):
    pass


class TooFewScores(StatArbError, ValueError):
    pass


class MissingRealizedReturn(StatArbError, KeyError):
    pass


class SingleClass(StatArbError, ValueError):
    pass


class TooFewObservations(StatArbError, ValueError):
    pass


class GeometricUndefined(StatArbError, ValueError):
    pass


class DegenerateMoments(StatArbError, ValueError):
    pass


class DateMismatch(StatArbError, ValueError):
    pass


class InvalidConfig(StatArbError, ValueError):
    pass
