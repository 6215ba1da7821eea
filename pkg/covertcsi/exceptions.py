"""
Exceptions raised by the covertcsi package
The CLI maps each of them onto its exit-code contract
"""


class ChannelParseError(ValueError):
    """Channel file is malformed, misses a field or has the wrong shape"""

    def __init__(self, message: str, field: str = None, line: int = None, column: int = None):
        self.field = field
        self.line = line
        self.column = column
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line} column {column}")
        suffix = f" ({', '.join(where)})" if where else ''
        super().__init__(f"{message}{suffix}")


class ChannelValidationError(ValueError):
    """Channel file parsed but violates a semantic rule"""

    def __init__(self, message: str, report=None):
        self.report = report
        super().__init__(message)


class BudgetExceededError(RuntimeError):
    """A configured memory or enumeration budget would be exceeded"""


class InfeasibleError(RuntimeError):
    """The constrained feasible set is empty"""


class EncoderAtypical(RuntimeError):
    """Every multicoding candidate gives the observed state sequence probability zero"""
