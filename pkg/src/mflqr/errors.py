"""Exception hierarchy.

Every error carries an ``exit_code`` so the CLI can map failures to the
documented process status without a lookup table of its own.
"""


class MfLqrError(Exception):
    exit_code = 4


class DimensionMismatch(MfLqrError, ValueError):
    exit_code = 2


class IndefiniteWeight(MfLqrError, ValueError):
    exit_code = 2

    def __init__(self, condition, eigenvalue):
        self.condition = condition
        self.eigenvalue = float(eigenvalue)
        super().__init__(
            f"weight condition {condition} violated "
            f"(offending eigenvalue {self.eigenvalue:.6g})"
        )


# --- linear algebra ---------------------------------------------------------

class EigenFailure(MfLqrError):
    pass


class Unstable(MfLqrError):
    exit_code = 3

    def __init__(self, radius, msg=None):
        self.radius = float(radius)
        super().__init__(msg or f"operator spectral radius {self.radius:.6g} >= 1")


class SingularSystem(MfLqrError):
    pass


class NotStabilizing(Unstable):
    def __init__(self, radius):
        super().__init__(radius, f"gains are not stabilizing (spectral radius {float(radius):.6g})")


class SingularUps(MfLqrError):
    pass


class Singular22Block(MfLqrError):
    pass


class Singular11Block(MfLqrError):
    pass


class MaxIterExceeded(MfLqrError):
    exit_code = 6

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


class Divergence(MfLqrError):
    exit_code = 5


# --- simulation and data ----------------------------------------------------

class InvalidHorizon(MfLqrError, ValueError):
    exit_code = 2


class NonFiniteState(MfLqrError):
    exit_code = 5

    def __init__(self, index):
        self.index = index
        super().__init__(f"state became non-finite or exceeded the divergence bound at {index}")


class InsufficientRollouts(MfLqrError, ValueError):
    exit_code = 2


class RankDeficient(MfLqrError):
    pass


class RankDeficientRegressor(RankDeficient):
    pass


class SingularData(RankDeficient):
    pass


class IllConditioned(MfLqrError):
    pass


class DivergentRollout(Divergence):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


# --- configuration ----------------------------------------------------------

class ParseError(MfLqrError):
    exit_code = 1


class SchemaError(ParseError):
    pass


class InvariantError(MfLqrError):
    exit_code = 2
