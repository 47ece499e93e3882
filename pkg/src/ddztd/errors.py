"""Exception hierarchy shared by every module."""


class DdztdError(Exception):
    """Base class for all package errors."""


# graph construction
class GraphError(DdztdError, ValueError):
    pass


class DuplicateNode(GraphError):
    pass


class DanglingEdge(GraphError):
    pass


class EntryEqualsTarget(GraphError):
    pass


class EmptyVisitedSet(GraphError):
    pass


class IllegalMove(DdztdError, ValueError):
    pass


# game / enumeration limits
class CombinatorialBlowup(DdztdError):
    pass


class StateSpaceTooLarge(DdztdError):
    pass


class EmptyHistory(DdztdError, ValueError):
    pass


# trust engines
class UnrealizableObservation(DdztdError):
    """Every type assigns zero probability to the observed evidence."""


class DimensionMismatch(DdztdError, ValueError):
    pass


class UnknownSymbol(DdztdError, KeyError):
    pass


class NonFiniteLoss(DdztdError, FloatingPointError):
    pass


class NonFiniteValue(DdztdError, FloatingPointError):
    pass


class EvaluationFailure(DdztdError):
    pass


class EmptyDataset(DdztdError, ValueError):
    pass


# equilibrium
class NoEquilibriumFound(DdztdError):
    pass


# meta-learning
class EmptyScenarioSet(DdztdError, ValueError):
    pass


# dynkin games
class OrderingViolation(DdztdError, ValueError):
    pass


class InvalidSpec(DdztdError, ValueError):
    pass


# harness
class ConfigInvalid(DdztdError, ValueError):
    pass


class SubcommandUnknown(DdztdError, ValueError):
    pass
