class PLUFGError(Exception):
    """Base class for errors raised by plufg."""


class GraphError(PLUFGError, ValueError):
    """Invalid graph construction input (isolated node, negative weight, ...)."""


class ScalingSetError(PLUFGError, ValueError):
    """A scaling function set fails the partition-of-unity or endpoint checks."""


class AdmissibilityError(PLUFGError, ValueError):
    """A (phi, p) pair outside the bounded-zeta region."""


class NumericalError(PLUFGError, ArithmeticError):
    """Non-finite values produced during an iteration."""


class DatasetError(PLUFGError, ValueError):
    """Malformed dataset directory or file."""
