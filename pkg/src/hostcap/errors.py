"""Exception hierarchy shared across the toolkit."""


class HostcapError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(HostcapError):
    """Vector/matrix dimensions are inconsistent with the network size."""


class GraphNotTree(HostcapError):
    """Edge set is not a spanning tree rooted at the substation bus."""


class NoSolution(HostcapError):
    """The exact power-flow equations admit no solution for the given load."""


class NonConvergence(HostcapError):
    """Iteration cap reached without meeting the convergence tolerance."""


class ParseError(HostcapError):
    """Malformed input file."""


class EmptyFile(ParseError):
    """Input file contains no data rows."""


class BadCount(HostcapError):
    """Requested subsample size is out of range."""


class BadDelta(HostcapError):
    """Risk level outside [0, 1)."""


class NumericalFailure(HostcapError):
    """Solver failed to reach the requested accuracy."""


class BaseInfeasible(HostcapError):
    """Network violates the risk constraints even with zero installed solar."""


class InvalidCertificate(HostcapError):
    """Infeasibility certificate fails dual-feasibility or margin checks."""


class ProvenanceMismatch(HostcapError):
    """Knowledge base was built for different data or risk parameters."""


class InvariantViolation(HostcapError):
    """A stored or computed object violates a structural invariant."""
