"""
Exception hierarchy shared by the algorithms, the services and the CLI.
"""
from typing import Optional


class CurlEquilibError(Exception):
    """Root of all library errors"""


class InvalidArgumentError(CurlEquilibError, ValueError):
    """A caller passed an argument outside the documented range"""


class MeshFormatError(InvalidArgumentError):
    """Parse error in an ASCII mesh file"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MeshTopologyError(InvalidArgumentError):
    """Degenerate, non-conforming or badly tagged mesh"""


class QuadratureRuleUnavailable(InvalidArgumentError):
    """No rule for the requested exactness"""


class FactorizationError(CurlEquilibError):
    """A direct factorization met a pivot that is singular to working precision"""


class InfeasibleConstraintsError(CurlEquilibError):
    """The constraint set of a least-squares problem is inconsistent"""

    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (constraint residual {residual:.3e})")


class CompatibilityError(CurlEquilibError):
    """Neumann compatibility of an element problem is violated"""


class PostCheckError(CurlEquilibError):
    """A verified post-condition of the pipeline failed"""
