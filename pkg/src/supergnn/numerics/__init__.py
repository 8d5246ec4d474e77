"""Dense linear algebra and reverse-mode differentiation."""

from supergnn.numerics.linalg import SvdResult, as_tensor, check_finite, singular_values, svd
from supergnn.numerics import autodiff
from supergnn.numerics.autodiff import Node, backward, parameter

__all__ = [
    "Node",
    "SvdResult",
    "as_tensor",
    "autodiff",
    "backward",
    "check_finite",
    "parameter",
    "singular_values",
    "svd",
]
