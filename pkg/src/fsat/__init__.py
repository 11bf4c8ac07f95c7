"""Feature-space adversarial attacks driven by channel-statistics edits."""

__version__ = "0.1.0"

from .autograd import Tensor, backward, NumericsError, GraphError  # noqa: F401
