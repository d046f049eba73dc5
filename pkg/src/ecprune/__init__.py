"""Event-guided cascade pruning of visual tokens.

Event streams drive three cascaded stages: keyframe sampling from activity
flux, token-aligned motion-saliency filtering, and event/attention rank
fusion for layer-wise pruning. Statistics for peripheral attention bias and
an analytical attention-cost model are included.
"""

from ecprune.errors import ConfigError, EcpError, InputDataError, InvariantViolation

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "EcpError",
    "InputDataError",
    "InvariantViolation",
    "__version__",
]
