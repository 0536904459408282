"""fracnet: disc-fracture networks, pipe flow, quartz dissolution, and
random-forest feature analysis."""

__version__ = "0.1.0"
