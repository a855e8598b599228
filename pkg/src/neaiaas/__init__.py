"""Session-based AI service delivery over a mobile network: service profiles,
catalog discovery, risk-aware anchoring, atomic compute+QoS binding,
telemetry, make-before-break migration and Monte-Carlo experiments."""

__version__ = "0.1.0"
