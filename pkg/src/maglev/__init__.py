"""Graph learning for keystep recognition on egocentric video segments.

Builds temporal, multi-view, and heterogeneous multimodal graphs from
per-segment features, trains message-passing networks for node
classification, and evaluates on the egocentric view only.
"""

__version__ = "0.1.0"
