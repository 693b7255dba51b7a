"""Active-learning engine for camera-trap image pools.

Post-processes pretrained-detector output (empty filtering, counting,
cropping), learns a low-dimensional embedding with triplet or
cross-entropy loss, and drives a query-selection loop with six strategies
against a simulated or live human oracle.
"""

__version__ = "0.1.0"
