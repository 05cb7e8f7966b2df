"""Break diagnosis of loss-of-coolant transients with a residual CNN,
post-hoc attribution (Grad-CAM++ and LIME) and attribution-driven input
selection, on a synthetic generator with planted ground truth."""

__version__ = "0.1.0"
