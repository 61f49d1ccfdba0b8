"""histofuse: breast histopathology classification on a from-scratch NumPy autodiff core."""

__version__ = "0.1.0"
