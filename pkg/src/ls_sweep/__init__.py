"""ls-sweep: sparsify-and-sweep preconditioned solver for the 2D Lippmann-Schwinger equation."""

__version__ = "0.1.0"
