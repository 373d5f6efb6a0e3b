"""Joint variational autoencoders for far-field speech feature enhancement."""

__version__ = "0.1.0"
