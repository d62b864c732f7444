"""Numpy LSTM / encoder-decoder stack with a hidden-state reconstructor regularizer."""

__version__ = "0.1.0"
