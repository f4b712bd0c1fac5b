"""EVM bytecode vulnerability scanning with from-scratch sequence classifiers."""

__version__ = "0.1.0"
