"""Few-shot underwater acoustic target recognition with a multi-task attention CNN."""

__version__ = "0.1.0"
