"""Multi-task implicit-text classifier with annotation-quality tooling."""

__version__ = "0.1.0"
