"""Multi-view molecular representation learning with textual view prompts."""
__version__ = "0.1.0"
