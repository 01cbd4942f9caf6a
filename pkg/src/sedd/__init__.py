"""Score entropy discrete diffusion on enumerable toy problems."""

__version__ = "0.1.0"
