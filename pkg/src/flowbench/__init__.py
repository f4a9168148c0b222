"""flowbench: generate, evaluate, and explore diverse 2D shapes in channel flow."""

__version__ = "0.1.0"
