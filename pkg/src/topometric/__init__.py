"""Object-level topometric navigation in a 2.5D grid simulator."""

__version__ = "0.1.0"
