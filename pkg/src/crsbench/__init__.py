"""crsbench: benchmark pipeline for pre-operative CRS surgery outcome prediction."""

__version__ = "0.1.0"
