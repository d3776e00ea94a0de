"""Virtual OxRAM characterization bench built on the Hourglass cell model."""

__version__ = "0.1.0"
