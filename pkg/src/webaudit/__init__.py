"""Web-geometric tests of additive separability and demand integrability."""

__version__ = "0.1.0"
