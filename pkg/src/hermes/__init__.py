"""HERMES: outsourced vehicle access-token generation over 3-party MPC."""

__version__ = "0.1.0"
