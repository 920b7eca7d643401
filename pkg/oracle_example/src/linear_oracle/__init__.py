"""Reference external oracle for the faitheval stdio JSON protocol.

Loads a linear (identity-encoder) model from the shared weight-file format
and serves ``info`` / ``predict`` / ``gradient`` requests over stdin/stdout,
demonstrating how any ML-ecosystem model can plug into the toolkit.
"""

from .model import LinearOracleModel

__version__ = "0.1.0"
