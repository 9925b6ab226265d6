"""Symmetry, Goldstone and Higgs analysis for classical field theories."""

from .dsl import ModelDef, ParseError, ValidationError, load_shipped, parse_model, print_model

__all__ = ["ModelDef", "ParseError", "ValidationError", "load_shipped", "parse_model", "print_model"]
__version__ = "0.1.0"
