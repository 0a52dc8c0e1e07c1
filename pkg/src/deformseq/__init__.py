"""Sequence surrogates for damage along bilinear strain paths, with a
prefix-consistency audit for truncated histories."""

__version__ = "0.1.0"
