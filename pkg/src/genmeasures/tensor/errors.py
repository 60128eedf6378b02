from __future__ import annotations


class ShapeError(ValueError):
    """Raised when tensor extents are inconsistent.

    ``dim`` names the offending dimension, e.g. ``"kernel.in_channels"``.
    """

    def __init__(self, dim: str, expected, got):
        self.dim = dim
        self.expected = expected
        self.got = got
        super().__init__(f"shape mismatch in {dim}: expected {expected}, got {got}")
