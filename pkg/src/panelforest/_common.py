"""Small helpers shared across modules."""

from __future__ import annotations

import math

__all__ = ["star_code"]


def star_code(p: float) -> str:
    """Significance stars: *** p<=0.01, ** p<=0.05, * p<=0.10, else empty."""
    if p is None or math.isnan(p):
        return ""
    if p <= 0.01:
        return "***"
    if p <= 0.05:
        return "**"
    if p <= 0.10:
        return "*"
    return ""
