"""
Utility functions for curvcone.

This module provides report timestamps, small validators and the smoothstep
polynomials shared by the bending and conformal profiles.
"""

import os
from datetime import datetime

import numpy as np
import pytz


def get_report_tz():
    """
    Timezone used for report timestamps.

    Returns:
        pytz timezone named by CURVCONE_TZ (default UTC)
    """
    name = os.getenv('CURVCONE_TZ', 'UTC')
    try:
        return pytz.timezone(name)
    except pytz.UnknownTimeZoneError:
        return pytz.utc


def get_now() -> datetime:
    """Current time in the report timezone."""
    return datetime.now(get_report_tz())


def get_timestamp() -> str:
    """
    Current timestamp as ISO 8601 string.

    Returns:
        str: e.g. "2026-10-12T09:30:45.123456+00:00"
    """
    return get_now().isoformat()


def validate_dimension(n, low: int = 3, high: int = 12) -> tuple[bool, str]:
    """
    Validate a manifold dimension.

    Args:
        n: candidate dimension
        low: smallest admissible value
        high: largest admissible value

    Returns:
        tuple: (is_valid: bool, error_message: str)
    """
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)):
        return False, f"dimension must be an integer, got {n!r}"
    if n < low:
        return False, f"dimension {n} below {low}"
    if n > high:
        return False, f"dimension {n} above {high}"
    return True, ""


def validate_positive(value, name: str = "value") -> tuple[bool, str]:
    """
    Validate a finite, strictly positive scalar.

    Returns:
        tuple: (is_valid: bool, error_message: str)
    """
    try:
        x = float(value)
    except (TypeError, ValueError):
        return False, f"{name} must be a number, got {value!r}"
    if not np.isfinite(x):
        return False, f"{name} must be finite"
    if x <= 0.0:
        return False, f"{name} must be positive, got {x}"
    return True, ""


# Smoothstep polynomials (C² quintic)
def smoothstep(x):
    """
    Quintic smoothstep S(x) = 6x⁵ − 15x⁴ + 10x³ clamped to [0, 1].

    Examples:
        smoothstep(0) → 0, smoothstep(0.5) → 0.5, smoothstep(2) → 1
    """
    t = np.clip(x, 0.0, 1.0)
    return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


def smoothstep_d1(x):
    """First derivative of smoothstep; maximum 15/8 at x = ½."""
    t = np.clip(x, 0.0, 1.0)
    return 30.0 * t * t * (1.0 - t) ** 2


def smoothstep_d2(x):
    """Second derivative of smoothstep."""
    t = np.clip(x, 0.0, 1.0)
    return 60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)


def smoothstep_integral(x):
    """∫₀ˣ smoothstep for x in [0, 1]; equals ½ at x = 1."""
    t = np.clip(x, 0.0, 1.0)
    return t ** 6 - 3.0 * t ** 5 + 2.5 * t ** 4
