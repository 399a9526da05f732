"""
Tests for timestamps, validators and smoothstep helpers.
"""

import os
import sys
from datetime import datetime

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad

# Add project root to path
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from src.utils import (
    get_report_tz,
    get_timestamp,
    smoothstep,
    smoothstep_d1,
    smoothstep_d2,
    smoothstep_integral,
    validate_dimension,
    validate_positive,
)


def test_report_timezone(monkeypatch):
    """Test: CURVCONE_TZ selects the timezone, unknown names fall back to UTC."""
    monkeypatch.setenv("CURVCONE_TZ", "Asia/Kolkata")
    assert get_report_tz().zone == "Asia/Kolkata"
    assert datetime.fromisoformat(get_timestamp()).utcoffset().total_seconds() == 19800

    monkeypatch.setenv("CURVCONE_TZ", "Mars/Olympus")
    assert get_report_tz().zone == "UTC"


def test_validators():
    """Test: dimensions and positive scalars."""
    assert validate_dimension(4) == (True, "")
    assert not validate_dimension(2)[0]
    assert not validate_dimension(13)[0]
    assert not validate_dimension(4.0)[0]
    assert not validate_dimension(True)[0]

    assert validate_positive(0.5)[0]
    assert validate_positive(np.float64(2.0))[0]
    for bad in (0.0, -1.0, float("nan"), float("inf"), "x", None):
        ok, message = validate_positive(bad, "rbar")
        assert not ok and "rbar" in message


def test_smoothstep_family():
    """Test: values, derivatives and the integral of the quintic."""
    assert_allclose(smoothstep(np.array([-1.0, 0.0, 0.5, 1.0, 2.0])), [0.0, 0.0, 0.5, 1.0, 1.0])
    assert smoothstep_d1(0.5) == pytest.approx(15.0 / 8.0)
    assert smoothstep_d2(0.5) == pytest.approx(0.0)
    assert smoothstep_integral(1.0) == pytest.approx(0.5)

    x = np.linspace(0.05, 0.95, 7)
    h = 1e-5
    assert_allclose((smoothstep(x + h) - smoothstep(x - h)) / (2 * h), smoothstep_d1(x), atol=1e-8)
    assert_allclose((smoothstep_d1(x + h) - smoothstep_d1(x - h)) / (2 * h), smoothstep_d2(x), atol=1e-6)
    for value in (0.3, 0.7):
        assert smoothstep_integral(value) == pytest.approx(quad(smoothstep, 0.0, value)[0])
