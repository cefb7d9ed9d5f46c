import math

import pytest

from utils.errors import DomainError
from utils.quadrature import adaptive_simpson


def test_polynomials_are_exact():
    assert adaptive_simpson(lambda t: 1.0, 0.0, 1.0) == pytest.approx(1.0, abs=1e-12)
    assert adaptive_simpson(lambda t: t ** 3, 0.0, 2.0) == pytest.approx(4.0, abs=1e-12)


def test_smooth_function():
    assert adaptive_simpson(math.sin, 0.0, math.pi) == pytest.approx(2.0, abs=1e-8)
    assert adaptive_simpson(math.exp, 0.0, 1.0) == pytest.approx(math.e - 1.0, abs=1e-8)


def test_kink_is_resolved_by_refinement():
    assert adaptive_simpson(lambda t: abs(t - 0.3), 0.0, 1.0) == pytest.approx(0.29, abs=1e-6)


def test_reversed_and_empty_interval():
    assert adaptive_simpson(lambda t: t, 1.0, 0.0) == pytest.approx(-0.5)
    assert adaptive_simpson(lambda t: t, 0.7, 0.7) == 0.0


def test_rejects_nonpositive_tolerance():
    with pytest.raises(DomainError):
        adaptive_simpson(lambda t: t, 0.0, 1.0, tol=0.0)
