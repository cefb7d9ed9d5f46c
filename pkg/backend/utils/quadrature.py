"""Adaptive Simpson integration used for the equilibrium profit integral."""

from collections.abc import Callable

from utils.errors import DomainError

DEFAULT_TOL = 1e-8
DEFAULT_MAX_DEPTH = 40


def _simpson(fa: float, fm: float, fb: float, h: float) -> float:
    return h / 3.0 * (fa + 4.0 * fm + fb)


def adaptive_simpson(f: Callable[[float], float], a: float, b: float,
                     tol: float = DEFAULT_TOL, max_depth: int = DEFAULT_MAX_DEPTH) -> float:
    """Integrate f over [a, b] to absolute tolerance tol by interval bisection.

    Each half gets half of the parent's tolerance; a subinterval is accepted once
    |S_left + S_right - S_whole| < 15 tol or max_depth is reached, and the
    Richardson-corrected value is returned.
    """
    if tol <= 0:
        raise DomainError(f"tolerance must be positive, got {tol}")
    if a == b:
        return 0.0
    if a > b:
        return -adaptive_simpson(f, b, a, tol, max_depth)

    def _recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = (a + b) / 2.0
        h = (b - a) / 2.0
        lm = (a + m) / 2.0
        rm = (m + b) / 2.0
        flm = f(lm)
        frm = f(rm)
        left = _simpson(fa, flm, fm, h / 2.0)
        right = _simpson(fm, frm, fb, h / 2.0)
        delta = left + right - whole
        if depth >= max_depth or abs(delta) < 15.0 * tol:
            return left + right + delta / 15.0
        return (_recurse(a, m, fa, flm, fm, left, tol / 2.0, depth + 1)
                + _recurse(m, b, fm, frm, fb, right, tol / 2.0, depth + 1))

    fa = f(a)
    fb = f(b)
    m = (a + b) / 2.0
    fm = f(m)
    whole = _simpson(fa, fm, fb, (b - a) / 2.0)
    return _recurse(a, b, fa, fm, fb, whole, tol, 0)
