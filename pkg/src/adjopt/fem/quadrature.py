"""Symmetric Gauss rules on the reference triangle (0,0), (1,0), (0,1).

Weights are normalised to sum to one; multiply by the cell area.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

AVAILABLE_DEGREES = (1, 2, 4, 6)


def _orbit3(a, w):
    b = 1.0 - 2.0 * a
    return [(a, a), (b, a), (a, b)], [w] * 3


def _orbit6(a, b, w):
    c = 1.0 - a - b
    pts = [(a, b), (b, a), (a, c), (c, a), (b, c), (c, b)]
    return pts, [w] * 6


@lru_cache(maxsize=None)
def gauss_triangle(degree: int):
    """Smallest available rule exact for polynomials of ``degree``.

    Returns ``(points, weights)`` with points of shape ``(nq, 2)``.
    """
    if degree > AVAILABLE_DEGREES[-1]:
        raise ValueError(f"no triangle quadrature rule of degree {degree}")
    exact = next(d for d in AVAILABLE_DEGREES if d >= max(degree, 1))
    if exact == 1:
        pts, wts = [(1.0 / 3.0, 1.0 / 3.0)], [1.0]
    elif exact == 2:
        pts, wts = _orbit3(1.0 / 6.0, 1.0 / 3.0)
    elif exact == 4:
        # Dunavant, 6 points
        p1, w1 = _orbit3(0.445948490915965, 0.223381589678011)
        p2, w2 = _orbit3(0.091576213509771, 0.109951743655322)
        pts, wts = p1 + p2, w1 + w2
    else:
        # Dunavant, 12 points
        p1, w1 = _orbit3(0.249286745170910, 0.116786275726379)
        p2, w2 = _orbit3(0.063089014491502, 0.050844906370207)
        p3, w3 = _orbit6(0.053145049844817, 0.310352451033784, 0.082851075618374)
        pts, wts = p1 + p2 + p3, w1 + w2 + w3
    pts = np.array(pts, dtype=float)
    wts = np.array(wts, dtype=float)
    wts /= wts.sum()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return pts, wts
