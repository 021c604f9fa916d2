"""Symmetric quadrature rules on the reference triangle.

Weights are normalised to sum to one, so the integral over a physical
triangle is ``area * sum(w_k * f(x_k))``.  Rules are the positive-weight
Dunavant rules of degree 1, 2, 4, 5 and 6.
"""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric points and weights of a rule exact to degree ``order``."""

    bary: np.ndarray
    weights: np.ndarray
    order: int

    def __post_init__(self):
        bary = np.array(self.bary, dtype=float).reshape(-1, 3)
        weights = np.array(self.weights, dtype=float).ravel()
        if bary.shape[0] != weights.shape[0]:
            raise ValueError("points and weights disagree in length")
        if np.any(weights <= 0):
            raise ValueError("quadrature weights must be positive")
        bary.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "bary", bary)
        object.__setattr__(self, "weights", weights)

    @property
    def n_points(self):
        return self.weights.shape[0]


def _orbit3(a, w):
    b = 1.0 - 2.0 * a
    return [(b, a, a), (a, b, a), (a, a, b)], [w] * 3


def _orbit6(a, b, w):
    c = 1.0 - a - b
    pts = [(a, b, c), (a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)]
    return pts, [w] * 6


def _build(order, *orbits):
    pts, ws = [], []
    for p, w in orbits:
        pts.extend(p)
        ws.extend(w)
    return QuadratureRule(np.array(pts), np.array(ws), order)


_RULES = {
    1: _build(1, ([(1 / 3, 1 / 3, 1 / 3)], [1.0])),
    2: _build(2, _orbit3(1 / 6, 1 / 3)),
    4: _build(
        4,
        _orbit3(0.445948490915965, 0.223381589678011),
        _orbit3(0.091576213509771, 0.109951743655322),
    ),
    5: _build(
        5,
        ([(1 / 3, 1 / 3, 1 / 3)], [0.225]),
        _orbit3(0.470142064105115, 0.132394152788506),
        _orbit3(0.101286507323456, 0.125939180544827),
    ),
    6: _build(
        6,
        _orbit3(0.249286745170910, 0.116786275726379),
        _orbit3(0.063089014491502, 0.050844906370207),
        _orbit6(0.310352451033785, 0.053145049844816, 0.082851075618374),
    ),
}


def available_orders():
    return sorted(_RULES)


def rule(order):
    """Smallest available rule whose degree of exactness is >= ``order``."""
    if order < 0:
        raise ValueError("order must be non-negative")
    for k in sorted(_RULES):
        if k >= order:
            return _RULES[k]
    raise ValueError(f"no rule of order {order}; max is {max(_RULES)}")
