"""Pair correlation function families.

Every model exposes ``excess(r) = g(r) - 1`` in addition to ``g(r)``; the
Fredholm kernel is built from the excess so that the Poisson case cancels
exactly instead of through subtraction of large numbers.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidModelError


class PairCorrelationModel:
    """Isotropic pair correlation function g(r)."""

    name = "abstract"
    #: distance beyond which g == 1 exactly
    support = math.inf

    def __call__(self, r):
        return 1.0 + self.excess(r)

    def excess(self, r):
        raise NotImplementedError

    def params(self):
        return {}

    def describe(self):
        return {"family": self.name, **self.params()}


@dataclass(frozen=True)
class PoissonPCF(PairCorrelationModel):
    name = "poisson"
    support = 0.0

    def excess(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))


@dataclass(frozen=True)
class MaternPCF(PairCorrelationModel):
    """Matérn cluster pcf.

    ``alpha1`` plays the role of the parent intensity and ``alpha2`` of the
    cluster radius; g(r) = 1 exactly for r >= 2 * alpha2.
    """

    alpha1: float
    alpha2: float
    name = "matern"

    def __post_init__(self):
        if not (self.alpha1 > 0 and self.alpha2 > 0):
            raise InvalidModelError("matern pcf needs alpha1 > 0 and alpha2 > 0")

    @property
    def support(self):
        return 2.0 * self.alpha2

    def excess(self, r):
        r = np.asarray(r, dtype=float)
        u = np.minimum(np.abs(r) / (2.0 * self.alpha2), 1.0)
        scale = 2.0 / (self.alpha1 * (math.pi * self.alpha2) ** 2)
        return scale * (np.arccos(u) - u * np.sqrt(1.0 - u * u))

    def params(self):
        return {"alpha1": self.alpha1, "alpha2": self.alpha2}


@dataclass(frozen=True)
class ExpPlusOnePCF(PairCorrelationModel):
    """g(r) = 1 + exp(-alpha4 * sqrt(r)) / alpha3."""

    alpha3: float
    alpha4: float
    name = "exp_plus_one"

    def __post_init__(self):
        if not (self.alpha3 > 0 and self.alpha4 >= 0):
            raise InvalidModelError("exp_plus_one pcf needs alpha3 > 0 and alpha4 >= 0")

    def excess(self, r):
        r = np.asarray(r, dtype=float)
        return np.exp(-self.alpha4 * np.sqrt(np.abs(r))) / self.alpha3

    def params(self):
        return {"alpha3": self.alpha3, "alpha4": self.alpha4}


@dataclass(frozen=True)
class ExpScaledPCF(PairCorrelationModel):
    """Scaled exponential pcf, g(r) = exp(-a2 sqrt(r)) / a1.

    With ``wrapped=True`` (default) the model is 1 + exp(-a2 sqrt(r)) / a1,
    which tends to one at large distances.  The literal form does not.
    """

    a1: float
    a2: float
    wrapped: bool = True
    name = "exp_scaled"

    def __post_init__(self):
        if not (self.a1 > 0 and self.a2 >= 0):
            raise InvalidModelError("exp_scaled pcf needs a1 > 0 and a2 >= 0")

    def excess(self, r):
        r = np.asarray(r, dtype=float)
        e = np.exp(-self.a2 * np.sqrt(np.abs(r))) / self.a1
        return e if self.wrapped else e - 1.0

    def params(self):
        return {"a1": self.a1, "a2": self.a2, "wrapped": self.wrapped}


@dataclass(frozen=True, eq=False)
class EmpiricalPCF(PairCorrelationModel):
    """Tabulated pcf with linear interpolation.

    Below the first knot the first value is held constant; beyond the last
    knot g is one.  ``flagged`` marks knots inside the kernel-bias region and
    ``bandwidth`` records the smoothing half-width when the table is a
    kernel estimate.
    """

    r: np.ndarray
    g: np.ndarray
    flagged: np.ndarray = field(default=None)
    bandwidth: float = None
    name = "empirical"

    def __post_init__(self):
        r = np.array(self.r, dtype=float).ravel()
        g = np.array(self.g, dtype=float).ravel()
        if r.shape != g.shape or r.size < 2:
            raise InvalidModelError("empirical pcf needs matching r and g tables of length >= 2")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(g))):
            raise InvalidModelError("empirical pcf table contains non-finite values")
        if np.any(np.diff(r) <= 0):
            raise InvalidModelError("empirical pcf knots must be strictly increasing")
        if np.any(g < 0):
            raise InvalidModelError("empirical pcf values must be non-negative")
        flagged = (
            np.zeros(r.shape, dtype=bool)
            if self.flagged is None
            else np.array(self.flagged, dtype=bool).ravel()
        )
        for a in (r, g, flagged):
            a.setflags(write=False)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "flagged", flagged)

    @property
    def support(self):
        return float(self.r[-1])

    def excess(self, r):
        r = np.abs(np.asarray(r, dtype=float))
        e = np.interp(r, self.r, self.g - 1.0)
        return np.where(r > self.r[-1], 0.0, e)

    def params(self):
        return {"r": self.r.tolist(), "g": self.g.tolist()}

    def describe(self):
        return {"family": self.name, "n_knots": int(self.r.size), "r_max": float(self.r[-1]),
                "checksum": float(np.dot(self.g, np.arange(1, self.g.size + 1)))}


def eval_pcf(model, r):
    """Evaluate g(r); ``r`` may be scalar or array."""
    out = model(r)
    return float(out) if np.ndim(out) == 0 else out


def from_params(family, **params):
    """Construct a model from its family name and parameters."""
    family = family.lower()
    if family == "poisson":
        return PoissonPCF()
    if family == "matern":
        return MaternPCF(float(params["alpha1"]), float(params["alpha2"]))
    if family == "exp_plus_one":
        return ExpPlusOnePCF(float(params["alpha3"]), float(params["alpha4"]))
    if family == "exp_scaled":
        return ExpScaledPCF(float(params["a1"]), float(params["a2"]), bool(params.get("wrapped", True)))
    if family == "empirical":
        return EmpiricalPCF(params["r"], params["g"])
    raise InvalidModelError(f"unknown pcf family {family!r}")
