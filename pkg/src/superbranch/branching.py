"""Branching mechanisms, offspring laws, and their small-mass rescaling.

A mechanism is the nonlinearity psi(s, x, z) of the log-Laplace equation.
An offspring law together with a rate multiplier defines one member of a
rescaled family; the family's effective nonlinearity

    psi_beta(z) = (lambda_beta / beta^2) * (pgf(1 - beta*z) - 1 + beta*z)

reproduces the target mechanism exactly for the two shipped constructions:

* quadratic b*z^2   <- critical binary offspring, multiplier 2*b,
* stable  c*z^(1+beta) <- pgf  z + (1-z)^(1+beta)/(1+beta),
  multiplier c*(1+beta)*beta^(1-beta).

The sampling law truncates the stable pgf series; psi_beta is evaluated
through the closed-form pgf so the rescaling identity carries no
truncation error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Tuple

import numpy as np

PGF_TRUNCATION = 10_000


@dataclass(frozen=True)
class SpectralMeasure:
    """Finite atomic approximation of the jump measure of a mechanism."""

    atoms: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "atoms", tuple((float(u), float(m)) for u, m in self.atoms))
        for u, m in self.atoms:
            if u <= 0.0:
                raise ValueError("spectral atoms must sit at u > 0")
            if m < 0.0:
                raise ValueError("spectral masses must be nonnegative")


@dataclass(frozen=True)
class BranchingMechanism:
    variant: str  # "quadratic" | "stable" | "general"
    b: float = 0.0
    beta: Optional[float] = None
    scale: Optional[float] = None
    a_fn: Optional[Callable] = None
    b_fn: Optional[Callable] = None
    ell: Optional[SpectralMeasure] = None

    def __post_init__(self):
        if self.variant == "quadratic":
            if self.b < 0.0:
                raise ValueError("quadratic coefficient must be nonnegative")
        elif self.variant == "stable":
            if self.beta is None or not (0.0 < self.beta <= 1.0):
                raise ValueError("stable mechanism requires beta in (0, 1]")
            if self.scale is None or self.scale < 0.0:
                raise ValueError("stable mechanism requires a nonnegative scale")
        elif self.variant == "general":
            if self.ell is None:
                raise ValueError("general mechanism requires a spectral measure")
        else:
            raise ValueError(f"unknown mechanism variant {self.variant!r}")

    def eval(self, s, x, z):
        return psi_eval(self, s, x, z)


def quadratic(b: float) -> BranchingMechanism:
    return BranchingMechanism("quadratic", b=b)


def stable(beta: float, scale: float = 1.0) -> BranchingMechanism:
    return BranchingMechanism("stable", beta=beta, scale=scale)


def general(a_fn, b_fn, ell: SpectralMeasure) -> BranchingMechanism:
    return BranchingMechanism("general", a_fn=a_fn, b_fn=b_fn, ell=ell)


def psi_eval(mech: BranchingMechanism, s, x, z):
    """Evaluate the mechanism at argument z >= 0 (vectorized in z)."""
    z = np.asarray(z, dtype=float)
    if np.any(z < 0.0):
        raise ValueError("psi is only defined for z >= 0")
    if mech.variant == "quadratic":
        out = mech.b * z * z
    elif mech.variant == "stable":
        out = mech.scale * z ** (1.0 + mech.beta)
    else:
        a = mech.a_fn(s, x) if mech.a_fn is not None else 0.0
        b = mech.b_fn(s, x) if mech.b_fn is not None else 0.0
        out = a * z + b * z * z
        for u, m in mech.ell.atoms:
            out = out + m * (np.expm1(-z * u) + z * u)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class OffspringLaw:
    pgf_coeffs: np.ndarray
    mean: float
    tail_mass: float = 0.0
    _cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        coeffs = np.asarray(self.pgf_coeffs, dtype=float)
        if np.any(coeffs < 0.0):
            raise ValueError("offspring probabilities must be nonnegative")
        if abs(coeffs.sum() - 1.0) > 1e-12:
            raise ValueError("offspring probabilities must sum to 1")
        if self.mean > 1.0 + 1e-12:
            raise ValueError("offspring mean must be <= 1 (subcriticality)")
        object.__setattr__(self, "pgf_coeffs", coeffs)
        object.__setattr__(self, "_cdf", np.cumsum(coeffs))

    def pgf(self, z):
        z = np.asarray(z, dtype=float)
        n = np.arange(len(self.pgf_coeffs))
        if z.ndim == 0:
            return float(np.sum(self.pgf_coeffs * z ** n))
        return (z[..., None] ** n * self.pgf_coeffs).sum(axis=-1)


def binary_law(q2: float = 0.5) -> OffspringLaw:
    """0 or 2 children; q2 = 1/2 is the critical case."""
    if not (0.0 <= q2 <= 0.5):
        raise ValueError("binary law requires q2 in [0, 1/2] to stay subcritical")
    return OffspringLaw(np.array([1.0 - q2, 0.0, q2]), mean=2.0 * q2)


def sample_offspring(law: OffspringLaw, rng: np.random.Generator, size=None):
    u = rng.random(size=size)
    n = np.searchsorted(law._cdf, u, side="right")
    return int(n) if size is None else n


def _stable_coefficients(beta: float, n_max: int) -> Tuple[np.ndarray, float]:
    """Series coefficients of z + (1-z)^(1+beta)/(1+beta), tail folded into q0.

    Folding the tail into q0 only lowers the mean, so subcriticality is
    preserved.
    """
    q = np.zeros(n_max + 1)
    # d_n = (-1)^n * binom(1+beta, n); d_n >= 0 for n >= 2
    d = 1.0
    q[0] = 1.0 / (1.0 + beta)
    total = q[0]
    for n in range(1, n_max + 1):
        d *= (n - 2.0 - beta) / n
        if n >= 2:
            qn = d / (1.0 + beta)
            if qn < 0.0:
                raise RuntimeError("negative truncation residue in stable pgf series")
            q[n] = qn
            total += qn
    tail = 1.0 - total
    if tail < -1e-12:
        raise RuntimeError("stable pgf series overshoots unit mass")
    tail = max(tail, 0.0)
    q[0] += tail
    return q, tail


@dataclass(frozen=True)
class RescaledFamily:
    """One member of a family of branching particle laws indexed by beta."""

    beta: float
    law: OffspringLaw
    rate_multiplier: float
    pgf_exact: Callable  # closed-form pgf, free of series truncation
    mechanism: Optional[BranchingMechanism] = None

    def __post_init__(self):
        if not (0.0 < self.beta <= 1.0):
            raise ValueError("beta must lie in (0, 1]")
        if self.rate_multiplier <= 0.0:
            raise ValueError("rate multiplier must be positive")


class FamilyMismatchError(ValueError):
    pass


def offspring_family(mech: BranchingMechanism, beta: float,
                     n_max: int = PGF_TRUNCATION) -> RescaledFamily:
    """Construct the offspring family whose psi_beta equals the mechanism."""
    if not (0.0 < beta <= 1.0):
        raise ValueError("beta must lie in (0, 1]")
    if mech.variant == "quadratic":
        law = binary_law(0.5)
        return RescaledFamily(beta, law, 2.0 * mech.b,
                              pgf_exact=lambda z: 0.5 * (1.0 + np.asarray(z) ** 2),
                              mechanism=mech)
    if mech.variant == "stable":
        b = mech.beta
        if b == 1.0:  # beta = 1 stable is quadratic
            law = binary_law(0.5)
            pgf = lambda z: 0.5 * (1.0 + np.asarray(z) ** 2)
        else:
            coeffs, tail = _stable_coefficients(b, n_max)
            mean = float(coeffs @ np.arange(len(coeffs)))
            law = OffspringLaw(coeffs, mean=mean, tail_mass=tail)
            pgf = lambda z: np.asarray(z) + (1.0 - np.asarray(z)) ** (1.0 + b) / (1.0 + b)
        # exactness: psi_beta(z) = (lam/beta^2) (beta z)^{1+b} / (1+b)
        lam = mech.scale * (1.0 + b) * beta ** (1.0 - b)
        return RescaledFamily(beta, law, lam, pgf_exact=pgf, mechanism=mech)
    raise FamilyMismatchError(
        "offspring families exist only for quadratic and stable mechanisms")


def custom_family(beta: float, law: OffspringLaw, rate_multiplier: float) -> RescaledFamily:
    """Family from an explicit law; psi_beta uses the truncated pgf."""
    return RescaledFamily(beta, law, rate_multiplier, pgf_exact=law.pgf)


def psi_beta_eval(family: RescaledFamily, z):
    """Rescaled mechanism (lambda/beta^2) * (pgf(1 - beta z) - 1 + beta z)."""
    z = np.asarray(z, dtype=float)
    beta = family.beta
    if np.any(z < 0.0) or np.any(z > 1.0 / beta + 1e-12):
        raise ValueError("psi_beta requires 0 <= z <= 1/beta")
    arg = 1.0 - beta * z
    out = family.rate_multiplier / beta ** 2 * (family.pgf_exact(arg) - 1.0 + beta * z)
    out = np.asarray(out)
    return out if out.ndim else float(out)
