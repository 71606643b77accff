"""Backward space-time solvers for the log-Laplace and moment equations.

All four equations share one splitting scheme, stepping backward from the
terminal time: a Crank-Nicolson semigroup step for the motion, then an
implicit pointwise reaction step.  The reaction solve is a monotone scalar
root find (plain bisection -- the map y -> y + c*psi(y) is strictly
increasing), so it cannot diverge near steep nonlinearities.

Grids are one-dimensional.  The spatially constant case is handled by a
"homogeneous" grid whose semigroup step is the identity, which reduces the
solver to a second-order implicit ODE integrator; closed-form solutions of
the resulting Riccati-type ODEs are the main test oracles.

Each solve refines the grid (doubling nx and nt) until the change at the
initial time drops below the requested tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_banded

BOUNDARIES = ("free", "absorbing_at_zero", "truncated_with_decay")


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SpaceTimeGrid:
    r: float
    t: float
    nt: int
    homogeneous: bool = False
    x_min: Optional[float] = None
    x_max: Optional[float] = None
    nx: Optional[int] = None
    boundary: str = "free"

    def __post_init__(self):
        if self.t <= self.r:
            raise ValueError("terminal time must exceed initial time")
        if self.nt < 1:
            raise ValueError("nt must be >= 1")
        if self.homogeneous:
            return
        if self.nx is None or self.nx < 3 or self.x_min is None or self.x_max is None:
            raise ValueError("spatial grids need x_min < x_max and nx >= 3")
        if self.x_max <= self.x_min:
            raise ValueError("x_max must exceed x_min")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"unknown boundary {self.boundary!r}")
        if self.boundary == "absorbing_at_zero" and self.x_min != 0.0:
            raise ValueError("absorbing boundary requires x_min = 0")

    @property
    def x(self) -> Optional[np.ndarray]:
        if self.homogeneous:
            return None
        return np.linspace(self.x_min, self.x_max, self.nx)

    @property
    def times(self) -> np.ndarray:
        return np.linspace(self.r, self.t, self.nt + 1)

    @property
    def h(self) -> Optional[float]:
        if self.homogeneous:
            return None
        return (self.x_max - self.x_min) / (self.nx - 1)

    def refined(self) -> "SpaceTimeGrid":
        if self.homogeneous:
            return SpaceTimeGrid(self.r, self.t, 2 * self.nt, homogeneous=True)
        return SpaceTimeGrid(self.r, self.t, 2 * self.nt, x_min=self.x_min,
                             x_max=self.x_max, nx=2 * self.nx - 1,
                             boundary=self.boundary)


def homogeneous_grid(r: float, t: float, nt: int = 64) -> SpaceTimeGrid:
    return SpaceTimeGrid(r, t, nt, homogeneous=True)


@dataclass
class GridFunction:
    grid: SpaceTimeGrid
    values: np.ndarray  # (nt+1, nx) or (nt+1,) for homogeneous grids
    refinements: int = 0
    last_change: float = math.nan

    @property
    def initial(self):
        """Solution at the initial time r."""
        v = self.values[0]
        return float(v) if self.grid.homogeneous else v

    def at(self, r_query: float, x_query=None) -> float:
        times = self.grid.times
        if self.grid.homogeneous:
            return float(np.interp(r_query, times, self.values))
        j = np.interp(r_query, times, np.arange(len(times)))
        j0 = int(min(math.floor(j), len(times) - 2))
        w = j - j0
        row = (1.0 - w) * self.values[j0] + w * self.values[j0 + 1]
        return float(np.interp(x_query, self.grid.x, row))

    def pair_initial(self, positions, weights) -> float:
        """<v(r, .), mu> for an atomic measure mu."""
        if self.grid.homogeneous:
            return float(self.values[0] * np.sum(weights))
        vals = np.interp(np.asarray(positions, float), self.grid.x, self.values[0])
        return float(np.sum(vals * np.asarray(weights, float)))


# ---------------------------------------------------------------------------
# semigroup step


def _generator_bands(motion, grid: SpaceTimeGrid) -> np.ndarray:
    """Tridiagonal generator as (3, nx) bands: [upper, diag, lower]."""
    nx, h, x = grid.nx, grid.h, grid.x
    bands = np.zeros((3, nx))
    kind = motion.kind
    inv2 = 1.0 / (2.0 * h * h)
    if kind in ("brownian", "killed_brownian"):
        bands[0, 2:] = inv2
        bands[1, 1:-1] = -2.0 * inv2
        bands[2, :-2] = inv2
        if kind == "killed_brownian" or grid.boundary == "absorbing_at_zero":
            # node 0 pinned at zero (Dirichlet)
            bands[0, 1] = 0.0
            bands[1, 0] = 0.0
        elif grid.boundary == "truncated_with_decay":
            bands[1, 0] = -2.0 * inv2  # zero ghost value
            bands[0, 1] = inv2
        else:  # free: reflecting
            bands[1, 0] = -1.0 / (h * h)
            bands[0, 1] = 1.0 / (h * h)
        # outer edge
        if grid.boundary == "truncated_with_decay":
            bands[1, -1] = -2.0 * inv2
            bands[2, -2] = inv2
        else:
            bands[1, -1] = -1.0 / (h * h)
            bands[2, -2] = 1.0 / (h * h)
        return bands
    if kind == "bessel3":
        if np.any(x <= 0.0):
            raise SolverError("bessel3 grids must sit strictly inside (0, inf)")
        adv = 1.0 / (2.0 * h * x)
        bands[0, 2:] = inv2 + adv[1:-1]
        bands[1, 1:-1] = -2.0 * inv2
        bands[2, :-2] = inv2 - adv[1:-1]
        # inner edge: linear-extrapolation ghost collapses the operator to
        # (v1 - v0)/h^2, a one-sided upwind row consistent for smooth v
        bands[1, 0] = -1.0 / (h * h)
        bands[0, 1] = 1.0 / (h * h)
        # outer edge: reflecting
        bands[1, -1] = -1.0 / (h * h)
        bands[2, -2] = 1.0 / (h * h)
        return bands
    raise SolverError(f"no grid semigroup available for motion kind {kind!r}")


class _CrankNicolson:
    """Trapezoidal semigroup step, with an implicit-Euler variant.

    The implicit-Euler form (two half steps per step) is used for the first
    steps of a march; it damps the ringing caused by terminal data that are
    incompatible with the boundary condition, restoring second-order
    convergence (Rannacher startup).
    """

    def __init__(self, motion, grid: SpaceTimeGrid, tau: float):
        A = _generator_bands(motion, grid)
        nx = grid.nx
        eye = np.zeros((3, nx))
        eye[1] = 1.0
        self.lhs = eye - 0.5 * tau * A
        self.rhs = eye + 0.5 * tau * A
        self.lhs_half_ie = eye - 0.5 * tau * A  # IE with step tau/2
        self.pin_zero = (motion.kind == "killed_brownian"
                         or grid.boundary == "absorbing_at_zero")

    def _pin(self, out):
        if self.pin_zero:
            out[0] = 0.0
        return out

    def apply(self, v: np.ndarray) -> np.ndarray:
        b = (self.rhs[1] * v).copy()
        b[:-1] += self.rhs[0, 1:] * v[1:]
        b[1:] += self.rhs[2, :-1] * v[:-1]
        return self._pin(solve_banded((1, 1), self.lhs, b))

    def apply_ie(self, v: np.ndarray) -> np.ndarray:
        out = self._pin(solve_banded((1, 1), self.lhs_half_ie, v))
        return self._pin(solve_banded((1, 1), self.lhs_half_ie, out))


# ---------------------------------------------------------------------------
# reaction steps


def _bisect_increasing(g, lo, hi, iters: int = 60):
    """Vectorized bisection for g increasing with g(lo) <= 0 <= g(hi)."""
    lo = np.array(lo, dtype=float, copy=True)
    hi = np.array(hi, dtype=float, copy=True)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        high = g(mid) > 0.0
        hi = np.where(high, mid, hi)
        lo = np.where(high, lo, mid)
    return 0.5 * (lo + hi)


def _reaction_nonlinear(psi, c, v_old, neg_tol: float):
    """One implicit reaction substep of dv/ds = -c_density * psi(v).

    Trapezoidal by default; falls back to backward Euler at nodes where the
    trapezoid rule would push the solution negative.
    """
    v_old = np.asarray(v_old, dtype=float)
    rhs = v_old - 0.5 * c * psi(v_old)
    be = rhs < 0.0
    rhs = np.where(be, v_old, rhs)
    coef = np.where(be, c, 0.5 * c)
    y = _bisect_increasing(lambda y: y + coef * psi(y) - rhs,
                           np.zeros_like(v_old), np.maximum(v_old, 0.0))
    if np.any(y < -neg_tol):
        raise SolverError("reaction step undershot below the negativity tolerance")
    return np.maximum(y, 0.0)


def _reaction_pgf(phitilde, c, u_old):
    """Backward substep du/ds = +c_density * (pgf(u) - u), kept inside [0, 1]."""
    u_old = np.asarray(u_old, dtype=float)
    rhs = u_old + 0.5 * c * phitilde(u_old)
    be = rhs > 1.0
    rhs = np.where(be, u_old, rhs)
    coef = np.where(be, c, 0.5 * c)
    u = _bisect_increasing(lambda u: u - coef * phitilde(u) - rhs,
                           u_old, np.ones_like(u_old))
    return np.clip(u, 0.0, 1.0)


# ---------------------------------------------------------------------------
# clock densities on the grid


def _grid_rates(K, grid: SpaceTimeGrid, s: float) -> np.ndarray:
    """Clock density at the nodes; cells next to a singularity are averaged."""
    if grid.homogeneous:
        return np.atleast_1d(float(K.density(s, None)))
    x = grid.x
    h = grid.h
    vals = np.empty_like(x)
    for i, xi in enumerate(x):
        if any(abs(xi - s0) <= 1.001 * h for s0 in K.singularities):
            if any(abs(xi - s0) < 1e-15 for s0 in K.singularities):
                vals[i] = 0.0  # absorbed node, excluded from the reaction
                continue
            qs = xi + h * (np.arange(32) + 0.5) / 32.0 - 0.5 * h
            vals[i] = np.mean([K.density(s, q) for q in qs])
        else:
            vals[i] = K.density(s, xi)
    return vals


class _RateCache:
    """Node rates, computed once when the clock does not depend on time."""

    def __init__(self, K, grid: SpaceTimeGrid):
        self.K = K
        self.grid = grid
        self._static = None if getattr(K, "time_dependent", False) else \
            _grid_rates(K, grid, grid.r)

    def __call__(self, s: float) -> np.ndarray:
        if self._static is not None:
            return self._static
        return _grid_rates(self.K, self.grid, s)


# ---------------------------------------------------------------------------
# drivers


def _terminal_values(f, grid: SpaceTimeGrid) -> np.ndarray:
    if grid.homogeneous:
        val = f if np.isscalar(f) else float(f(0.0))
        return np.atleast_1d(float(val))
    if np.isscalar(f):
        return np.full(grid.nx, float(f))
    return np.asarray(f(grid.x), dtype=float)


def _march(grid: SpaceTimeGrid, motion, K, reaction, terminal,
           splitting: str) -> np.ndarray:
    times = grid.times
    tau = (grid.t - grid.r) / grid.nt
    if grid.homogeneous:
        semi = None
    else:
        semi = _CrankNicolson(motion, grid, tau)
    v = terminal.copy()
    if semi is not None and semi.pin_zero and grid.x[0] == 0.0:
        v[0] = 0.0  # make the terminal data consistent with the boundary
    width = 1 if grid.homogeneous else grid.nx
    out = np.empty((grid.nt + 1, width))
    out[grid.nt] = v
    for j in range(grid.nt - 1, -1, -1):
        s = times[j]
        rannacher = j >= grid.nt - 2  # first two backward steps
        if splitting == "strang":
            v = reaction(s + 0.5 * tau, v, 0.5 * tau)
            if semi is not None:
                v = semi.apply_ie(v) if rannacher else semi.apply(v)
            v = reaction(s, v, 0.5 * tau)
        else:  # lie
            if semi is not None:
                v = semi.apply_ie(v) if rannacher else semi.apply(v)
            v = reaction(s, v, tau)
        out[j] = v
    return out.reshape(grid.nt + 1) if grid.homogeneous else out


def _refine_until(grid, make_solution, tol, max_refines) -> GridFunction:
    sol = make_solution(grid)
    change = math.inf
    refinements = 0
    for _ in range(max_refines):
        finer_grid = grid.refined()
        cells = (finer_grid.nt + 1) * (finer_grid.nx or 1)
        if cells > 40_000_000:
            break  # further refinement would exhaust memory; report last change
        finer = make_solution(finer_grid)
        coarse0 = sol[0] if sol.ndim > 1 else sol[0:1]
        fine0 = finer[0] if finer.ndim > 1 else finer[0:1]
        if finer.ndim > 1:
            fine_on_coarse = fine0[::2]
        else:
            fine_on_coarse = fine0
        change = float(np.max(np.abs(fine_on_coarse - coarse0)))
        grid, sol = finer_grid, finer
        refinements += 1
        if change < tol:
            break
    return GridFunction(grid, sol, refinements=refinements, last_change=change)


def solve_v(f, mech, K, motion, grid: SpaceTimeGrid, tol: float = 1e-6,
            splitting: str = "lie", max_refines: int = 8) -> GridFunction:
    """Nonlinear log-Laplace equation with terminal data f.

    mech is anything with eval(s, x, z); for transformed systems this is the
    conjugated mechanism.
    """

    def run(g):
        rates_of = _RateCache(K, g)

        def reaction(s, v, tau):
            c = tau * rates_of(s)
            x = None if g.homogeneous else g.x
            return _reaction_nonlinear(lambda y: np.asarray(mech.eval(s, x, y)),
                                       c, v, neg_tol=tol)

        return _march(g, motion, K, reaction, _terminal_values(f, g), splitting)

    return _refine_until(grid, run, tol, max_refines)


def solve_u(f, law, rate: float, K, motion, grid: SpaceTimeGrid,
            tol: float = 1e-6, splitting: str = "lie",
            max_refines: int = 8, pgf: Optional[Callable] = None) -> GridFunction:
    """Branching-system equation for u = E exp(-<f, X_t>) per ancestor.

    rate is the full clock multiplier (lambda_beta / beta for rescaled runs).
    """
    pgf_fn = pgf if pgf is not None else law.pgf

    def run(g):
        term = np.exp(-_terminal_values(f, g))
        rates_of = _RateCache(K, g)

        def reaction(s, u, tau):
            c = tau * rate * rates_of(s)
            return _reaction_pgf(lambda y: np.asarray(pgf_fn(y)) - y, c, u)

        return _march(g, motion, K, reaction, term, splitting)

    return _refine_until(grid, run, tol, max_refines)


def solve_vbeta(f, family, K, motion, grid: SpaceTimeGrid, beta: float,
                tol: float = 1e-6, splitting: str = "lie",
                max_refines: int = 8) -> GridFunction:
    """Rescaled log-Laplace equation with terminal data (1 - e^(-beta f))/beta.

    The rescaled nonlinearity enters with a minus sign, the same orientation
    as the limiting equation (the sign follows from the substitution
    u = 1 - beta * v in the branching-system equation).
    """
    if abs(beta - family.beta) > 1e-12:
        raise ValueError("beta must match the family")
    from .branching import psi_beta_eval

    def run(g):
        term = -np.expm1(-beta * _terminal_values(f, g)) / beta
        rates_of = _RateCache(K, g)

        def reaction(s, v, tau):
            c = tau * rates_of(s)
            return _reaction_nonlinear(lambda y: np.asarray(psi_beta_eval(family, y)),
                                       c, v, neg_tol=tol)

        return _march(g, motion, K, reaction, term, splitting)

    return _refine_until(grid, run, tol, max_refines)


def solve_moment(f, a, K, motion, grid: SpaceTimeGrid, tol: float = 1e-6,
                 splitting: str = "lie", max_refines: int = 8) -> GridFunction:
    """Linear first-moment equation; the reaction substep is solved exactly."""
    a_fn = a if callable(a) else (lambda s, x: a)

    def run(g):
        rates_of = _RateCache(K, g)

        def reaction(s, v, tau):
            rates = rates_of(s)
            if g.homogeneous:
                av = np.atleast_1d(float(a_fn(s, None)))
            else:
                av = np.asarray([a_fn(s, xi) for xi in g.x], dtype=float)
            return v * np.exp(-tau * av * rates)

        return _march(g, motion, K, reaction, _terminal_values(f, g), splitting)

    return _refine_until(grid, run, tol, max_refines)
