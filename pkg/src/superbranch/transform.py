"""Weight functions and the space-time harmonic change of measure.

Given a terminal weight rho >= 0 and a horizon T, the function
h(r, x) = E_{r,x}[rho(xi_T)] is space-time harmonic for the motion.
Conditioning the motion on the weight (Doob transform by h) turns a system
(motion, clock K, mechanism psi) into an equivalent one:

    motion^h,   K^h(ds) = K(ds) / h(s, xi_s),   psi_h(x, z) = psi(x, h(x) z),

and the solutions of the two log-Laplace equations are conjugate,
v = h * v_h.  Two pairs admit closed forms: a trivial weight (h = 1,
nothing changes) and the absolute-value weight on Brownian motion killed
at the origin, whose transform is the three-dimensional Bessel process
with h(r, x) = |x| independent of time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from scipy.special import erf

from .branching import BranchingMechanism
from .clock import AdditiveFunctional
from .loglaplace import GridFunction, SpaceTimeGrid, solve_moment, solve_v
from .motion import MotionModel, _terminal_positions

# weights smaller than this fraction of the maximum are treated as a zero
# of the weight function when dividing a measure
DEGENERACY_FRACTION = 1e-12


class DegenerateWeightError(ValueError):
    """A measure carries mass where the weight function vanishes."""


@dataclass(frozen=True)
class WeightFunction:
    """Terminal weight rho(x): 'one', 'abs_x', or 'phi_p' = (1+x^2)^(-p/2)."""

    kind: str
    p: float = 0.0

    def __post_init__(self):
        if self.kind not in ("one", "abs_x", "phi_p"):
            raise ValueError(f"unknown weight kind {self.kind!r}")
        if self.kind == "phi_p" and self.p <= 0.0:
            raise ValueError("phi_p weight requires p > 0")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "one":
            out = np.ones_like(x)
        elif self.kind == "abs_x":
            out = np.abs(x)
        else:
            out = (1.0 + x * x) ** (-0.5 * self.p)
        return out if out.ndim else float(out)

    @property
    def vanishes_somewhere(self) -> bool:
        return self.kind == "abs_x"


@dataclass
class HFunction:
    """h(r, x) = E_{r,x}[rho(xi_T)], evaluated by one of three backends."""

    rho: WeightFunction
    motion: MotionModel
    horizon: float
    method: str  # "closed_form" | "grid" | "mc"
    _grid_solution: Optional[GridFunction] = None
    _mc: Optional[Tuple[int, Callable]] = None  # (reps, rng_factory)

    def __call__(self, r: float, x):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        xs = np.atleast_1d(x)
        if self.method == "closed_form":
            out = self._closed_form(r, xs)
        elif self.method == "grid":
            out = np.array([self._grid_solution.at(r, xi) for xi in xs])
        else:
            out = self._monte_carlo(r, xs)
        return float(out[0]) if scalar else out

    def _closed_form(self, r: float, xs: np.ndarray) -> np.ndarray:
        tau = self.horizon - r
        if tau < 0.0:
            raise ValueError("queried beyond the horizon")
        if self.rho.kind == "one":
            if self.motion.kind == "killed_brownian":
                if tau == 0.0:
                    return (xs != 0.0).astype(float)
                return erf(np.abs(xs) / math.sqrt(2.0 * tau))
            return np.ones_like(xs)
        if self.rho.kind == "abs_x":
            if self.motion.kind == "killed_brownian":
                return np.abs(xs)  # |x| is a martingale for the killed motion
            if self.motion.kind == "brownian":
                if tau == 0.0:
                    return np.abs(xs)
                s = math.sqrt(tau)
                return (s * math.sqrt(2.0 / math.pi)
                        * np.exp(-xs * xs / (2.0 * tau))
                        + xs * erf(xs / (s * math.sqrt(2.0))))
        raise ValueError("no closed form for this weight/motion pair")

    def _monte_carlo(self, r: float, xs: np.ndarray) -> np.ndarray:
        reps, rng_factory = self._mc
        out = np.empty_like(xs)
        for i, xi in enumerate(xs):
            rng = rng_factory(i)
            pos, alive = _terminal_positions(
                self.motion, r, float(xi), self.horizon, reps, rng)
            vals = np.asarray(self.rho(pos), dtype=float)
            if alive is not None:
                vals = np.where(alive, vals, 0.0)
            out[i] = vals.mean()
        return out


def _has_closed_form(motion: MotionModel, rho: WeightFunction) -> bool:
    if rho.kind == "one":
        # h = 1 for conservative motions, the survival erf for the killed one
        return True
    if rho.kind == "abs_x":
        return motion.kind in ("killed_brownian", "brownian")
    return False


def build_h(motion: MotionModel, rho: WeightFunction, horizon: float,
            method: str = "auto", grid: Optional[SpaceTimeGrid] = None,
            tol: float = 1e-6, reps: int = 20_000,
            rng_factory: Optional[Callable] = None) -> HFunction:
    """Construct h(r, x) = E_{r,x}[rho(xi_T)].

    'auto' picks a closed form whenever one exists (constant weights,
    |x| under plain or killed Brownian motion) and otherwise solves the
    backward semigroup equation on the supplied grid.  'mc' estimates each
    query by simulating terminal positions.
    """
    if method == "auto":
        method = "closed_form" if _has_closed_form(motion, rho) else "grid"
    if method == "closed_form":
        if not _has_closed_form(motion, rho):
            raise ValueError("no closed form for this weight/motion pair")
        return HFunction(rho, motion, horizon, "closed_form")
    if method == "grid":
        if grid is None:
            raise ValueError("grid method requires a space-time grid")
        if abs(grid.t - horizon) > 1e-12:
            raise ValueError("grid terminal time must equal the horizon")
        from .clock import lebesgue
        sol = solve_moment(lambda x: rho(x), 0.0, lebesgue(), motion, grid, tol=tol)
        return HFunction(rho, motion, horizon, "grid", _grid_solution=sol)
    if method == "mc":
        if rng_factory is None:
            raise ValueError("mc method requires an rng factory")
        return HFunction(rho, motion, horizon, "mc", _mc=(reps, rng_factory))
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# conjugated system


@dataclass
class TransformedMechanism:
    """psi_h(s, x, z) = psi(s, x, h(s, x) z)."""

    base: BranchingMechanism
    h: Callable  # (s, x_array) -> h values

    def eval(self, s, x, z):
        hx = np.asarray(self.h(s, x if x is not None else 0.0), dtype=float)
        return self.base.eval(s, x, hx * np.asarray(z, dtype=float))


@dataclass
class TransformedSystem:
    h: HFunction
    motion_h: Optional[MotionModel]
    K_h: AdditiveFunctional
    mech_h: TransformedMechanism
    exact: bool
    note: str = ""


def transformed_system(motion: MotionModel, K: AdditiveFunctional,
                       mech: BranchingMechanism, rho: WeightFunction,
                       horizon: float,
                       h: Optional[HFunction] = None,
                       grid: Optional[SpaceTimeGrid] = None) -> TransformedSystem:
    """Conjugate (motion, K, mech) by the weight rho.

    For (killed Brownian motion, |x|) the transformed motion is exactly the
    three-dimensional Bessel process and h(r, x) = |x|.  For the trivial
    weight nothing changes.  Otherwise the h-function is built numerically
    and motion_h is left as None: expectations under the transformed motion
    are then available through mc_h_expectation, which reweights plain
    paths by rho(xi_T) / h(r, x).
    """
    if h is None:
        h = build_h(motion, rho, horizon, grid=grid)

    if rho.kind == "one" and not motion.can_die:
        return TransformedSystem(h, motion, K, TransformedMechanism(mech, h),
                                 exact=True, note="trivial weight: unchanged")

    if rho.kind == "abs_x" and motion.kind == "killed_brownian":
        k_h = AdditiveFunctional(
            f"({K.name})/|x|",
            lambda s, x: K.density(s, x) / abs(float(x)) if x != 0.0 else math.inf,
            singularities=tuple(sorted(set(K.singularities) | {0.0})))
        return TransformedSystem(h, MotionModel(kind="bessel3"), k_h,
                                 TransformedMechanism(mech, h), exact=True,
                                 note="killed Brownian motion weighted by |x| "
                                      "is the Bessel(3) process")

    def k_h_density(s, x):
        hv = float(np.atleast_1d(h(s, x))[0])
        if hv <= 0.0:
            return math.inf
        return K.density(s, x) / hv

    k_h = AdditiveFunctional(f"({K.name})/h", k_h_density,
                             singularities=K.singularities, time_dependent=True)
    return TransformedSystem(h, None, k_h, TransformedMechanism(mech, h),
                             exact=False,
                             note="numeric h; use mc_h_expectation for "
                                  "transformed-motion functionals")


def mc_h_expectation(motion: MotionModel, rho: WeightFunction, h: HFunction,
                     functional: Callable, r: float, x: float, reps: int,
                     rng: np.random.Generator, dt: float = 1e-2):
    """E^h_{r,x}[F(path)] by importance weighting plain paths.

    The transformed path law has density rho(xi_T) / h(r, x) with respect to
    the plain one (dead paths carry weight zero).  functional receives a
    sampled Path.  Returns (estimate, stderr, effective sample size).
    """
    from .motion import sample_path
    hx = float(np.atleast_1d(h(r, x))[0])
    if hx <= 0.0:
        raise DegenerateWeightError(f"h({r}, {x}) vanishes")
    vals = np.empty(reps)
    wts = np.empty(reps)
    for i in range(reps):
        path = sample_path(motion, r, x, h.horizon, dt, rng)
        alive = path.kill_time is None
        wts[i] = (rho(path.positions[-1]) if alive else 0.0) / hx
        vals[i] = functional(path) if wts[i] > 0.0 else 0.0
    est = float(np.mean(vals * wts))
    se = float(np.std(vals * wts, ddof=1) / math.sqrt(reps))
    ess = float(wts.sum() ** 2 / np.dot(wts, wts)) if wts.any() else 0.0
    return est, se, ess


def estimate_weight_constant(rho: WeightFunction, motion: MotionModel,
                             horizon: float, x_grid, t_grid, reps: int,
                             rng: np.random.Generator):
    """Two-sided comparison constant for a weight under the motion semigroup.

    For each grid point estimates E_x[rho(xi_t)] / rho(x) by Monte Carlo
    (killed paths contribute zero) and returns (c_hat, table) where c_hat
    bounds both the ratio and its reciprocal over the grid, and each table
    row carries the point estimate with its standard error.
    """
    from .motion import semigroup_mc
    table = []
    c_hat = 1.0
    for t in t_grid:
        if not 0.0 < t <= horizon:
            raise ValueError("t_grid entries must lie in (0, horizon]")
        for x in x_grid:
            rx = float(np.atleast_1d(rho(x))[0])
            if rx <= 0.0:
                raise DegenerateWeightError(f"rho({x}) vanishes on x_grid")
            est, se = semigroup_mc(motion, rho, 0.0, x, t, reps, rng)
            ratio = est / rx
            table.append({"t": float(t), "x": float(x), "ratio": ratio,
                          "stderr": se / rx})
            if ratio > 0.0:
                c_hat = max(c_hat, ratio, 1.0 / ratio)
            else:
                c_hat = math.inf
    return c_hat, table


def systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices of a systematic resample proportional to the weights."""
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0.0) or w.sum() <= 0.0:
        raise ValueError("weights must be nonnegative with positive sum")
    w = w / w.sum()
    n = len(w)
    u = (rng.random() + np.arange(n)) / n
    return np.searchsorted(np.cumsum(w), u)


def map_measure(measure, h: HFunction, r: float, direction: str = "divide"):
    """Move an atomic measure between the two coordinate systems.

    'divide' maps mu -> mu / h(r, .) (plain to transformed), 'multiply' maps
    back.  Division fails loudly if an atom sits where h is degenerate.
    """
    from .particles import AtomicMeasure
    if direction not in ("divide", "multiply"):
        raise ValueError("direction must be 'divide' or 'multiply'")
    if len(measure.positions) == 0:
        return measure
    hv = np.atleast_1d(h(r, measure.positions)).astype(float)
    if direction == "multiply":
        return AtomicMeasure(measure.positions, measure.weights * hv)
    floor = DEGENERACY_FRACTION * float(hv.max(initial=0.0))
    if np.any(hv <= floor):
        bad = measure.positions[hv <= floor]
        raise DegenerateWeightError(
            f"atoms at {bad[:3]}... sit where the weight function vanishes")
    return AtomicMeasure(measure.positions, measure.weights / hv)


# ---------------------------------------------------------------------------
# conjugation identity check


@dataclass
class IdentityReport:
    probes: np.ndarray
    v_direct: np.ndarray
    v_conjugate: np.ndarray
    sup_abs: float
    sup_rel: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.sup_abs <= self.tolerance


def verify_identity(f, mech: BranchingMechanism, K: AdditiveFunctional,
                    motion: MotionModel, rho: WeightFunction,
                    r: float, horizon: float,
                    probes: Sequence[float],
                    tolerance: float = 1e-3,
                    x_max: float = 8.0,
                    nx_direct: int = 513, nt_direct: int = 256,
                    nx_conj: int = 385, nt_conj: int = 192,
                    tol: float = 1e-6) -> IdentityReport:
    """Check v = h * v_h on two independently discretized routes.

    The direct route solves the plain log-Laplace equation; the conjugate
    route solves the transformed equation (transformed motion, clock K/h,
    mechanism psi(h z)) on a deliberately different grid, then multiplies by
    h at the probe points.  Agreement is evidence that the change of measure
    was propagated consistently through motion, clock, and mechanism.
    """
    system = transformed_system(motion, K, mech, rho, horizon)
    if system.motion_h is None:
        raise ValueError("identity check requires an exactly transformed motion")
    h = system.h

    boundary = "absorbing_at_zero" if motion.can_die else "free"
    x_min = 0.0 if motion.can_die else -x_max
    g1 = SpaceTimeGrid(r, horizon, nt_direct, x_min=x_min, x_max=x_max,
                       nx=nx_direct, boundary=boundary)
    v = solve_v(f, mech, K, motion, g1, tol=tol)

    # transformed grid stays strictly inside (0, inf) and is deliberately
    # staggered against the direct one
    x_lo = 0.5 * x_max / (nx_conj - 1)
    g2 = SpaceTimeGrid(r, horizon, nt_conj, x_min=x_lo, x_max=x_max,
                       nx=nx_conj, boundary="free")

    def f_h(x):
        x = np.asarray(x, dtype=float)
        hv = np.atleast_1d(h(horizon, x)).astype(float)
        fv = np.atleast_1d(np.asarray(f(x), dtype=float)) if callable(f) \
            else np.full_like(hv, float(f))
        out = np.zeros_like(hv)
        ok = hv > 0.0
        out[ok] = fv[ok] / hv[ok]
        return out

    v_h = solve_v(f_h, system.mech_h, system.K_h, system.motion_h, g2, tol=tol)

    probes = np.asarray(probes, dtype=float)
    direct = np.array([v.at(r, p) for p in probes])
    conj = np.array([float(np.atleast_1d(h(r, p))[0]) * v_h.at(r, p)
                     for p in probes])
    diff = np.abs(direct - conj)
    rel = diff / np.maximum(np.abs(direct), 1e-12)
    return IdentityReport(probes, direct, conj, float(diff.max()),
                          float(rel.max()), tolerance)
