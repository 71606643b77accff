"""One-particle Markov motions.

Four motions are supported:

* ``brownian`` -- standard Brownian motion on R^d,
* ``killed_brownian`` -- one-dimensional Brownian motion absorbed at 0,
* ``alpha_stable`` -- symmetric alpha-stable motion (independent coordinates),
* ``bessel3`` -- the Bessel(3) process, i.e. the radial part of 3d Brownian
  motion; it is the exact Doob transform of killed Brownian motion by the
  harmonic function ``|x|``.

All transition laws are exactly simulable over a single step.  For the killed
motion, absorption inside a step is resolved with the Brownian-bridge crossing
probability so that killing is not underestimated at coarse step sizes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

KINDS = ("brownian", "killed_brownian", "alpha_stable", "bessel3")


class InvalidStateError(ValueError):
    pass


@dataclass(frozen=True)
class MotionModel:
    kind: str
    dim: int = 1
    alpha: Optional[float] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown motion kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.kind in ("killed_brownian", "bessel3") and self.dim != 1:
            raise ValueError(f"{self.kind} requires dim = 1")
        if self.kind == "alpha_stable":
            if self.alpha is None or not (0.0 < self.alpha < 2.0):
                raise ValueError("alpha_stable requires alpha in (0, 2)")
        elif self.alpha is not None:
            raise ValueError("alpha is only meaningful for alpha_stable")

    @property
    def can_die(self) -> bool:
        return self.kind == "killed_brownian"

    @property
    def conservative(self) -> bool:
        return not self.can_die

    @property
    def closed_form_semigroup(self) -> bool:
        # killed BM has reflection-principle formulas; BM and Bessel3 have
        # Gaussian moment identities
        return self.kind in ("brownian", "killed_brownian", "bessel3")


@dataclass
class ParticleState:
    position: object  # float for dim 1, ndarray for dim > 1
    alive: bool = True
    kill_time: Optional[float] = None

    def __post_init__(self):
        if not self.alive and self.kill_time is None:
            raise ValueError("dead state requires a kill_time")


@dataclass
class Path:
    """Piecewise-sampled trajectory starting at its birth time."""

    times: np.ndarray
    positions: np.ndarray
    kill_time: Optional[float] = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        if len(self.times) != len(self.positions):
            raise ValueError("times and positions must have equal length")
        if len(self.times) == 0:
            raise ValueError("a path has at least its birth point")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if self.kill_time is not None and self.times[-1] > self.kill_time:
            raise ValueError("times beyond kill_time are not allowed")

    @property
    def birth_time(self) -> float:
        return float(self.times[0])

    @property
    def end_time(self) -> float:
        return float(self.times[-1])

    def position_at(self, t: float) -> float:
        """Linear interpolation; only meaningful on the covered interval."""
        return float(np.interp(t, self.times, self.positions))


def bridge_survival(x1: float, x2: float, dt: float) -> float:
    """P(Brownian bridge from x1 to x2 over dt stays positive).

    Both endpoints must lie strictly on the positive side of the barrier.
    """
    if x1 <= 0.0 or x2 <= 0.0 or dt <= 0.0:
        raise ValueError("bridge_survival requires x1 > 0, x2 > 0, dt > 0")
    return -math.expm1(-2.0 * x1 * x2 / dt)


def sample_standard_stable(alpha: float, rng: np.random.Generator, size=None):
    """Standard symmetric alpha-stable variates (Chambers-Mallows-Stuck)."""
    u = rng.uniform(-math.pi / 2.0, math.pi / 2.0, size=size)
    w = rng.exponential(1.0, size=size)
    if abs(alpha - 1.0) < 1e-12:
        return np.tan(u)
    s = np.sin(alpha * u) / np.cos(u) ** (1.0 / alpha)
    t = (np.cos((1.0 - alpha) * u) / w) ** ((1.0 - alpha) / alpha)
    return s * t


def step(motion: MotionModel, s: float, x: ParticleState, dt: float,
         rng: np.random.Generator) -> ParticleState:
    """One transition of size dt, started from x at time s."""
    if not x.alive:
        raise InvalidStateError("cannot step a dead particle")
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    pos = x.position
    if motion.dim == 1 and not np.all(np.isfinite([pos])):
        raise InvalidStateError("non-finite position")

    if motion.kind == "brownian":
        sd = math.sqrt(dt)
        if motion.dim == 1:
            return ParticleState(float(pos) + sd * rng.standard_normal())
        return ParticleState(np.asarray(pos, float) + sd * rng.standard_normal(motion.dim))

    if motion.kind == "alpha_stable":
        sc = dt ** (1.0 / motion.alpha)
        if motion.dim == 1:
            return ParticleState(float(pos) + sc * float(sample_standard_stable(motion.alpha, rng)))
        return ParticleState(np.asarray(pos, float)
                             + sc * sample_standard_stable(motion.alpha, rng, size=motion.dim))

    if motion.kind == "bessel3":
        # radial part of 3d BM started at (|x|, 0, 0); exact one-step transition
        sd = math.sqrt(dt)
        z0 = abs(float(pos)) + sd * rng.standard_normal()
        z1 = sd * rng.standard_normal()
        z2 = sd * rng.standard_normal()
        return ParticleState(math.sqrt(z0 * z0 + z1 * z1 + z2 * z2))

    # killed_brownian
    x1 = float(pos)
    if x1 == 0.0:
        raise InvalidStateError("killed motion stepped from the barrier")
    x2 = x1 + math.sqrt(dt) * rng.standard_normal()
    killed = (x1 > 0.0) != (x2 > 0.0) or x2 == 0.0
    if not killed:
        p = bridge_survival(abs(x1), abs(x2), dt)
        killed = rng.random() >= p
    if killed:
        return ParticleState(0.0, alive=False, kill_time=s + dt * rng.random())
    return ParticleState(x2)


def sample_path(motion: MotionModel, r: float, x0: float, t: float, dt: float,
                rng: np.random.Generator) -> Path:
    """Fixed-step path on [r, t]; stops early at the kill time if absorbed."""
    if t < r:
        raise ValueError("t must be >= r")
    times = [r]
    positions = [x0]
    state = ParticleState(x0)
    s = r
    while s < t - 1e-15:
        h = min(dt, t - s)
        state = step(motion, s, state, h, rng)
        if not state.alive:
            times.append(state.kill_time)
            positions.append(0.0)
            return Path(np.array(times), np.array(positions), kill_time=state.kill_time)
        s += h
        times.append(s)
        positions.append(state.position)
    return Path(np.array(times), np.array(positions))


def _terminal_positions(motion: MotionModel, r: float, x, t: float, reps: int,
                        rng: np.random.Generator, nsteps: int = 1):
    """Vectorized endpoint sampler; returns (positions, alive mask).

    One step is exact in law for every supported motion (killing resolved
    with the bridge correction), so nsteps > 1 only matters for
    consistency checks.
    """
    T = t - r
    if motion.kind == "brownian":
        if motion.dim == 1:
            return float(x) + math.sqrt(T) * rng.standard_normal(reps), None
        xs = np.asarray(x, float) + math.sqrt(T) * rng.standard_normal((reps, motion.dim))
        return xs, None
    if motion.kind == "alpha_stable":
        sc = T ** (1.0 / motion.alpha)
        if motion.dim == 1:
            return float(x) + sc * sample_standard_stable(motion.alpha, rng, size=reps), None
        return (np.asarray(x, float)
                + sc * sample_standard_stable(motion.alpha, rng, size=(reps, motion.dim)), None)
    if motion.kind == "bessel3":
        z = math.sqrt(T) * rng.standard_normal((reps, 3))
        z[:, 0] += abs(float(x))
        return np.linalg.norm(z, axis=1), None
    # killed_brownian, stepped with bridge correction
    dt = T / nsteps
    pos = np.full(reps, float(x))
    alive = np.ones(reps, dtype=bool)
    for _ in range(nsteps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        x1 = pos[idx]
        x2 = x1 + math.sqrt(dt) * rng.standard_normal(idx.size)
        crossed = np.sign(x1) != np.sign(x2)
        surv = np.where(crossed, 0.0, -np.expm1(-2.0 * np.abs(x1 * x2) / dt))
        u = rng.random(idx.size)
        stay = u < surv
        pos[idx] = np.where(stay, x2, 0.0)
        alive[idx] = stay
    return pos, alive


def semigroup_mc(motion: MotionModel, f: Callable, r: float, x, t: float,
                 reps: int, rng: np.random.Generator, nsteps: int = 1,
                 cemetery: Optional[float] = None):
    """Monte Carlo estimate of the (sub-)probability semigroup applied to f.

    Killed paths contribute `cemetery` if given, else 0.  Returns
    (estimate, standard error).
    """
    if t < r:
        raise ValueError("t must be >= r")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if t == r:
        return float(np.asarray(f(np.asarray([x]))).reshape(-1)[0]), 0.0
    pos, alive = _terminal_positions(motion, r, x, t, reps, rng, nsteps=nsteps)
    vals = np.asarray(f(pos), dtype=float)
    if alive is not None:
        dead_val = 0.0 if cemetery is None else cemetery
        vals = np.where(alive, vals, dead_val)
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(reps)) if reps > 1 else float("inf")
    return est, se


@dataclass
class HittingEstimate:
    estimate: float
    stderr: float
    tail_bound: float
    truncated_fraction: float
    warning: Optional[str] = None


def hitting_exp_functional(motion: MotionModel, V: Callable, k: int, r: float,
                           x, reps: int, rng: np.random.Generator,
                           horizon: float, dt: float = 1e-3,
                           tol: Optional[float] = None) -> HittingEstimate:
    """Estimate the exponentially discounted first-hitting functional of V.

    Pays exp(k * (r - tau)) where tau is the first grid time with
    (tau, position) in V.  Paths that neither hit V nor die before the
    truncation horizon contribute 0; the resulting bias is at most
    exp(-k * (horizon - r)), which is reported.

    V must accept (time, positions-array) and return a boolean array.
    """
    if k < 1:
        raise ValueError("k must be a positive integer")
    pos = np.full(reps, float(x))
    alive = np.ones(reps, dtype=bool)
    vals = np.zeros(reps)
    hit0 = np.asarray(V(r, pos), dtype=bool)
    vals[hit0] = 1.0
    alive &= ~hit0
    s = r
    sqdt = math.sqrt(dt)
    while s < horizon - 1e-12 and alive.any():
        h = min(dt, horizon - s)
        idx = np.flatnonzero(alive)
        if motion.kind == "killed_brownian":
            x1 = pos[idx]
            x2 = x1 + math.sqrt(h) * rng.standard_normal(idx.size)
            crossed = np.sign(x1) != np.sign(x2)
            surv = np.where(crossed, 0.0, -np.expm1(-2.0 * np.abs(x1 * x2) / h))
            stay = rng.random(idx.size) < surv
            pos[idx] = np.where(stay, x2, 0.0)
            alive[idx] &= stay  # dead paths contribute 0 unless V is hit at the barrier
        elif motion.kind == "brownian":
            pos[idx] += (sqdt if h == dt else math.sqrt(h)) * rng.standard_normal(idx.size)
        elif motion.kind == "alpha_stable":
            pos[idx] += h ** (1.0 / motion.alpha) * sample_standard_stable(
                motion.alpha, rng, size=idx.size)
        else:  # bessel3
            z0 = pos[idx] + math.sqrt(h) * rng.standard_normal(idx.size)
            z1 = math.sqrt(h) * rng.standard_normal(idx.size)
            z2 = math.sqrt(h) * rng.standard_normal(idx.size)
            pos[idx] = np.sqrt(z0 * z0 + z1 * z1 + z2 * z2)
        s += h
        # re-check everything that was alive at the step start, so that a
        # path absorbed at the barrier can still register a hit there
        hit = np.asarray(V(s, pos[idx]), dtype=bool)
        hit_idx = idx[hit]
        vals[hit_idx] = np.exp(k * (r - s))
        alive[hit_idx] = False
    truncated = float(alive.mean())
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(reps)) if reps > 1 else float("inf")
    tail = math.exp(-k * (horizon - r))
    warning = None
    if tol is not None and truncated > 0 and tail * truncated > tol:
        warning = (f"truncation horizon too small: bias bound "
                   f"{tail * truncated:.3g} exceeds tol {tol:.3g}")
    return HittingEstimate(est, se, tail, truncated, warning)
