"""Event-driven simulation of rescaled branching particle systems.

Particles never interact, so a replica is simulated as a FIFO of independent
lifetimes: each particle moves according to its motion, dies when the scaled
branching clock reaches an independent Exp(1) threshold, and is replaced by
a sampled number of children at its death location.  Processing order is
deterministic (by particle id), and each replica consumes a single
counter-based random stream, so a fixed (seed, config) reproduces the exact
trajectory regardless of how replicas are distributed over workers.

Two lifetime engines are used:

* constant-rate clocks: the death time is an exact exponential and the
  motion jumps straight between breakpoints (output times, death, horizon),
  with the bridge-crossing correction applied per jump for killed motions;
* general clocks: fixed-base-step simulation with steps shrunk near clock
  singularities so no step accrues more than a fixed clock increment, death
  located by linear interpolation inside the crossing step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .branching import RescaledFamily, sample_offspring
from .clock import AdditiveFunctional, DEFAULT_KILL_FLOOR, MAX_STEP_INCREMENT
from .motion import MotionModel, bridge_survival, sample_standard_stable

POPULATION_CAP = 10_000_000
QUEUE_CAP = 100_000_000


class ResourceCapError(RuntimeError):
    pass


@dataclass
class AtomicMeasure:
    positions: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.positions) != len(self.weights):
            raise ValueError("positions and weights must have equal length")
        if np.any(self.weights <= 0.0):
            raise ValueError("atom weights must be positive")

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def pair(self, f: Callable) -> float:
        """<f, mu> for vectorized f."""
        if len(self.positions) == 0:
            return 0.0
        return float(np.sum(self.weights * np.asarray(f(self.positions), dtype=float)))

    def scaled(self, c: float) -> "AtomicMeasure":
        return AtomicMeasure(self.positions, c * self.weights)


def empty_measure() -> AtomicMeasure:
    return AtomicMeasure(np.empty(0), np.empty(0))


def delta(x: float, mass: float = 1.0) -> AtomicMeasure:
    return AtomicMeasure(np.array([x]), np.array([mass]))


def lebesgue_interval(a: float, b: float, mass: Optional[float] = None,
                      n_atoms: int = 100) -> AtomicMeasure:
    """Equal-weight atoms at cell centers; total mass defaults to b - a."""
    if b <= a:
        raise ValueError("requires a < b")
    total = (b - a) if mass is None else mass
    centers = a + (b - a) * (np.arange(n_atoms) + 0.5) / n_atoms
    return AtomicMeasure(centers, np.full(n_atoms, total / n_atoms))


@dataclass
class Particle:
    id: int
    parent_id: Optional[int]
    birth_time: float
    position: float


@dataclass
class Population:
    particles: List[Particle]
    clock_time: float
    beta: float


@dataclass
class Event:
    time: float
    kind: str  # "death" | "killed" | "horizon"
    particle_id: int
    position: float
    n_children: int = 0


@dataclass
class Trajectory:
    output_times: np.ndarray
    measures: List[AtomicMeasure]  # beta-weighted measures, one per output time
    seed_record: Optional[Tuple[int, int]] = None
    truncated: bool = False
    event_log: Optional[List[Event]] = None
    n_events: int = 0
    max_population: int = 0


def init_poisson(mu: AtomicMeasure, beta: float, rng: np.random.Generator,
                 hard_cap: int = POPULATION_CAP) -> Population:
    """Poisson number of unit particles per atom, intensity weight/beta."""
    if not (0.0 < beta <= 1.0):
        raise ValueError("beta must lie in (0, 1]")
    if mu.total_mass <= 0.0:
        raise ValueError("initial measure must carry mass")
    expected = mu.total_mass / beta
    if expected > hard_cap:
        raise ResourceCapError(
            f"expected initial population {expected:.3g} exceeds cap {hard_cap}")
    particles = []
    next_id = 0
    for x, w in zip(mu.positions, mu.weights):
        n = rng.poisson(w / beta)
        for _ in range(n):
            particles.append(Particle(next_id, None, math.nan, float(x)))
            next_id += 1
    return Population(particles, clock_time=math.nan, beta=beta)


# ---------------------------------------------------------------------------
# lifetime engines


def _jump(motion: MotionModel, x: float, dt: float, rng) -> Tuple[float, bool]:
    """One exact transition; returns (position, killed)."""
    if motion.kind == "brownian":
        return x + math.sqrt(dt) * rng.standard_normal(), False
    if motion.kind == "alpha_stable":
        return x + dt ** (1.0 / motion.alpha) * float(
            sample_standard_stable(motion.alpha, rng)), False
    if motion.kind == "bessel3":
        sd = math.sqrt(dt)
        z0 = abs(x) + sd * rng.standard_normal()
        z1 = sd * rng.standard_normal()
        z2 = sd * rng.standard_normal()
        return math.sqrt(z0 * z0 + z1 * z1 + z2 * z2), False
    # killed_brownian
    y = x + math.sqrt(dt) * rng.standard_normal()
    if (x > 0.0) != (y > 0.0) or y == 0.0:
        return 0.0, True
    if rng.random() >= bridge_survival(abs(x), abs(y), dt):
        return 0.0, True
    return y, False


def _lifetime_constant_rate(motion, rate: float, birth: float, x0: float,
                            horizon: float, checkpoints: Sequence[float], rng):
    """Exact lifetime for spatially constant clock density.

    Returns (end_time, end_kind, end_position, [(t, x) at checkpoints]).
    """
    death = birth + rng.exponential(1.0) / rate if rate > 0.0 else math.inf
    end = min(death, horizon)
    snaps = []
    t, x = birth, x0
    for cp in checkpoints:
        if cp < birth:
            continue
        # alive on [birth, death); still counted at the horizon itself
        if cp >= death or cp > horizon:
            break
        if cp > t:
            x, killed = _jump(motion, x, cp - t, rng)
            t = cp
            if killed:
                # absorbed somewhere inside (t_prev, cp]; location is the barrier
                return cp, "killed", 0.0, snaps
        snaps.append((cp, x))
    if end > t:
        x, killed = _jump(motion, x, end - t, rng)
        if killed:
            return end, "killed", 0.0, snaps
    kind = "death" if death <= horizon else "horizon"
    return end, kind, x, snaps


def _lifetime_stepped(motion, K: AdditiveFunctional, rate_multiplier: float,
                      birth: float, x0: float, horizon: float,
                      checkpoints: Sequence[float], base_dt: float, rng,
                      kill_floor: float):
    """General lifetime: adaptive stepping against the clock threshold."""
    threshold = rng.exponential(1.0)
    acc = 0.0
    t, x = birth, x0
    k_here = rate_multiplier * K.rate(t, x)
    snaps = []
    cp_iter = iter([c for c in checkpoints if c >= birth])
    next_cp = next(cp_iter, None)
    while next_cp is not None and next_cp <= birth + 1e-15:
        snaps.append((next_cp, x0))
        next_cp = next(cp_iter, None)
    floor_active = motion.can_die and bool(K.singularities)
    while t < horizon - 1e-15:
        dt = min(base_dt, horizon - t)
        if k_here > 0.0:
            # cap the scaled clock increment per step
            dt = min(dt, MAX_STEP_INCREMENT / k_here)
        dt = max(dt, 1e-12)
        if next_cp is not None and t < next_cp < t + dt:
            dt = next_cp - t
        y, killed = _jump(motion, x, dt, rng)
        if killed:
            # credit clock up to a uniform kill time inside the step
            kt = t + dt * rng.random()
            inc_kill = k_here * (kt - t)
            if acc + inc_kill >= threshold and k_here > 0.0:
                # death strictly precedes absorption: the particle branches
                # on a path that is about to hit the barrier, so place the
                # offspring on the bridge from (t, x) to (kt, 0), not at the
                # step-start position (that would leak mass away from the
                # barrier)
                dtime = t + (threshold - acc) / k_here
                lam = (kt - dtime) / (kt - t) if kt > t else 0.0
                sd = math.sqrt(max((dtime - t) * lam, 0.0))
                dpos = abs(x * lam + sd * rng.standard_normal())
                return dtime, "death", dpos, snaps
            return kt, "killed", 0.0, snaps
        k_new = rate_multiplier * K.rate(t + dt, y)
        inc = 0.5 * (k_here + k_new) * dt
        if acc + inc >= threshold:
            # linear-in-time crossing inside the step; the position at the
            # crossing is a point of the Brownian bridge between the step
            # endpoints -- the bridge noise matters, since placing children
            # at the conditional mean would systematically overestimate
            # their survival near an absorbing barrier
            w = (threshold - acc) / inc if inc > 0 else 0.0
            dtime = t + w * dt
            sd = math.sqrt(max(w * (1.0 - w) * dt, 0.0))
            dpos = x + w * (y - x) + sd * rng.standard_normal()
            if motion.can_die:
                dpos = abs(dpos)
            return dtime, "death", dpos, snaps
        acc += inc
        t += dt
        x, k_here = y, k_new
        if next_cp is not None and abs(t - next_cp) < 1e-12:
            snaps.append((next_cp, x))
            next_cp = next(cp_iter, None)
        if floor_active and abs(x) < kill_floor:
            return t, "killed", 0.0, snaps
    return horizon, "horizon", x, snaps


def simulate(pop: Population, r: float, horizon: float, motion: MotionModel,
             K: AdditiveFunctional, family: RescaledFamily,
             dt: float, output_times: Sequence[float],
             rng: np.random.Generator,
             population_cap: int = POPULATION_CAP,
             keep_event_log: bool = False,
             kill_floor: float = DEFAULT_KILL_FLOOR,
             seed_record: Optional[Tuple[int, int]] = None) -> Trajectory:
    """Run one replica from time r to the horizon.

    The death intensity is (rate_multiplier / beta) * k(s, x).  Offspring are
    born exactly at the parent's death time and location.  Output measures
    are the beta-weighted populations at the requested times (a particle is
    alive on [birth, death), so output at an event time sees the children,
    matching right-continuity).
    """
    output_times = sorted(float(u) for u in output_times)
    if output_times and (output_times[0] < r - 1e-12 or output_times[-1] > horizon + 1e-12):
        raise ValueError("output_times must lie inside [r, horizon]")
    beta = pop.beta
    rate_multiplier = family.rate_multiplier / beta
    constant_rate = not K.singularities and not getattr(K, "time_dependent", False) \
        and _is_spatially_constant(K)
    const_rate_value = rate_multiplier * K.rate(r, 1.0) if constant_rate else None

    out_positions: List[List[float]] = [[] for _ in output_times]
    event_log: Optional[List[Event]] = [] if keep_event_log else None
    queue = [(p.id, r if math.isnan(p.birth_time) else p.birth_time, p.position)
             for p in pop.particles]
    queue.reverse()  # pop() serves lowest id first
    next_id = max((p.id for p in pop.particles), default=-1) + 1
    n_events = 0
    max_pop = len(queue)
    truncated = False

    while queue:
        pid, birth, x0 = queue.pop()
        if constant_rate:
            end, kind, xend, snaps = _lifetime_constant_rate(
                motion, const_rate_value, birth, x0, horizon, output_times, rng)
        else:
            end, kind, xend, snaps = _lifetime_stepped(
                motion, K, rate_multiplier, birth, x0, horizon, output_times,
                dt, rng, kill_floor)
        for (u, xu) in snaps:
            out_positions[output_times.index(u)].append(xu)
        n_children = 0
        if kind == "death":
            n_children = sample_offspring(family.law, rng)
            for _ in range(n_children):
                queue.append((next_id, end, xend))
                next_id += 1
            if len(queue) > population_cap or next_id > QUEUE_CAP:
                truncated = True
                if event_log is not None:
                    event_log.append(Event(end, kind, pid, xend, n_children))
                break
        if event_log is not None:
            event_log.append(Event(end, kind, pid, xend, n_children))
        n_events += 1
        max_pop = max(max_pop, len(queue))

    measures = [AtomicMeasure(np.asarray(xs, dtype=float), np.full(len(xs), beta))
                if xs else empty_measure()
                for xs in out_positions]
    return Trajectory(np.asarray(output_times), measures, seed_record=seed_record,
                      truncated=truncated, event_log=event_log,
                      n_events=n_events, max_population=max_pop)


def _is_spatially_constant(K: AdditiveFunctional) -> bool:
    probes = (-2.3, -0.7, 0.41, 1.0, 5.5)
    vals = [K.rate(0.0, p) for p in probes]
    return max(vals) - min(vals) < 1e-15


def laplace_mc(mu: AtomicMeasure, beta: float, motion: MotionModel,
               K: AdditiveFunctional, family: RescaledFamily,
               f: Callable, r: float, t: float, reps: int,
               rng_for: Callable[[int], np.random.Generator],
               dt: float = 1e-2, kill_floor: float = DEFAULT_KILL_FLOOR):
    """Replica mean of exp(-<f, beta X_t>) with fresh Poisson starts.

    rng_for(i) must hand out the stream of replica i.  Returns
    (mean, stderr, replica values).
    """
    if reps < 2:
        raise ValueError("reps must be >= 2")
    vals = np.empty(reps)
    for i in range(reps):
        rng = rng_for(i)
        pop = init_poisson(mu, beta, rng)
        traj = simulate(pop, r, t, motion, K, family, dt, [t], rng,
                        kill_floor=kill_floor)
        mt = traj.measures[0]
        vals[i] = math.exp(-mt.pair(f)) if len(mt.positions) else 1.0
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(reps)), vals


def max_occupation(traj: Trajectory, U: Callable[[float, float], bool],
                   c: float) -> bool:
    """Whether the U-occupation count reaches c at any event or output time."""
    if traj.event_log is None:
        raise ValueError("max_occupation requires a retained event log")
    for k, u in enumerate(traj.output_times):
        s = float(u)
        m = traj.measures[k]
        count = sum(1 for xx in m.positions if U(s, float(xx)))
        if count >= c:
            return True
    # between output times the census only sees branch points: count the
    # children spawned into U at each death event
    for ev in traj.event_log:
        if ev.kind == "death" and ev.n_children >= c and U(ev.time, ev.position):
            return True
    return False
