"""Shipped scenario library and its declarative configuration format.

A scenario bundles a motion, a branching mechanism, a clock, an optional
weight function, an initial measure, and a test function, together with the
defaults (initial time, horizon, beta) used by the experiment harness.
Scenarios round-trip losslessly through plain dictionaries so the harness
can rebuild them inside worker processes and hash them for reproducibility.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from . import branching, clock, motion, particles
from .branching import BranchingMechanism, RescaledFamily
from .clock import AdditiveFunctional
from .motion import MotionModel
from .particles import AtomicMeasure
from .transform import WeightFunction


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# test functions


def constant_f(value: float) -> Callable:
    def f(x):
        return np.full_like(np.asarray(x, dtype=float), value)
    f.config = {"kind": "constant", "value": value}
    return f


def abs_capped_f(cap: float = 1.0) -> Callable:
    def f(x):
        return np.minimum(np.abs(np.asarray(x, dtype=float)), cap)
    f.config = {"kind": "abs_capped", "cap": cap}
    return f


def f_from_config(cfg: Dict) -> Callable:
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    if kind == "constant":
        out = constant_f(float(cfg.pop("value")))
    elif kind == "abs_capped":
        out = abs_capped_f(float(cfg.pop("cap", 1.0)))
    else:
        raise ConfigError(f"unknown test-function kind {kind!r}")
    if cfg:
        raise ConfigError(f"unknown test-function keys {sorted(cfg)}")
    return out


# ---------------------------------------------------------------------------
# initial measures


def measure_from_config(cfg: Dict) -> AtomicMeasure:
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    if kind == "delta":
        m = particles.delta(float(cfg.pop("x")), float(cfg.pop("mass", 1.0)))
    elif kind == "lebesgue":
        m = particles.lebesgue_interval(float(cfg.pop("a")), float(cfg.pop("b")),
                                        mass=cfg.pop("mass", None),
                                        n_atoms=int(cfg.pop("n_atoms", 100)))
    else:
        raise ConfigError(f"unknown initial-measure kind {kind!r}")
    if cfg:
        raise ConfigError(f"unknown initial-measure keys {sorted(cfg)}")
    return m


# ---------------------------------------------------------------------------
# scenarios


@dataclass
class Scenario:
    name: str
    motion: MotionModel
    mech: BranchingMechanism
    K: AdditiveFunctional
    mu: AtomicMeasure
    f: Callable
    beta: float
    r: float
    horizon: float
    rho: Optional[WeightFunction] = None
    notes: str = ""
    config: Dict = field(default_factory=dict)

    def family(self, beta: Optional[float] = None) -> RescaledFamily:
        b = self.beta if beta is None else beta
        if self.name == "no_branching":
            return branching.custom_family(b, _unit_law(), 1.0)
        if self.name == "subcritical":
            return branching.custom_family(
                b, branching.OffspringLaw((0.5, 0.5), 0.5, 0.0), 2.0 * b)
        return branching.offspring_family(self.mech, b)


def _unit_law():
    return branching.OffspringLaw((0.0, 1.0), 1.0, 0.0)


def dawson_watanabe(b: float = 1.0, mu_cfg: Optional[Dict] = None,
                    f_cfg: Optional[Dict] = None, beta: float = 0.1,
                    r: float = 0.0, horizon: float = 1.0) -> Scenario:
    """Free Brownian motion, quadratic mechanism, unit-rate clock."""
    mu_cfg = mu_cfg or {"kind": "delta", "x": 0.0, "mass": 1.0}
    f_cfg = f_cfg or {"kind": "constant", "value": 1.0}
    cfg = {"name": "dawson_watanabe", "params": {"b": b}, "beta": beta,
           "r": r, "horizon": horizon, "initial_measure": mu_cfg, "f": f_cfg}
    return Scenario("dawson_watanabe", MotionModel(kind="brownian"),
                    branching.quadratic(b), clock.lebesgue(),
                    measure_from_config(mu_cfg), f_from_config(f_cfg),
                    beta, r, horizon, rho=WeightFunction("one"),
                    notes="classical measure-valued branching diffusion",
                    config=cfg)


def hyperbolic(beta: float = 1.0, sigma: float = 1.5, x0: float = 1.0,
               mu_cfg: Optional[Dict] = None, f_cfg: Optional[Dict] = None,
               r: float = 0.0, horizon: float = 1.0) -> Scenario:
    """Brownian motion killed at 0, power clock |x|^-sigma, stable branching.

    Shipped in the effective form of its log-Laplace equation: mechanism
    z^(1+beta) together with the singular clock density |x|^-sigma.  The
    natural parameter range is 1 <= sigma <= 1 + beta (the |x| weight makes
    the clock admissible there); other sigma are accepted for diagnostics,
    since criticality keeps the mean-mass oracle valid regardless.
    """
    if not (0.0 < beta <= 1.0):
        raise ConfigError("hyperbolic requires beta in (0, 1]")
    mu_cfg = mu_cfg or {"kind": "delta", "x": x0, "mass": 1.0}
    f_cfg = f_cfg or {"kind": "constant", "value": 1.0}
    cfg = {"name": "hyperbolic", "params": {"beta": beta, "sigma": sigma, "x0": x0},
           "beta": beta, "r": r, "horizon": horizon,
           "initial_measure": mu_cfg, "f": f_cfg}
    return Scenario("hyperbolic", MotionModel(kind="killed_brownian"),
                    branching.stable(beta=beta, scale=1.0),
                    clock.power_law(sigma),
                    measure_from_config(mu_cfg), f_from_config(f_cfg),
                    beta, r, horizon, rho=WeightFunction("abs_x"),
                    notes="killed motion with a clock singular at the barrier",
                    config=cfg)


def iscoe(alpha: float = 1.5, p: float = 1.0, beta: float = 0.5,
          mu_cfg: Optional[Dict] = None, f_cfg: Optional[Dict] = None,
          r: float = 0.0, horizon: float = 1.0) -> Scenario:
    """Symmetric alpha-stable motion, phi_p clock, stable branching.

    Effective form: mechanism z^(1+beta) with unit clock; the phi_p weight
    tempers the (infinite) Lebesgue-like initial measures.  Requires
    p < 1 + alpha for phi_p to be a weight function in one dimension.
    """
    if not (0.0 < alpha < 2.0):
        raise ConfigError("iscoe requires alpha in (0, 2)")
    if not (0.0 < p < 1.0 + alpha):
        raise ConfigError("iscoe requires 0 < p < 1 + alpha")
    mu_cfg = mu_cfg or {"kind": "lebesgue", "a": -5.0, "b": 5.0, "n_atoms": 100}
    f_cfg = f_cfg or {"kind": "constant", "value": 0.5}
    cfg = {"name": "iscoe", "params": {"alpha": alpha, "p": p, "beta": beta},
           "beta": beta, "r": r, "horizon": horizon,
           "initial_measure": mu_cfg, "f": f_cfg}
    return Scenario("iscoe", MotionModel(kind="alpha_stable", alpha=alpha),
                    branching.stable(beta=beta, scale=1.0), clock.lebesgue(),
                    measure_from_config(mu_cfg), f_from_config(f_cfg),
                    beta, r, horizon, rho=WeightFunction("phi_p", p=p),
                    notes="infinite-measure super-stable process, effective form",
                    config=cfg)


def no_branching(mu_cfg: Optional[Dict] = None, f_cfg: Optional[Dict] = None,
                 beta: float = 1.0, r: float = 0.0,
                 horizon: float = 1.0) -> Scenario:
    """Control: every death spawns exactly one child (pure motion)."""
    mu_cfg = mu_cfg or {"kind": "delta", "x": 0.0, "mass": 1.0}
    f_cfg = f_cfg or {"kind": "constant", "value": 1.0}
    cfg = {"name": "no_branching", "params": {}, "beta": beta, "r": r,
           "horizon": horizon, "initial_measure": mu_cfg, "f": f_cfg}
    return Scenario("no_branching", MotionModel(kind="brownian"),
                    branching.quadratic(0.0), clock.lebesgue(),
                    measure_from_config(mu_cfg), f_from_config(f_cfg),
                    beta, r, horizon, rho=WeightFunction("one"),
                    notes="unit offspring: the population never changes",
                    config=cfg)


def subcritical(mu_cfg: Optional[Dict] = None, f_cfg: Optional[Dict] = None,
                beta: float = 1.0, r: float = 0.0,
                horizon: float = 1.0) -> Scenario:
    """Homogeneous control with mean mass decaying like e^(-(t-r)).

    Offspring {0, 1} with equal probability at rate 2: the linear part of
    the mechanism is exactly z.
    """
    mu_cfg = mu_cfg or {"kind": "delta", "x": 0.0, "mass": 1.0}
    f_cfg = f_cfg or {"kind": "constant", "value": 1.0}
    cfg = {"name": "subcritical", "params": {}, "beta": beta, "r": r,
           "horizon": horizon, "initial_measure": mu_cfg, "f": f_cfg}
    mech = branching.general(lambda s, x: 1.0, lambda s, x: 0.0,
                             branching.SpectralMeasure(()))
    return Scenario("subcritical", MotionModel(kind="brownian"), mech,
                    clock.lebesgue(), measure_from_config(mu_cfg),
                    f_from_config(f_cfg), beta, r, horizon,
                    rho=WeightFunction("one"),
                    notes="strictly subcritical offspring control",
                    config=cfg)


_BUILDERS = {
    "dawson_watanabe": dawson_watanabe,
    "hyperbolic": hyperbolic,
    "iscoe": iscoe,
    "no_branching": no_branching,
    "subcritical": subcritical,
}


def list_scenarios():
    return sorted(_BUILDERS)


def from_config(cfg: Dict) -> Scenario:
    """Rebuild a scenario from its dictionary form; unknown keys are errors."""
    cfg = dict(cfg)
    name = cfg.pop("name", None)
    if name not in _BUILDERS:
        raise ConfigError(f"unknown scenario {name!r}; "
                          f"available: {list_scenarios()}")
    params = dict(cfg.pop("params", {}))
    kwargs = dict(params)
    for key in ("beta", "r", "horizon"):
        if key in cfg:
            kwargs[key] = float(cfg.pop(key))
    if "initial_measure" in cfg:
        kwargs["mu_cfg"] = dict(cfg.pop("initial_measure"))
    if "f" in cfg:
        kwargs["f_cfg"] = dict(cfg.pop("f"))
    if cfg:
        raise ConfigError(f"unknown scenario keys {sorted(cfg)}")
    try:
        return _BUILDERS[name](**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for scenario {name!r}: {exc}") from exc


def to_config(scenario: Scenario) -> Dict:
    return dict(scenario.config)
