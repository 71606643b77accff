"""Simulation and verification toolkit for measure-valued branching systems.

Modules: motion (spatial processes), branching (mechanisms and offspring
families), clock (additive functionals and admissibility diagnostics),
particles (branching particle simulator), loglaplace (nonlinear and moment
equation solvers), transform (weight functions and the harmonic change of
measure), scenarios (shipped model library), harness (experiments and
persistence), cli (command line).
"""

__version__ = "0.1.0"
