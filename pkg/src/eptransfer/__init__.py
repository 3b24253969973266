"""Population transfer by encircling an exceptional point of hydrogen in
parallel electric and magnetic fields.

Modules
-------
basis      Coulomb-Sturmian operator blocks and the complex-scaled pencil
spectral   resonance solver, c-normalization, tracking, EP location
twolevel   2x2 surrogate fitted on an octagon around the EP
dynamics   full and two-level propagation along field loops
loops      elliptical loops and (T, r, phi0) sweeps
cli        command-line front end
units      atomic units and the reference EP
"""

__version__ = "0.1.0"

from .basis import BasisSpec, FieldPoint, OperatorBlocks, assemble_operator_blocks, build_pencil
from .dynamics import FullEngine, PopulationTrace, PropagationSettings, TwoLevelEngine
from .loops import LoopSpec, SweepResult
from .spectral import Resonance, ResonanceSet, ReducedProblem, find_ep, locate_ep, solve_resonances
from .twolevel import TwoLevelModel, fit_model
from .units import EP_ENERGY, EP_POINT

__all__ = [
    "BasisSpec",
    "FieldPoint",
    "OperatorBlocks",
    "assemble_operator_blocks",
    "build_pencil",
    "FullEngine",
    "TwoLevelEngine",
    "PopulationTrace",
    "PropagationSettings",
    "LoopSpec",
    "SweepResult",
    "Resonance",
    "ResonanceSet",
    "ReducedProblem",
    "solve_resonances",
    "locate_ep",
    "find_ep",
    "TwoLevelModel",
    "fit_model",
    "EP_POINT",
    "EP_ENERGY",
]
