"""Semiclassical expansions of bosonic field dynamics around a classical solution.

Submodules: ``tensor`` (symmetric tensors), ``fock`` (truncated Fock space),
``wick`` (polynomial symbols and their quantization), ``classical`` (field
flow), ``bogoliubov`` (quadratic fluctuation dynamics), ``hepp`` (corrected
approximants and convergence studies), ``pphi2`` (lattice interactions),
``suites`` (randomized identity checks) and ``cli``.
"""
from . import bogoliubov, classical, fock, hepp, pphi2, suites, tensor, wick
from .errors import HepplabError
from .fock import FockBasis, coherent_state
from .hepp import build_pipeline, convergence_study
from .pphi2 import build_model, build_potential_tensors, parse_profile
from .settings import DEFAULT_TOLERANCES, Tolerances
from .tensor import ModeSpace, SymTensor
from .wick import PolySymbol, PotentialSeries, quantize

__version__ = "0.1.0"

__all__ = [
    "bogoliubov", "classical", "fock", "hepp", "pphi2", "suites", "tensor", "wick",
    "HepplabError", "FockBasis", "coherent_state", "build_pipeline", "convergence_study",
    "build_model", "build_potential_tensors", "parse_profile", "DEFAULT_TOLERANCES",
    "Tolerances", "ModeSpace", "SymTensor", "PolySymbol", "PotentialSeries", "quantize",
]
