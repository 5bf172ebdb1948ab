"""Central default tolerances and caps.

Every numerical threshold used by the library and the CLI lives here so that
experiments can override them in one place.
"""
from dataclasses import dataclass, asdict, replace


@dataclass(frozen=True)
class Tolerances:
    tail_tol: float = 1e-10
    transport_tol: float = 1e-6
    quad_tol: float = 1e-8
    resid_tol: float = 1e-9
    energy_tol: float = 1e-8
    action_tol: float = 1e-6
    tol_exact: float = 1e-6
    slope_band: float = 0.15
    ode_tol: float = 1e-11
    u2_tol: float = 1e-10
    delta_tol: float = 1e-8

    def as_dict(self):
        return asdict(self)

    def updated(self, **changes):
        return replace(self, **changes)


DEFAULT_TOLERANCES = Tolerances()

# Largest number of coefficients any single basis may hold.
SIZE_CAP = 2_000_000

# Maximal total order p+q of a polynomial symbol.
ORDER_CAP = 12

# Maximal expansion order handled by the correction engine.
N_CAP = 3
