"""Atomic-unit conversions and the reference EP of the parallel-field problem.

Everything in this package is in Hartree atomic units.  Field strengths are
the dimensionless ``gamma = B / B0`` and ``f = F / F0``.
"""

from .basis import FieldPoint

#: electric field unit in V/m
F0 = 5.14e11
#: magnetic field unit in T
B0 = 2.35e5

#: second-order EP used throughout (magnetic, electric)
EP_POINT = FieldPoint(1.445263e-2, 3.176736e-4)
#: eigenvalue at which the two resonances coalesce
EP_ENERGY = complex(-2.703665e-2, -4.171979e-4)


def field_to_si(point: FieldPoint) -> tuple[float, float]:
    """(B in T, F in V/m) for a dimensionless field point."""
    return point.gamma * B0, point.f * F0


def field_from_si(b_tesla: float, f_volt_per_m: float) -> FieldPoint:
    return FieldPoint(b_tesla / B0, f_volt_per_m / F0)
