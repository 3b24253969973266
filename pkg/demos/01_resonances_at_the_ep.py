"""
Resonances of hydrogen at an exceptional point
==============================================

Build the complex-scaled Sturmian basis, look at the spectrum near the
reference EP and relocate the EP from a slightly displaced seed.
Runs in a few seconds.
"""

import numpy as np

from eptransfer import BasisSpec, FieldPoint, ReducedProblem, assemble_operator_blocks, find_ep
from eptransfer.units import EP_ENERGY, EP_POINT, field_to_si

# N_max = 35 gives 630 basis functions with m = 0
spec = BasisSpec(35)
blocks = assemble_operator_blocks(spec)
problem = ReducedProblem(blocks)
print(f"basis size {spec.size}, b = {spec.rotation:.4f}")

# the six resonances nearest the EP energy
rs = problem.solve(EP_POINT, EP_ENERGY, 6)
for r in rs:
    print(f"  E = {r.energy.real:+.7f} {r.energy.imag:+.3e}i")

# the two nearest ones almost coalesce
e1, e2 = rs.energies[:2]
print(f"splitting |E1 - E2| = {abs(e1 - e2):.2e}")

# field strengths in SI units
B, F = field_to_si(EP_POINT)
print(f"gamma = {EP_POINT.gamma} -> B = {B:.1f} T, f = {EP_POINT.f} -> F = {F:.4g} V/m")

# start 1% away and let repeated octagon fits walk back to the EP; the first
# octagon has to be large enough for the EP to lie within a few radii
seed = FieldPoint(EP_POINT.gamma * 1.01, EP_POINT.f * 0.99)
loc, model = find_ep(problem, seed, EP_ENERGY, radius=1e-2)
print(f"located EP: gamma = {loc.point.gamma:.7e}, f = {loc.point.f:.7e}")
print(f"            E = {loc.energy:.7e}, splitting {abs(loc.splitting):.1e} after {loc.iterations} fits")
