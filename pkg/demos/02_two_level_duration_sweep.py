"""
How long should the loop take?
==============================

Fit the 2x2 model on a small octagon around the EP and sweep the
encircling duration of a tiny loop (r = 1e-3).  Short loops transfer
nothing (the state does not follow), long loops lose everything to decay;
the optimum sits in between.  Runs in about 20 seconds.
"""

import numpy as np

from eptransfer import BasisSpec, ReducedProblem, TwoLevelEngine, assemble_operator_blocks, fit_model
from eptransfer.loops import LoopSpec, sweep_duration
from eptransfer.twolevel import sample_octagon
from eptransfer.units import EP_ENERGY, EP_POINT

problem = ReducedProblem(assemble_operator_blocks(BasisSpec(35)))

# nine spectra: the center and an octagon of relative radius 1e-3
samples = sample_octagon(problem, EP_POINT, 1e-3, EP_ENERGY)
model = fit_model(samples, EP_POINT, radius=1e-3)
print(f"fit residual {model.fit_residual:.1e}, kappa(EP)/2 = {model.kappa_coeffs[0] / 2:.6e}")

engine = TwoLevelEngine(model)
res = sweep_duration(engine, EP_POINT, r=1e-3, phi0=0.0, T_grid=np.geomspace(1.0, 1e4, 100))

# every tenth grid point
for vals, pops in list(res.rows())[::10]:
    print(f"T = {vals[0]:9.1f}   |a1|^2 = {pops[0]:.3e}   |a2|^2 = {pops[1]:.3e}")

opt = res.interpolated_optimum()
print(f"best duration T = {opt['T']:.0f} a.u. with transfer {opt['transfer']:.3e}")

# a single trace at the optimum: state 1 starts fully populated
trace = engine.run(LoopSpec(EP_POINT, 1e-3, opt["T"]))
print("population of #1 at t = 0, T/2, T:", np.round(trace.population(1)[[0, 500, -1]], 6))
