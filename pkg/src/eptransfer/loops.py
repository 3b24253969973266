"""Elliptical field-strength loops and the parameter sweeps built on them.

A loop around the center ``(gamma_c, f_c)`` is

    f(t)     = f_c     * (1 + r cos(2 pi t / T + phi0))
    gamma(t) = gamma_c * (1 + r sin(2 pi t / T + phi0))

The transferred population is ``|alpha_1(T)|**2`` in the adiabatic labeling:
label 1 follows the initially populated EP resonance continuously, so after
one loop it sits where resonance 2 started and ``|alpha_1(T)|**2`` is the
population that ended up in the initially empty state.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize

from .basis import FieldPoint

log = logging.getLogger(__name__)

__all__ = [
    "LoopSpec",
    "SweepResult",
    "RefineResult",
    "ellipse_loop",
    "winding_number",
    "sweep_duration",
    "sweep_radius",
    "sweep_phase",
    "grid_search",
    "refine_optimum",
    "evaluate_loops",
]


@dataclass(frozen=True)
class LoopSpec:
    center: FieldPoint
    r: float
    T: float
    phi0: float = 0.0

    def __post_init__(self):
        if not self.r > 0:
            raise ValueError(f"loop radius must be positive, got {self.r}")
        if not self.T > 0:
            raise ValueError(f"loop duration must be positive, got {self.T}")

    def angle(self, t):
        return 2 * np.pi * np.asarray(t, dtype=float) / self.T + self.phi0

    def fields(self, t):
        """(gamma, f) at time(s) ``t``; vectorized."""
        a = self.angle(t)
        return (
            self.center.gamma * (1 + self.r * np.sin(a)),
            self.center.f * (1 + self.r * np.cos(a)),
        )

    def __call__(self, t) -> FieldPoint:
        g, f = self.fields(t)
        return FieldPoint(float(g), float(f))

    def with_(self, **kw) -> "LoopSpec":
        return replace(self, **kw)


def ellipse_loop(spec: LoopSpec) -> Callable[[float], FieldPoint]:
    """Field schedule ``t -> FieldPoint`` of the loop."""
    return spec.__call__


def winding_number(spec: LoopSpec, samples: int = 512) -> int:
    """Discrete winding number of the sampled loop about its center."""
    t = np.linspace(0.0, spec.T, samples + 1)
    g, f = spec.fields(t)
    # work in relative coordinates so both axes have comparable size
    x = (f - spec.center.f) / (spec.center.f or 1.0)
    y = (g - spec.center.gamma) / (spec.center.gamma or 1.0)
    ang = np.unwrap(np.arctan2(y, x))
    return int(np.rint((ang[-1] - ang[0]) / (2 * np.pi)))


# --------------------------------------------------------------------------
# sweeps

_WORKER_ENGINE = None


def _init_worker(engine):
    global _WORKER_ENGINE
    _WORKER_ENGINE = engine


def _evaluate(engine, loop: LoopSpec) -> tuple[dict[int, float] | None, str | None, bool]:
    """(final populations, error, pair exchange) for one loop."""
    try:
        tr = engine.run(loop)
        return tr.final_populations(), None, bool(getattr(tr, "pair_exchange", True))
    except Exception as exc:  # recorded per point, the sweep goes on
        log.warning("grid point %s failed: %s", loop, exc)
        return None, f"{type(exc).__name__}: {exc}", False


def _evaluate_in_worker(loop: LoopSpec):
    return _evaluate(_WORKER_ENGINE, loop)


def evaluate_loops(engine, loops: Sequence[LoopSpec], jobs: int = 1):
    """(populations, error, pair exchange) for every loop, in input order.

    With ``jobs > 1`` the points are distributed over worker processes; the
    engine is shipped once per worker and results are merged by index.
    """
    loops = list(loops)
    if jobs <= 1 or len(loops) <= 1:
        return [_evaluate(engine, lp) for lp in loops]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(engine,)) as pool:
        return list(pool.map(_evaluate_in_worker, loops, chunksize=max(1, len(loops) // (4 * jobs))))


@dataclass
class SweepResult:
    """Post-loop populations on a 1-D or 2-D parameter grid.

    ``axes`` maps parameter names (``"T"``, ``"r"``, ``"phi0"``) to grids, in
    array-axis order.  ``populations`` has shape ``grid_shape + (n_labels,)``
    and holds NaN where a point failed (see ``failures``).  ``pair_exchange``
    is False where the loop permuted more than the EP pair, i.e. also
    enclosed an EP shared with a side resonance; there label 1 no longer
    measures the transfer between the pair.
    """

    axes: dict[str, np.ndarray]
    labels: list[int]
    populations: np.ndarray
    fixed: dict[str, float]
    engine: str
    manifest: dict = field(default_factory=dict)
    failures: list[tuple[tuple[int, ...], str]] = field(default_factory=list)
    ridge: np.ndarray | None = None
    pair_exchange: np.ndarray | None = None

    def __post_init__(self):
        if self.pair_exchange is None:
            self.pair_exchange = np.ones(self.shape, dtype=bool)

    def masked(self, keep) -> "SweepResult":
        """Copy with the populations outside ``keep`` set to NaN."""
        pops = self.populations.copy()
        pops[~np.asarray(keep, dtype=bool)] = np.nan
        return replace(self, populations=pops)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(v) for v in self.axes.values())

    @property
    def transfer(self) -> np.ndarray:
        """|alpha_1(T)|^2 on the grid."""
        return self.populations[..., self.labels.index(1)]

    def population(self, label: int) -> np.ndarray:
        return self.populations[..., self.labels.index(label)]

    @property
    def optimum_index(self) -> tuple[int, ...]:
        tr = self.transfer
        if np.all(np.isnan(tr)):
            raise ValueError("no grid point succeeded")
        return tuple(int(i) for i in np.unravel_index(np.nanargmax(tr), tr.shape))

    @property
    def optimum(self) -> dict[str, float]:
        """Grid point with the largest transfer (no interpolation)."""
        idx = self.optimum_index
        out = {name: float(grid[i]) for (name, grid), i in zip(self.axes.items(), idx)}
        out["transfer"] = float(self.transfer[idx])
        return out

    def interpolated_optimum(self) -> dict[str, float]:
        """Optimum refined by a three-point parabola along each axis."""
        idx = self.optimum_index
        tr = self.transfer
        out = {}
        best = float(tr[idx])
        for ax, (name, grid) in enumerate(self.axes.items()):
            i = idx[ax]
            x0 = float(grid[i])
            if 0 < i < len(grid) - 1:
                sl = list(idx)
                ys = []
                for j in (i - 1, i, i + 1):
                    sl[ax] = j
                    ys.append(tr[tuple(sl)])
                xs = grid[i - 1 : i + 2].astype(float)
                if np.all(np.isfinite(ys)):
                    a, b, c = np.polyfit(xs - x0, ys, 2)
                    if a < 0:
                        dx = float(np.clip(-b / (2 * a), xs[0] - x0, xs[2] - x0))
                        x0 += dx
                        best = max(best, float(c - b * b / (4 * a)))
            out[name] = x0
        out["transfer"] = best
        return out

    def rows(self):
        """(parameter values..., populations...) per grid point, C order."""
        names = list(self.axes)
        for idx in np.ndindex(*self.shape):
            vals = [float(self.axes[n][i]) for n, i in zip(names, idx)]
            yield vals, self.populations[idx]


def _manifest(kind, engine, axes, fixed, jobs, elapsed) -> dict:
    from . import __version__

    out = {
        "sweep": kind,
        "engine": getattr(engine, "name", type(engine).__name__),
        "version": __version__,
        "jobs": int(jobs),
        "elapsed_s": round(float(elapsed), 3),
        "fixed": {k: float(v) for k, v in fixed.items()},
        "axes": {k: [float(x) for x in v] for k, v in axes.items()},
    }
    st = getattr(engine, "settings", None)
    if st is not None:
        out["settings"] = {k: (v if not isinstance(v, float) or np.isfinite(v) else "inf") for k, v in asdict(st).items()}
    model = getattr(engine, "model", None)
    if model is not None:
        out["model"] = {k: (str(v) if isinstance(v, complex) else v) for k, v in model.as_dict().items()}
    return out


def _run_grid(kind, engine, center, axes: dict[str, np.ndarray], fixed: dict[str, float], jobs: int) -> SweepResult:
    t0 = time.perf_counter()
    names = list(axes)
    shape = tuple(len(v) for v in axes.values())
    loops = []
    for idx in np.ndindex(*shape):
        params = dict(fixed)
        params.update({n: float(axes[n][i]) for n, i in zip(names, idx)})
        loops.append(LoopSpec(center, params["r"], params["T"], params.get("phi0", 0.0)))
    results = evaluate_loops(engine, loops, jobs)
    labels = sorted({lab for pops, _, _ in results if pops for lab in pops})
    if 1 not in labels:
        labels = [1] + labels
    pops = np.full(shape + (len(labels),), np.nan)
    exchange = np.zeros(shape, dtype=bool)
    failures = []
    for idx, (res, err, swap) in zip(np.ndindex(*shape), results):
        if res is None:
            failures.append((idx, err))
            continue
        exchange[idx] = swap
        for j, lab in enumerate(labels):
            pops[idx + (j,)] = res.get(lab, np.nan)
    axes = {k: np.asarray(v, dtype=float) for k, v in axes.items()}
    man = _manifest(kind, engine, axes, fixed, jobs, time.perf_counter() - t0)
    man["center"] = {"gamma": center.gamma, "f": center.f}
    man["failures"] = len(failures)
    man["other_permutation"] = int(np.sum(~exchange)) - len(failures)
    if man["other_permutation"]:
        log.warning("%d loop(s) permute more than the EP pair", man["other_permutation"])
    return SweepResult(axes, labels, pops, dict(fixed), man["engine"], man, failures, pair_exchange=exchange)


def sweep_duration(engine, center: FieldPoint, r: float, phi0: float, T_grid, jobs: int = 1) -> SweepResult:
    """Post-loop populations versus encircling duration."""
    return _run_grid("T", engine, center, {"T": np.asarray(T_grid, float)}, {"r": r, "phi0": phi0}, jobs)


def sweep_radius(engine, center: FieldPoint, T: float, phi0: float, r_grid, jobs: int = 1) -> SweepResult:
    """Post-loop populations versus relative ellipse radius."""
    return _run_grid("r", engine, center, {"r": np.asarray(r_grid, float)}, {"T": T, "phi0": phi0}, jobs)


def sweep_phase(engine, center: FieldPoint, r: float, T: float, phi_grid, jobs: int = 1) -> SweepResult:
    """Post-loop populations versus starting angle (period 4 pi)."""
    return _run_grid("phi0", engine, center, {"phi0": np.asarray(phi_grid, float)}, {"r": r, "T": T}, jobs)


def grid_search(engine, center: FieldPoint, r_grid, T_grid, phi0: float = 0.0, jobs: int = 1) -> SweepResult:
    """Transfer on the ``r x T`` grid plus the ridge (best ``T`` for every ``r``)."""
    res = _run_grid(
        "rT", engine, center,
        {"r": np.asarray(r_grid, float), "T": np.asarray(T_grid, float)},
        {"phi0": phi0}, jobs,
    )
    tr = res.transfer
    ridge = np.full(len(res.axes["r"]), np.nan)
    for i in range(len(ridge)):
        if np.any(np.isfinite(tr[i])):
            ridge[i] = res.axes["T"][np.nanargmax(tr[i])]
    res.ridge = ridge
    return res


@dataclass
class RefineResult:
    params: dict[str, float]
    transfer: float
    evaluations: int
    converged: bool
    budget_exhausted: bool
    message: str = ""


def refine_optimum(
    objective,
    seed: dict[str, float],
    free: Sequence[str] = ("r", "T", "phi0"),
    steps: dict[str, float] | None = None,
    rtol: float = 1e-4,
    max_evaluations: int = 200,
) -> RefineResult:
    """Nelder-Mead maximization of ``objective(params) -> transfer``.

    ``objective`` is either a callable on a parameter dict or a tuple
    ``(engine, center)``, in which case the transfer of the loop described
    by the parameters is maximized.  Only the names in ``free`` vary; the
    initial simplex uses ``steps`` (default: 5% of each seed value, or 0.1
    for zero seeds).  Stops when the relative spread of the simplex values
    drops below ``rtol`` or after ``max_evaluations`` calls, in which case
    the best point found is returned with ``budget_exhausted`` set.
    """
    if isinstance(objective, tuple):
        engine, center = objective

        def objective(p, engine=engine, center=center):
            lp = LoopSpec(center, p["r"], p["T"], p.get("phi0", 0.0))
            pops, _, swap = _evaluate(engine, lp)
            return np.nan if pops is None or not swap else pops.get(1, np.nan)

    free = list(free)
    x0 = np.array([float(seed[k]) for k in free])
    steps = steps or {}
    scale = np.array([steps.get(k, 0.05 * abs(v) if v != 0 else 0.1) for k, v in zip(free, x0)])
    best = {"x": x0.copy(), "val": -np.inf}
    count = 0

    def full(x):
        p = dict(seed)
        p.update({k: float(v) for k, v in zip(free, x0 + scale * x)})
        return p

    def neg(x):
        nonlocal count
        count += 1
        p = full(x)
        if p.get("r", 1.0) <= 0 or p.get("T", 1.0) <= 0:
            return np.inf
        v = float(objective(p))
        if not np.isfinite(v):
            return np.inf
        if v > best["val"]:
            best["val"], best["x"] = v, np.array(x, dtype=float)
        return -v

    # scipy's own fatol is absolute; translate the relative criterion once
    f0 = -neg(np.zeros(len(free)))
    fatol = rtol * abs(f0) if np.isfinite(f0) and f0 != 0 else rtol
    res = minimize(
        neg, np.zeros(len(free)), method="Nelder-Mead",
        options={"xatol": 1e-6, "fatol": fatol, "maxfev": max(1, max_evaluations - 1),
                 "initial_simplex": np.vstack([np.zeros(len(free)), np.eye(len(free))])},
    )
    exhausted = not res.success and count >= max_evaluations
    return RefineResult(
        params=full(best["x"]),
        transfer=float(best["val"]),
        evaluations=count,
        converged=bool(res.success),
        budget_exhausted=bool(exhausted),
        message=str(res.message),
    )
