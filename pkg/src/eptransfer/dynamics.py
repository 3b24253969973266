"""Time evolution of resonance populations along a field loop.

Two engines share one contract:

* :class:`FullEngine` integrates ``B dv/dt = -i A(gamma(t), f(t)) v`` for the
  full Sturmian pencil.  With ``B = L L.T`` and ``y = L.T v`` this becomes
  ``dy/dt = -i H(t) y``, which an adaptive embedded Runge-Kutta method
  integrates between regularly spaced refresh times.  At each refresh the
  instantaneous pencil is re-diagonalized, labels are tracked, the
  coefficients ``alpha_j = v_j.T B v`` are recorded and, at stabilization
  times, ``v`` is replaced by its projection onto the tracked converged
  resonances.
* :class:`TwoLevelEngine` integrates ``i dv/dt = M(gamma(t), f(t)) v`` for
  the fitted 2x2 model.

Labels 1 and 2 are the EP pair.  Label 1 is picked on a tiny ellipse at
angle zero by :data:`FIRST_STATE_RULE` and then continued along the path to
the actual start point of the loop; side resonances get 3, 4, ... ordered
by distance from the EP energy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np
from scipy.integrate import simpson, solve_ivp

from .basis import BasisSpec, FieldPoint, OperatorBlocks, assemble_operator_blocks
from .spectral import (
    ReducedProblem,
    ResonanceSet,
    TrackingError,
    mark_converged,
    track_states,
)
from .twolevel import TwoLevelModel, matrix_from_invariants
from .units import EP_ENERGY

if TYPE_CHECKING:
    from .loops import LoopSpec

log = logging.getLogger(__name__)

__all__ = [
    "PropagationSettings",
    "PopulationTrace",
    "PropagationError",
    "FullEngine",
    "TwoLevelEngine",
    "propagate_full",
    "propagate_two_level",
    "project_coefficients",
    "stabilize",
    "adiabatic_decay",
]


class PropagationError(RuntimeError):
    """Integration or tracking failed; ``time`` is where it happened."""

    def __init__(self, msg, time=None):
        super().__init__(msg if time is None else f"{msg} (t = {time:.6g})")
        self.time = time


@dataclass(frozen=True)
class PropagationSettings:
    """Integrator and refresh settings.

    ``refresh_interval`` and ``stabilization_interval`` are times in a.u.; when
    left ``None`` they default to ``T / refresh_count`` for the loop at hand.
    ``output_points`` is the size of the uniform output grid of the two-level
    engine; the full engine reports at its refresh times.
    """

    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float = np.inf
    method: str = "DOP853"
    refresh_count: int = 200
    refresh_interval: float | None = None
    stabilization_interval: float | None = None
    stabilize: bool = True
    output_points: int = 1000
    window: float = 0.015
    solve_count: int = 40
    convergence_tol: float = 1e-7
    start_radius: float = 1e-3
    ambiguity: float = 0.1
    max_subdivision: int = 8

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0):
            raise ValueError("integrator tolerances must be positive")
        if self.refresh_count < 1:
            raise ValueError("refresh_count must be >= 1")
        if (
            self.stabilization_interval is not None
            and np.isfinite(self.max_step)
            and self.stabilization_interval < self.max_step
        ):
            raise ValueError("stabilization interval must not be shorter than the max step")

    def refresh_times(self, T: float) -> np.ndarray:
        dt = self.refresh_interval if self.refresh_interval else T / self.refresh_count
        n = max(1, int(np.ceil(T / dt - 1e-9)))
        return np.linspace(0.0, T, n + 1)

    def stabilization_stride(self, T: float) -> int:
        times = self.refresh_times(T)
        if not self.stabilize:
            return 0
        if self.stabilization_interval is None:
            return 1
        dt = times[1] - times[0]
        return max(1, int(round(self.stabilization_interval / dt)))


@dataclass
class PopulationTrace:
    """Time series of instantaneous-basis coefficients, one column per label."""

    times: np.ndarray
    labels: list[int]
    coefficients: np.ndarray
    energies: np.ndarray
    loop: "LoopSpec"
    final_state: np.ndarray | None = field(default=None, repr=False)
    info: dict = field(default_factory=dict)

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.coefficients) ** 2

    def column(self, label: int) -> int:
        return self.labels.index(label)

    def population(self, label: int) -> np.ndarray:
        return self.populations[:, self.column(label)]

    def energy(self, label: int) -> np.ndarray:
        return self.energies[:, self.column(label)]

    def final_populations(self) -> dict[int, float]:
        return {lab: float(p) for lab, p in zip(self.labels, self.populations[-1])}

    @property
    def transfer(self) -> float:
        """Population left in label 1 after the loop."""
        return float(self.population(1)[-1])

    def permutation(self) -> dict[int, int]:
        """Label whose starting energy each label ends on.

        A loop around the EP alone gives ``{1: 2, 2: 1}`` on the pair and the
        identity on side resonances; a loop that also encloses an EP shared
        with a side resonance permutes more states.
        """
        e0, e1 = self.energies[0], self.energies[-1]
        return {lab: self.labels[int(np.argmin(np.abs(e0 - e1[j])))] for j, lab in enumerate(self.labels)}

    @property
    def pair_exchange(self) -> bool:
        """True if the loop swaps the EP pair and leaves every other label in place."""
        perm = self.permutation()
        return perm.get(1) == 2 and perm.get(2) == 1 and all(perm[k] == k for k in perm if k not in (1, 2))


def project_coefficients(v: np.ndarray, rset: ResonanceSet) -> dict[int, complex]:
    """Expansion coefficients ``alpha_j = v_j.T B v`` (c-product)."""
    v = np.asarray(v)
    if v.shape[0] != rset.overlap.shape[0]:
        raise ValueError(f"vector of length {v.shape[0]} does not match basis size {rset.overlap.shape[0]}")
    bv = rset.overlap @ v
    return {r.label: complex(r.vector @ bv) for r in rset.resonances}


def stabilize(v: np.ndarray, rset: ResonanceSet) -> np.ndarray:
    """Projection of ``v`` onto the span of the converged members of ``rset``."""
    conv = rset.converged_subset()
    if len(conv) == 0:
        return np.zeros_like(v)
    coeff = project_coefficients(v, conv)
    return sum(coeff[r.label] * r.vector for r in conv.resonances)


def adiabatic_decay(times, energies) -> float:
    """``exp(int 2 Im E dt)`` along a sampled eigenvalue trajectory."""
    times = np.asarray(times, dtype=float)
    im = np.imag(np.asarray(energies))
    if len(times) < 2:
        return 1.0
    return float(np.exp(2.0 * simpson(im, x=times)))


def _continuation_angles(loop: "LoopSpec", per_turn: int) -> np.ndarray:
    n = max(2, int(np.ceil(abs(loop.phi0) / (2 * np.pi) * per_turn)) + 1)
    return np.linspace(0.0, loop.phi0, n)


def _continuation_path(loop: "LoopSpec", r_small: float, per_turn: int = 128, radial: int = 64):
    """Points from (r_small, angle 0) around the small ellipse to angle phi0, then out to r."""
    from .loops import LoopSpec

    pts = []
    for a in _continuation_angles(loop, per_turn):
        g, f = LoopSpec(loop.center, r_small, 1.0, a).fields(0.0)
        pts.append((float(g), float(f)))
    if not np.isclose(r_small, loop.r, rtol=1e-12):
        for rr in np.geomspace(r_small, loop.r, radial)[1:]:
            g, f = LoopSpec(loop.center, rr, 1.0, loop.phi0).fields(0.0)
            pts.append((float(g), float(f)))
    return pts


def _pick_first(e_a: complex, e_b: complex, rule: str) -> bool:
    """True if ``e_a`` is state 1 under ``rule`` (applied at start angle zero)."""
    if rule == "stable":
        return e_a.imag >= e_b.imag
    if rule == "unstable":
        return e_a.imag < e_b.imag
    raise ValueError(f"unknown labeling rule {rule!r}")


#: which EP partner is resonance 1 at start angle zero on the small reference ellipse
FIRST_STATE_RULE = "stable"


# --------------------------------------------------------------------------
# two-level engine


def _model_pair(model: TwoLevelModel, gamma, f):
    kappa = np.asarray(model.kappa(gamma=gamma, f=f), dtype=complex)
    eta = np.asarray(model.eta(gamma=gamma, f=f), dtype=complex)
    return kappa, eta


def _continue_sqrt(eta: np.ndarray, s0: complex) -> np.ndarray:
    """Continuous branch of sqrt(eta) along a sampled path starting near ``s0``."""
    out = np.empty(len(eta), dtype=complex)
    prev = s0
    for k, e in enumerate(eta):
        s = np.sqrt(complex(e))
        if abs(s - prev) > abs(s + prev):
            s = -s
        out[k] = s
        prev = s
    return out


def _eigvec_2x2(m: np.ndarray, energy: complex) -> np.ndarray:
    a = np.array([m[0, 1], energy - m[0, 0]])
    b = np.array([energy - m[1, 1], m[1, 0]])
    v = a if np.linalg.norm(a) >= np.linalg.norm(b) else b
    if np.linalg.norm(v) == 0:
        v = np.array([1.0, 0.0], dtype=complex)
    cn = v @ v
    return v / np.sqrt(cn) if abs(cn) > 1e-14 * np.vdot(v, v).real else v / np.linalg.norm(v)


class TwoLevelEngine:
    """Propagates the fitted 2x2 model along loops."""

    name = "two-level"

    def __init__(self, model: TwoLevelModel, settings: PropagationSettings | None = None,
                 first_state: str = FIRST_STATE_RULE):
        self.model = model
        self.settings = settings or PropagationSettings()
        self.first_state = first_state

    def initial_branch(self, loop: "LoopSpec") -> complex:
        """sqrt(eta) at the loop start on the branch that belongs to state 1."""
        pts = _continuation_path(loop, self.settings.start_radius)
        g = np.array([p[0] for p in pts])
        f = np.array([p[1] for p in pts])
        kappa, eta = _model_pair(self.model, g, f)
        s0 = np.sqrt(complex(eta[0]))
        if not _pick_first((kappa[0] + s0) / 2, (kappa[0] - s0) / 2, self.first_state):
            s0 = -s0
        return complex(_continue_sqrt(eta, s0)[-1])

    def run(self, loop: "LoopSpec", init_label: int = 1, turns: int = 1, y0=None) -> PopulationTrace:
        """Propagate over ``turns`` loops starting in eigenstate ``init_label``.

        ``y0`` replaces the initial eigenvector, e.g. with the final state of
        an earlier run; coefficients are still taken against the labeled
        eigenvectors.
        """
        if init_label not in (1, 2):
            raise ValueError("the two-level model only has labels 1 and 2")
        if turns < 1:
            raise ValueError("turns must be >= 1")
        st = self.settings
        model = self.model
        t_end = turns * loop.T
        t_out = np.linspace(0.0, t_end, (st.output_points - 1) * turns + 1)
        g, f = loop.fields(t_out)
        kappa, eta = _model_pair(model, g, f)
        s = _continue_sqrt(eta, self.initial_branch(loop))
        energies = np.column_stack([(kappa + s) / 2, (kappa - s) / 2])
        mats = matrix_from_invariants(kappa, eta, model.c)

        def rhs(t, y):
            gg, ff = loop.fields(t)
            k, e = _model_pair(model, gg, ff)
            return -1j * (matrix_from_invariants(k, e, model.c) @ y)

        col0 = init_label - 1
        if y0 is None:
            y0 = _eigvec_2x2(mats[0], energies[0, col0])
        y0 = np.asarray(y0, dtype=complex)
        sol = solve_ivp(
            rhs, (0.0, t_end), y0, method=st.method, t_eval=t_out,
            rtol=st.rtol, atol=st.atol, max_step=st.max_step,
        )
        if not sol.success:
            raise PropagationError(f"two-level integration failed: {sol.message}", float(sol.t[-1]))
        coeff = np.empty((len(t_out), 2), dtype=complex)
        prev = [None, None]
        for k in range(len(t_out)):
            for j in range(2):
                v = _eigvec_2x2(mats[k], energies[k, j])
                if prev[j] is not None and (prev[j] @ v).real < 0:
                    v = -v
                prev[j] = v
                coeff[k, j] = v @ sol.y[:, k]
        return PopulationTrace(
            times=t_out,
            labels=[1, 2],
            coefficients=coeff,
            energies=energies,
            loop=loop,
            final_state=sol.y[:, -1],
            info={"engine": self.name, "c": complex(model.c), "nfev": int(sol.nfev)},
        )

    def transfer(self, loop: "LoopSpec") -> dict[int, float]:
        return self.run(loop).final_populations()


def propagate_two_level(
    model: TwoLevelModel,
    loop: "LoopSpec",
    init_label: int = 1,
    settings: PropagationSettings | None = None,
) -> PopulationTrace:
    return TwoLevelEngine(model, settings).run(loop, init_label)


# --------------------------------------------------------------------------
# full engine


class FullEngine:
    """Propagates the complete complex-scaled pencil along loops.

    Parameters
    ----------
    blocks
        Operator blocks of the basis.
    b
        Complex scaling factor (defaults to the basis spec's rotation).
    target
        Energy around which the EP pair and side resonances are searched.
    settings
        Integrator, refresh and tracking settings.
    """

    name = "full"

    def __init__(
        self,
        blocks: OperatorBlocks,
        b: complex | None = None,
        target: complex = EP_ENERGY,
        settings: PropagationSettings | None = None,
        first_state: str = FIRST_STATE_RULE,
    ):
        self.blocks = blocks
        self.problem = ReducedProblem(blocks, b)
        self.target = complex(target)
        self.settings = settings or PropagationSettings()
        self.first_state = first_state
        self._references: list[ReducedProblem] | None = None

    # -- spectra ------------------------------------------------------------

    def reference_problems(self) -> list[ReducedProblem]:
        """Problems with rotated angle and enlarged basis used for convergence flags."""
        if self._references is None:
            spec = self.blocks.spec
            theta = float(np.angle(self.problem.b))
            rot = abs(self.problem.b) * np.exp(1.1j * theta)
            big = BasisSpec(spec.n_principal_max + 3, spec.sturmian_scale, spec.rotation)
            self._references = [
                ReducedProblem(self.blocks, rot),
                ReducedProblem(assemble_operator_blocks(big), self.problem.b),
            ]
        return self._references

    def solve(self, point: FieldPoint, target: complex, count: int | None = None, v0=None) -> ResonanceSet:
        return self.problem.solve(point, target, count or self.settings.solve_count, v0=v0)

    def _solve_covering(self, point: FieldPoint, prev: ResonanceSet, labels) -> ResonanceSet:
        """Solve near the tracked energies with enough eigenpairs to cover all of them."""
        e = np.array([prev.by_label(l).energy for l in labels])
        center = complex(e.mean())
        reach = float(np.max(np.abs(e - center)))
        count = self.settings.solve_count
        y = self.problem.to_reduced(sum(prev.by_label(l).vector for l in labels))
        while True:
            rs = self.solve(point, center, count, v0=y)
            if np.max(np.abs(rs.energies - center)) > 1.5 * reach + 1e-6 or count >= self.problem.size // 2:
                return rs
            count *= 2

    def _advance(self, prev: ResonanceSet, labels, point_at, t0, t1, depth=0) -> ResonanceSet:
        nxt = self._solve_covering(point_at(t1), prev, labels)
        try:
            return track_states(prev, nxt, labels, self.settings.ambiguity)
        except TrackingError as exc:
            if depth >= self.settings.max_subdivision:
                raise PropagationError(f"state tracking failed: {exc}", t1) from exc
            tm = 0.5 * (t0 + t1)
            mid = self._advance(prev, labels, point_at, t0, tm, depth + 1)
            return self._advance(mid, labels, point_at, tm, t1, depth + 1)

    def _follow(self, start: ResonanceSet, labels, points) -> ResonanceSet:
        cur = start
        for k in range(1, len(points)):
            a, b = points[k - 1], points[k]

            def point_at(s, a=a, b=b):
                return FieldPoint(a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1]))

            cur = self._advance(cur, labels, point_at, 0.0, 1.0)
        return cur

    def initial_set(self, loop: "LoopSpec") -> ResonanceSet:
        """Labeled resonances at the loop start.

        The EP pair is identified on a small ellipse (``start_radius``) at
        angle zero, labeled by :data:`FIRST_STATE_RULE`, and carried along
        the small ellipse to ``phi0`` and outward to the loop radius.  Side
        resonances are the converged members within ``window`` of the
        target energy at the start point.
        """
        st = self.settings
        path = _continuation_path(loop, st.start_radius)
        first = self.solve(FieldPoint(*path[0]), self.target, st.solve_count)
        ea, eb = first[0].energy, first[1].energy
        order = (0, 1) if _pick_first(ea, eb, self.first_state) else (1, 0)
        res = list(first.resonances)
        fresh = 3
        for j, r in enumerate(res):
            if j == order[0]:
                res[j] = replace(r, label=1, converged=True)
            elif j == order[1]:
                res[j] = replace(r, label=2, converged=True)
            else:
                res[j] = replace(r, label=100 + fresh)
                fresh += 1
        cur = replace(first, resonances=tuple(res))
        cur = self._follow(cur, [1, 2], path)
        start_pt = loop(0.0)
        cur = track_states(cur, self.solve(start_pt, self.target, st.solve_count), [1, 2], st.ambiguity)
        refs = []
        for prob in self.reference_problems():
            e = prob.solve(start_pt, self.target, st.solve_count + 20).energies
            refs.append(e)
        flagged = mark_converged(cur, refs, st.convergence_tol)
        side = [
            r for r in flagged.resonances
            if r.label not in (1, 2) and r.converged and abs(r.energy - self.target) <= st.window
        ]
        side.sort(key=lambda r: abs(r.energy - self.target))
        relabel = {id(r): 3 + k for k, r in enumerate(side)}
        out = []
        for r in flagged.resonances:
            if r.label in (1, 2):
                out.append(replace(r, converged=True))
            elif id(r) in relabel:
                out.append(replace(r, label=relabel[id(r)], converged=True))
        pair_ok = [r.label for r in flagged.resonances if r.label in (1, 2) and r.converged]
        if len(pair_ok) < 2:
            log.warning("EP pair at loop start fails the convergence test; propagating anyway")
        return replace(flagged, resonances=tuple(sorted(out, key=lambda r: r.label)))

    # -- propagation ---------------------------------------------------------

    def run(
        self,
        loop: "LoopSpec",
        init_label: int = 1,
        initial: ResonanceSet | None = None,
        turns: int = 1,
        y0=None,
    ) -> PopulationTrace:
        """Propagate over ``turns`` loops starting in resonance ``init_label``.

        ``initial`` is a labeled set at the loop start (computed if omitted);
        ``y0`` replaces the initial state vector (original basis), e.g. with
        the ``final_state`` of an earlier run.
        """
        st = self.settings
        prob = self.problem
        if turns < 1:
            raise ValueError("turns must be >= 1")
        cur = initial if initial is not None else self.initial_set(loop)
        labels = cur.labels
        if init_label not in labels:
            raise PropagationError(f"label {init_label} is not a converged resonance at the loop start", 0.0)
        one = st.refresh_times(loop.T)
        times = np.concatenate([one[:1]] + [one[1:] + k * loop.T for k in range(turns)])
        stride = st.stabilization_stride(loop.T)

        def reduced(rs):
            return prob.chol.T @ rs.vectors

        start = cur.by_label(init_label).vector if y0 is None else np.asarray(y0)
        y = (prob.chol.T @ start).astype(complex)
        coeff = np.empty((len(times), len(labels)), dtype=complex)
        energies = np.empty((len(times), len(labels)), dtype=complex)
        yv = reduced(cur)
        coeff[0] = yv.T @ y
        energies[0] = cur.energies

        def rhs(t, yy):
            g, f = loop.fields(t)
            return -1j * (prob.static @ yy + (g * g / 8.0) * (prob.dia @ yy) + f * (prob.dip @ yy))

        nfev = 0
        for k in range(1, len(times)):
            t0, t1 = times[k - 1], times[k]
            sol = solve_ivp(rhs, (t0, t1), y, method=st.method, rtol=st.rtol, atol=st.atol, max_step=st.max_step)
            if not sol.success:
                raise PropagationError(f"integrator step failure: {sol.message}", float(sol.t[-1]))
            nfev += sol.nfev
            y = sol.y[:, -1]

            def point_at(t):
                return loop(t)

            cur = self._advance(cur, labels, point_at, t0, t1).select(labels)
            yv = reduced(cur)
            alpha = yv.T @ y
            if stride and k % stride == 0:
                y = yv @ alpha
            coeff[k] = alpha
            energies[k] = cur.energies
        return PopulationTrace(
            times=times,
            labels=list(labels),
            coefficients=coeff,
            energies=energies,
            loop=loop,
            final_state=prob.to_original(y),
            info={"engine": self.name, "nfev": int(nfev), "b": complex(prob.b)},
        )

    def transfer(self, loop: "LoopSpec") -> dict[int, float]:
        return self.run(loop).final_populations()

    def trajectories(self, loop: "LoopSpec", points: int = 200, initial: ResonanceSet | None = None):
        """Tracked eigenvalues of the labeled resonances along one loop.

        Returns ``(times, labels, energies, final)`` with ``energies[k, j]``
        the energy of ``labels[j]`` at ``times[k]`` and ``final`` the labeled
        set after the loop, which can seed a second loop.
        """
        cur = initial if initial is not None else self.initial_set(loop)
        labels = cur.labels
        times = np.linspace(0.0, loop.T, max(2, points))
        out = np.empty((len(times), len(labels)), dtype=complex)
        out[0] = cur.energies
        for k in range(1, len(times)):
            cur = self._advance(cur, labels, loop, times[k - 1], times[k]).select(labels)
            out[k] = cur.energies
        return times, list(labels), out, cur


def propagate_full(
    blocks: OperatorBlocks,
    loop: "LoopSpec",
    b: complex | None = None,
    init_label: int = 1,
    settings: PropagationSettings | None = None,
    target: complex = EP_ENERGY,
) -> PopulationTrace:
    return FullEngine(blocks, b, target, settings).run(loop, init_label)
