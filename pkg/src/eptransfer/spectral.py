"""Resonance spectra of the complex-scaled pencil.

Eigenvectors are normalized with the c-product ``v.T @ B @ v = 1`` (a plain
transpose, no conjugation).  The pencil ``A v = E B v`` is reduced with the
Cholesky factor ``B = L L.T`` to the complex-symmetric standard problem
``H y = E y`` with ``H = L^-1 A L^-T`` and ``y = L.T v``; the c-product of two
original vectors equals the plain bilinear product of the reduced ones.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import ArpackError, ArpackNoConvergence, LinearOperator, eigs

from .basis import BasisSpec, FieldPoint, OperatorBlocks, assemble_operator_blocks, scale_factors

log = logging.getLogger(__name__)

__all__ = [
    "Resonance",
    "ResonanceSet",
    "EPLocation",
    "SolverError",
    "TrackingError",
    "ReducedProblem",
    "solve_resonances",
    "c_normalize",
    "c_overlap",
    "track_states",
    "mark_converged",
    "locate_ep",
    "find_ep",
]

#: ratio |v.T B v| / (v^H B v) below which a vector counts as self-orthogonal
SELF_ORTHOGONAL_TOL = 1e-5


class SolverError(RuntimeError):
    """Eigen-solver failure; ``residuals`` holds the per-vector residual norms if known."""

    def __init__(self, msg, residuals=None):
        super().__init__(msg)
        self.residuals = residuals


class TrackingError(RuntimeError):
    """Overlap-based state matching was ambiguous; refine the path discretization."""


@dataclass(frozen=True)
class Resonance:
    energy: complex
    vector: np.ndarray = field(repr=False)
    label: int
    converged: bool = False
    self_orthogonal: bool = False


@dataclass(frozen=True)
class ResonanceSet:
    point: FieldPoint
    b: complex
    resonances: tuple[Resonance, ...]
    overlap: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.resonances)

    def __iter__(self):
        return iter(self.resonances)

    def __getitem__(self, i):
        return self.resonances[i]

    @property
    def energies(self) -> np.ndarray:
        return np.array([r.energy for r in self.resonances])

    @property
    def labels(self) -> list[int]:
        return [r.label for r in self.resonances]

    @property
    def vectors(self) -> np.ndarray:
        """Eigenvectors as columns."""
        return np.column_stack([r.vector for r in self.resonances])

    def by_label(self, label: int) -> Resonance:
        for r in self.resonances:
            if r.label == label:
                return r
        raise KeyError(label)

    def converged_subset(self) -> "ResonanceSet":
        return replace(self, resonances=tuple(r for r in self.resonances if r.converged))

    def select(self, labels: Sequence[int]) -> "ResonanceSet":
        return replace(self, resonances=tuple(self.by_label(l) for l in labels))

    def gram(self) -> np.ndarray:
        """Matrix of c-products v_i.T B v_j."""
        v = self.vectors
        return v.T @ self.overlap @ v


@dataclass(frozen=True)
class EPLocation:
    point: FieldPoint
    energy: complex
    splitting: complex
    found: bool = True
    iterations: int = 0


def c_overlap(u, v, overlap) -> complex:
    return complex(u @ (overlap @ v))


def _fix_sign(v):
    k = np.argmax(np.abs(v))
    return -v if v[k].real < 0 else v


def _normalize_vector(v, overlap, tol=SELF_ORTHOGONAL_TOL):
    """Return (vector, self_orthogonal flag)."""
    cnorm = v @ (overlap @ v)
    hnorm = np.real(np.conj(v) @ (overlap @ v))
    if hnorm == 0:
        raise ValueError("zero eigenvector")
    if abs(cnorm) < tol * hnorm:
        return _fix_sign(v / np.sqrt(hnorm)), True
    return _fix_sign(v / np.sqrt(cnorm)), False


def c_normalize(rset: ResonanceSet, tol: float = SELF_ORTHOGONAL_TOL) -> ResonanceSet:
    """Scale every vector to ``v.T B v = 1``.

    The remaining sign is fixed so the largest-modulus component has a
    non-negative real part.  Nearly self-orthogonal vectors (close to an
    exact EP) are only Hermitian-normalized and flagged.
    """
    out = []
    for r in rset.resonances:
        v, degenerate = _normalize_vector(np.asarray(r.vector), rset.overlap, tol)
        if degenerate:
            warnings.warn(
                f"resonance {r.label} at E={r.energy:.6g} is self-orthogonal; c-normalization skipped",
                RuntimeWarning,
                stacklevel=2,
            )
        out.append(replace(r, vector=v, self_orthogonal=degenerate))
    return replace(rset, resonances=tuple(out))


def _dense_eig(h, target, count):
    w, y = sla.eig(h, check_finite=False)
    order = np.argsort(np.abs(w - target), kind="stable")[:count]
    return w[order], y[:, order]


def _arnoldi_eig(h, target, count, v0=None, tol=1e-13):
    m = h.shape[0]
    shift = complex(target)
    eye = np.eye(m)
    for attempt in range(4):
        try:
            lu = sla.lu_factor(h - shift * eye, check_finite=False)
        except (sla.LinAlgError, ValueError):
            lu = None
        if lu is not None and np.min(np.abs(np.diag(lu[0]))) > 1e-14 * np.max(np.abs(np.diag(lu[0]))):
            break
        # singular shift: nudge it off the eigenvalue
        shift = shift + (1e-9 + 1e-9j) * (10.0**attempt) * max(1.0, abs(shift))
        log.debug("shift-invert: singular shift, retrying at %s", shift)
    else:
        raise SolverError(f"could not factor shifted matrix near {target}")
    op = LinearOperator((m, m), matvec=lambda x: sla.lu_solve(lu, x, check_finite=False), dtype=complex)
    ncv = min(m, max(2 * count + 1, 20))
    try:
        mu, y = eigs(op, k=count, which="LM", v0=v0, ncv=ncv, tol=tol)
    except ArpackNoConvergence as exc:
        w = shift + 1.0 / exc.eigenvalues
        res = np.linalg.norm(h @ exc.eigenvectors - exc.eigenvectors * w, axis=0)
        raise SolverError(
            f"Arnoldi did not converge: {len(w)} of {count} eigenpairs", residuals=res
        ) from exc
    except ArpackError as exc:
        raise SolverError(f"ARPACK failure: {exc}") from exc
    w = shift + 1.0 / mu
    order = np.argsort(np.abs(w - target), kind="stable")
    return w[order], y[:, order]


class ReducedProblem:
    """Cholesky-reduced Hamiltonian for one basis and one rotation ``b``.

    Keeps ``L^-1 X L^-T`` for every operator block so the reduced matrix at
    any field point is a cheap linear combination.  The Cholesky factor is
    computed once per basis.
    """

    def __init__(self, blocks: OperatorBlocks, b: complex | None = None):
        self.blocks = blocks
        self.b = complex(blocks.spec.rotation if b is None else b)
        self.chol = blocks.cholesky
        linv = sla.solve_triangular(self.chol, np.eye(blocks.size), lower=True)
        self._linv = linv
        # back-transformation y -> v = L^-T y
        self._linv_t = linv.T

        def red(x):
            return linv @ x @ linv.T

        b_ = self.b
        self.static = red(b_**-2 * blocks.kinetic + b_**-1 * blocks.coulomb)
        self.dia = red(b_**2 * blocks.diamagnetic)
        self.dip = red(b_ * blocks.dipole)
        # L_z vanishes for m = 0; kept for completeness of the contract
        self.para = red(blocks.paramagnetic.astype(complex))
        self._para_zero = not np.any(blocks.paramagnetic)

    @property
    def size(self) -> int:
        return self.blocks.size

    def hamiltonian(self, gamma: float, f: float) -> np.ndarray:
        h = self.static + (gamma**2 / 8.0) * self.dia + f * self.dip
        if not self._para_zero:
            h = h + 0.5 * gamma * self.para
        return h

    def to_original(self, y: np.ndarray) -> np.ndarray:
        return self._linv_t @ y

    def to_reduced(self, v: np.ndarray) -> np.ndarray:
        return self.chol.T @ v

    def solve(
        self,
        point: FieldPoint,
        target: complex,
        count: int,
        backend: str = "auto",
        v0=None,
    ) -> ResonanceSet:
        h = self.hamiltonian(point.gamma, point.f)
        w, y = _solve_standard(h, target, count, backend, v0)
        return _make_set_reduced(point, self.b, w, y, self._linv_t, self.blocks.overlap)


def _solve_standard(h, target, count, backend, v0=None):
    m = h.shape[0]
    if count > m or count < 1:
        raise ValueError(f"count must lie in [1, {m}], got {count}")
    if backend == "auto":
        backend = "dense" if (m <= 64 or count > m // 3) else "arnoldi"
    if backend == "dense":
        return _dense_eig(h, target, count)
    if backend == "arnoldi":
        if count >= m - 1:
            return _dense_eig(h, target, count)
        return _arnoldi_eig(h, target, count, v0=v0)
    raise ValueError(f"unknown backend {backend!r}")


def _normalize_reduced(y, tol=SELF_ORTHOGONAL_TOL):
    """Column-wise c-normalization of reduced vectors (plain bilinear product)."""
    cn = np.einsum("ij,ij->j", y, y)
    hn = np.einsum("ij,ij->j", y.conj(), y).real
    degenerate = np.abs(cn) < tol * hn
    scale = np.where(degenerate, np.sqrt(hn), np.sqrt(cn))
    y = y / scale
    k = np.argmax(np.abs(y), axis=0)
    sign = np.where(y[k, np.arange(y.shape[1])].real < 0, -1.0, 1.0)
    return y * sign, degenerate


def _make_set_reduced(point, b, w, y, back, overlap):
    y, degenerate = _normalize_reduced(y)
    v = back @ y
    res = tuple(
        Resonance(complex(w[k]), v[:, k], label=k, self_orthogonal=bool(degenerate[k]))
        for k in range(len(w))
    )
    return ResonanceSet(point, complex(b), res, overlap)


def solve_resonances(
    pencil,
    target: complex,
    count: int,
    *,
    point: FieldPoint | None = None,
    b: complex = 1.0,
    backend: str = "auto",
) -> ResonanceSet:
    """The ``count`` eigenpairs of ``A v = E B v`` closest to ``target``.

    Returned c-normalized and sorted by ``|E - target|``; labels are the
    positions in that order until :func:`track_states` reassigns them.
    ``backend`` is ``"dense"``, ``"arnoldi"`` (shift-invert) or ``"auto"``.
    """
    a, bmat = pencil
    a = np.asarray(a)
    bmat = np.asarray(bmat)
    if a.shape != bmat.shape or a.shape[0] != a.shape[1]:
        raise ValueError(f"pencil shapes {a.shape} and {bmat.shape} do not match")
    chol = np.linalg.cholesky(bmat)
    linv = sla.solve_triangular(chol, np.eye(len(bmat)), lower=True)
    h = linv @ a @ linv.T
    w, y = _solve_standard(h, target, count, backend)
    if point is None:
        point = FieldPoint(0.0, 0.0)
    return _make_set_reduced(point, b, w, y, linv.T, bmat)


def mark_converged(
    rset: ResonanceSet,
    references: Sequence[np.ndarray],
    tol: float = 1e-7,
) -> ResonanceSet:
    """Flag resonances whose energy reappears within ``tol`` in every reference spectrum."""
    out = []
    for r in rset.resonances:
        ok = all(len(ref) and np.min(np.abs(np.asarray(ref) - r.energy)) < tol for ref in references)
        out.append(replace(r, converged=bool(ok)))
    return replace(rset, resonances=tuple(out))


def converged_resonances(
    spec: BasisSpec,
    point: FieldPoint,
    target: complex,
    count: int,
    *,
    tol: float = 1e-7,
    angle_factor: float = 1.1,
    extra_shells: int = 3,
    window: float | None = None,
    problem: ReducedProblem | None = None,
) -> ResonanceSet:
    """Solve at ``point`` and flag converged members.

    A resonance is converged when its energy moves by less than ``tol`` both
    under ``arg b -> angle_factor * arg b`` and under
    ``N_max -> N_max + extra_shells``.  Members outside ``window`` (distance
    from ``target``) are never flagged.
    """
    if problem is None:
        problem = ReducedProblem(assemble_operator_blocks(spec), spec.rotation)
    base = problem.solve(point, target, count)
    reach = max(abs(base.energies - target)) * 1.5 + 10 * tol
    refs = []
    for alt_spec in (
        spec.with_angle(spec.angle * angle_factor),
        BasisSpec(spec.n_principal_max + extra_shells, spec.sturmian_scale, spec.rotation),
    ):
        alt = ReducedProblem(assemble_operator_blocks(alt_spec), alt_spec.rotation)
        sol = alt.solve(point, target, min(alt.size, count + 20))
        e = sol.energies
        refs.append(e[np.abs(e - target) < reach])
    flagged = mark_converged(base, refs, tol)
    if window is not None:
        flagged = replace(
            flagged,
            resonances=tuple(
                replace(r, converged=r.converged and abs(r.energy - target) <= window)
                for r in flagged.resonances
            ),
        )
    return flagged


def _overlap_matrix(prev: ResonanceSet, nxt: ResonanceSet) -> np.ndarray:
    return prev.vectors.T @ prev.overlap @ nxt.vectors


def track_states(
    prev: ResonanceSet,
    nxt: ResonanceSet,
    labels: Sequence[int] | None = None,
    ambiguity: float = 0.1,
) -> ResonanceSet:
    """Carry labels from ``prev`` onto ``nxt`` by maximal c-overlap.

    Only ``labels`` (default: all of ``prev``) are tracked.  Raises :class:`TrackingError`
    when the best and second-best candidate are within ``ambiguity``
    (relative) of each other or two labels claim the same state.  Matched
    vectors are sign-flipped so that the c-overlap has positive real part.
    Unmatched members of ``nxt`` get fresh labels above the largest one in use.
    """
    if labels is None:
        labels = prev.labels
    sub = prev.select(labels)
    raw = _overlap_matrix(sub, nxt)
    mag = np.abs(raw)
    taken: dict[int, int] = {}
    for i, lab in enumerate(labels):
        order = np.argsort(mag[i])[::-1]
        best = order[0]
        if len(order) > 1 and mag[i, order[1]] >= (1.0 - ambiguity) * mag[i, best]:
            raise TrackingError(
                f"label {lab}: overlaps {mag[i, best]:.4f} and {mag[i, order[1]]:.4f} are too close"
            )
        if best in taken.values():
            raise TrackingError(f"label {lab} and another label map to the same state")
        taken[lab] = int(best)
    out = list(nxt.resonances)
    fresh = max(max(labels), max(prev.labels)) + 1
    assigned = {j: lab for lab, j in taken.items()}
    row = {lab: i for i, lab in enumerate(labels)}
    for j, r in enumerate(out):
        if j in assigned:
            lab = assigned[j]
            vec = r.vector
            if raw[row[lab], j].real < 0:
                vec = -vec
            out[j] = replace(r, label=lab, vector=vec, converged=sub.by_label(lab).converged or r.converged)
        else:
            out[j] = replace(r, label=fresh, converged=False)
            fresh += 1
    return replace(nxt, resonances=tuple(out))


def locate_ep(model, tol: float = 1e-10, search_radius: float = 4.0, max_iter: int = 60) -> EPLocation:
    """Root of the quadratic ``eta(gamma, f) = 0`` of a fitted two-level model.

    ``eta`` is complex, so ``Re eta = Im eta = 0`` are two real equations in
    the two field offsets.  Newton's method runs in octagon-radius units from
    the center and a few off-center starts.  ``tol`` bounds ``|eta|`` at the
    root relative to the size of ``eta`` across the sampled octagon.  A root
    farther than ``search_radius`` radii from the center is reported as not
    found.
    """
    g0, f0 = model.center.gamma, model.center.f
    sg, sf = model.scales

    def point(x):
        return FieldPoint(g0 + x[0] * sg, f0 + x[1] * sf)

    # typical |eta| on the unit octagon, the yardstick for the residual
    d, e, f_, g, h, i = model.eta_coeffs
    scale = max(abs(d), abs(e) * sg, abs(f_) * sf, abs(g) * sg**2, abs(h) * sg * sf, abs(i) * sf**2)
    if scale == 0:
        return EPLocation(model.center, complex(model.kappa_coeffs[0]) / 2, 0j, True, 0)

    best = None
    for start in ((0.0, 0.0), (0.5, 0.5), (-0.5, 0.5), (0.5, -0.5), (-0.5, -0.5)):
        x = np.array(start, dtype=float)
        for _ in range(max_iter):
            p = point(x)
            eta = complex(model.eta(p))
            dg, df = model.eta_gradient(p)
            jac = np.array([[dg.real * sg, df.real * sf], [dg.imag * sg, df.imag * sf]])
            try:
                step = np.linalg.solve(jac, [-eta.real, -eta.imag])
            except np.linalg.LinAlgError:
                break
            x = x + step
            if np.hypot(*step) < 1e-15 * max(1.0, np.hypot(*x)):
                break
        resid = abs(complex(model.eta(point(x)))) / scale
        if np.isfinite(resid) and (best is None or resid < best[1]):
            best = (x, resid)
    if best is None or best[1] > tol or np.hypot(*best[0]) > search_radius:
        return EPLocation(model.center, complex(model.kappa_coeffs[0]) / 2, complex(np.nan), found=False)
    pt = point(best[0])
    return EPLocation(pt, complex(model.kappa(pt)) / 2.0, complex(np.sqrt(complex(model.eta(pt)))), True, 0)


def find_ep(
    problem: ReducedProblem,
    seed: FieldPoint,
    energy_guess: complex,
    radius: float = 1e-3,
    shrink: float = 0.3,
    max_iter: int = 6,
    tol: float = 1e-6,
    min_radius: float = 1e-6,
) -> tuple[EPLocation, object]:
    """Locate an EP with the full solver by repeated octagon fits.

    Each iteration samples the two eigenvalues nearest the current energy
    estimate on an octagon of relative ``radius`` around the current center,
    fits the two-level model, jumps to its ``eta = 0`` root and shrinks the
    octagon.  Stops once the full-solver splitting ``|E1 - E2|`` at the
    located point is below ``tol``.  Returns the location and the last model.
    """
    from .twolevel import fit_model, sample_octagon

    center = seed
    guess = complex(energy_guess)
    model = None
    loc = None
    for it in range(1, max_iter + 1):
        samples = sample_octagon(problem, center, radius, guess)
        model = fit_model(samples, center, radius=radius)
        loc = locate_ep(model)
        if not loc.found:
            return replace(loc, iterations=it), model
        pair = problem.solve(loc.point, loc.energy, 2)
        split = pair.energies[0] - pair.energies[1]
        guess = complex(pair.energies.mean())
        loc = EPLocation(loc.point, guess, complex(split), True, it)
        log.info("find_ep iteration %d: %s split=%.3e", it, loc.point, abs(split))
        if abs(split) < tol:
            break
        center = loc.point
        radius = max(radius * shrink, min_radius)
    return loc, model
