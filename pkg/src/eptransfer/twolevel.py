"""Two-state surrogate for the pair of resonances that coalesce at an EP.

The sum ``kappa = E1 + E2`` is expanded to first order and the squared
difference ``eta = (E1 - E2)**2`` to second order in the field offsets
``dg = gamma - gamma_c`` and ``df = f - f_c``::

    kappa = A + B dg + C df
    eta   = D + E dg + F df + G dg**2 + H df dg + I df**2

Both are symmetric in the two eigenvalues, so no pairing or branch choice is
needed when fitting.  The complex-symmetric matrix with this trace and
discriminant is fixed up to one free parameter ``c != 0``, see
:func:`build_matrix`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .basis import FieldPoint

__all__ = [
    "TwoLevelModel",
    "FitError",
    "octagon_points",
    "fit_model",
    "sample_octagon",
    "build_matrix",
    "matrix_from_invariants",
]

MAX_CONDITION = 1e12


class FitError(ValueError):
    """Least-squares fit refused (degenerate sampling geometry)."""


@dataclass(frozen=True)
class TwoLevelModel:
    center: FieldPoint
    kappa_coeffs: np.ndarray  # A, B, C
    eta_coeffs: np.ndarray  # D, E, F, G, H, I
    c: complex = 1.0 + 0.0j
    fit_residual: float = 0.0
    radius: float = 1e-3

    def __post_init__(self):
        if self.c == 0:
            raise ValueError("free parameter c must be nonzero")
        object.__setattr__(self, "kappa_coeffs", np.asarray(self.kappa_coeffs, dtype=complex))
        object.__setattr__(self, "eta_coeffs", np.asarray(self.eta_coeffs, dtype=complex))
        if self.kappa_coeffs.shape != (3,) or self.eta_coeffs.shape != (6,):
            raise ValueError("expected 3 kappa and 6 eta coefficients")

    @property
    def scales(self) -> tuple[float, float]:
        """Octagon half-axes in absolute (gamma, f) units."""
        return _scales(self.center, self.radius)

    def with_c(self, c: complex) -> "TwoLevelModel":
        return replace(self, c=complex(c))

    def offsets(self, gamma, f):
        return np.asarray(gamma) - self.center.gamma, np.asarray(f) - self.center.f

    def kappa(self, point: FieldPoint | None = None, *, gamma=None, f=None):
        if point is not None:
            gamma, f = point.gamma, point.f
        dg, df = self.offsets(gamma, f)
        a, b, c = self.kappa_coeffs
        return a + b * dg + c * df

    def eta(self, point: FieldPoint | None = None, *, gamma=None, f=None):
        if point is not None:
            gamma, f = point.gamma, point.f
        dg, df = self.offsets(gamma, f)
        d, e, f_, g, h, i = self.eta_coeffs
        return d + e * dg + f_ * df + g * dg**2 + h * df * dg + i * df**2

    def eta_gradient(self, point: FieldPoint) -> tuple[complex, complex]:
        dg, df = self.offsets(point.gamma, point.f)
        _, e, f_, g, h, i = self.eta_coeffs
        return complex(e + 2 * g * dg + h * df), complex(f_ + h * dg + 2 * i * df)

    def eigenvalues(self, point: FieldPoint) -> np.ndarray:
        """The unordered pair (kappa +- sqrt(eta)) / 2 on the principal branch."""
        k = self.kappa(point)
        s = np.sqrt(complex(self.eta(point)))
        return np.array([(k + s) / 2, (k - s) / 2])

    def matrix(self, point: FieldPoint) -> np.ndarray:
        return build_matrix(self, point)

    def as_dict(self) -> dict:
        names = "ABC"
        out = {n: complex(v) for n, v in zip(names, self.kappa_coeffs)}
        out.update({n: complex(v) for n, v in zip("DEFGHI", self.eta_coeffs)})
        out["c"] = complex(self.c)
        out["fit_residual"] = float(self.fit_residual)
        out["radius"] = float(self.radius)
        out["gamma_center"] = float(self.center.gamma)
        out["f_center"] = float(self.center.f)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TwoLevelModel":
        return cls(
            center=FieldPoint(float(d["gamma_center"]), float(d["f_center"])),
            kappa_coeffs=np.array([complex(d[k]) for k in "ABC"]),
            eta_coeffs=np.array([complex(d[k]) for k in "DEFGHI"]),
            c=complex(d.get("c", 1.0)),
            fit_residual=float(d.get("fit_residual", 0.0)),
            radius=float(d.get("radius", 1e-3)),
        )


def _scales(center: FieldPoint, radius: float) -> tuple[float, float]:
    # relative half-axes; a vanishing center component falls back to absolute units
    sg = radius * abs(center.gamma) if center.gamma != 0 else radius
    sf = radius * abs(center.f) if center.f != 0 else radius
    return sg, sf


def octagon_points(center: FieldPoint, radius: float) -> list[FieldPoint]:
    """Center followed by the eight vertices of the relative octagon."""
    sg, sf = _scales(center, radius)
    pts = [center]
    for k in range(8):
        phi = 2 * np.pi * k / 8
        pts.append(FieldPoint(center.gamma + sg * np.sin(phi), center.f + sf * np.cos(phi)))
    return pts


def _solve_lsq(design: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    normal = design.T @ design
    cond = np.linalg.cond(normal)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise FitError(f"design matrix is rank deficient (normal-equation condition {cond:.3g})")
    return np.linalg.solve(normal, design.T @ rhs)


def fit_model(
    samples: Sequence[tuple[FieldPoint, complex, complex]],
    center: FieldPoint,
    c: complex = 1.0,
    radius: float | None = None,
) -> TwoLevelModel:
    """Least-squares fit of kappa (linear) and eta (quadratic) to eigenvalue pairs.

    ``samples`` holds ``(point, E1, E2)`` triples; nine octagon samples give
    an overdetermined system for both expansions.  The regression runs in
    coordinates scaled by the sampling spread so the normal equations stay
    well conditioned; coefficients are returned in absolute units.
    ``fit_residual`` is the largest eigenvalue deviation of the fitted model
    over the samples.
    """
    if len(samples) < 6:
        raise FitError(f"need at least 6 samples, got {len(samples)}")
    g = np.array([s[0].gamma for s in samples]) - center.gamma
    f = np.array([s[0].f for s in samples]) - center.f
    e1 = np.array([complex(s[1]) for s in samples])
    e2 = np.array([complex(s[2]) for s in samples])
    sg = np.max(np.abs(g)) or 1.0
    sf = np.max(np.abs(f)) or 1.0
    x, y = g / sg, f / sf
    one = np.ones_like(x)

    kap = _solve_lsq(np.column_stack([one, x, y]), e1 + e2)
    eta = _solve_lsq(np.column_stack([one, x, y, x**2, x * y, y**2]), (e1 - e2) ** 2)
    kappa_coeffs = kap / np.array([1.0, sg, sf])
    eta_coeffs = eta / np.array([1.0, sg, sf, sg**2, sg * sf, sf**2])
    if radius is None:
        rg = sg / abs(center.gamma) if center.gamma else sg
        rf = sf / abs(center.f) if center.f else sf
        radius = float(max(rg, rf))
    model = TwoLevelModel(center, kappa_coeffs, eta_coeffs, complex(c), 0.0, radius)
    resid = 0.0
    for p, a, b in samples:
        pair = model.eigenvalues(p)
        d1 = max(abs(pair[0] - a), abs(pair[1] - b))
        d2 = max(abs(pair[0] - b), abs(pair[1] - a))
        resid = max(resid, min(d1, d2))
    return replace(model, fit_residual=float(resid))


def sample_octagon(problem, center: FieldPoint, radius: float, energy_guess: complex, count: int = 2):
    """Full-solver samples of the EP pair on the octagon around ``center``.

    At every vertex the two eigenvalues closest to ``energy_guess`` are
    taken as the pair.
    """
    out = []
    for p in octagon_points(center, radius):
        rs = problem.solve(p, energy_guess, max(count, 2))
        e = rs.energies[:2]
        out.append((p, complex(e[0]), complex(e[1])))
    return out


def matrix_from_invariants(kappa, eta, c) -> np.ndarray:
    """Complex-symmetric 2x2 matrix with trace ``kappa`` and discriminant ``eta``."""
    if c == 0:
        raise ValueError("free parameter c must be nonzero")
    kappa = np.asarray(kappa, dtype=complex)
    eta = np.asarray(eta, dtype=complex)
    diag = 0.25 * (c + eta / c)
    off = 0.25j * (c - eta / c)
    out = np.empty(kappa.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = kappa / 2 + diag
    out[..., 1, 1] = kappa / 2 - diag
    out[..., 0, 1] = off
    out[..., 1, 0] = off
    return out


def build_matrix(model: TwoLevelModel, point: FieldPoint) -> np.ndarray:
    """Model Hamiltonian at ``point``; its eigenvalues are (kappa +- sqrt(eta))/2."""
    return matrix_from_invariants(model.kappa(point), model.eta(point), model.c)
