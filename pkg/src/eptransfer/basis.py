"""Coulomb-Sturmian matrix representation of hydrogen in parallel fields.

The basis functions are

    phi_{nl0}(r) = 2*lam * x**l * exp(-x/2) * p_n^(2l+1)(x) * Y_l0(theta),  x = 2*lam*r,

with ``p_n^a`` the orthonormal generalized Laguerre polynomial for the weight
``x**a * exp(-x)``.  ``n`` is the radial quantum number and ``N = n + l + 1``
the principal one.  With this normalization the functions are orthonormal
with respect to ``1/r``, so the Coulomb block is ``-identity`` and the
ordinary overlap matrix is banded but not diagonal.

Every radial integral reduces to an entry of a power of the Laguerre Jacobi
matrix, which is exact (no quadrature).  Complex scaling ``r -> b r`` is
applied afterwards by multiplying each block with the power of ``b`` that
matches the radial power of its operator, see :func:`build_pencil`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import comb, gammaln

__all__ = [
    "BasisSpec",
    "FieldPoint",
    "OperatorBlocks",
    "assemble_operator_blocks",
    "build_pencil",
    "basis_size",
    "index_map",
    "scale_factors",
]


@dataclass(frozen=True)
class FieldPoint:
    """Dimensionless field strengths, ``gamma = B/B0`` and ``f = F/F0``."""

    gamma: float
    f: float

    def __post_init__(self):
        if not (np.isfinite(self.gamma) and np.isfinite(self.f)):
            raise ValueError(f"non-finite field point ({self.gamma}, {self.f})")

    def as_tuple(self) -> tuple[float, float]:
        return (float(self.gamma), float(self.f))


@dataclass(frozen=True)
class BasisSpec:
    """Truncation and scaling parameters of the Sturmian basis.

    Parameters
    ----------
    n_principal_max
        Largest principal quantum number ``N`` kept; the basis holds all
        ``(n, l)`` with ``n + l + 1 <= n_principal_max``.
    sturmian_scale
        Radial scale ``lam`` of the Sturmian functions (exponent ``exp(-lam r)``).
    rotation
        Complex scaling factor ``b`` used by default in :func:`build_pencil`.
    magnetic_quantum_number
        Only ``m = 0`` is supported.
    """

    n_principal_max: int
    sturmian_scale: float = 0.2
    rotation: complex = complex(np.exp(0.3j))
    magnetic_quantum_number: int = 0

    def __post_init__(self):
        if int(self.n_principal_max) != self.n_principal_max or self.n_principal_max < 1:
            raise ValueError(f"n_principal_max must be a positive integer, got {self.n_principal_max}")
        if self.magnetic_quantum_number != 0:
            raise ValueError("only the m = 0 subspace is implemented")
        if not self.sturmian_scale > 0:
            raise ValueError(f"sturmian_scale must be positive, got {self.sturmian_scale}")
        b = complex(self.rotation)
        if abs(b) == 0 or not (0 <= np.angle(b) < np.pi / 4):
            raise ValueError(f"rotation must satisfy |b| > 0 and 0 <= arg b < pi/4, got {b}")

    @property
    def size(self) -> int:
        return basis_size(self.n_principal_max)

    @property
    def angle(self) -> float:
        return float(np.angle(self.rotation))

    def with_angle(self, theta: float) -> "BasisSpec":
        b = abs(self.rotation) * np.exp(1j * theta)
        return BasisSpec(self.n_principal_max, self.sturmian_scale, complex(b))


def basis_size(n_principal_max: int) -> int:
    return n_principal_max * (n_principal_max + 1) // 2


def index_map(n_principal_max: int) -> list[tuple[int, int]]:
    """(n, l) of every basis column, grouped by ``l`` then ascending ``n``."""
    return [(n, l) for l in range(n_principal_max) for n in range(n_principal_max - l)]


@dataclass(frozen=True)
class OperatorBlocks:
    """Field-independent matrices at ``b = 1``.

    ``kinetic``: -Laplacian/2, ``coulomb``: -1/r, ``dipole``: z,
    ``diamagnetic``: x**2 + y**2, ``paramagnetic``: L_z (zero for m = 0),
    ``overlap``: plain overlap of the basis functions.
    """

    spec: BasisSpec
    kinetic: np.ndarray
    coulomb: np.ndarray
    dipole: np.ndarray
    diamagnetic: np.ndarray
    paramagnetic: np.ndarray
    overlap: np.ndarray
    index_map: list[tuple[int, int]] = field(repr=False)

    def __post_init__(self):
        for name in ("kinetic", "coulomb", "dipole", "diamagnetic", "paramagnetic", "overlap"):
            getattr(self, name).setflags(write=False)

    @property
    def size(self) -> int:
        return self.overlap.shape[0]

    @cached_property
    def cholesky(self) -> np.ndarray:
        """Lower Cholesky factor of the overlap; computed once and cached."""
        return np.linalg.cholesky(self.overlap)

    @cached_property
    def l_values(self) -> np.ndarray:
        return np.array([l for _, l in self.index_map])

    @cached_property
    def principal(self) -> np.ndarray:
        return np.array([n + l + 1 for n, l in self.index_map])

    def block_structure(self, name: str, tol: float = 0.0) -> dict[tuple[int, int], np.ndarray]:
        """Nonzero ``(l, l')`` sub-blocks of one operator, keyed by angular momenta."""
        mat = getattr(self, name)
        ls = self.l_values
        out = {}
        for l1 in np.unique(ls):
            rows = np.flatnonzero(ls == l1)
            for l2 in np.unique(ls):
                cols = np.flatnonzero(ls == l2)
                sub = mat[np.ix_(rows, cols)]
                if np.max(np.abs(sub), initial=0.0) > tol:
                    out[(int(l1), int(l2))] = sub
        return out


def _jacobi(alpha: float, size: int) -> np.ndarray:
    """Multiplication by x in the orthonormal Laguerre basis of parameter alpha."""
    n = np.arange(size)
    off = -np.sqrt((n[:-1] + 1.0) * (n[:-1] + alpha + 1.0))
    return np.diag(2.0 * n + alpha + 1.0) + np.diag(off, 1) + np.diag(off, -1)


def _log_norm(n, alpha):
    # log of the squared norm Gamma(n + alpha + 1) / n! of L_n^alpha
    return gammaln(n + alpha + 1.0) - gammaln(n + 1.0)


def _lowering(nmax: int, alpha: int, d: int) -> np.ndarray:
    """Coefficients of p_n^alpha in the p^(alpha + 2d) basis.

    Uses L_n^a = sum_j (-1)^j C(2d, j) L_{n-j}^(a + 2d).  Row n, column n - j.
    """
    beta = alpha + 2 * d
    out = np.zeros((nmax, nmax))
    for n in range(nmax):
        for j in range(0, min(2 * d, n) + 1):
            m = n - j
            c = (-1) ** j * comb(2 * d, j, exact=True)
            out[n, m] = c * np.exp(0.5 * (_log_norm(m, beta) - _log_norm(n, alpha)))
    return out


def _radial_block(lam, l1, l2, power, n1max, n2max):
    """Radial integrals  int R_{n l1} R_{n' l2} r**power r**2 dr  for l2 >= l1.

    Returns an (n1max, n2max) array.
    """
    d = l2 - l1
    beta = 2 * l2 + 1
    q = power + 1 - d
    if q < 0:
        raise ValueError(f"radial power {power} not representable for dl = {d}")
    size = max(n1max, n2max) + q + 1
    jac = _jacobi(beta, size)
    xq = np.linalg.matrix_power(jac, q) if q else np.eye(size)
    low = _lowering(n1max, 2 * l1 + 1, d)
    vals = low @ xq[:n1max, :n2max]
    return vals * (2.0 * lam) ** (-power - 1)


def _cos_elem(l):
    # <l+1, 0| cos theta | l, 0>
    return (l + 1) / np.sqrt((2 * l + 1) * (2 * l + 3))


def _cos2_diag(l):
    # <l, 0| cos^2 theta | l, 0>
    return (2.0 * l * (l + 1) - 1.0) / ((2 * l - 1) * (2 * l + 3))


def _cos2_off(l):
    # <l+2, 0| cos^2 theta | l, 0>
    return (l + 1) * (l + 2) / ((2 * l + 3) * np.sqrt((2 * l + 1) * (2 * l + 5)))


def assemble_operator_blocks(spec: BasisSpec) -> OperatorBlocks:
    """Build all field-independent matrices at ``b = 1``."""
    if spec.n_principal_max < 1:
        raise ValueError("n_principal_max must be >= 1")
    if spec.magnetic_quantum_number != 0:
        raise ValueError("only m = 0 is supported")
    nmax_p = spec.n_principal_max
    lam = spec.sturmian_scale
    imap = index_map(nmax_p)
    size = len(imap)
    offsets = {}
    pos = 0
    for l in range(nmax_p):
        offsets[l] = pos
        pos += nmax_p - l

    def sl(l):
        return slice(offsets[l], offsets[l] + nmax_p - l)

    overlap = np.zeros((size, size))
    dipole = np.zeros((size, size))
    diamagnetic = np.zeros((size, size))
    kinetic = np.zeros((size, size))
    coulomb = -np.eye(size)

    for l in range(nmax_p):
        nl = nmax_p - l
        s = sl(l)
        ov = _radial_block(lam, l, l, 0, nl, nl)
        overlap[s, s] = ov
        principal = np.arange(nl) + l + 1
        kinetic[s, s] = -0.5 * lam**2 * ov + lam * np.diag(principal.astype(float))
        rr = _radial_block(lam, l, l, 2, nl, nl)
        diamagnetic[s, s] = (1.0 - _cos2_diag(l)) * rr
        if l + 1 < nmax_p:
            t = sl(l + 1)
            blk = _cos_elem(l) * _radial_block(lam, l, l + 1, 1, nl, nl - 1)
            dipole[s, t] = blk
            dipole[t, s] = blk.T
        if l + 2 < nmax_p:
            t = sl(l + 2)
            blk = -_cos2_off(l) * _radial_block(lam, l, l + 2, 2, nl, nl - 2)
            diamagnetic[s, t] = blk
            diamagnetic[t, s] = blk.T

    # symmetrize against rounding in the banded products
    overlap = 0.5 * (overlap + overlap.T)
    kinetic = 0.5 * (kinetic + kinetic.T)
    diamagnetic = 0.5 * (diamagnetic + diamagnetic.T)
    paramagnetic = np.zeros((size, size))
    return OperatorBlocks(
        spec=spec,
        kinetic=kinetic,
        coulomb=coulomb,
        dipole=dipole,
        diamagnetic=diamagnetic,
        paramagnetic=paramagnetic,
        overlap=overlap,
        index_map=imap,
    )


def scale_factors(point: FieldPoint, b: complex) -> dict[str, complex]:
    """Multiplier of each block in the scaled Hamiltonian at ``point``."""
    b = complex(b)
    return {
        "kinetic": b**-2,
        "coulomb": b**-1,
        "paramagnetic": 0.5 * point.gamma,
        "diamagnetic": point.gamma**2 / 8.0 * b**2,
        "dipole": point.f * b,
    }


def build_pencil(blocks: OperatorBlocks, point: FieldPoint, b: complex | None = None):
    """Return ``(A, B)`` with ``A v = E B v`` the complex-scaled problem at ``point``."""
    if b is None:
        b = blocks.spec.rotation
    size = blocks.size
    for name in ("kinetic", "coulomb", "dipole", "diamagnetic", "paramagnetic"):
        if getattr(blocks, name).shape != (size, size):
            raise ValueError(f"block {name} has shape {getattr(blocks, name).shape}, expected {(size, size)}")
    a = np.zeros((size, size), dtype=complex)
    for name, factor in scale_factors(point, b).items():
        if factor != 0:
            a += factor * getattr(blocks, name)
    return a, blocks.overlap
