"""Independent reference computations used by the tests.

Matrix elements are integrated with mpmath directly from the explicit
Sturmian radial functions and Legendre polynomials, without any of the
recurrences used in the package.
"""

import mpmath as mp
import numpy as np
import scipy.linalg as sla

mp.mp.dps = 30


def radial(n, l, lam):
    norm = 2 * lam * mp.sqrt(mp.factorial(n) / mp.factorial(n + 2 * l + 1))

    def R(r):
        x = 2 * lam * r
        return norm * x**l * mp.exp(-x / 2) * mp.laguerre(n, 2 * l + 1, x)

    return R


def radial_derivative_u(n, l, lam):
    """d/dr of u(r) = r R(r)."""
    norm = 2 * lam * mp.sqrt(mp.factorial(n) / mp.factorial(n + 2 * l + 1))

    def du(r):
        x = 2 * lam * r
        lag = mp.laguerre(n, 2 * l + 1, x)
        dlag = -mp.laguerre(n - 1, 2 * l + 2, x) if n > 0 else 0
        pre = norm * (2 * lam) ** l * mp.exp(-lam * r)
        return pre * ((l + 1) * r**l * lag - lam * r ** (l + 1) * lag + r ** (l + 1) * 2 * lam * dlag)

    return du


def radial_integral(n1, l1, n2, l2, lam, power):
    R1 = radial(n1, l1, lam)
    R2 = radial(n2, l2, lam)
    return mp.quad(lambda r: R1(r) * R2(r) * r ** (power + 2), [0, 10, 50, mp.inf])


def angular_integral(l1, l2, kind):
    """2 pi int Y_l1,0 Y_l2,0 g(theta) sin(theta) dtheta for g in {1, cos, sin^2}."""
    c = mp.sqrt((2 * l1 + 1) * (2 * l2 + 1)) / (4 * mp.pi)
    g = {"one": lambda x: 1, "cos": lambda x: x, "sin2": lambda x: 1 - x * x}[kind]
    return 2 * mp.pi * c * mp.quad(lambda x: mp.legendre(l1, x) * mp.legendre(l2, x) * g(x), [-1, 1])


def kinetic_integral(n1, n2, l, lam):
    du1 = radial_derivative_u(n1, l, lam)
    du2 = radial_derivative_u(n2, l, lam)
    R1 = radial(n1, l, lam)
    R2 = radial(n2, l, lam)
    f = lambda r: 0.5 * (du1(r) * du2(r) + l * (l + 1) * R1(r) * R2(r))
    return mp.quad(f, [0, 10, 50, mp.inf])


def element(op, a, b, lam):
    """Matrix element <a| op |b> between (n, l) basis labels."""
    (n1, l1), (n2, l2) = a, b
    if op == "overlap":
        return float(radial_integral(n1, l1, n2, l2, lam, 0) * angular_integral(l1, l2, "one"))
    if op == "coulomb":
        return float(-radial_integral(n1, l1, n2, l2, lam, -1) * angular_integral(l1, l2, "one"))
    if op == "dipole":
        return float(radial_integral(n1, l1, n2, l2, lam, 1) * angular_integral(l1, l2, "cos"))
    if op == "diamagnetic":
        return float(radial_integral(n1, l1, n2, l2, lam, 2) * angular_integral(l1, l2, "sin2"))
    if op == "kinetic":
        if l1 != l2:
            return 0.0
        return float(kinetic_integral(n1, n2, l1, lam))
    raise ValueError(op)


def dense_generalized_eigvals(a, b):
    """Brute-force eigenvalues of A v = E B v via the QZ algorithm."""
    return sla.eigvals(a, b)


def nearest_match(x, y):
    """max_i min_j |x_i - y_j|."""
    x = np.asarray(x)
    y = np.asarray(y)
    return float(np.max(np.min(np.abs(x[:, None] - y[None, :]), axis=1)))
