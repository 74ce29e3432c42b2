"""Quadrature rules on the reference tetrahedron and on time intervals.

The reference tetrahedron is ``T = {x >= 0, y >= 0, z >= 0, x + y + z <= 1}``
with volume 1/6.  Two spatial rules are used throughout the package: a
four-point degree-2 rule for products of lowest-order edge functions, and a
conical-product rule (degree 2n-1) for integrands that involve analytic data.
"""

import numpy as np
from scipy.special import roots_jacobi

# Degree-2 rule, 4 interior points, barycentric coordinates.
_A = 0.5854101966249685
_B = 0.1381966011250105
TET_P2_BARY = np.array(
    [
        [_A, _B, _B, _B],
        [_B, _A, _B, _B],
        [_B, _B, _A, _B],
        [_B, _B, _B, _A],
    ]
)
TET_P2_WEIGHTS = np.full(4, 0.25 / 6.0)  # sums to the reference volume 1/6


def conical_tet_rule(n):
    """Conical product rule with ``n**3`` points, exact to degree ``2n - 1``.

    Built from one-dimensional Gauss-Jacobi rules with weights ``(1-u)**2``,
    ``(1-v)`` and ``1`` under the collapsed coordinate map
    ``x = u, y = v(1-u), z = w(1-u)(1-v)``.

    Parameters
    ----------
    n : int
        Points per direction.

    Returns
    -------
    points : ndarray, shape (n**3, 3)
        Quadrature points on the reference tetrahedron.
    weights : ndarray, shape (n**3,)
        Weights summing to 1/6.
    """
    tu, wu = roots_jacobi(n, 2.0, 0.0)
    tv, wv = roots_jacobi(n, 1.0, 0.0)
    tw, ww = roots_jacobi(n, 0.0, 0.0)
    # map [-1, 1] -> [0, 1]; the Jacobi weight absorbs the Jacobian factors
    u, cu = (1.0 + tu) / 2.0, wu / 8.0
    v, cv = (1.0 + tv) / 2.0, wv / 4.0
    w, cw = (1.0 + tw) / 2.0, ww / 2.0
    U, V, W = np.meshgrid(u, v, w, indexing="ij")
    CU, CV, CW = np.meshgrid(cu, cv, cw, indexing="ij")
    x = U
    y = V * (1.0 - U)
    z = W * (1.0 - U) * (1.0 - V)
    points = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    weights = (CU * CV * CW).ravel()
    return points, weights


TET_P5_POINTS, TET_P5_WEIGHTS = conical_tet_rule(3)
TET_P5_BARY = np.column_stack([1.0 - TET_P5_POINTS.sum(axis=1), TET_P5_POINTS])


def gauss_time_rule(period, panels=10, points=8):
    """Composite Gauss-Legendre rule on ``[0, period]``.

    Returns
    -------
    t : ndarray, shape (panels * points,)
    w : ndarray, shape (panels * points,)
        Weights summing to ``period``.
    """
    x, wx = np.polynomial.legendre.leggauss(points)
    h = period / panels
    left = h * np.arange(panels)
    t = (left[:, None] + 0.5 * h * (x[None, :] + 1.0)).ravel()
    w = np.tile(0.5 * h * wx, panels)
    return t, w
