"""Fourier-in-time machinery for multiharmonic fields.

A time-periodic field is represented by its truncated real Fourier series
``v(t) = v_0^c + sum_k (v_k^c cos(k w t) + v_k^s sin(k w t))`` with edge
coefficient vectors per mode.  The perpendicular operation
``(c, s) -> (-s, c)`` realizes the quarter-period shift entering the
half-derivative pairings.
"""

import math
from dataclasses import dataclass

import numpy as np

from eddymh.quadrature import gauss_time_rule


@dataclass(frozen=True)
class PeriodSpec:
    """Period T, derived base frequency, and truncation index N."""

    T: float
    N: int

    def __post_init__(self):
        if not self.T > 0.0:
            raise ValueError("period must be positive")
        if self.N < 0:
            raise ValueError("truncation index must be nonnegative")

    @property
    def omega(self):
        return 2.0 * math.pi / self.T


@dataclass(eq=False)
class FourierField:
    """Edge-coefficient vectors of a truncated Fourier series.

    ``mode0`` is the mean (cosine) coefficient, ``modes[k-1]`` the pair
    (cosine, sine) for mode k.
    """

    mode0: np.ndarray
    modes: list

    def __post_init__(self):
        dim = self.mode0.shape[0]
        for c, s in self.modes:
            if c.shape[0] != dim or s.shape[0] != dim:
                raise ValueError("all mode vectors must share one dimension")

    @property
    def dimension(self):
        return self.mode0.shape[0]

    @property
    def N(self):
        return len(self.modes)

    def mode(self, k):
        """Coefficient pair of mode k; the mean has a zero sine part."""
        if k == 0:
            return self.mode0, np.zeros_like(self.mode0)
        return self.modes[k - 1]

    def perp(self):
        """Mode-wise (c, s) -> (-s, c); the mean maps to zero."""
        return FourierField(
            np.zeros_like(self.mode0), [(-s, c) for c, s in self.modes]
        )

    @classmethod
    def zeros(cls, dimension, N):
        z = np.zeros(dimension)
        return cls(z.copy(), [(z.copy(), z.copy()) for _ in range(N)])

    def __call__(self, t, period):
        """Evaluate the coefficient vector of the series at time t."""
        w = period.omega
        out = self.mode0.copy()
        for k, (c, s) in enumerate(self.modes, start=1):
            out = out + c * math.cos(k * w * t) + s * math.sin(k * w * t)
        return out


def _time_rule(period, m=None):
    # composite Gauss-Legendre; panel count grows with requested samples
    if m is None:
        m = 80
    panels = max(10, int(np.ceil(m / 8)))
    return gauss_time_rule(period.T, panels=panels, points=8)


def fourier_coeff(g, k, period, m=None):
    """Cosine/sine coefficients of a scalar periodic signal.

    Parameters
    ----------
    g : callable
        Vectorized signal on [0, T].
    k : int
        Mode index; k = 0 returns (mean, 0).
    period : PeriodSpec
    m : int, optional
        Minimum number of quadrature samples (default 80).

    Returns
    -------
    (c_k, s_k) : floats
    """
    if k < 0:
        raise ValueError("mode index must be nonnegative")
    t, w = _time_rule(period, m)
    vals = np.asarray(g(t), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("signal produced non-finite values")
    if k == 0:
        return float(np.dot(w, vals) / period.T), 0.0
    arg = k * period.omega * t
    c = 2.0 / period.T * np.dot(w, vals * np.cos(arg))
    s = 2.0 / period.T * np.dot(w, vals * np.sin(arg))
    return float(c), float(s)


def remainder(g, spatial_norm_sq, period, N=None, m=None):
    """Parseval tail of separable data g(t) s(x) beyond mode N.

    Returns ``(||g||^2_{L2(0,T)} - T mean^2 - (T/2) sum_{k<=N}(c_k^2+s_k^2))
    * spatial_norm_sq``, clamped at zero against quadrature noise.
    """
    if N is None:
        N = period.N
    t, w = _time_rule(period, m)
    vals = np.asarray(g(t), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("signal produced non-finite values")
    total = float(np.dot(w, vals * vals))
    mean = float(np.dot(w, vals) / period.T)
    tail = total - period.T * mean**2
    for k in range(1, N + 1):
        arg = k * period.omega * t
        c = 2.0 / period.T * np.dot(w, vals * np.cos(arg))
        s = 2.0 / period.T * np.dot(w, vals * np.sin(arg))
        tail -= 0.5 * period.T * (c * c + s * s)
    if tail < -1e-10 * max(total, 1.0):
        raise ValueError("negative Parseval tail: inconsistent coefficients")
    return max(tail, 0.0) * spatial_norm_sq


def halftime_products(u, v, Msigma, period):
    """Weighted half-derivative pairings of two Fourier fields.

    Returns
    -------
    plain : float
        ``(T/2) sum_k k w (u_k^c' M u... v_k^c + u_k^s' M v_k^s)``; with
        u = v this is the square of the weighted half-time seminorm.
    perp : float
        Same sum with v replaced by its perpendicular field; equals the
        time integral of (sigma dv/dt . u) for trigonometric fields.
    """
    if u.dimension != v.dimension:
        raise ValueError("field dimensions differ")
    w = period.omega
    plain = 0.0
    perp = 0.0
    for k in range(1, min(u.N, v.N) + 1):
        uc, us = u.mode(k)
        vc, vs = v.mode(k)
        plain += k * w * (uc @ (Msigma @ vc) + us @ (Msigma @ vs))
        perp += k * w * (us @ (Msigma @ vc) - uc @ (Msigma @ vs))
    return 0.5 * period.T * plain, 0.5 * period.T * perp


def spacetime_norms(e, M, Kcurl, period):
    """Space-time seminorm^2 and norm^2 of a Fourier field.

    Parameters
    ----------
    e : FourierField
    M : mass matrix (no weight)
    Kcurl : curl-curl matrix with unit weight
    period : PeriodSpec

    Returns
    -------
    (seminorm_sq, norm_sq)
        seminorm^2 = T ||curl e_0||^2
        + (T/2) sum_k (k w ||e_k||^2 + ||curl e_k||^2); the norm replaces
        k w by (1 + k w) and adds T ||e_0||^2.
    """
    T, w = period.T, period.omega
    c0 = e.mode0
    semi = T * (c0 @ (Kcurl @ c0))
    norm = semi + T * (c0 @ (M @ c0))
    for k in range(1, e.N + 1):
        ec, es = e.mode(k)
        m2 = ec @ (M @ ec) + es @ (M @ es)
        k2 = ec @ (Kcurl @ ec) + es @ (Kcurl @ es)
        semi += 0.5 * T * (k * w * m2 + k2)
        norm += 0.5 * T * ((1.0 + k * w) * m2 + k2)
    return float(semi), float(norm)


def friedrichs_constant(box=(1.0, 1.0, 1.0)):
    """Friedrichs constant of a box domain.

    The smallest curl-curl eigenvalue on a box with tangential boundary
    conditions is ``pi^2 min_{i<j} (1/a_i^2 + 1/a_j^2)``; the constant is
    its inverse square root (unit cube: 1/(sqrt(2) pi)).
    """
    a = np.asarray(box, dtype=float)
    if a.shape != (3,) or np.any(a <= 0):
        raise ValueError("box extents must be three positive lengths")
    inv2 = 1.0 / a**2
    lam = np.pi**2 * min(
        inv2[0] + inv2[1], inv2[0] + inv2[2], inv2[1] + inv2[2]
    )
    return 1.0 / math.sqrt(lam)
