"""Euclidean quantities: ball volumes, two-ball overlap, radial moments, box windows."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate


class InvalidDimensionError(ValueError):
    pass


def unit_ball_volume(d: int) -> float:
    """Lebesgue volume of the unit ball in R^d."""
    if int(d) != d or d < 1:
        raise InvalidDimensionError(f"dimension must be a positive integer, got {d!r}")
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1)


def sphere_area(d: int) -> float:
    """Surface measure of the unit sphere S^{d-1}; equals d * v_d."""
    return d * unit_ball_volume(d)


def _omega_closed(d: int, t: float) -> float:
    if d == 1:
        return 1.0 - t / 2.0
    if d == 2:
        h = t / 2.0
        return (2.0 / math.pi) * (math.acos(h) - h * math.sqrt(1.0 - h * h))
    if d == 3:
        return 1.0 - 0.75 * t + t**3 / 16.0
    raise ValueError("closed form only for d <= 3")


def _omega_quad(d: int, t: float) -> float:
    # Each ball contributes a cap of height 1 - t/2; slices orthogonal to e_1
    # are (d-1)-balls of radius sqrt(1 - x^2).
    if d == 1:
        return 1.0 - t / 2.0
    coef = 2.0 * unit_ball_volume(d - 1) / unit_ball_volume(d)
    val, _ = integrate.quad(
        lambda x: (1.0 - x * x) ** ((d - 1) / 2.0),
        t / 2.0,
        1.0,
        epsabs=0.0,
        epsrel=1e-10,
        limit=200,
    )
    return coef * val


def omega(d: int, t: float, method: str | None = None) -> float:
    """Fraction of a unit ball's volume shared with a unit ball at centre distance ``t``.

    Closed forms are used for d <= 3, adaptive quadrature of the cap slice
    integral otherwise. ``method`` forces ``"closed"`` or ``"quadrature"``.
    """
    if d < 1:
        raise InvalidDimensionError(f"dimension must be >= 1, got {d}")
    if t < 0:
        raise ValueError(f"relative distance must be >= 0, got {t}")
    if t >= 2.0:
        return 0.0
    if t == 0.0:
        return 1.0
    if method is None:
        method = "closed" if d <= 3 else "quadrature"
    if method == "closed":
        val = _omega_closed(d, t)
    elif method == "quadrature":
        val = _omega_quad(d, t)
    else:
        raise ValueError(f"unknown method {method!r}")
    return min(1.0, max(0.0, val))


def omega_array(d: int, t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    out = np.empty(t.shape)
    for idx, tv in np.ndenumerate(t):
        out[idx] = omega(d, float(tv))
    return out


@dataclass(frozen=True)
class RadialIntegrals:
    B_d: float
    M_le1: float
    M_gt1: float
    J_d: float
    S_dminus1: float


_GL_NODES = 96


@lru_cache(maxsize=None)
def radial_integrals(d: int) -> RadialIntegrals:
    """Moments of t^{d-1} and t^{d-1} omega_d(t) over [0, 1] and (1, 2].

    Gauss-Legendre on [0, 1]; on [1, 2] the substitution t = 2 - u^2 removes the
    half-integer power singularity of omega at t = 2.
    """
    if d < 1:
        raise InvalidDimensionError(f"dimension must be >= 1, got {d}")
    x, w = np.polynomial.legendre.leggauss(_GL_NODES)
    # [0, 1]
    t = 0.5 * (x + 1.0)
    m_le1 = 0.5 * sum(wi * ti ** (d - 1) * omega(d, ti) for ti, wi in zip(t, w))
    # [1, 2] via u in [0, 1], dt = -2u du
    u = 0.5 * (x + 1.0)
    tt = 2.0 - u * u
    m_gt1 = 0.5 * sum(wi * 2.0 * ui * ti ** (d - 1) * omega(d, ti) for ui, ti, wi in zip(u, tt, w))
    return RadialIntegrals(
        B_d=1.0 / d,
        M_le1=float(m_le1),
        M_gt1=float(m_gt1),
        J_d=float(m_le1 + m_gt1),
        S_dminus1=sphere_area(d),
    )


@dataclass(frozen=True)
class Window:
    """Axis-aligned box [lower, upper] in R^d."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or not lo:
            raise ValueError("lower and upper must be non-empty and of equal length")
        if any(not (a < b) for a, b in zip(lo, hi)):
            raise ValueError(f"degenerate window: lower={lo}, upper={hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, d: int) -> Window:
        return cls((0.0,) * d, (1.0,) * d)

    @property
    def dimension(self) -> int:
        return len(self.lower)

    @property
    def sides(self) -> np.ndarray:
        return np.subtract(self.upper, self.lower)

    def volume(self) -> float:
        return float(np.prod(self.sides))

    def perimeter(self) -> float:
        """(d-1)-dimensional surface measure of the box boundary."""
        s = self.sides
        if self.dimension == 1:
            return 2.0
        return float(2.0 * sum(np.prod(np.delete(s, i)) for i in range(self.dimension)))

    def dilate(self, r: float) -> Window:
        """Smallest box containing the Minkowski sum with B(0, r)."""
        if r < 0:
            raise ValueError("dilation radius must be >= 0")
        return Window(tuple(a - r for a in self.lower), tuple(b + r for b in self.upper))

    def translate(self, shift) -> Window:
        shift = np.broadcast_to(np.asarray(shift, dtype=float), (self.dimension,))
        return Window(tuple(np.add(self.lower, shift)), tuple(np.add(self.upper, shift)))

    def contains(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((pts >= self.lower) & (pts <= self.upper), axis=1)

    def contains_window(self, other: Window) -> bool:
        return all(a <= b for a, b in zip(self.lower, other.lower)) and all(
            a >= b for a, b in zip(self.upper, other.upper)
        )

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper)}


def shift_overlap_volume(window: Window, h) -> float | np.ndarray:
    """|W cap (W - h)| for a box; ``h`` may be one vector or an (n, d) array."""
    h = np.asarray(h, dtype=float)
    overlap = np.clip(window.sides - np.abs(h), 0.0, None)
    return np.prod(overlap, axis=-1) if h.ndim > 1 else float(np.prod(overlap))
