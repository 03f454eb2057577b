"""Exact geometry of hyperbolic n-space in exponential coordinates.

Points are written (x, t) with x in R^{n-1} and length element
e^{-2t} |dx|^2 + dt^2.  The chart (x, t) -> (x, e^t) identifies this model
with the upper half-space, where distances and geodesics have closed forms.
Vertical lines t -> (x, t) are unit-speed geodesics; the family of all of
them is a pencil of mutually forward-asymptotic geodesics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "HPoint",
    "VerticalGeodesic",
    "VerticalTriangle",
    "SampledGeodesic",
    "MIDPOINT_SEPARATION",
    "DEFAULT_DEPTH",
    "dist_hyp",
    "distance_arrays",
    "midpoint_height",
    "vertical_triangle",
    "sample_geodesic",
    "sample_third_side",
    "vertical_line_distance",
    "apex_height",
]

# e^{-t(r)} |x - x'| at the highest point of the side joining the feet x, x'.
MIDPOINT_SEPARATION = 2.0

# Default truncation depth for finite stand-ins of ideal sides.
DEFAULT_DEPTH = 20.0


def _as_coords(x) -> tuple[float, ...]:
    if np.isscalar(x):
        return (float(x),)
    arr = np.asarray(x, dtype=float).reshape(-1)
    return tuple(float(v) for v in arr)


@dataclass(frozen=True, init=False)
class HPoint:
    """A point (x, t): horizontal coordinate x in R^{n-1} and height t."""

    x: tuple[float, ...]
    t: float

    def __init__(self, x, t):
        coords = _as_coords(x)
        if len(coords) < 1:
            raise ValueError("horizontal coordinate must have at least one entry")
        if not all(math.isfinite(c) for c in coords):
            raise ValueError("horizontal coordinates must be finite")
        t = float(t)
        if not math.isfinite(t):
            raise ValueError("height must be finite")
        object.__setattr__(self, "x", coords)
        object.__setattr__(self, "t", t)

    @property
    def dim(self) -> int:
        return len(self.x) + 1

    def x_array(self) -> np.ndarray:
        return np.asarray(self.x, dtype=float)

    def coords(self) -> np.ndarray:
        """Concatenated (x..., t) row, the layout used by sampled geodesics."""
        return np.asarray(self.x + (self.t,), dtype=float)


@dataclass(frozen=True, init=False)
class VerticalGeodesic:
    """The unit-speed geodesic t -> (x, t) with fixed horizontal coordinate."""

    x: tuple[float, ...]

    def __init__(self, x):
        object.__setattr__(self, "x", _as_coords(x))

    def __call__(self, t: float) -> HPoint:
        return HPoint(self.x, t)

    def x_array(self) -> np.ndarray:
        return np.asarray(self.x, dtype=float)


def distance_arrays(x1, t1, x2, t2) -> np.ndarray:
    """Distance between (x1, t1) and (x2, t2), broadcasting over leading axes.

    x1, x2 have shape (..., n-1); t1, t2 shape (...).  Uses

        d = 2 asinh sqrt( sinh^2(dt/2) + |dx|^2 e^{-(t1+t2)} / 4 ),

    the upper-half-space chord formula pulled back through (x, t) -> (x, e^t).
    Vertical pairs reduce to d = |dt| exactly.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    t1 = np.asarray(t1, dtype=float)
    t2 = np.asarray(t2, dtype=float)
    if x1.shape[-1] != x2.shape[-1]:
        raise ValueError(
            f"dimension mismatch: {x1.shape[-1] + 1} vs {x2.shape[-1] + 1}"
        )
    u = np.sqrt(np.sum((x2 - x1) ** 2, axis=-1))
    # hypot keeps tiny height gaps and tiny scaled separations from
    # underflowing when squared
    arg = np.hypot(np.sinh(0.5 * (t2 - t1)), 0.5 * u * np.exp(-0.5 * (t1 + t2)))
    return 2.0 * np.arcsinh(arg)


def dist_hyp(p: HPoint, q: HPoint) -> float:
    """Hyperbolic distance between two points in exponential coordinates."""
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    return float(distance_arrays(p.x_array(), p.t, q.x_array(), q.t))


def midpoint_height(x, x_prime) -> float:
    """Height t(r) of the top of the side joining the feet x and x'.

    Solves e^{-t} |x - x'| = 2; geodesics between points at heights >= t(r)
    stay within horocyclic separation 2 of each other.
    """
    u = float(np.linalg.norm(np.asarray(_as_coords(x)) - np.asarray(_as_coords(x_prime))))
    if u == 0.0:
        raise ValueError("coincident feet: no connecting side exists")
    t = math.log(u / MIDPOINT_SEPARATION)
    # defining identity, checked after the fact
    assert abs(math.exp(-t) * u - MIDPOINT_SEPARATION) <= 1e-12 * MIDPOINT_SEPARATION
    return t


@dataclass(frozen=True)
class VerticalTriangle:
    """Two vertical geodesics plus the side joining their feet at infinity.

    midpoint_height is the height of the top of that side; displaced_height
    is filled in by the certifier once an embedding is under test.
    """

    side_p: VerticalGeodesic
    side_q: VerticalGeodesic
    midpoint_height: float
    displaced_height: float | None = None

    def __post_init__(self):
        if self.side_p.x == self.side_q.x:
            raise ValueError("triangle sides must have distinct horizontal coordinates")
        u = self.separation
        if abs(math.exp(-self.midpoint_height) * u - MIDPOINT_SEPARATION) > 1e-9:
            raise ValueError("midpoint height inconsistent with the feet separation")
        if self.displaced_height is not None and self.displaced_height > self.midpoint_height + 1e-9:
            raise ValueError("displaced height cannot exceed the midpoint height")

    @property
    def separation(self) -> float:
        return float(np.linalg.norm(self.side_p.x_array() - self.side_q.x_array()))

    def with_displaced_height(self, h: float) -> "VerticalTriangle":
        return VerticalTriangle(self.side_p, self.side_q, self.midpoint_height, h)


def vertical_triangle(x, x_prime) -> VerticalTriangle:
    """Assemble the vertical triangle over the feet x != x'."""
    return VerticalTriangle(
        VerticalGeodesic(x), VerticalGeodesic(x_prime), midpoint_height(x, x_prime)
    )


@dataclass(frozen=True)
class SampledGeodesic:
    """A geodesic represented by a polyline with cumulative arc parameters.

    points has shape (S, d) with one coordinate row per sample; params has
    shape (S,), starts at 0 and is strictly increasing.  On an exact geodesic
    the gap between consecutive params equals the distance between the
    corresponding points.  vertex_ids is filled for polylines that live on a
    mesh, one vertex index per row.
    """

    points: np.ndarray
    params: np.ndarray
    vertex_ids: np.ndarray | None = None

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        par = np.asarray(self.params, dtype=float).reshape(-1)
        if len(pts) != len(par):
            raise ValueError("points and params length mismatch")
        if len(par) == 0:
            raise ValueError("empty polyline")
        if par[0] != 0.0:
            raise ValueError("params must start at 0")
        if len(par) > 1 and not np.all(np.diff(par) > 0):
            raise ValueError("params must be strictly increasing")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "params", par)

    def __len__(self) -> int:
        return len(self.params)

    @property
    def length(self) -> float:
        return float(self.params[-1])


def _arc_machinery(p: HPoint, q: HPoint):
    """Circle data for the half-space geodesic through p, q in chord coords.

    Heights are shifted so the higher endpoint sits at t = 0, which keeps
    e^t in range for arbitrarily deep endpoints.  Returns None for vertical
    pairs.  The arc parameter is s = log tan(theta/2), which is hyperbolic
    arc length along the circle.
    """
    x1 = p.x_array()
    x2 = q.x_array()
    u = float(np.linalg.norm(x2 - x1))
    shift = max(p.t, q.t)
    h1 = math.exp(p.t - shift)
    h2 = math.exp(q.t - shift)
    us = u * math.exp(-shift)
    if us == 0.0 or us < 1e-14 * max(h1, h2):
        return None
    c = 0.5 * (us + (h2 - h1) * (h2 + h1) / us)
    r = math.hypot(c, h1)
    th1 = math.atan2(h1, -c)
    th2 = math.atan2(h2, us - c)
    s1 = math.log(math.tan(0.5 * th1))
    s2 = math.log(math.tan(0.5 * th2))
    return x1, x2, us, shift, c, r, s1, s2


def _rows_from_arc(arc, s_grid: np.ndarray) -> np.ndarray:
    x1, x2, us, shift, c, r, s1, s2 = arc
    th = 2.0 * np.arctan(np.exp(s_grid))
    h = r * np.sin(th)
    xi = c + r * np.cos(th)
    t = shift + np.log(h)
    frac = xi / us
    xs = x1[None, :] + frac[:, None] * (x2 - x1)[None, :]
    return np.column_stack([xs, t])


def sample_geodesic(p: HPoint, q: HPoint, count: int) -> SampledGeodesic:
    """Sample the geodesic from p to q at count arc-length-uniform points."""
    if p.dim != q.dim:
        raise ValueError("dimension mismatch")
    if p == q:
        return SampledGeodesic(p.coords()[None, :], np.zeros(1))
    if count < 2:
        raise ValueError("count must be at least 2 for distinct endpoints")
    arc = _arc_machinery(p, q)
    if arc is None:
        ts = np.linspace(p.t, q.t, count)
        xs = np.tile(p.x_array(), (count, 1))
        rows = np.column_stack([xs, ts])
        params = np.abs(ts - p.t)
    else:
        s1, s2 = arc[6], arc[7]
        s_grid = np.linspace(s1, s2, count)
        rows = _rows_from_arc(arc, s_grid)
        params = np.abs(s_grid - s1)
    rows[0] = p.coords()
    rows[-1] = q.coords()
    return SampledGeodesic(rows, params)


def apex_height(x, x_prime, depth: float = DEFAULT_DEPTH) -> float:
    """Height of the top of the geodesic joining (x, -depth) and (x', -depth)."""
    u = float(np.linalg.norm(np.asarray(_as_coords(x)) - np.asarray(_as_coords(x_prime))))
    if u == 0.0:
        raise ValueError("coincident feet")
    # semicircle through both endpoints: radius sqrt((u/2)^2 + e^{-2 depth})
    half = u / 2.0
    return math.log(half) + 0.5 * math.log1p((math.exp(-depth) / half) ** 2)


def sample_third_side(
    T: VerticalTriangle, count: int, depth: float = DEFAULT_DEPTH
) -> SampledGeodesic:
    """Finite stand-in for the side of T joining the two feet at infinity.

    Samples the geodesic between (x, -depth) and (x', -depth).  For count >= 3
    the exact top of the arc replaces the nearest interior sample, so the
    polyline's maximum height matches the midpoint height up to the
    truncation error of the finite depth.
    """
    if count < 2:
        raise ValueError("count must be at least 2")
    a = HPoint(T.side_p.x, -depth)
    b = HPoint(T.side_q.x, -depth)
    if count == 2:
        rows = np.vstack([a.coords(), b.coords()])
        return SampledGeodesic(rows, np.array([0.0, dist_hyp(a, b)]))
    arc = _arc_machinery(a, b)
    # distinct feet guarantee a genuine circle
    assert arc is not None
    s1, s2 = arc[6], arc[7]
    s_grid = np.linspace(s1, s2, count)
    lo, hi = min(s1, s2), max(s1, s2)
    if lo < 0.0 < hi:
        # s = 0 is the top of the circle (theta = pi/2); pin it exactly
        j = int(np.argmin(np.abs(s_grid)))
        j = min(max(j, 1), count - 2)
        s_grid[j] = 0.0
    rows = _rows_from_arc(arc, s_grid)
    rows[0] = a.coords()
    rows[-1] = b.coords()
    return SampledGeodesic(rows, np.abs(s_grid - s1))


def vertical_line_distance(x, t, line_x, t_lo=None, t_hi=None) -> np.ndarray:
    """Distance from points (x, t) to the vertical geodesic over line_x.

    With no window this is asinh(e^{-t} |x - line_x|).  With a height window
    [t_lo, t_hi] the foot of the perpendicular is clamped into the window,
    giving the distance to the truncated segment.  Broadcasts over leading
    axes of x (..., n-1) and t (...).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.asarray(t, dtype=float)
    line = np.asarray(_as_coords(line_x), dtype=float)
    u = np.linalg.norm(x - line[None, :], axis=-1)
    if t_lo is None and t_hi is None:
        return np.arcsinh(u * np.exp(-t))
    # foot height: t_f = 0.5 log(u^2 + e^{2t})
    with np.errstate(divide="ignore"):
        t_f = 0.5 * np.logaddexp(2.0 * np.log(u), 2.0 * t)
    lo = -np.inf if t_lo is None else t_lo
    hi = np.inf if t_hi is None else t_hi
    t_c = np.clip(t_f, lo, hi)
    return distance_arrays(x, t, np.broadcast_to(line, x.shape), t_c)
