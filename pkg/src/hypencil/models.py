"""Desk-scale warped-product geometries and the pencil embeddings into them.

A warped product e^{-2t}(flat base) + dt^2 over the Euclidean plane is an
exact copy of hyperbolic 3-space, which makes it the calibration target: the
mesh built here can be checked against closed forms.  The same warping over
the universal cover of a square-tiled surface produces a singular target
whose fibers contract along the height flow in the same way.

A pencil embedding sends (x, t) to the point at height t on the flow line
through leaf parameter x; vertical lines map to vertical mesh columns, which
are exact graph geodesics because every edge weight dominates its height
span.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .hyperbolic import HPoint, SampledGeodesic, distance_arrays
from .spaces import (
    FLAT_STEPS_2D,
    PLANE_STEPS_2D,
    WARPED_STEPS_3D,
    ExactHyperbolicSpace,
    MeshSpace,
    TargetSpace,
    flat_weight,
    lattice_mesh,
    warped_weight,
)

__all__ = [
    "SquareTiledSurface",
    "Leaf",
    "PencilEmbedding",
    "WarpedPlaneTarget",
    "WarpedCoverTarget",
    "staircase_surface",
    "square_torus",
    "warped_plane_target",
    "warped_cover_target",
    "euclidean_plane_target",
    "pencil_embedding",
    "identity_embedding",
    "constant_embedding",
    "GOLDEN_SLOPE",
]

GOLDEN_SLOPE = (1.0 + math.sqrt(5.0)) / 2.0

# corner labels: 0 = bottom-left, 1 = bottom-right, 2 = top-right, 3 = top-left
_CORNERS = (0, 1, 2, 3)


def _check_permutation(perm, n, name):
    perm = tuple(int(v) for v in perm)
    if sorted(perm) != list(range(n)):
        raise ValueError(f"{name} is not a permutation of 0..{n - 1}")
    return perm


@dataclass(frozen=True)
class SquareTiledSurface:
    """A flat surface glued from unit squares by side permutations.

    right_glue[i] is the square attached to the right edge of square i;
    top_glue[i] the square above it.  Corner orbits with total angle above
    2*pi are the cone points.
    """

    num_squares: int
    right_glue: tuple[int, ...]
    top_glue: tuple[int, ...]

    def __post_init__(self):
        n = int(self.num_squares)
        if n < 1:
            raise ValueError("need at least one square")
        object.__setattr__(self, "right_glue", _check_permutation(self.right_glue, n, "right_glue"))
        object.__setattr__(self, "top_glue", _check_permutation(self.top_glue, n, "top_glue"))
        if not self._connected():
            raise ValueError("gluing data does not give a connected surface")

    def _connected(self) -> bool:
        seen = {0}
        stack = [0]
        r, t = self.right_glue, self.top_glue
        inv_r = _invert(r)
        inv_t = _invert(t)
        while stack:
            s = stack.pop()
            for nxt in (r[s], t[s], inv_r[s], inv_t[s]):
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return len(seen) == self.num_squares

    def corner_orbits(self) -> list[list[tuple[int, int]]]:
        """Orbits of square corners identified around a surface vertex.

        Walking counterclockwise around the vertex at a corner steps to the
        matching corner of the neighboring square; one step per quarter turn.
        """
        inv_r = _invert(self.right_glue)
        inv_t = _invert(self.top_glue)

        def step(square, corner):
            if corner == 0:   # around the bottom-left vertex: go to left neighbor
                return inv_r[square], 1
            if corner == 1:   # bottom-right vertex: go below
                return inv_t[square], 2
            if corner == 2:   # top-right vertex: go right
                return self.right_glue[square], 3
            return self.top_glue[square], 0  # top-left vertex: go above

        remaining = {(s, c) for s in range(self.num_squares) for c in _CORNERS}
        orbits = []
        while remaining:
            start = min(remaining)
            orbit = []
            cur = start
            while True:
                orbit.append(cur)
                remaining.discard(cur)
                cur = step(*cur)
                if cur == start:
                    break
            orbits.append(orbit)
        return orbits

    @property
    def cone_points(self) -> list[tuple[list[tuple[int, int]], float]]:
        """Corner orbits with total angle strictly above 2*pi, with the angle."""
        out = []
        for orbit in self.corner_orbits():
            angle = len(orbit) * math.pi / 2.0
            if len(orbit) > 4:
                out.append((orbit, angle))
        return out

    @property
    def euler_characteristic(self) -> int:
        # V - E + F with E = 2 * num_squares, F = num_squares
        return len(self.corner_orbits()) - self.num_squares

    @property
    def genus(self) -> int:
        chi = self.euler_characteristic
        if chi % 2 != 0:
            raise ValueError("inconsistent gluing data: odd Euler characteristic")
        return (2 - chi) // 2

    def gauss_bonnet_sides(self) -> tuple[int, int]:
        """Both sides of sum(angle - 2*pi) = 2*pi*(2g - 2), in units of pi/2.

        The angle at an orbit of length L is L * pi/2, so the left side is
        sum(L - 4) and the right side 4 * (2g - 2).  Equality is exact
        integer arithmetic.
        """
        orbits = self.corner_orbits()
        lhs = sum(len(o) - 4 for o in orbits)
        rhs = 4 * (2 * self.genus - 2)
        return lhs, rhs

    def is_cone_corner(self, square: int, corner: int) -> bool:
        for orbit, _ in self.cone_points:
            if (square, corner) in orbit:
                return True
        return False


def _invert(perm):
    inv = [0] * len(perm)
    for i, v in enumerate(perm):
        inv[v] = i
    return tuple(inv)


def staircase_surface() -> SquareTiledSurface:
    """Three unit squares in a two-step staircase: genus 2, one 6*pi cone point."""
    return SquareTiledSurface(3, right_glue=(1, 0, 2), top_glue=(2, 1, 0))


def square_torus() -> SquareTiledSurface:
    """One square with opposite sides glued: the flat torus, no cone points."""
    return SquareTiledSurface(1, right_glue=(0,), top_glue=(0,))


# ---------------------------------------------------------------------------
# leaves of the straight-line flow on the flat base

@dataclass(frozen=True)
class Leaf:
    """A straight flow line on the flat base, parameterized by arc length.

    base_point is the marked point at parameter 0; direction is normalized at
    construction.  lift_sheet names the starting copy when the base is an
    unfolded cover patch.
    """

    base_point: tuple[float, float]
    direction: tuple[float, float]
    lift_sheet: int = 0

    def __post_init__(self):
        bp = tuple(float(v) for v in self.base_point)
        d = np.asarray(self.direction, dtype=float)
        norm = float(np.linalg.norm(d))
        if norm == 0.0:
            raise ValueError("leaf direction must be nonzero")
        object.__setattr__(self, "base_point", bp)
        object.__setattr__(self, "direction", tuple((d / norm).tolist()))

    def point_at(self, s: float) -> np.ndarray:
        return np.asarray(self.base_point) + s * np.asarray(self.direction)


def golden_leaf(base_point=(0.5, 0.5)) -> Leaf:
    """Leaf with golden-ratio slope; irrational slope keeps it off every corner.

    From the square center the crossings stay at least 0.19 away from every
    corner over arc range 1.3, the best clearance the slope admits.
    """
    return Leaf(base_point, (1.0, GOLDEN_SLOPE))


# ---------------------------------------------------------------------------
# warped plane target (exact hyperbolic 3-space, discretized)

class WarpedPlaneTarget(TargetSpace):
    """Shortest-path mesh over e^{-2t}(dx1^2 + dx2^2) + dt^2 on a box.

    This metric is hyperbolic 3-space, so the instance carries the exact
    space as its oracle.  Queries between vertices in the x2 = 0 plane are
    routed to a 2D slice graph: dropping the x2 component of every stencil
    step maps any path to an in-plane path of no greater length, so the slice
    distance equals the full-mesh distance while running much faster.
    """

    def __init__(self, t_min, t_max, x_max, resolution, x2_max=None):
        if not (t_min < t_max) or resolution <= 0 or x_max <= 0:
            raise ValueError("degenerate box")
        h = float(resolution)
        x2_max = float(x_max if x2_max is None else x2_max)
        if x2_max <= 0:
            raise ValueError("degenerate box")
        n1 = int(round(2 * x_max / h))
        n2 = int(round(2 * x2_max / h))
        nk = int(round((t_max - t_min) / h))
        if min(n1, n2, nk) < 1:
            raise ValueError("degenerate box")
        self.mesh = lattice_mesh(
            origins=np.array([-x_max, -x2_max, t_min]),
            counts=(n1 + 1, n2 + 1, nk + 1),
            h=h,
            steps=WARPED_STEPS_3D,
            weight=warped_weight,
            metadata={"model": "warped_plane"},
        )
        self.oracle = ExactHyperbolicSpace(3)
        self.resolution = h
        self._shape = self.mesh.lattice_shape
        self._j0 = n2 // 2  # index of the x2 = 0 layer
        self._slice = lattice_mesh(
            origins=np.array([-x_max, t_min]),
            counts=(n1 + 1, nk + 1),
            h=h,
            steps=PLANE_STEPS_2D,
            weight=warped_weight,
            metadata={"model": "warped_plane_slice"},
        )

    # -- vertex bookkeeping --------------------------------------------------
    def _split(self, v):
        n1, n2, nk = self._shape
        v = int(v)
        k = v % nk
        j = (v // nk) % n2
        i = v // (nk * n2)
        return i, j, k

    def _join(self, i, j, k):
        n1, n2, nk = self._shape
        return (i * n2 + j) * nk + k

    def _slice_id(self, v):
        i, j, k = self._split(v)
        if j != self._j0:
            return None
        return i * self._shape[2] + k

    def vertex_coords(self, v) -> np.ndarray:
        return self.mesh.vertices[int(v)]

    def nearest_vertex(self, coords) -> int:
        """Snap (x1, x2, t) to the nearest lattice vertex directly."""
        x1, x2, t = coords
        lo = [b[0] for b in self.mesh.bbox]
        hi = [b[1] for b in self.mesh.bbox]
        h = self.resolution
        n1, n2, nk = self._shape
        i = int(np.clip(round((x1 - lo[0]) / h), 0, n1 - 1))
        j = int(np.clip(round((x2 - lo[1]) / h), 0, n2 - 1))
        k = int(np.clip(round((t - lo[2]) / h), 0, nk - 1))
        return self._join(i, j, k)

    def column(self, v) -> np.ndarray:
        """All vertices sharing the base coordinates of v, ordered by height."""
        i, j, _ = self._split(v)
        return np.array([self._join(i, j, k) for k in range(self._shape[2])])

    def column_heights(self) -> np.ndarray:
        lo = self.mesh.bbox[2][0]
        return lo + self.resolution * np.arange(self._shape[2])

    def height_index(self, t) -> int:
        lo = self.mesh.bbox[2][0]
        k = int(round((t - lo) / self.resolution))
        return int(np.clip(k, 0, self._shape[2] - 1))

    # -- metric queries --------------------------------------------------------
    def distance(self, a, b) -> float:
        sa, sb = self._slice_id(a), self._slice_id(b)
        if sa is not None and sb is not None:
            return self._slice.distance(sa, sb)
        return self.mesh.distance(a, b)

    def distances_from(self, a, targets) -> np.ndarray:
        targets = np.asarray(targets, dtype=int)
        sa = self._slice_id(a)
        st = [self._slice_id(b) for b in targets]
        if sa is not None and all(s is not None for s in st):
            return self._slice.distances_from(sa, np.array(st))
        return self.mesh.distances_from(a, targets)

    def distance_field(self, sources) -> np.ndarray:
        """Distance from every full-mesh vertex to the source set.

        In-plane source sets run on the slice and are read back through the
        in-plane vertex map; off-plane vertices get +inf in that case (the
        certifier only consumes in-plane entries).
        """
        sources = np.asarray(sources, dtype=int)
        ss = [self._slice_id(v) for v in sources]
        if all(s is not None for s in ss):
            d2 = self._slice.distance_field(np.array(ss))
            out = np.full(self.mesh.num_vertices, np.inf)
            n1, n2, nk = self._shape
            ii, kk = np.meshgrid(np.arange(n1), np.arange(nk), indexing="ij")
            full = (ii * n2 + self._j0) * nk + kk
            out[full.ravel()] = d2
            return out
        return self.mesh.distance_field(sources)

    def geodesic(self, a, b, samples: int) -> SampledGeodesic:
        return self.mesh.geodesic(a, b, samples)

    def path_vertices(self, a, b) -> np.ndarray:
        sa, sb = self._slice_id(a), self._slice_id(b)
        if sa is not None and sb is not None:
            spath = self._slice.shortest_path(sa, sb)
            nk = self._shape[2]
            return np.array([self._join(s // nk, self._j0, s % nk) for s in spath])
        return self.mesh.shortest_path(a, b)

    def __repr__(self):
        return f"WarpedPlaneTarget({self.mesh!r})"


def warped_plane_target(t_min, t_max, x_max, resolution, x2_max=None) -> WarpedPlaneTarget:
    """Warped-product mesh over a plane box; exact hyperbolic 3-space oracle attached."""
    return WarpedPlaneTarget(t_min, t_max, x_max, resolution, x2_max=x2_max)


def euclidean_plane_target(x_max, resolution) -> MeshSpace:
    """Flat (unwarped) plane mesh; the non-hyperbolic control target."""
    if x_max <= 0 or resolution <= 0:
        raise ValueError("degenerate box")
    n = int(round(2 * x_max / resolution))
    if n < 1:
        raise ValueError("degenerate box")
    return lattice_mesh(
        origins=np.array([-x_max, -x_max]),
        counts=(n + 1, n + 1),
        h=float(resolution),
        steps=FLAT_STEPS_2D,
        weight=flat_weight,
        metadata={"model": "euclidean_plane"},
    )


# ---------------------------------------------------------------------------
# unfolded cover patch of a square-tiled surface

_SIDES = ("R", "T", "L", "B")
_SIDE_STEP = {"R": (1, 0), "T": (0, 1), "L": (-1, 0), "B": (0, -1)}
_OPPOSITE = {"R": "L", "L": "R", "T": "B", "B": "T"}

# walking counterclockwise around the vertex at a corner of a copy:
# (corner) -> (side crossed, corner of the neighbor at the same vertex)
_CCW = {0: ("L", 1), 1: ("B", 2), 2: ("R", 3), 3: ("T", 0)}
_CORNER_OFFSET = {0: (0, 0), 1: (1, 0), 2: (1, 1), 3: (0, 1)}


class _Patch:
    """A finite simply-connected unfolding of the universal cover.

    Copies of squares are placed by translations in a developing plane; they
    may overlap as planar sets (the cover wraps around cone points) but are
    distinct nodes of the complex.  Edge gluings are added when expanding and
    when the full fan of quarter-turns around a lifted vertex closes up.
    """

    def __init__(self, surface: SquareTiledSurface):
        self.surface = surface
        self.square: list[int] = []
        self.offset: list[tuple[int, int]] = []
        self.glue: list[dict] = []
        self._orbit_len = {}
        for orbit in surface.corner_orbits():
            for sc in orbit:
                self._orbit_len[sc] = len(orbit)

    def add_copy(self, square, offset) -> int:
        self.square.append(int(square))
        self.offset.append((int(offset[0]), int(offset[1])))
        self.glue.append({s: None for s in _SIDES})
        return len(self.square) - 1

    def neighbor_square(self, copy, side):
        s = self.square[copy]
        if side == "R":
            return self.surface.right_glue[s]
        if side == "L":
            return _invert(self.surface.right_glue)[s]
        if side == "T":
            return self.surface.top_glue[s]
        return _invert(self.surface.top_glue)[s]

    def expand(self, copy, side) -> int:
        """Attach a fresh copy across an unglued side and close vertex fans."""
        if self.glue[copy][side] is not None:
            return self.glue[copy][side]
        sq = self.neighbor_square(copy, side)
        step = _SIDE_STEP[side]
        off = (self.offset[copy][0] + step[0], self.offset[copy][1] + step[1])
        new = self.add_copy(sq, off)
        self._set_glue(copy, side, new)
        self._close_fans(copy)
        self._close_fans(new)
        return new

    def _set_glue(self, a, side, b):
        self.glue[a][side] = b
        self.glue[b][_OPPOSITE[side]] = a

    def _fan(self, copy, corner):
        """Maximal chain of quarter-turns ccw around the vertex at a corner.

        Returns (wedges, open_end) where wedges is the ccw-ordered list
        starting from the cw-most reachable wedge.
        """
        # walk clockwise first to find the start of the chain
        cw = {v: k for k, v in ((c, n[1]) for c, n in _CCW.items())}
        # inverse of ccw step: from (copy, corner) came (prev_copy, prev_corner)
        # where prev glued to copy across the opposite of _CCW[prev][0]
        def ccw_next(c, corner):
            side, ncorner = _CCW[corner]
            nxt = self.glue[c][side]
            return (nxt, ncorner) if nxt is not None else None

        def cw_next(c, corner):
            pcorner = cw[corner]
            side = _CCW[pcorner][0]
            # the previous wedge is glued to us across `side` of itself
            nxt = self.glue[c][_OPPOSITE[side]]
            return (nxt, pcorner) if nxt is not None else None

        start = (copy, corner)
        seen = {start}
        while True:
            prev = cw_next(*start)
            if prev is None or prev in seen:
                break
            seen.add(prev)
            start = prev
        chain = [start]
        cur = start
        while True:
            nxt = ccw_next(*cur)
            if nxt is None or nxt in chain:
                break
            chain.append(nxt)
            cur = nxt
        return chain

    def _close_fans(self, copy):
        """Glue the two ends of any fan that has accumulated its full angle."""
        again = True
        while again:
            again = False
            for corner in _CORNERS:
                chain = self._fan(copy, corner)
                first = chain[0]
                sc = (self.square[first[0]], first[1])
                full = self._orbit_len[sc]
                if len(chain) == full:
                    last = chain[-1]
                    side = _CCW[last[1]][0]
                    if self.glue[last[0]][side] is None:
                        self._set_glue(last[0], side, first[0])
                        again = True

    def complete_fan(self, copy, corner):
        """Expand until the fan of quarter-turns around this vertex closes.

        Guarantees the lifted vertex is interior to the patch, so the mesh
        is locally isometric to the cover there; cone vertices close after
        their full angle and become branch points of the lattice.
        """
        guard = 0
        while True:
            chain = self._fan(copy, corner)
            sc = (self.square[chain[0][0]], chain[0][1])
            if len(chain) >= self._orbit_len[sc]:
                self._close_fans(chain[0][0])
                return
            last = chain[-1]
            side = _CCW[last[1]][0]
            self.expand(last[0], side)
            guard += 1
            if guard > 2 * self._max_orbit():
                raise RuntimeError("vertex fan failed to close")

    def _max_orbit(self):
        return max(self._orbit_len.values())

    def cone_lattice_corners(self, m: int):
        """(copy, i, j) lattice corners sitting at lifted cone points."""
        out = []
        for c in range(len(self.square)):
            for corner in _CORNERS:
                if self.surface.is_cone_corner(self.square[c], corner):
                    di, dj = _CORNER_OFFSET[corner]
                    out.append((c, di * m, dj * m))
        return out


@dataclass
class _LeafTrace:
    """Development of a leaf across patch copies, by arc length.

    segments[i] = (lo, hi, copy, anchor) where anchor is the local position
    inside `copy` at parameter lo; the leaf occupies that copy on [lo, hi].
    """

    segments: list[tuple[float, float, int, np.ndarray]]
    direction: np.ndarray

    @property
    def s_min(self) -> float:
        return self.segments[0][0]

    @property
    def s_max(self) -> float:
        return self.segments[-1][1]

    @property
    def copies(self) -> list[int]:
        return [seg[2] for seg in self.segments]

    def locate(self, s: float):
        s = float(s)
        if not self.s_min <= s <= self.s_max:
            raise ValueError(
                f"leaf parameter {s} outside the unfolded range "
                f"[{self.s_min}, {self.s_max}]"
            )
        for lo, hi, copy, anchor in self.segments:
            if lo - 1e-12 <= s <= hi + 1e-12:
                return copy, anchor + (s - lo) * self.direction
        raise ValueError(f"leaf parameter {s} not covered by the trace")


def _segment_clearance(patch, copy, a, b, clearance):
    """Reject if segment [a, b] inside a copy comes near a lifted cone point."""
    sq = patch.square[copy]
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ab = b - a
    denom = float(ab @ ab)
    for corner in _CORNERS:
        if not patch.surface.is_cone_corner(sq, corner):
            continue
        c = np.asarray(_CORNER_OFFSET[corner], dtype=float)
        tau = 0.0 if denom == 0.0 else float(np.clip((c - a) @ ab / denom, 0.0, 1.0))
        if np.linalg.norm(a + tau * ab - c) < clearance:
            raise ValueError(
                "leaf passes within clearance of a cone point; "
                "choose a different basepoint or slope"
            )


def _march_leaf(patch: _Patch, copy0: int, leaf: Leaf, s_min: float, s_max: float,
                clearance: float) -> _LeafTrace:
    """Develop the leaf across the patch, expanding copies as needed."""
    d = np.asarray(leaf.direction)
    if abs(d[0]) < 1e-12 or abs(d[1]) < 1e-12:
        raise ValueError("leaf direction must be transverse to the square sides")

    def march(sign: float, s_to: float):
        """Segments covering arc [0, s_to] in the direction sign * d."""
        dd = sign * d
        segs = []
        copy = copy0
        pos = np.asarray(leaf.base_point, dtype=float)
        s = 0.0
        while s < s_to - 1e-12:
            dt_x = ((1.0 if dd[0] > 0 else 0.0) - pos[0]) / dd[0]
            dt_y = ((1.0 if dd[1] > 0 else 0.0) - pos[1]) / dd[1]
            if dt_x <= dt_y:
                dt, side = dt_x, ("R" if dd[0] > 0 else "L")
            else:
                dt, side = dt_y, ("T" if dd[1] > 0 else "B")
            if dt <= 0:
                raise RuntimeError("leaf marching stalled")
            hi = min(s + dt, s_to)
            _segment_clearance(patch, copy, pos, pos + (hi - s) * dd, clearance)
            segs.append((s, hi, copy, pos.copy()))
            if hi >= s_to:
                break
            crossing = pos + dt * dd
            copy = patch.expand(copy, side)
            pos = crossing - np.asarray(_SIDE_STEP[side], dtype=float)
            s = hi
        return segs

    fwd = march(+1.0, s_max)
    bwd = march(-1.0, -s_min)
    segments = []
    # backward segments reversed into forward parameterization: segment
    # (u_lo, u_hi, copy, anchor at u_lo marching along -d) covers forward
    # range [-u_hi, -u_lo] with forward anchor at parameter -u_hi
    for u_lo, u_hi, copy, anchor in reversed(bwd):
        fwd_anchor = anchor - (u_hi - u_lo) * d
        segments.append((-u_hi, -u_lo, copy, fwd_anchor))
    segments.extend(fwd)
    return _LeafTrace(segments, d)


class WarpedCoverTarget(TargetSpace):
    """Warped-product mesh over an unfolded patch of a square-tiled cover.

    The flat patch is a simply-connected complex of unit-square copies; cone
    points whose full fan of quarter-turns lies inside the patch become
    interior branch vertices of the mesh graph.
    """

    def __init__(self, surface, sheets, t_min, t_max, resolution, leaf=None,
                 leaf_range=0.9, clearance=None, complete_fans=True):
        if sheets < 1:
            raise ValueError("sheets must be at least 1")
        if not t_min < t_max or resolution <= 0:
            raise ValueError("degenerate height range")
        h = float(resolution)
        m = int(round(1.0 / h))
        if abs(m * h - 1.0) > 1e-9 or m < 2:
            raise ValueError("resolution must evenly divide the unit square side")
        self.surface = surface
        self.resolution = h
        self.leaf = leaf or golden_leaf()
        clearance = 1.5 * h if clearance is None else clearance

        patch = _Patch(surface)
        copy0 = patch.add_copy(0, (0, 0))
        self.trace = _march_leaf(patch, copy0, self.leaf, -leaf_range, leaf_range, clearance)
        self.leaf_range = float(leaf_range)

        if complete_fans:
            # every vertex of a strip square gets its full fan of
            # quarter-turns, so lifted cone points near the leaf become
            # interior branch vertices; costs extra square copies
            strip = sorted(set(self.trace.copies))
            for c in strip:
                for corner in _CORNERS:
                    patch.complete_fan(c, corner)
            frontier = sorted(set(range(len(patch.square))))
            rings = int(sheets) - 1
        else:
            frontier = sorted(set(self.trace.copies))
            rings = int(sheets)

        # widen by whole-square layers; the patch stays simply connected and
        # an unglued seam can only lengthen paths, never shorten them
        for _ in range(rings):
            nxt = []
            for c in frontier:
                for side in _SIDES:
                    if patch.glue[c][side] is None:
                        nxt.append(patch.expand(c, side))
            frontier = nxt

        self.patch = patch
        self._build_mesh(t_min, t_max)

    # -- mesh construction ---------------------------------------------------
    def _build_mesh(self, t_min, t_max):
        h = self.resolution
        m = int(round(1.0 / h))
        nk = int(round((t_max - t_min) / h)) + 1
        ncopies = len(self.patch.square)
        side_nodes = m + 1
        per_copy = side_nodes * side_nodes

        # raw node (copy, i, j) -> raw id; union-find merges glued boundaries
        def raw_id(c, i, j):
            return (c * per_copy + i * side_nodes + j)

        total = ncopies * per_copy
        parent = np.arange(total, dtype=np.int64)

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        def union(a, b):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)

        for c in range(ncopies):
            for side, nb in self.patch.glue[c].items():
                if nb is None or nb < c:
                    continue
                for w in range(side_nodes):
                    if side == "R":
                        union(raw_id(c, m, w), raw_id(nb, 0, w))
                    elif side == "L":
                        union(raw_id(c, 0, w), raw_id(nb, m, w))
                    elif side == "T":
                        union(raw_id(c, w, m), raw_id(nb, w, 0))
                    else:
                        union(raw_id(c, w, 0), raw_id(nb, w, m))
        roots = np.array([find(a) for a in range(total)])
        uniq, base_index = np.unique(roots, return_inverse=True)
        n_base = len(uniq)

        # base coordinates from the developing plane (may overlap; fine)
        base_coords = np.zeros((n_base, 2))
        for c in range(ncopies):
            ox, oy = self.patch.offset[c]
            ii, jj = np.meshgrid(np.arange(side_nodes), np.arange(side_nodes), indexing="ij")
            ids = base_index[c * per_copy + ii.ravel() * side_nodes + jj.ravel()]
            base_coords[ids, 0] = ox + ii.ravel() * h
            base_coords[ids, 1] = oy + jj.ravel() * h

        # collect base-level edges once, then extrude over the height axis
        plane_edges = {}

        def add_planar(c, i, j, di, dj):
            ci, cj = i + di, j + dj
            if not (0 <= ci <= m and 0 <= cj <= m):
                # crossing one boundary is fine; two is ambiguous near corners
                side = None
                if ci > m and 0 <= cj <= m:
                    side, ni, nj = "R", ci - m, cj
                elif ci < 0 and 0 <= cj <= m:
                    side, ni, nj = "L", ci + m, cj
                elif cj > m and 0 <= ci <= m:
                    side, ni, nj = "T", ci, cj - m
                elif cj < 0 and 0 <= ci <= m:
                    side, ni, nj = "B", ci, cj + m
                if side is None:
                    return
                nb = self.patch.glue[c][side]
                if nb is None:
                    return
                a = base_index[raw_id(c, i, j)]
                b = base_index[raw_id(nb, ni, nj)]
            else:
                a = base_index[raw_id(c, i, j)]
                b = base_index[raw_id(c, ci, cj)]
            if a == b:
                return
            plane_edges[(min(a, b), max(a, b), di * di + dj * dj)] = (a, b, di, dj)

        planar_shapes = sorted({(s[0], s[1]) for s in WARPED_STEPS_3D if s[2] == 0})
        for c in range(ncopies):
            for (di, dj) in planar_shapes:
                if di < 0 or (di == 0 and dj < 0):
                    continue
                for i in range(side_nodes):
                    for j in range(side_nodes):
                        add_planar(c, i, j, di, dj)

        plane_list = list(plane_edges.values())
        pa = np.array([e[0] for e in plane_list], dtype=np.int64)
        pb = np.array([e[1] for e in plane_list], dtype=np.int64)
        plen = np.array([math.hypot(e[2], e[3]) * h for e in plane_list])

        # vertical/diagonal steps need base displacement lengths too; reuse
        # the planar edge table for the base component of each 3D step
        heights = t_min + h * np.arange(nk)
        self._heights = heights
        self._n_base = n_base
        V = n_base * nk

        srcs, dsts, wts = [], [], []
        ks = np.arange(nk)
        # pure vertical edges
        for dk in (1,):
            kk = ks[:-dk]
            src = (np.arange(n_base)[:, None] * nk + kk[None, :]).ravel()
            dst = src + dk
            srcs.append(src)
            dsts.append(dst)
            wts.append(np.full(len(src), dk * h))
        # planar edges at every height
        for k in range(nk):
            srcs.append(pa * nk + k)
            dsts.append(pb * nk + k)
            wts.append(np.exp(-heights[k]) * plen)
        # diagonal steps: pair planar edges with height offsets; axis-length
        # edges get the full ladder of slopes, longer ones a single rung,
        # which keeps the edge count linear in the vertex count
        axis_mask = np.isclose(plen, h)
        base_sq = plen ** 2
        for dk, mask in ((1, slice(None)), (2, axis_mask), (3, axis_mask), (4, axis_mask)):
            a_sel, b_sel, sq_sel = pa[mask], pb[mask], base_sq[mask]
            if len(a_sel) == 0:
                continue
            for k in range(nk - dk):
                tm = heights[k] + 0.5 * dk * h
                w = np.sqrt(np.exp(-2 * tm) * sq_sel + (dk * h) ** 2)
                srcs.append(a_sel * nk + k)
                dsts.append(b_sel * nk + k + dk)
                wts.append(w)
                srcs.append(b_sel * nk + k)
                dsts.append(a_sel * nk + k + dk)
                wts.append(w)

        coords = np.zeros((V, 3))
        coords[:, 0] = np.repeat(base_coords[:, 0], nk)
        coords[:, 1] = np.repeat(base_coords[:, 1], nk)
        coords[:, 2] = np.tile(heights, n_base)

        self.mesh = MeshSpace(
            vertices=coords,
            edge_src=np.concatenate(srcs).astype(np.int32),
            edge_dst=np.concatenate(dsts).astype(np.int32),
            edge_weight=np.concatenate(wts),
            resolution=self.resolution,
            lattice_shape=(n_base, nk),
            bbox=None,
            metadata={"model": "warped_cover"},
        )
        self._base_index = base_index
        self._side_nodes = side_nodes
        self._per_copy = per_copy
        self._m = m
        self._nk = nk
        # branch vertices: merged lattice corners at lifted cone points
        cone = set()
        for (c, i, j) in self.patch.cone_lattice_corners(m):
            rid = c * per_copy + i * side_nodes + j
            cone.add(int(base_index[rid]))
        self.cone_base_nodes = sorted(cone)

    # -- coordinates -----------------------------------------------------------
    def base_node(self, copy, local) -> int:
        """Nearest lattice base node to a local position inside a copy."""
        m = self._m
        i = int(np.clip(round(local[0] / self.resolution), 0, m))
        j = int(np.clip(round(local[1] / self.resolution), 0, m))
        rid = copy * self._per_copy + i * self._side_nodes + j
        return int(self._base_index[rid])

    def vertex_at(self, base, k) -> int:
        return int(base) * self._nk + int(k)

    def column(self, v) -> np.ndarray:
        base = int(v) // self._nk
        return base * self._nk + np.arange(self._nk)

    def column_heights(self) -> np.ndarray:
        return self._heights

    def height_index(self, t) -> int:
        k = int(round((t - self._heights[0]) / self.resolution))
        return int(np.clip(k, 0, self._nk - 1))

    def base_degree(self, base_node: int) -> int:
        """Planar degree of a base node at mid-height (branch detection)."""
        k = self._nk // 2
        v = self.vertex_at(base_node, k)
        g = self.mesh._graph
        cols = set(g[v].indices.tolist())
        cols |= set(g[:, v].nonzero()[0].tolist())
        same_layer = [c for c in cols if c % self._nk == k]
        return len(same_layer)

    # -- metric queries ----------------------------------------------------------
    def distance(self, a, b) -> float:
        return self.mesh.distance(a, b)

    def distances_from(self, a, targets) -> np.ndarray:
        return self.mesh.distances_from(a, targets)

    def distance_field(self, sources) -> np.ndarray:
        return self.mesh.distance_field(sources)

    def geodesic(self, a, b, samples: int) -> SampledGeodesic:
        return self.mesh.geodesic(a, b, samples)

    def path_vertices(self, a, b) -> np.ndarray:
        return self.mesh.shortest_path(a, b)

    def __repr__(self):
        return f"WarpedCoverTarget({self.mesh!r}, copies={len(self.patch.square)})"


def warped_cover_target(surface, sheets, t_min, t_max, resolution, leaf=None,
                        leaf_range=0.9, complete_fans=True) -> WarpedCoverTarget:
    """Warped product over a finite unfolding of the surface's universal cover."""
    return WarpedCoverTarget(surface, sheets, t_min, t_max, resolution,
                             leaf=leaf, leaf_range=leaf_range,
                             complete_fans=complete_fans)


# ---------------------------------------------------------------------------
# pencil embeddings

@dataclass
class PencilEmbedding:
    """The map (x, t) -> point at height t on the flow line at leaf parameter x.

    kind is "exact" (coordinate pencil into exact hyperbolic space), "mesh"
    (snapped onto a warped mesh), or "constant" (the degenerate control).
    domain gives the admissible (x, t) box for certifier queries, or None
    when the target is unbounded.
    """

    target: TargetSpace
    n: int
    kind: str
    leaf: Leaf | None = None
    domain: dict | None = None
    _mapper: object = None
    geodesic_verticals: bool = True

    def map_point(self, x, t):
        """Image of the domain point (x, t); x has n-1 entries (scalar ok)."""
        return self._mapper(np.atleast_1d(np.asarray(x, dtype=float)), float(t))

    def vertical_image(self, x, t_values) -> SampledGeodesic:
        """Sampled image of the vertical line at leaf parameter x."""
        t_values = np.asarray(t_values, dtype=float)
        if self.kind == "mesh":
            v0 = self.map_point(x, t_values[0])
            col = self.target.column(v0)
            hs = self.target.column_heights()
            lo = self.target.height_index(t_values.min())
            hi = self.target.height_index(t_values.max())
            ids = col[lo:hi + 1]
            pts = (self.target.mesh.vertices[ids]
                   if hasattr(self.target, "mesh") else None)
            params = hs[lo:hi + 1] - hs[lo]
            return SampledGeodesic(pts, params, ids)
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        pts = [self.map_point(xs, t) for t in np.sort(t_values)]
        rows = np.array([
            p.coords() if isinstance(p, HPoint) else np.asarray(p, dtype=float)
            for p in pts
        ])
        params = np.sort(t_values) - np.min(t_values)
        return SampledGeodesic(rows, params)

    def distance(self, a, b) -> float:
        return self.target.distance(a, b)


def pencil_embedding(target: TargetSpace, leaf: Leaf | None, n: int) -> PencilEmbedding:
    """Build the pencil embedding of hyperbolic n-space into the target.

    Exact hyperbolic targets accept any n <= m through coordinate pencils
    (the leaf family spans the first n-1 coordinates).  Warped mesh targets
    carry a single leaf parameter, so they require n = 2.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if isinstance(target, ExactHyperbolicSpace):
        m = target.dim
        if n > m:
            raise ValueError(f"target supports at most {m - 1} leaf parameters")
        pad = m - n

        def mapper(x, t):
            if len(x) != n - 1:
                raise ValueError(f"expected {n - 1} leaf parameters, got {len(x)}")
            full = np.concatenate([x, np.zeros(pad)])
            return HPoint(full, t)

        return PencilEmbedding(target, n, "exact", leaf=leaf, _mapper=mapper)

    if isinstance(target, WarpedPlaneTarget):
        if n != 2:
            raise ValueError("warped targets carry one leaf parameter: n must be 2")
        leaf = leaf or Leaf((0.0, 0.0), (1.0, 0.0))
        lo = [b[0] for b in target.mesh.bbox]
        hi = [b[1] for b in target.mesh.bbox]
        margin_side = max(0.2, 10 * target.resolution)

        def mapper(x, t):
            if len(x) != 1:
                raise ValueError("expected a single leaf parameter")
            p = leaf.point_at(float(x[0]))
            if not (lo[0] <= p[0] <= hi[0] and lo[1] <= p[1] <= hi[1]):
                raise ValueError(f"leaf parameter {x[0]} leaves the mesh box")
            if not (lo[2] <= t <= hi[2]):
                raise ValueError(f"height {t} outside the mesh box")
            return target.nearest_vertex((p[0], p[1], t))

        # admissible query window: sides by base margin; bottom shallow
        # (warped shortest paths never dip below their endpoints), top pads
        # for the arcs of admissible pairs
        span = min(hi[0] - margin_side, -lo[0] - margin_side)
        t_range = hi[2] - lo[2]
        domain = {
            "x": (-span, span),
            "t": (lo[2] + min(0.5, 0.1 * t_range), hi[2] - min(2.0, 0.25 * t_range)),
        }
        return PencilEmbedding(target, n, "mesh", leaf=leaf, domain=domain, _mapper=mapper)

    if isinstance(target, WarpedCoverTarget):
        if n != 2:
            raise ValueError("warped targets carry one leaf parameter: n must be 2")
        leaf = leaf or target.leaf
        trace = target.trace
        hs = target.column_heights()

        def mapper(x, t):
            if len(x) != 1:
                raise ValueError("expected a single leaf parameter")
            copy, local = trace.locate(float(x[0]))
            if not (hs[0] <= t <= hs[-1]):
                raise ValueError(f"height {t} outside the mesh range")
            base = target.base_node(copy, local)
            return target.vertex_at(base, target.height_index(t))

        t_range = hs[-1] - hs[0]
        domain = {
            "x": (trace.s_min + 0.1, trace.s_max - 0.1),
            "t": (hs[0] + min(0.5, 0.1 * t_range), hs[-1] - min(2.0, 0.25 * t_range)),
        }
        return PencilEmbedding(target, n, "mesh", leaf=leaf, domain=domain, _mapper=mapper)

    raise TypeError(f"no pencil construction for target {type(target).__name__}")


def identity_embedding(n: int) -> PencilEmbedding:
    """The identity map of hyperbolic n-space, as a pencil embedding."""
    return pencil_embedding(ExactHyperbolicSpace(n), None, n)


def constant_embedding(target: TargetSpace, point) -> PencilEmbedding:
    """Negative control: every domain point maps to one target point."""

    def mapper(x, t):
        return point

    return PencilEmbedding(target, 2, "constant", _mapper=mapper,
                           geodesic_verticals=False)
