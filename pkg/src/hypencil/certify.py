"""Estimation and verification of almost-isometry certificates.

Given an embedding F of hyperbolic n-space into a geodesic target, the
certifier estimates the hypothesis constants:

  delta  -- slimness of the image triangles spanned by pairs of flow lines,
  R      -- fellow-traveling bound at horocyclic separation below epsilon,

checks a finite divergence schedule, measures the displaced heights of the
sampled triangles, and assembles the derived constants

  Delta = max(3 delta, 2R/epsilon + R)
  C1    = 2 C0 + 5 Delta + 1
  K     = max(2 (C0 + C1) + 2R/epsilon + R + 2,
              7 Delta + 4 C0 + 2 delta + 2R/epsilon + R + 2)

where C0 bounds the gap between each triangle's midpoint height and its
displaced height.  A certificate passes when the empirical sup of
|d_X(F p, F q) - d_H(p, q)| over sampled pairs stays below K.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .hyperbolic import (
    HPoint,
    VerticalTriangle,
    distance_arrays,
    vertical_line_distance,
    vertical_triangle,
)
from .spaces import ExactHyperbolicSpace, MeshSpace, StarSpace, TargetSpace
from .models import PencilEmbedding, WarpedCoverTarget, WarpedPlaneTarget

__all__ = [
    "CertificationError",
    "HypothesisEstimates",
    "Certificate",
    "GridBundle",
    "derived_Delta",
    "estimate_delta",
    "estimate_eps_R",
    "check_divergence",
    "displaced_height",
    "estimate_C0",
    "compute_K",
    "verify_almost_isometry",
    "certify_embedding",
    "hyperbolicity_probe",
    "probe_sweep",
    "default_grids",
]


class CertificationError(RuntimeError):
    """An embedding failed a hypothesis check; details name the witness."""


# ---------------------------------------------------------------------------
# grids

@dataclass
class GridBundle:
    """Sampling plan for one certification run.

    Separations are distances between leaf parameters; heights are domain
    t values.  depth is the (positive) truncation depth of sampled sides:
    sides run from height side_top down to -depth.
    """

    triangle_separations: tuple[float, ...]
    side_top: float
    depth: float
    pair_t_values: tuple[float, ...]
    pair_separations: tuple[float, ...]
    divergence_separation: float
    divergence_t_values: tuple[float, ...]
    verify_x_range: tuple[float, float]
    verify_t_range: tuple[float, float]
    side_step: float = 0.02
    scan_margin: float = 4.8
    third_side_samples: int = 1401

    def describe(self) -> dict:
        return {
            "triangle_separations": list(self.triangle_separations),
            "side_top": self.side_top,
            "depth": self.depth,
            "pair_t_values": [float(t) for t in self.pair_t_values],
            "pair_separations": list(self.pair_separations),
            "divergence_separation": self.divergence_separation,
            "divergence_t_values": [float(t) for t in self.divergence_t_values],
            "verify_x_range": list(self.verify_x_range),
            "verify_t_range": list(self.verify_t_range),
            "side_step": self.side_step,
        }


def default_grids(F: PencilEmbedding, depth: float | None = None) -> GridBundle:
    """Sampling plan adapted to the embedding's admissible domain."""
    if F.kind == "mesh":
        dom = F.domain
        x_lo, x_hi = dom["x"]
        t_lo, t_hi = dom["t"]
        if t_hi - t_lo < 10.0:
            raise ValueError(
                "mesh domain spans a height range below 10; build a taller box"
            )
        h = F.target.resolution
        span = x_hi - x_lo
        resolved = sorted(
            {
                max(4 * h, round(frac * span / h) * h)
                for frac in (0.1, 0.15, 0.2, 0.25, 0.3, 0.36, 0.42, 0.48, 0.54,
                             0.6, 0.67, 0.75, 0.83)
            }
        )
        # two sub-resolution separations stretch the grid over three decades;
        # snapping collapses them onto one column (degenerate by design)
        seps = [resolved[-1] / 1002.0, 1.2 * h] + resolved
        t_top = min(4.0, t_hi)
        pair_seps = [h, 2 * h] + [
            max(h, round(f * span / h) * h)
            for f in (0.05, 0.1, 0.2, 0.35, 0.5, 0.65, 0.8, 0.97)
        ]
        # place the 10-wide height window so the horocyclic separation
        # w = sep * e^{-t} tops out at 4 as high (well-resolved) as the box
        # allows: w = 4 needs t down to log(max_sep / 4)
        max_sep = max(pair_seps)
        need_t = math.log(max_sep / 4.0)
        div_lo = min(max(t_lo, need_t), t_hi - 10.0)
        return GridBundle(
            triangle_separations=tuple(sorted(set(seps))),
            side_top=t_top,
            depth=float(depth) if depth is not None else -(t_lo) + 0.4,
            pair_t_values=tuple(np.linspace(div_lo, div_lo + 10.0, 21)),
            pair_separations=tuple(sorted(set(pair_seps))),
            divergence_separation=max_sep,
            divergence_t_values=tuple(
                np.linspace(div_lo + 10.0, max(div_lo - 0.7, t_lo), 16)
            ),
            verify_x_range=(x_lo, x_hi),
            verify_t_range=(div_lo, div_lo + 10.0),
            side_step=h,
        )
    # exact targets: unbounded domain, deep truncation
    return GridBundle(
        triangle_separations=(0.02, 0.06, 0.2, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0, 8.0, 12.0, 20.0),
        side_top=8.0,
        depth=float(depth) if depth is not None else 20.0,
        pair_t_values=tuple(np.linspace(-5.0, 5.0, 21)),
        pair_separations=(0.02, 0.05, 0.1, 0.2, 0.5, 0.9, 0.999, 1.5, 2.0, 3.0, 3.999),
        divergence_separation=2.0,
        divergence_t_values=tuple(np.linspace(8.6, -4.6, 16)),
        verify_x_range=(-6.0, 6.0),
        verify_t_range=(-5.0, 5.0),
        side_step=0.02,
    )


def derived_Delta(delta: float, epsilon: float, R: float) -> float:
    return max(3.0 * delta, 2.0 * R / epsilon + R)


# ---------------------------------------------------------------------------
# result containers

@dataclass(frozen=True)
class HypothesisEstimates:
    delta: float
    epsilon: float
    R: float
    divergence_ok: bool
    sample_spec: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.delta < 0 or self.R < 0 or self.epsilon <= 0:
            raise ValueError("estimates out of range")


@dataclass(frozen=True)
class Certificate:
    estimates: HypothesisEstimates
    C0: float
    Delta: float
    C1: float
    K1: float
    K2: float
    K: float
    empirical_sup_discrepancy: float | None = None
    pairs_tested: int = 0
    passed: bool = False
    grids: dict = field(default_factory=dict)
    witnesses: dict = field(default_factory=dict)

    def __post_init__(self):
        e = self.estimates
        if self.Delta != derived_Delta(e.delta, e.epsilon, e.R):
            raise ValueError("Delta does not satisfy its defining equality")
        if self.C1 != 2.0 * self.C0 + 5.0 * self.Delta + 1.0:
            raise ValueError("C1 does not satisfy its defining equality")
        if self.empirical_sup_discrepancy is not None:
            if self.passed != (self.empirical_sup_discrepancy <= self.K):
                raise ValueError("pass flag inconsistent with discrepancy and K")

    def to_json_dict(self) -> dict:
        e = self.estimates
        return {
            "delta": e.delta,
            "epsilon": e.epsilon,
            "R": e.R,
            "C0": self.C0,
            "Delta": self.Delta,
            "C1": self.C1,
            "K1": self.K1,
            "K2": self.K2,
            "K": self.K,
            "sup_discrepancy": self.empirical_sup_discrepancy,
            "pairs": self.pairs_tested,
            "pass": bool(self.passed),
            "grids": self.grids,
            "witnesses": self.witnesses,
        }


# ---------------------------------------------------------------------------
# geometry helpers shared by the estimators

def _embed_pair(F: PencilEmbedding, sep: float):
    """Leaf parameters (as vectors) for a pair at the given separation."""
    half = sep / 2.0
    dim = F.n - 1
    x = np.zeros(dim)
    xp = np.zeros(dim)
    x[0] = -half
    xp[0] = half
    return x, xp


def _pairwise_rows(target: TargetSpace, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Distance matrix between coordinate rows for closed-form targets."""
    if isinstance(target, ExactHyperbolicSpace):
        return distance_arrays(
            A[:, None, :-1], A[:, None, -1], B[None, :, :-1], B[None, :, -1]
        )
    if isinstance(target, StarSpace):
        legA, sA = A[:, 0][:, None], A[:, 1][:, None]
        legB, sB = B[None, :, 0], B[None, :, 1]
        return np.where(legA == legB, np.abs(sA - sB), sA + sB)
    raise TypeError(f"no closed-form pairwise distance for {type(target).__name__}")


def _min_dist_rows(target, A, B, chunk=400):
    """Per-row of A, the min distance to the row set B."""
    out = np.empty(len(A))
    for i in range(0, len(A), chunk):
        out[i:i + chunk] = _pairwise_rows(target, A[i:i + chunk], B).min(axis=1)
    return out


def _mesh_field(target, sources: np.ndarray) -> np.ndarray:
    if isinstance(target, (WarpedPlaneTarget, WarpedCoverTarget)):
        return target.distance_field(sources)
    return target.distance_field(sources)


def _mesh_sides(F: PencilEmbedding, x, xp, t_lo: float, t_hi: float):
    """Column vertex ids of the two image sides over [t_lo, t_hi]."""
    target = F.target
    ids_p = F.vertical_image(x, np.array([t_lo, t_hi])).vertex_ids
    ids_q = F.vertical_image(xp, np.array([t_lo, t_hi])).vertex_ids
    return ids_p, ids_q


# ---------------------------------------------------------------------------
# slimness

def estimate_delta(F: PencilEmbedding, grid: GridBundle, record: dict | None = None) -> float:
    """Max over sampled triangles and side points of the distance to the
    union of the other two image sides.

    Image sides are the two flow lines; the third side is a target geodesic
    joining their deep endpoints.  Pairs whose flow lines coincide after mesh
    snapping are degenerate embeddings of a single geodesic and are skipped
    (they carry no triangle).
    """
    seps = [s for s in grid.triangle_separations if s > 0]
    if len(seps) < 10:
        raise ValueError("triangle grid needs at least 10 separation values")
    best = 0.0
    witness = None
    degenerate = []
    for sep in seps:
        x, xp = _embed_pair(F, sep)
        if F.kind == "mesh":
            val, skipped = _delta_mesh_triangle(F, x, xp, grid)
            if skipped:
                degenerate.append(sep)
                continue
        else:
            val = _delta_rows_triangle(F, x, xp, grid)
        if val > best:
            best = val
            witness = sep
    if record is not None:
        record["delta_witness_separation"] = witness
        record["delta_degenerate_separations"] = degenerate
    return best


def _delta_rows_triangle(F, x, xp, grid) -> float:
    target = F.target
    t_vals = np.arange(-grid.depth, grid.side_top + grid.side_step, grid.side_step)
    P = F.vertical_image(x, t_vals)
    Q = F.vertical_image(xp, t_vals)
    a = _row_point(F, x, -grid.depth)
    b = _row_point(F, xp, -grid.depth)
    # sample the connecting side at the same arc step as the verticals, so
    # overlapping sides (tree-like targets) produce identical sample points
    length = target.distance(a, b)
    count = min(int(round(length / grid.side_step)) + 1, grid.third_side_samples * 4)
    Rside = target.geodesic(a, b, max(count, 2))
    PR, QR, RP = P.points, Q.points, Rside.points
    if len(PR) == 1 and len(QR) == 1:
        return 0.0  # constant control: everything coincides
    sup = 0.0
    # side P against Q union R, and symmetrically
    for side, others in ((PR, (QR, RP)), (QR, (PR, RP))):
        union = np.vstack(others)
        sup = max(sup, float(_min_dist_rows(target, side, union).max()))
    # third side against the union of the verticals
    union = np.vstack([PR, QR])
    sup = max(sup, float(_min_dist_rows(target, RP, union).max()))
    return sup


def _row_point(F, x, t):
    """Image point in row-coordinate form for closed-form targets."""
    p = F.map_point(x, t)
    if isinstance(p, HPoint):
        return p
    return p


def _mesh_pair_degenerate(F, x, xp) -> bool:
    """True when mesh snapping destroys the pair's separation.

    Either both flow lines land on one column (a single geodesic: the
    shallow-case shortcut applies exactly) or the snapped separation is
    dominated by the snap error, so the image triangle no longer represents
    the domain one.
    """
    a = F.map_point(x, 0.0)
    b = F.map_point(xp, 0.0)
    if a == b:
        return True
    mesh = F.target.mesh
    sep_dom = float(np.linalg.norm(np.asarray(xp) - np.asarray(x)))
    sep_img = float(np.linalg.norm(mesh.vertices[a][:-1] - mesh.vertices[b][:-1]))
    return abs(sep_img - sep_dom) > 0.5 * sep_dom


def _delta_mesh_triangle(F, x, xp, grid):
    target = F.target
    tr = _triangle_midpoint(F, x, xp)
    if tr is None or _mesh_pair_degenerate(F, x, xp):
        return 0.0, True
    floor = _mesh_floor(F, tr, grid)
    top = grid.side_top
    ids_p = F.vertical_image(x, np.array([floor, top])).vertex_ids
    ids_q = F.vertical_image(xp, np.array([floor, top])).vertex_ids
    if ids_p[0] == ids_q[0]:
        return 0.0, True  # snapped to one column: degenerate
    path = target.path_vertices(ids_p[0], ids_q[0])
    sup = 0.0
    for side, others in ((ids_p, (ids_q, path)), (ids_q, (ids_p, path)),
                         (path, (ids_p, ids_q))):
        union = np.unique(np.concatenate(others))
        fieldvals = _mesh_field(target, union)[np.asarray(side)]
        sup = max(sup, float(fieldvals.max()))
    return sup, False


def _triangle_midpoint(F, x, xp):
    sep = float(np.linalg.norm(np.asarray(xp) - np.asarray(x)))
    if sep == 0:
        return None
    return math.log(sep / 2.0)


def _mesh_floor(F, tr, grid):
    t_lo = F.domain["t"][0] if F.domain else -grid.depth
    bottom = -grid.depth
    return max(tr - grid.scan_margin, bottom, t_lo - 0.4)


# ---------------------------------------------------------------------------
# fellow traveling: epsilon and R

def estimate_eps_R(
    F: PencilEmbedding,
    grid: GridBundle,
    epsilon: float = 1.0,
    record: dict | None = None,
) -> tuple[float, float]:
    """Fix epsilon and return the max image distance over pairs with
    horocyclic separation below it.

    Also rechecks the linear consequence d <= (R/epsilon) w + R on every
    sampled pair, where w = e^{-t} |x - x'|; a violation aborts certification
    with the witness pair.
    """
    ts = np.asarray(grid.pair_t_values, dtype=float)
    seps = np.asarray(grid.pair_separations, dtype=float)
    if ts.max() - ts.min() < 10.0 - 1e-9:
        raise ValueError("pair grid must span a height range of at least 10")
    ws = np.exp(-ts)[:, None] * seps[None, :]
    if ws.max() < 4.0 - 1e-9 or ws.min() > 0.02:
        raise ValueError("pair grid must cover horocyclic separations (0, 4]")

    x_left = -seps.max() / 2.0
    dim = F.n - 1
    dvals = np.zeros_like(ws)
    for i, t in enumerate(ts):
        x0 = np.zeros(dim)
        x0[0] = x_left
        if F.kind == "mesh":
            src = F.map_point(x0, t)
            tgts = []
            for sep in seps:
                xi = x0.copy()
                xi[0] += sep
                tgts.append(F.map_point(xi, t))
            dvals[i] = F.target.distances_from(src, tgts)
        else:
            a = F.map_point(x0, t)
            rows = []
            for sep in seps:
                xi = x0.copy()
                xi[0] += sep
                rows.append(_coords_row(F.map_point(xi, t)))
            dvals[i] = _pairwise_rows(F.target, _coords_row(a)[None, :], np.array(rows))[0]

    qualifying = ws < epsilon
    if not np.any(qualifying):
        raise ValueError("no sampled pair qualifies below epsilon")
    R = float(dvals[qualifying].max())

    bound = (R / epsilon) * ws + R
    bad = dvals > bound + 1e-9
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise CertificationError(
            "linear fellow-traveling bound violated at "
            f"t={ts[i]:.6g}, separation={seps[j]:.6g}: "
            f"d={dvals[i, j]:.6g} > {bound[i, j]:.6g}"
        )
    if record is not None:
        k = np.unravel_index(np.argmax(np.where(qualifying, dvals, -np.inf)), ws.shape)
        record["R_witness"] = {"t": float(ts[k[0]]), "separation": float(seps[k[1]]),
                               "w": float(ws[k]), "d": R}
        record["pair_w_range"] = [float(ws.min()), float(ws.max())]
    return float(epsilon), R


def _coords_row(p) -> np.ndarray:
    if isinstance(p, HPoint):
        return p.coords()
    return np.asarray(p, dtype=float)


# ---------------------------------------------------------------------------
# divergence (finite proxy for the asymptotic property)

def check_divergence(
    F: PencilEmbedding,
    schedule,
    R: float = 0.0,
    record: dict | None = None,
) -> bool:
    """True iff image distances grow along a schedule of increasing
    horocyclic separation.

    The schedule must sweep w = e^{-t} |x - x'| through at least four
    decades.  The finite-range criterion: the sequence never dips more than
    the noise floor 2R below its running maximum, and the total growth
    exceeds max(2R, 1).  This is a proxy for the limit statement and is
    recorded as empirical in the certificate.
    """
    ws, ds = [], []
    for (x, xp, t) in schedule:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        xp = np.atleast_1d(np.asarray(xp, dtype=float))
        w = float(np.linalg.norm(xp - x) * math.exp(-t))
        a = F.map_point(x, t)
        b = F.map_point(xp, t)
        if F.kind == "mesh":
            d = float(F.target.distances_from(a, [b])[0])
        else:
            d = float(_pairwise_rows(F.target, _coords_row(a)[None, :],
                                     _coords_row(b)[None, :])[0, 0])
        ws.append(w)
        ds.append(d)
    ws = np.asarray(ws)
    ds = np.asarray(ds)
    order = np.argsort(ws)
    ws, ds = ws[order], ds[order]
    if ws[0] <= 0 or ws[-1] / ws[0] < 1e4 * (1 - 1e-9):
        raise ValueError("divergence schedule must sweep at least 4 decades")
    runmax = np.maximum.accumulate(ds)
    monotone = bool(np.all(ds >= runmax - 2.0 * R - 1e-9))
    growth = float(ds.max() - ds[0])
    ok = monotone and growth >= max(2.0 * R, 1.0)
    if record is not None:
        record["divergence_trace"] = {"w": ws.tolist(), "d": ds.tolist(),
                                      "growth": growth, "monotone": monotone}
    return ok


def divergence_schedule(F: PencilEmbedding, grid: GridBundle):
    sep = grid.divergence_separation
    x, xp = _embed_pair(F, sep)
    return [(x, xp, float(t)) for t in grid.divergence_t_values]


# ---------------------------------------------------------------------------
# displaced height and its uniform bound

def displaced_height(
    F: PencilEmbedding,
    T: VerticalTriangle,
    Delta: float,
    grid: GridBundle | None = None,
    record: dict | None = None,
) -> float:
    """Lowest height at which one image side comes within Delta of the other.

    Scans downward from the midpoint height, then refines by bisection
    (tolerance 1e-3) on exact targets; mesh targets resolve to one layer.
    Asserts the midpoint bound h_T <= t(r) and the 3*Delta proximity of the
    two sides at the displaced height.
    """
    grid = grid or default_grids(F)
    tr = T.midpoint_height
    x = np.asarray(T.side_p.x, dtype=float)[: F.n - 1]
    xp = np.asarray(T.side_q.x, dtype=float)[: F.n - 1]

    if F.kind == "mesh":
        h_T = _displaced_mesh(F, x, xp, tr, Delta, grid)
    else:
        h_T = _displaced_rows(F, x, xp, tr, Delta, grid)

    if h_T > tr + 1e-9:
        raise CertificationError(
            f"displaced height {h_T:.6g} exceeds the midpoint height {tr:.6g}"
        )
    # proximity of the sides at the displaced height
    a = F.map_point(x, h_T)
    b = F.map_point(xp, h_T)
    if F.kind == "mesh":
        d_ab = float(F.target.distances_from(a, [b])[0])
    else:
        d_ab = float(_pairwise_rows(F.target, _coords_row(a)[None, :],
                                    _coords_row(b)[None, :])[0, 0])
    if d_ab > 3.0 * Delta + 1e-9:
        raise CertificationError(
            f"sides are {d_ab:.6g} apart at the displaced height; "
            f"bound 3*Delta = {3 * Delta:.6g}"
        )
    if record is not None:
        record.setdefault("slim_above", []).append(
            {"separation": float(np.linalg.norm(xp - x)), "h_T": h_T,
             "midpoint_height": tr, "d_at_h": d_ab, "bound": 3.0 * Delta}
        )
    return h_T


def _side_distance_rows(F, x_from, x_to, t, t_lo, t_hi, n_scan=481):
    """min_s d_X(F(x_from, t), F(x_to, s)) on a closed-form target.

    Exact hyperbolic targets use the perpendicular-foot formula for the
    distance to a height window of a vertical line.  Other targets fall back
    to a grid scan over s refined by golden-section; the distance along a
    geodesic from a fixed point is convex, so the refinement is safe.
    """
    target = F.target
    if isinstance(target, ExactHyperbolicSpace):
        prow = _coords_row(F.map_point(x_from, t))
        qrow = _coords_row(F.map_point(x_to, 0.0))
        return float(
            vertical_line_distance(
                prow[None, :-1], prow[-1], qrow[:-1], t_lo=t_lo, t_hi=t_hi
            )[0]
        )
    p = _coords_row(F.map_point(x_from, t))[None, :]
    svals = np.linspace(t_lo, t_hi, n_scan)
    rows = np.array([_coords_row(F.map_point(x_to, s)) for s in svals])
    dvals = _pairwise_rows(target, p, rows)[0]
    j = int(np.argmin(dvals))
    lo = svals[max(0, j - 1)]
    hi = svals[min(n_scan - 1, j + 1)]

    def fval(s):
        row = _coords_row(F.map_point(x_to, s))[None, :]
        return float(_pairwise_rows(target, p, row)[0, 0])

    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc, fd = fval(c), fval(d)
    while b - a > 1e-6:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = fval(c)
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = fval(d)
    return min(fc, fd, float(dvals[j]))


def _displaced_rows(F, x, xp, tr, Delta, grid):
    t_lo, t_hi = -grid.depth, grid.side_top

    def close(t):
        dpq = _side_distance_rows(F, x, xp, t, t_lo, t_hi)
        if dpq <= Delta:
            return True
        dqp = _side_distance_rows(F, xp, x, t, t_lo, t_hi)
        return dqp <= Delta

    if not close(tr):
        raise CertificationError(
            f"sides not within Delta at the midpoint height t(r)={tr:.6g}"
        )
    step = 0.5
    t = tr
    floor = max(tr - grid.scan_margin, t_lo)
    while t - step >= floor:
        if not close(t - step):
            break
        t -= step
    else:
        raise CertificationError(
            "displaced-height scan hit the truncation depth while the sides "
            "were still close; deepen the sampling range"
        )
    hi, lo = t, t - step  # close at hi, not close at lo
    while hi - lo > 1e-3:
        mid = 0.5 * (hi + lo)
        if close(mid):
            hi = mid
        else:
            lo = mid
    return hi


def _displaced_mesh(F, x, xp, tr, Delta, grid):
    target = F.target
    floor = _mesh_floor(F, tr, grid)
    top = min(grid.side_top, F.domain["t"][1] if F.domain else grid.side_top)
    ids_p = F.vertical_image(x, np.array([floor, top])).vertex_ids
    ids_q = F.vertical_image(xp, np.array([floor, top])).vertex_ids
    if ids_p[0] == ids_q[0]:
        raise CertificationError("triangle collapses to one mesh column")
    field_q = _mesh_field(target, ids_q)[np.asarray(ids_p)]
    field_p = _mesh_field(target, ids_p)[np.asarray(ids_q)]
    close = np.minimum(field_q, field_p) <= Delta
    heights = floor + target.resolution * np.arange(len(ids_p))
    k_r = int(np.clip(round((tr - floor) / target.resolution), 0, len(ids_p) - 1))
    if not close[k_r]:
        raise CertificationError(
            f"sides not within Delta at the midpoint height t(r)={tr:.6g}"
        )
    below = np.flatnonzero(~close[: k_r + 1])
    if len(below) == 0:
        raise CertificationError(
            "displaced-height scan hit the mesh floor while the sides were "
            "still close; deepen the mesh"
        )
    first_true = int(below[-1]) + 1
    return float(heights[first_true])


def estimate_C0(
    F: PencilEmbedding,
    grid: GridBundle,
    Delta: float,
    record: dict | None = None,
) -> float:
    """Max over the triangle grid of t(r) - h_T, with the witness triangle.

    The grid must span three decades of separations; separations that mesh
    snapping collapses onto one column are degenerate (single-geodesic) and
    contribute nothing.
    """
    seps = [s for s in grid.triangle_separations if s > 0]
    if max(seps) / min(seps) < 1e3 * (1 - 1e-9):
        raise ValueError("triangle grid must span at least 3 decades of separations")
    best = -math.inf
    witness = None
    degenerate = []
    for sep in seps:
        x, xp = _embed_pair(F, sep)
        if F.kind == "mesh" and _mesh_pair_degenerate(F, x, xp):
            degenerate.append(sep)
            continue
        T = vertical_triangle(x, xp)
        h_T = displaced_height(F, T, Delta, grid, record=record)
        gap = T.midpoint_height - h_T
        if gap > best:
            best = gap
            witness = sep
    if best == -math.inf:
        raise CertificationError("every sampled triangle was degenerate")
    if record is not None:
        record["C0_witness_separation"] = witness
        record["C0_degenerate_separations"] = degenerate
    return float(best)


# ---------------------------------------------------------------------------
# assembling the certificate

def compute_K(est: HypothesisEstimates, C0: float, grids: dict | None = None,
              witnesses: dict | None = None) -> Certificate:
    """Derived constants and the aggregate almost-isometry bound.

    K1 combines the two estimate chains of the shallow case (both points
    within C1 of the displaced height); K2 the upper chain against the deep
    lower bound 2 t(r) - t(p) - t(q) - 7 Delta - 4 C0.
    """
    if not est.divergence_ok:
        raise CertificationError(
            "divergence check failed: no certificate can be issued"
        )
    Delta = derived_Delta(est.delta, est.epsilon, est.R)
    C1 = 2.0 * C0 + 5.0 * Delta + 1.0
    ratio = 2.0 * est.R / est.epsilon + est.R
    K1 = 2.0 * (C0 + C1) + ratio + 2.0
    K2 = 7.0 * Delta + 4.0 * C0 + 2.0 * est.delta + ratio + 2.0
    K = max(K1, K2)
    return Certificate(
        estimates=est,
        C0=C0,
        Delta=Delta,
        C1=C1,
        K1=K1,
        K2=K2,
        K=K,
        grids=grids or {},
        witnesses=witnesses or {},
    )


def verify_almost_isometry(
    F: PencilEmbedding,
    cert: Certificate,
    pairs: int,
    seed: int = 0,
    grid: GridBundle | None = None,
    threads: int = 1,
):
    """Sample random domain pairs and record sup |d_X(F p, F q) - d_H(p, q)|.

    Returns the completed certificate and the per-pair table
    (d_H, d_X, discrepancy).  Mesh targets batch pairs by shared source
    point, one shortest-path run per source.
    """
    grid = grid or default_grids(F)
    rng = np.random.default_rng(seed)
    dim = F.n - 1
    x_lo, x_hi = grid.verify_x_range
    t_lo, t_hi = grid.verify_t_range

    if F.kind == "mesh":
        n_src = max(1, int(math.ceil(pairs / 40)))
        per = int(math.ceil(pairs / n_src))
        rows = []
        jobs = []
        for _ in range(n_src):
            xs = rng.uniform(x_lo, x_hi, size=(1 + per, dim))
            ts = rng.uniform(t_lo, t_hi, size=1 + per)
            jobs.append((xs, ts))

        def run(job):
            xs, ts = job
            try:
                src = F.map_point(xs[0], ts[0])
                tgts = [F.map_point(xs[1 + i], ts[1 + i]) for i in range(per)]
            except ValueError as err:
                raise ValueError(f"mesh range violation while sampling: {err}") from err
            dx = F.target.distances_from(src, tgts)
            dh = distance_arrays(
                np.tile(xs[0], (per, 1)), np.full(per, ts[0]), xs[1:], ts[1:]
            )
            return np.column_stack([dh, dx])

        if threads > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=threads) as ex:
                results = list(ex.map(run, jobs))
        else:
            results = [run(j) for j in jobs]
        table = np.vstack(results)[:pairs]
    else:
        xs1 = rng.uniform(x_lo, x_hi, size=(pairs, dim))
        xs2 = rng.uniform(x_lo, x_hi, size=(pairs, dim))
        ts1 = rng.uniform(t_lo, t_hi, size=pairs)
        ts2 = rng.uniform(t_lo, t_hi, size=pairs)
        rows1 = np.array([_coords_row(F.map_point(xs1[i], ts1[i])) for i in range(pairs)])
        rows2 = np.array([_coords_row(F.map_point(xs2[i], ts2[i])) for i in range(pairs)])
        if isinstance(F.target, ExactHyperbolicSpace):
            dx = distance_arrays(rows1[:, :-1], rows1[:, -1], rows2[:, :-1], rows2[:, -1])
        else:
            dx = np.array([
                _pairwise_rows(F.target, rows1[i][None, :], rows2[i][None, :])[0, 0]
                for i in range(pairs)
            ])
        dh = distance_arrays(xs1, ts1, xs2, ts2)
        table = np.column_stack([dh, dx])

    disc = np.abs(table[:, 1] - table[:, 0])
    sup = float(disc.max())
    table = np.column_stack([table, disc])
    out = replace(
        cert,
        empirical_sup_discrepancy=sup,
        pairs_tested=len(table),
        passed=bool(sup <= cert.K),
    )
    return out, table


def certify_embedding(
    F: PencilEmbedding,
    grid: GridBundle | None = None,
    pairs: int = 1000,
    seed: int = 0,
    epsilon: float = 1.0,
    threads: int = 1,
):
    """Run the full pipeline: estimates, derived constants, verification.

    Returns (certificate, pair_table, record).  Raises CertificationError
    when a hypothesis check fails (for example the constant control failing
    divergence).
    """
    grid = grid or default_grids(F)
    record: dict = {}
    delta = estimate_delta(F, grid, record=record)
    eps, R = estimate_eps_R(F, grid, epsilon=epsilon, record=record)
    ok = check_divergence(F, divergence_schedule(F, grid), R=R, record=record)
    est = HypothesisEstimates(delta, eps, R, ok, sample_spec=grid.describe())
    if not ok:
        raise CertificationError(
            "divergence check failed: image distances do not grow along the "
            "schedule (see record['divergence_trace'])"
        )
    Delta = derived_Delta(delta, eps, R)
    C0 = estimate_C0(F, grid, Delta, record=record)
    cert = compute_K(est, C0, grids=grid.describe(), witnesses=_json_safe(record))
    cert, table = verify_almost_isometry(F, cert, pairs, seed=seed, grid=grid,
                                         threads=threads)
    return cert, table, record


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


# ---------------------------------------------------------------------------
# four-point probe

def hyperbolicity_probe(
    space: TargetSpace,
    quadruples: int,
    rng=None,
    box: float = 8.0,
    pool: int = 28,
) -> float:
    """Max four-point defect over sampled quadruples.

    The defect of (a, b, c, d) is (s1 - s2)/2 where s1 >= s2 >= s3 are the
    three pairings d(a,b)+d(c,d), d(a,c)+d(b,d), d(a,d)+d(b,c).  Trees give
    exactly 0; flat targets grow with the sampling box.
    """
    if quadruples < 100:
        raise ValueError("probe needs at least 100 quadruples")
    rng = rng or np.random.default_rng(0)
    D = _probe_matrix(space, rng, box, pool)
    n = len(D)
    idx = rng.integers(0, n, size=(quadruples, 4))
    good = np.array([len(set(row)) == 4 for row in idx])
    idx = idx[good]
    a, b, c, d = idx[:, 0], idx[:, 1], idx[:, 2], idx[:, 3]
    s = np.stack([D[a, b] + D[c, d], D[a, c] + D[b, d], D[a, d] + D[b, c]])
    s.sort(axis=0)
    return float(((s[2] - s[1]) / 2.0).max())


def _probe_matrix(space, rng, box, pool):
    if isinstance(space, ExactHyperbolicSpace):
        xs = rng.uniform(-box / 2, box / 2, size=(pool, space.dim - 1))
        ts = rng.uniform(-box / 2, box / 2, size=pool)
        rows = np.column_stack([xs, ts])
        return _pairwise_rows(space, rows, rows)
    if isinstance(space, StarSpace):
        # dyadic offsets keep every pairing sum exact in binary floats
        pts = []
        for leg in range(space.legs):
            for k in range(1, 9):
                pts.append((leg, k * space.leg_length / 8.0))
        pts = [pts[i] for i in rng.permutation(len(pts))[:pool]]
        rows = np.array(pts, dtype=float)
        return _pairwise_rows(space, rows, rows)
    mesh = space.mesh if hasattr(space, "mesh") else space
    if isinstance(mesh, MeshSpace):
        verts = _interior_vertices(mesh)
        pick = verts[rng.permutation(len(verts))[:pool]]
        D = np.zeros((len(pick), len(pick)))
        for i, v in enumerate(pick):
            D[i] = mesh.distances_from(int(v), pick)
        return D
    raise TypeError(f"no probe sampler for {type(space).__name__}")


def _interior_vertices(mesh: MeshSpace) -> np.ndarray:
    v = mesh.vertices
    lo = v.min(axis=0)
    hi = v.max(axis=0)
    margin = np.minimum(0.1 * (hi - lo), 10 * mesh.resolution)
    mask = np.all((v >= lo + margin) & (v <= hi - margin), axis=1)
    idx = np.flatnonzero(mask)
    return idx if len(idx) >= 8 else np.arange(len(v))


def probe_sweep(space_factory, sizes, quadruples: int, seed: int = 0):
    """Probe a family of growing boxes; returns [(size, defect)] rows."""
    rows = []
    for i, size in enumerate(sizes):
        rng = np.random.default_rng(seed + i)
        space = space_factory(size)
        rows.append((float(size), hyperbolicity_probe(space, quadruples, rng=rng,
                                                      box=size)))
    return rows


def sweep_flags_nonhyperbolic(rows) -> bool:
    """Strictly increasing defects with real growth flag a non-hyperbolic target."""
    vals = [r[1] for r in rows]
    if len(vals) < 3:
        return False
    increasing = all(b > a for a, b in zip(vals, vals[1:]))
    grew = vals[-1] > max(1.5 * vals[0], vals[0] + 0.1)
    return increasing and grew
