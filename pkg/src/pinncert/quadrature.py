"""Training/validation point sets with quadrature weights.

Three node families are available: Sobol low-discrepancy sequences
(Joe-Kuo direction numbers, dimensions up to 100, the all-zeros leading
point skipped), i.i.d. uniform samples from a seeded PCG64 stream, and
composite tensor-product Gauss-Legendre rules.  Sobol and Monte-Carlo
points carry equal weights measure/N; Gauss nodes carry their product
weights.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from . import _sobol_table

_NBITS = 32


class UnsupportedDimensionError(ValueError):
    pass


class EmptyRuleError(ValueError):
    pass


class SamplingKind(str, enum.Enum):
    SOBOL = "sobol"
    MONTE_CARLO = "monte_carlo"
    GAUSS_LEGENDRE = "gauss_legendre"


_NOMINAL_ALPHA = {SamplingKind.SOBOL: 1.0, SamplingKind.MONTE_CARLO: 0.5}


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray       # (N, dbar)
    weights: np.ndarray      # (N,), positive, summing to the domain measure
    kind: SamplingKind
    rate_alpha: float

    @property
    def n(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class Geometry:
    """Axis-aligned space-time box (x_1..x_d, t) with t in (0, t_final).

    periodic=True means spatial boundary collocation pairs opposite faces
    instead of sampling each Dirichlet face separately.
    """

    spatial_bounds: np.ndarray   # (d, 2) rows (lo, hi)
    t_final: float
    periodic: bool = False

    @property
    def d(self) -> int:
        return len(self.spatial_bounds)

    @property
    def extents(self) -> np.ndarray:
        return self.spatial_bounds[:, 1] - self.spatial_bounds[:, 0]

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    def face_measure(self, axis: int) -> float:
        """Measure of one face orthogonal to `axis`."""
        return float(np.prod(np.delete(self.extents, axis))) if self.d > 1 else 1.0

    @property
    def boundary_measure(self) -> float:
        return 2.0 * sum(self.face_measure(a) for a in range(self.d))


@dataclass(frozen=True)
class TrainingSet:
    """Interior / spatial-boundary / temporal-boundary collocation sets.

    All point arrays are (N, d+1) with coordinates (x_1..x_d, t); temporal
    boundary points have t = 0 exactly, spatial boundary points sit on
    their face exactly.  sb_faces[i] = (axis, side) identifies the face of
    spatial boundary point i (side 0 = low face; for periodic geometries
    points sit on the low face and are paired with the opposite one).
    """

    interior: QuadratureRule
    spatial_boundary: QuadratureRule
    temporal_boundary: QuadratureRule
    sb_faces: np.ndarray
    n_int: int
    n_sb: int
    n_tb: int


def _direction_integers(poly: int, m_init, nbits: int = _NBITS) -> np.ndarray:
    deg = poly.bit_length() - 1
    v = np.zeros(nbits + 1, dtype=np.uint64)
    if deg == 0:
        for i in range(1, nbits + 1):
            v[i] = np.uint64(1) << np.uint64(nbits - i)
        return v[1:]
    a = (poly >> 1) & ((1 << (deg - 1)) - 1)
    for i in range(1, deg + 1):
        v[i] = np.uint64(m_init[i - 1]) << np.uint64(nbits - i)
    for i in range(deg + 1, nbits + 1):
        vi = v[i - deg] ^ (v[i - deg] >> np.uint64(deg))
        for k in range(1, deg):
            if (a >> (deg - 1 - k)) & 1:
                vi ^= v[i - k]
        v[i] = vi
    return v[1:]


def sobol(n: int, d: int) -> np.ndarray:
    """First n Sobol points in [0,1]^d, the initial all-zeros point skipped."""
    if not 1 <= d <= _sobol_table.MAX_DIM:
        raise UnsupportedDimensionError(
            f"Sobol direction numbers available for 1 <= d <= {_sobol_table.MAX_DIM}, got {d}"
        )
    if n < 0 or n >= 2**_NBITS:
        raise ValueError(f"invalid point count {n}")
    V = np.stack(
        [_direction_integers(_sobol_table.POLYS[j], _sobol_table.M_INIT[j]) for j in range(d)]
    )
    x = np.zeros(d, dtype=np.uint64)
    out = np.empty((n, d))
    for i in range(n):
        # gray-code update: flip the direction of the lowest zero bit of i
        c = ((~i) & (i + 1)).bit_length() - 1
        x ^= V[:, c]
        out[i] = x
    return out / 2.0**_NBITS


def uniform_random(n: int, d: int, seed: int) -> np.ndarray:
    """n i.i.d. uniform points in [0,1]^d from PCG64(seed)."""
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.random((n, d))


def gauss_legendre_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    """n-point Gauss-Legendre nodes and weights on [-1, 1]."""
    return np.polynomial.legendre.leggauss(n)


def gauss_legendre_composite(
    cells_per_axis: int, nodes_per_cell: int, box: np.ndarray
) -> QuadratureRule:
    """Composite tensor-product Gauss-Legendre rule on an axis-aligned box.

    box is (d, 2) with rows (lo, hi); weights sum to the box volume and any
    polynomial of per-axis degree <= 2*nodes_per_cell - 1 is integrated
    exactly.
    """
    box = np.atleast_2d(np.asarray(box, dtype=float))
    d = len(box)
    if d > 4:
        raise UnsupportedDimensionError(f"grid-based quadrature limited to d <= 4, got {d}")
    if cells_per_axis < 1 or nodes_per_cell < 1:
        raise EmptyRuleError("cells_per_axis and nodes_per_cell must be >= 1")
    xi, om = gauss_legendre_nodes(nodes_per_cell)
    axis_nodes = []
    axis_weights = []
    for lo, hi in box:
        h = (hi - lo) / cells_per_axis
        edges = lo + h * np.arange(cells_per_axis)
        nodes = (edges[:, None] + (xi + 1.0) * (h / 2.0)).ravel()
        weights = np.tile(om * (h / 2.0), cells_per_axis)
        axis_nodes.append(nodes)
        axis_weights.append(weights)
    grids = np.meshgrid(*axis_nodes, indexing="ij")
    wgrids = np.meshgrid(*axis_weights, indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.prod(np.stack([w.ravel() for w in wgrids], axis=1), axis=1)
    return QuadratureRule(points, weights, SamplingKind.GAUSS_LEGENDRE, 2.0 * nodes_per_cell / d)


def _unit_points(kind: SamplingKind, n: int, d: int, rng_seed: int, offset: int = 0) -> np.ndarray:
    """n points in [0,1]^d; `offset` skips ahead in the Sobol sequence."""
    if kind == SamplingKind.SOBOL:
        return sobol(n + offset, d)[offset:]
    if kind == SamplingKind.MONTE_CARLO:
        return uniform_random(n + offset, d, rng_seed)[offset:]
    raise ValueError(f"no unit-cube stream for kind {kind}")


def _scale(unit: np.ndarray, box: np.ndarray) -> np.ndarray:
    lo, hi = box[:, 0], box[:, 1]
    return lo + unit * (hi - lo)


def _apportion(n: int, measures: np.ndarray) -> np.ndarray:
    """Split n into parts proportional to measures (largest remainder)."""
    ideal = n * measures / measures.sum()
    parts = np.floor(ideal).astype(int)
    rem = n - parts.sum()
    order = np.argsort(-(ideal - parts))
    parts[order[:rem]] += 1
    return parts


def _gauss_layout(n: int, d: int) -> tuple[int, int]:
    """Pick (cells_per_axis, nodes_per_cell) giving roughly n tensor nodes."""
    nodes = 4
    cells = max(1, round((n / nodes**d) ** (1.0 / d)))
    return cells, nodes


def build_training_set(
    geometry: Geometry,
    n_int: int,
    n_sb: int,
    n_tb: int,
    kind: SamplingKind,
    seed: int = 0,
) -> TrainingSet:
    """Collocation sets for a space-time box problem.

    Sobol and Monte-Carlo points get equal weights measure/N.  Spatial
    boundary points are spread over faces proportionally to face measure
    (over low faces only for periodic geometries, where each point stands
    for a pair of opposite-face points and the rule measure is half the
    boundary measure).  Gauss-Legendre counts are rounded to the nearest
    tensor-product layout.
    """
    if n_int <= 0 or n_sb <= 0 or n_tb <= 0:
        raise EmptyRuleError(f"point counts must be positive, got {(n_int, n_sb, n_tb)}")
    kind = SamplingKind(kind)
    d = geometry.d
    T = geometry.t_final
    seeds = np.random.SeedSequence(seed).spawn(3)
    int_seed, sb_seed, tb_seed = (int(s.generate_state(1)[0]) for s in seeds)

    st_box = np.vstack([geometry.spatial_bounds, [0.0, T]])
    if kind == SamplingKind.GAUSS_LEGENDRE:
        interior = gauss_legendre_composite(*_gauss_layout(n_int, d + 1), st_box)
    else:
        pts = _scale(_unit_points(kind, n_int, d + 1, int_seed), st_box)
        w = np.full(n_int, geometry.volume * T / n_int)
        interior = QuadratureRule(pts, w, kind, _NOMINAL_ALPHA[kind])

    axes = np.arange(d)
    sides = (0,) if geometry.periodic else (0, 1)
    face_list = [(a, s) for a in axes for s in sides]
    measures = np.array([geometry.face_measure(a) * T for a, s in face_list])
    counts = _apportion(n_sb, measures)
    sb_pts, sb_w, sb_face_ids = [], [], []
    offset = 0
    for (axis, side), cnt, meas in zip(face_list, counts, measures):
        if cnt == 0:
            continue
        par_box = np.vstack([np.delete(geometry.spatial_bounds, axis, axis=0), [0.0, T]])
        if kind == SamplingKind.GAUSS_LEGENDRE:
            rule = gauss_legendre_composite(*_gauss_layout(cnt, d), par_box)
            par, w = rule.points, rule.weights
        else:
            par = _scale(_unit_points(kind, cnt, d, sb_seed, offset), par_box)
            w = np.full(cnt, meas / cnt)
            offset += cnt
        full = np.empty((len(par), d + 1))
        full[:, np.delete(np.arange(d), axis)] = par[:, :-1]
        full[:, d] = par[:, -1]
        full[:, axis] = geometry.spatial_bounds[axis, side]
        sb_pts.append(full)
        sb_w.append(w)
        sb_face_ids.append(np.tile([axis, side], (len(par), 1)))
    spatial_boundary = QuadratureRule(
        np.concatenate(sb_pts),
        np.concatenate(sb_w),
        kind,
        _NOMINAL_ALPHA.get(kind, 0.0),
    )
    sb_faces = np.concatenate(sb_face_ids)

    if kind == SamplingKind.GAUSS_LEGENDRE:
        rule = gauss_legendre_composite(*_gauss_layout(n_tb, d), geometry.spatial_bounds)
        tb_x, tb_w = rule.points, rule.weights
    else:
        tb_x = _scale(_unit_points(kind, n_tb, d, tb_seed), geometry.spatial_bounds)
        tb_w = np.full(n_tb, geometry.volume / n_tb)
    tb_pts = np.hstack([tb_x, np.zeros((len(tb_x), 1))])
    temporal_boundary = QuadratureRule(tb_pts, tb_w, kind, _NOMINAL_ALPHA.get(kind, 0.0))

    return TrainingSet(
        interior,
        spatial_boundary,
        temporal_boundary,
        sb_faces,
        interior.n,
        spatial_boundary.n,
        temporal_boundary.n,
    )


def dump_training_set_csv(ts: TrainingSet, path) -> None:
    """Write all collocation points as rows (t, x_1..x_d, weight, set)."""
    d = ts.interior.points.shape[1] - 1
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t"] + [f"x{i + 1}" for i in range(d)] + ["weight", "set"])
        for tag, rule in (
            ("int", ts.interior),
            ("sb", ts.spatial_boundary),
            ("tb", ts.temporal_boundary),
        ):
            for p, w in zip(rule.points, rule.weights):
                writer.writerow([repr(p[-1])] + [repr(v) for v in p[:-1]] + [repr(w), tag])
