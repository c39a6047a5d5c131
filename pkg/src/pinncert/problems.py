"""Concrete PDE problem definitions and residual evaluators.

Three families are implemented on axis-aligned space-time boxes:

* semilinear heat:  u_t = lap(u) + f(u), Dirichlet boundary data
* viscous scalar conservation law (1D):  u_t + f(u)_x = nu u_xx
* incompressible Euler (2D):  u_t + (u.grad)u + grad p = f, div u = 0

Residual evaluators are written against a generic "jet source" - a
callable (points, order) -> (value, grad, hess) - so the same formulas
run on plain numpy jets (networks or closed-form solutions) and on tape
variables during training.  Points are (N, d+1) arrays ordered
(x_1..x_d, t).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .network import NetworkParams, forward, forward_jet
from .quadrature import Geometry, TrainingSet
from .tape import Var, apply_scalar, vsum


class BoundaryKind(str, enum.Enum):
    DIRICHLET0 = "dirichlet0"
    PERIODIC = "periodic"
    NO_PENETRATION = "no_penetration"


@dataclass(frozen=True)
class FluxSpec:
    """Scalar flux f with derivatives; sonic_point is the minimizer of a
    convex flux (None for monotone fluxes), used by the upwind reference
    solver."""

    f: Callable
    f_prime: Callable
    f_second: Callable
    sonic_point: Optional[float] = None


@dataclass(frozen=True)
class SourceTerm:
    """Pointwise source u -> f(u) with its derivative (for backprop)."""

    f: Callable
    f_prime: Callable


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    family: str                  # "heat" | "conservation" | "euler"
    geometry: Geometry
    output_dim: int
    boundary_kind: BoundaryKind
    initial_data: Callable       # (N, d) -> (N, m) values at t = 0
    dirichlet_data: Optional[Callable] = None    # (N, d+1) -> (N,) boundary trace
    exact_solution: Optional[Callable] = None    # (N, d+1) -> (N, m)
    exact_jet: Optional[Callable] = None         # jet source of the exact solution
    nu: float = 0.0
    flux: Optional[FluxSpec] = None
    source: Optional[SourceTerm] = None
    forcing: Optional[Callable] = None           # (N, d+1) -> (N, d), Euler only
    params: dict = field(default_factory=dict)

    @property
    def spatial_dim(self) -> int:
        return self.geometry.d

    @property
    def t_final(self) -> float:
        return self.geometry.t_final


@dataclass
class ResidualBundle:
    """Per-point residual components.

    Each group is a tuple of per-point streams sharing one weight vector,
    except the spatial boundary, whose streams (one per face block or per
    periodic pair family and output component) carry their own weights.
    """

    interior: tuple
    temporal_boundary: tuple
    spatial_boundary: tuple
    sb_weights: tuple
    divergence: object = None


def network_jet_source(params: NetworkParams):
    """Jet source backed by a trained/initialized network."""

    def src(points: np.ndarray, order: int):
        if order == 0:
            return forward(params, points), None, None
        jet = forward_jet(params, points, need_hess=(order == 2))
        return jet.value, jet.grad, jet.hess_diag

    return src


def _sum_axis1(x):
    if isinstance(x, Var):
        return vsum(x, axis=1)
    return np.sum(x, axis=1)


def _sb_streams_scalar(jet_source, spec: ProblemSpec, sets: TrainingSet):
    """Dirichlet boundary streams u - g for scalar problems, per face block."""
    pts = sets.spatial_boundary.points
    w = sets.spatial_boundary.weights
    g = spec.dirichlet_data(pts) if spec.dirichlet_data is not None else np.zeros(len(pts))
    streams = []
    weights = []
    for axis, side in _face_blocks(sets):
        m = _face_mask(sets, axis, side)
        u, _, _ = jet_source(pts[m], 0)
        streams.append(u[:, 0] - g[m])
        weights.append(w[m])
    return tuple(streams), tuple(weights)


def _face_blocks(sets: TrainingSet):
    seen = []
    for axis, side in sets.sb_faces:
        if (axis, side) not in seen:
            seen.append((int(axis), int(side)))
    return seen


def _face_mask(sets: TrainingSet, axis: int, side: int) -> np.ndarray:
    return (sets.sb_faces[:, 0] == axis) & (sets.sb_faces[:, 1] == side)


def heat_residuals(jet_source, spec: ProblemSpec, sets: TrainingSet) -> ResidualBundle:
    """Interior u_t - lap(u) - f(u); boundary u - g; initial u(.,0) - u0."""
    d = spec.spatial_dim
    value, grad, hess = jet_source(sets.interior.points, 2)
    u = value[:, 0]
    r_int = grad[:, 0, d] - _sum_axis1(hess[:, 0, :d])
    if spec.source is not None:
        r_int = r_int - apply_scalar(u, spec.source.f, spec.source.f_prime)

    tb_pts = sets.temporal_boundary.points
    u0 = spec.initial_data(tb_pts[:, :d])[:, 0]
    utb, _, _ = jet_source(tb_pts, 0)
    r_tb = utb[:, 0] - u0

    sb, sb_w = _sb_streams_scalar(jet_source, spec, sets)
    return ResidualBundle((r_int,), (r_tb,), sb, sb_w)


def conservation_law_residuals(jet_source, spec: ProblemSpec, sets: TrainingSet) -> ResidualBundle:
    """Interior u_t + f'(u) u_x - nu u_xx (chain-rule form of d_x f(u))."""
    flux = spec.flux
    order = 2 if spec.nu != 0.0 else 1
    value, grad, hess = jet_source(sets.interior.points, order)
    u = value[:, 0]
    fp = apply_scalar(u, flux.f_prime, flux.f_second)
    r_int = grad[:, 0, 1] + fp * grad[:, 0, 0]
    if spec.nu != 0.0:
        r_int = r_int - spec.nu * hess[:, 0, 0]

    tb_pts = sets.temporal_boundary.points
    u0 = spec.initial_data(tb_pts[:, :1])[:, 0]
    utb, _, _ = jet_source(tb_pts, 0)
    r_tb = utb[:, 0] - u0

    sb, sb_w = _sb_streams_scalar(jet_source, spec, sets)
    return ResidualBundle((r_int,), (r_tb,), sb, sb_w)


def euler_residuals(jet_source, spec: ProblemSpec, sets: TrainingSet) -> ResidualBundle:
    """Velocity residual u_t + (u.grad)u + grad p - f and divergence residual.

    The network output is (u, v, p).  Periodic boundaries contribute the
    value mismatch of the velocity components across paired faces;
    no-penetration boundaries contribute u.n.  The initial-data residual
    covers the velocity components only.
    """
    d = spec.spatial_dim
    pts = sets.interior.points
    value, grad, _ = jet_source(pts, 1)
    f_val = spec.forcing(pts) if spec.forcing is not None else None

    r_vel = []
    for i in range(d):
        r = grad[:, i, d]                       # d u_i / dt
        for j in range(d):
            r = r + value[:, j] * grad[:, i, j]
        r = r + grad[:, d, i]                   # pressure gradient
        if f_val is not None:
            r = r - f_val[:, i]
        r_vel.append(r)
    r_div = grad[:, 0, 0]
    for j in range(1, d):
        r_div = r_div + grad[:, j, j]

    tb_pts = sets.temporal_boundary.points
    u0 = spec.initial_data(tb_pts[:, :d])
    vtb, _, _ = jet_source(tb_pts, 0)
    r_tb = tuple(vtb[:, i] - u0[:, i] for i in range(d))

    sb_pts = sets.spatial_boundary.points
    sb_w = sets.spatial_boundary.weights
    streams = []
    weights = []
    if spec.boundary_kind == BoundaryKind.PERIODIC:
        for axis, _side in _face_blocks(sets):
            m = _face_mask(sets, axis, 0)
            lo_pts = sb_pts[m]
            hi_pts = lo_pts.copy()
            hi_pts[:, axis] = spec.geometry.spatial_bounds[axis, 1]
            v_lo, _, _ = jet_source(lo_pts, 0)
            v_hi, _, _ = jet_source(hi_pts, 0)
            for i in range(d):
                streams.append(v_lo[:, i] - v_hi[:, i])
                weights.append(sb_w[m])
    elif spec.boundary_kind == BoundaryKind.NO_PENETRATION:
        for axis, side in _face_blocks(sets):
            m = _face_mask(sets, axis, side)
            v, _, _ = jet_source(sb_pts[m], 0)
            sign = 1.0 if side == 1 else -1.0
            streams.append(sign * v[:, axis])
            weights.append(sb_w[m])
    else:
        raise ValueError(f"unsupported Euler boundary kind: {spec.boundary_kind}")

    return ResidualBundle(
        tuple(r_vel), r_tb, tuple(streams), tuple(weights), divergence=r_div
    )


def residuals_for(spec: ProblemSpec, jet_source, sets: TrainingSet) -> ResidualBundle:
    if spec.family == "heat":
        return heat_residuals(jet_source, spec, sets)
    if spec.family == "conservation":
        return conservation_law_residuals(jet_source, spec, sets)
    if spec.family == "euler":
        return euler_residuals(jet_source, spec, sets)
    raise ValueError(f"unknown problem family: {spec.family}")


# ---------------------------------------------------------------------------
# closed-form solutions
# ---------------------------------------------------------------------------


def exact_heat_1d(points: np.ndarray) -> np.ndarray:
    """u(x,t) = -sin(pi x) exp(-pi^2 t) on [-1,1] x [0,1]."""
    x, t = points[:, 0], points[:, 1]
    return (-np.sin(np.pi * x) * np.exp(-np.pi**2 * t))[:, None]


def exact_heat_1d_jet(points: np.ndarray, order: int):
    x, t = points[:, 0], points[:, 1]
    decay = np.exp(-np.pi**2 * t)
    u = -np.sin(np.pi * x) * decay
    value = u[:, None]
    if order == 0:
        return value, None, None
    grad = np.stack([-np.pi * np.cos(np.pi * x) * decay, -np.pi**2 * u], axis=1)[:, None, :]
    if order == 1:
        return value, grad, None
    hess = np.stack([np.pi**2 * u, np.pi**4 * u], axis=1)[:, None, :]
    return value, grad, hess


def exact_heat_nd(points: np.ndarray, n: int) -> np.ndarray:
    """u(x,t) = |x|^2/n + 2t on [0,1]^n x [0,1]."""
    x, t = points[:, :-1], points[:, -1]
    return (np.sum(x * x, axis=1) / n + 2.0 * t)[:, None]


def exact_heat_nd_jet(n: int):
    def src(points: np.ndarray, order: int):
        x = points[:, :-1]
        value = exact_heat_nd(points, n)
        if order == 0:
            return value, None, None
        grad = np.concatenate([2.0 * x / n, 2.0 * np.ones((len(x), 1))], axis=1)[:, None, :]
        if order == 1:
            return value, grad, None
        hess = np.concatenate(
            [np.full_like(x, 2.0 / n), np.zeros((len(x), 1))], axis=1
        )[:, None, :]
        return value, grad, hess

    return src


def taylor_vortex_initial(points_xy: np.ndarray, a_x: float, a_y: float) -> np.ndarray:
    """Initial velocity of the translating Gaussian vortex."""
    x, y = points_xy[:, 0], points_xy[:, 1]
    E = np.exp(0.5 * (1.0 - x * x - y * y))
    return np.stack([-y * E + a_x, x * E + a_y], axis=1)


def exact_taylor_vortex(points: np.ndarray, a_x: float, a_y: float) -> np.ndarray:
    """Exact (u, v, p) of the translating vortex.

    The velocity is the initial vortex advected with (a_x, a_y); the
    pressure -exp(1 - r^2)/2 (in the co-moving radius r) makes the
    momentum residual vanish identically.  Pressure is determined up to a
    constant; this gauge decays to 0 far from the vortex core.
    """
    x, y, t = points[:, 0], points[:, 1], points[:, 2]
    xt = x - a_x * t
    yt = y - a_y * t
    E = np.exp(0.5 * (1.0 - xt * xt - yt * yt))
    p = -0.5 * E * E
    return np.stack([-yt * E + a_x, xt * E + a_y, p], axis=1)


def exact_taylor_vortex_jet(a_x: float, a_y: float):
    def src(points: np.ndarray, order: int):
        x, y, t = points[:, 0], points[:, 1], points[:, 2]
        xt = x - a_x * t
        yt = y - a_y * t
        E = np.exp(0.5 * (1.0 - xt * xt - yt * yt))
        E2 = E * E
        value = np.stack([-yt * E + a_x, xt * E + a_y, -0.5 * E2], axis=1)
        if order == 0:
            return value, None, None
        s = xt * a_x + yt * a_y         # d/dt of the co-moving radius term
        grad = np.empty((len(x), 3, 3))
        grad[:, 0, 0] = xt * yt * E
        grad[:, 0, 1] = (yt * yt - 1.0) * E
        grad[:, 0, 2] = a_y * E - yt * E * s
        grad[:, 1, 0] = (1.0 - xt * xt) * E
        grad[:, 1, 1] = -xt * yt * E
        grad[:, 1, 2] = -a_x * E + xt * E * s
        grad[:, 2, 0] = xt * E2
        grad[:, 2, 1] = yt * E2
        grad[:, 2, 2] = -E2 * s
        return value, grad, None

    return src


def rarefaction_initial_data(x: np.ndarray) -> np.ndarray:
    """Step data: 0 for x <= 0, 1 for x > 0."""
    return np.where(np.asarray(x) > 0.0, 1.0, 0.0)


def rarefaction_exact(points: np.ndarray) -> np.ndarray:
    """Self-similar inviscid solution clamp(x/t, 0, 1) of the step problem."""
    x, t = points[:, 0], points[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        v = np.clip(x / np.maximum(t, 1e-300), 0.0, 1.0)
    return np.where(t > 0.0, v, rarefaction_initial_data(x))[:, None]


def burgers_flux() -> FluxSpec:
    return FluxSpec(
        f=lambda u: 0.5 * u * u,
        f_prime=lambda u: u,
        f_second=lambda u: np.ones_like(u),
        sonic_point=0.0,
    )


# ---------------------------------------------------------------------------
# shear-layer field files
# ---------------------------------------------------------------------------


def write_field_file(path, u: np.ndarray, v: np.ndarray, lx: float, ly: float) -> None:
    """Write a periodic velocity grid: header 'nx ny Lx Ly', then one
    'u v' row per node in row-major (x-outer) order; node (i, j) sits at
    (i*Lx/nx, j*Ly/ny)."""
    nx, ny = u.shape
    with open(path, "w") as f:
        f.write(f"{nx} {ny} {lx!r} {ly!r}\n")
        for i in range(nx):
            for j in range(ny):
                f.write(f"{u[i, j]!r} {v[i, j]!r}\n")


def read_field_file(path) -> tuple[np.ndarray, np.ndarray, float, float]:
    with open(path) as f:
        raw = [ln.replace(",", " ").split() for ln in f if ln.strip() and not ln.startswith("#")]
    nx, ny = int(raw[0][0]), int(raw[0][1])
    lx, ly = float(raw[0][2]), float(raw[0][3])
    data = np.array([[float(a), float(b)] for a, b in raw[1:]])
    if len(data) != nx * ny:
        raise ValueError(f"field file holds {len(data)} rows, expected nx*ny = {nx * ny}")
    u = data[:, 0].reshape(nx, ny)
    v = data[:, 1].reshape(nx, ny)
    return u, v, lx, ly


def periodic_bilinear(u_grid: np.ndarray, v_grid: np.ndarray, lx: float, ly: float):
    """Bilinear interpolation of a periodic node grid, nodes at i*Lx/nx."""
    nx, ny = u_grid.shape

    def interp(points_xy: np.ndarray) -> np.ndarray:
        sx = points_xy[:, 0] / lx * nx
        sy = points_xy[:, 1] / ly * ny
        i0 = np.floor(sx).astype(int) % nx
        j0 = np.floor(sy).astype(int) % ny
        i1 = (i0 + 1) % nx
        j1 = (j0 + 1) % ny
        fx = (sx - np.floor(sx))[:, None]
        fy = (sy - np.floor(sy))[:, None]
        c00 = np.stack([u_grid[i0, j0], v_grid[i0, j0]], axis=1)
        c10 = np.stack([u_grid[i1, j0], v_grid[i1, j0]], axis=1)
        c01 = np.stack([u_grid[i0, j1], v_grid[i0, j1]], axis=1)
        c11 = np.stack([u_grid[i1, j1], v_grid[i1, j1]], axis=1)
        return (
            (1 - fx) * (1 - fy) * c00
            + fx * (1 - fy) * c10
            + (1 - fx) * fy * c01
            + fx * fy * c11
        )

    return interp


def classic_shear_layer_field(nx: int, ny: int, rho: float = np.pi / 15.0, delta: float = 0.05):
    """Classic double-shear-layer profile on [0,2pi]^2 (thin layers plus a
    sinusoidal perturbation), sampled on an nx-by-ny node grid."""
    x = 2.0 * np.pi * np.arange(nx) / nx
    y = 2.0 * np.pi * np.arange(ny) / ny
    X, Y = np.meshgrid(x, y, indexing="ij")
    u = np.where(Y <= np.pi, np.tanh((Y - np.pi / 2) / rho), np.tanh((3 * np.pi / 2 - Y) / rho))
    v = delta * np.sin(X)
    return u, v


# ---------------------------------------------------------------------------
# problem factories
# ---------------------------------------------------------------------------


def heat_1d() -> ProblemSpec:
    geom = Geometry(np.array([[-1.0, 1.0]]), 1.0)
    return ProblemSpec(
        name="heat_1d",
        family="heat",
        geometry=geom,
        output_dim=1,
        boundary_kind=BoundaryKind.DIRICHLET0,
        initial_data=lambda x: -np.sin(np.pi * x[:, :1]),
        exact_solution=exact_heat_1d,
        exact_jet=exact_heat_1d_jet,
    )


def heat_nd(n: int) -> ProblemSpec:
    geom = Geometry(np.tile([0.0, 1.0], (n, 1)), 1.0)
    exact = lambda pts: exact_heat_nd(pts, n)
    return ProblemSpec(
        name=f"heat_{n}d",
        family="heat",
        geometry=geom,
        output_dim=1,
        boundary_kind=BoundaryKind.DIRICHLET0,
        initial_data=lambda x: (np.sum(x * x, axis=1) / n)[:, None],
        dirichlet_data=lambda pts: exact_heat_nd(pts, n)[:, 0],
        exact_solution=exact,
        exact_jet=exact_heat_nd_jet(n),
        params={"n": n},
    )


def burgers_sine(nu: float) -> ProblemSpec:
    geom = Geometry(np.array([[-1.0, 1.0]]), 1.0)
    return ProblemSpec(
        name="burgers_sine",
        family="conservation",
        geometry=geom,
        output_dim=1,
        boundary_kind=BoundaryKind.DIRICHLET0,
        initial_data=lambda x: -np.sin(np.pi * x[:, :1]),
        nu=nu,
        flux=burgers_flux(),
        params={"nu": nu},
    )


def burgers_rarefaction(nu: float) -> ProblemSpec:
    geom = Geometry(np.array([[-1.0, 1.0]]), 0.5)
    return ProblemSpec(
        name="burgers_rarefaction",
        family="conservation",
        geometry=geom,
        output_dim=1,
        boundary_kind=BoundaryKind.DIRICHLET0,
        initial_data=lambda x: rarefaction_initial_data(x[:, 0])[:, None],
        dirichlet_data=lambda pts: np.where(pts[:, 0] > 0.0, 1.0, 0.0),
        nu=nu,
        flux=burgers_flux(),
        params={"nu": nu},
    )


def taylor_vortex(a_x: float = 4.0, a_y: float = 0.0, t_final: float = 1.0) -> ProblemSpec:
    geom = Geometry(np.array([[-8.0, 8.0], [-8.0, 8.0]]), t_final, periodic=True)
    return ProblemSpec(
        name="taylor_vortex",
        family="euler",
        geometry=geom,
        output_dim=3,
        boundary_kind=BoundaryKind.PERIODIC,
        initial_data=lambda xy: taylor_vortex_initial(xy, a_x, a_y),
        exact_solution=lambda pts: exact_taylor_vortex(pts, a_x, a_y),
        exact_jet=exact_taylor_vortex_jet(a_x, a_y),
        params={"a_x": a_x, "a_y": a_y},
    )


def double_shear_layer(field_file, t_final: float = 1.0) -> ProblemSpec:
    u, v, lx, ly = read_field_file(field_file)
    geom = Geometry(np.array([[0.0, lx], [0.0, ly]]), t_final, periodic=True)
    return ProblemSpec(
        name="double_shear_layer",
        family="euler",
        geometry=geom,
        output_dim=3,
        boundary_kind=BoundaryKind.PERIODIC,
        initial_data=periodic_bilinear(u, v, lx, ly),
        params={"field_file": str(field_file)},
    )
