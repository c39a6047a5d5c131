"""Measured errors and computable a-posteriori error bounds.

Beyond plain training/generalization error reports, this module evaluates
the certification machinery for trained networks:

* for the heat family, the random-training-points bound assembled from
  cumulative (averaged over K independent training draws) component
  training errors, squared validation gaps, and Monte-Carlo quadrature
  error estimates based on sampled standard deviations of the squared
  residuals:

      bound^2 = C1^2 [ e_tb^2 + gap_tb^2 + mc_tb
                     + e_int^2 + gap_int^2 + mc_int
                     + C2^2 (e_sb + gap_sb + sqrt(mc_sb)) ]

  with gap_l^2 = |e_t_bar_l^2 - e_v_bar_l^2|, mc_l = measure_l *
  std(mean-over-sets squared residual) / sqrt(N_l), C1 = sqrt(T +
  (1+2C_f) T^2 exp((1+2C_f)T)) and C2^2 = C_dD sqrt(T) where C_dD =
  |dD|^(1/2) (|u|_C1 + |u*|_C1) on the boundary (dense sampling, so the
  sup norms are lower estimates of the true constants);

* for conservation laws, the training-error part of the growth-constant
  bound with C = 1 + 2 |f''(max(|u|,|u*|)_inf)| |u_x|_inf; the
  deterministic quadrature tail N^-alpha is not computable from a trained
  network and is omitted (reports are labeled accordingly);

* for Euler, the training-error part with C_inf = 1 + 2 d |grad u|_inf.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .network import NetworkParams, forward, forward_jet
from .problems import BoundaryKind, ProblemSpec, ResidualBundle, network_jet_source, residuals_for
from .quadrature import SamplingKind, TrainingSet, build_training_set, uniform_random
from .reference import FvGrid, reference_evaluator
from .training import LossBreakdown, LossConfig, training_error_total


# ---------------------------------------------------------------------------
# training / generalization error reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainingErrorReport:
    family: str
    e_tb: float
    e_sb: float
    e_int: float
    e_div: float
    e_total: float
    e_sb_parts: tuple = ()

    @property
    def e_sb0(self) -> float:
        return self.e_sb_parts[0]

    @property
    def e_sb1(self) -> float:
        return self.e_sb_parts[1]


def training_error(bd: LossBreakdown, cfg: LossConfig, family: str) -> TrainingErrorReport:
    """Component training errors: square roots of the weighted sums."""
    return TrainingErrorReport(
        family=family,
        e_tb=float(np.sqrt(bd.tb_term)),
        e_sb=float(np.sqrt(bd.sb_term)),
        e_int=float(np.sqrt(bd.int_term)),
        e_div=float(np.sqrt(bd.div_term)),
        e_total=training_error_total(bd, cfg, family),
        e_sb_parts=tuple(float(np.sqrt(p)) for p in bd.sb_parts),
    )


@dataclass(frozen=True)
class GeneralizationReport:
    e_g: float
    e_g_rel: float          # percentage
    n_test: int
    seed: int


def generalization_error(candidate, truth, box: np.ndarray, n_test: int, seed: int) -> GeneralizationReport:
    """Monte-Carlo space-time L2 distance between two point evaluators.

    Both evaluators map (N, dbar) points to (N, m) values.  The relative
    error is normalized with the L2 norm of `truth` estimated on the same
    test points.
    """
    box = np.atleast_2d(np.asarray(box, dtype=float))
    pts = box[:, 0] + uniform_random(n_test, len(box), seed) * (box[:, 1] - box[:, 0])
    diff = np.atleast_2d(candidate(pts)) - np.atleast_2d(truth(pts))
    volume = float(np.prod(box[:, 1] - box[:, 0]))
    msq = float(np.mean(np.sum(np.asarray(diff) ** 2, axis=1)))
    ref = float(np.mean(np.sum(np.asarray(truth(pts)) ** 2, axis=1)))
    e_g = float(np.sqrt(volume * msq))
    rel = 100.0 * np.sqrt(msq / ref) if ref > 0 else np.inf
    return GeneralizationReport(e_g, float(rel), n_test, seed)


def _space_time_box(problem: ProblemSpec) -> np.ndarray:
    return np.vstack([problem.geometry.spatial_bounds, [0.0, problem.t_final]])


def network_evaluator(params: NetworkParams, components: slice | None = None):
    def candidate(points: np.ndarray) -> np.ndarray:
        out = forward(params, points)
        return out if components is None else out[:, components]

    return candidate


def truth_evaluator(problem: ProblemSpec, reference: FvGrid | None = None):
    """Exact-solution evaluator, or the FV reference for conservation laws.

    For Euler problems only the velocity components are compared.
    """
    if reference is not None:
        return reference_evaluator(reference)
    if problem.exact_solution is None:
        raise ValueError(f"problem {problem.name} has no exact solution or reference")
    if problem.family == "euler":
        d = problem.spatial_dim
        return lambda pts: problem.exact_solution(pts)[:, :d]
    return problem.exact_solution


def generalization_for_problem(
    params: NetworkParams,
    problem: ProblemSpec,
    n_test: int = 100_000,
    seed: int = 990,
    reference: FvGrid | None = None,
) -> GeneralizationReport:
    comp = slice(0, problem.spatial_dim) if problem.family == "euler" else None
    return generalization_error(
        network_evaluator(params, comp),
        truth_evaluator(problem, reference),
        _space_time_box(problem),
        n_test,
        seed,
    )


# ---------------------------------------------------------------------------
# validation sets, gaps and residual standard deviations
# ---------------------------------------------------------------------------


def _component_sums(bundle: ResidualBundle, sets: TrainingSet) -> dict:
    w_int = sets.interior.weights
    w_tb = sets.temporal_boundary.weights
    out = {
        "tb": sum(float(np.sum(w_tb * np.asarray(r) ** 2)) for r in bundle.temporal_boundary),
        "sb": sum(
            float(np.sum(w * np.asarray(r) ** 2))
            for r, w in zip(bundle.spatial_boundary, bundle.sb_weights)
        ),
        "int": sum(float(np.sum(w_int * np.asarray(r) ** 2)) for r in bundle.interior),
    }
    if bundle.divergence is not None:
        out["div"] = float(np.sum(w_int * np.asarray(bundle.divergence) ** 2))
    return out


def _pointwise_sq(bundle: ResidualBundle, problem: ProblemSpec) -> dict:
    """Per-point squared residual magnitude for each component."""
    out = {
        "tb": sum(np.asarray(r) ** 2 for r in bundle.temporal_boundary),
        "int": sum(np.asarray(r) ** 2 for r in bundle.interior),
    }
    streams = [np.asarray(r) ** 2 for r in bundle.spatial_boundary]
    if problem.family == "euler" and problem.boundary_kind == BoundaryKind.PERIODIC:
        d = problem.spatial_dim
        blocks = [sum(streams[i : i + d]) for i in range(0, len(streams), d)]
    else:
        blocks = streams
    out["sb"] = np.concatenate(blocks)
    if bundle.divergence is not None:
        out["div"] = np.asarray(bundle.divergence) ** 2
    return out


@dataclass
class ValidationReport:
    """Cumulative train/validation component errors over K training draws."""

    k_sets: int
    components: tuple
    e_t_sets: dict
    e_v_sets: dict
    e_t_bar: dict
    e_v_bar: dict
    gap_sq: dict
    residual_std: dict
    mc_error: dict
    n_train: dict
    validation_sets: list = field(default_factory=list)

    @property
    def validation_gap(self) -> dict:
        return {k: float(np.sqrt(v)) for k, v in self.gap_sq.items()}


def validation_report(
    nets: list[NetworkParams],
    problem: ProblemSpec,
    train_sets: list[TrainingSet],
    val_sets: list[TrainingSet] | TrainingSet,
) -> ValidationReport:
    """Estimate cumulative errors, validation gaps and residual stds.

    One network per training draw; validation draws are shared across
    networks.  With several validation sets the gap and std estimates are
    averaged over the draws (the default single draw matches the usual
    protocol).
    """
    if not nets:
        raise ValueError("k_sets must be >= 1 (no trained networks given)")
    if isinstance(val_sets, TrainingSet):
        val_sets = [val_sets]
    k = len(nets)
    if len(train_sets) != k:
        raise ValueError("one training set per trained network is required")

    comps = ["tb", "sb", "int"] + (["div"] if problem.family == "euler" else [])
    e_t = {c: np.empty(k) for c in comps}
    for s, (net, ts) in enumerate(zip(nets, train_sets)):
        sums = _component_sums(residuals_for(problem, network_jet_source(net), ts), ts)
        for c in comps:
            e_t[c][s] = np.sqrt(sums[c])
    e_t_bar = {c: float(np.mean(e_t[c])) for c in comps}

    measures = {
        "int": float(train_sets[0].interior.weights.sum()),
        "tb": float(train_sets[0].temporal_boundary.weights.sum()),
        "sb": float(train_sets[0].spatial_boundary.weights.sum()),
    }
    measures["div"] = measures["int"]
    n_train = {
        "int": train_sets[0].n_int,
        "tb": train_sets[0].n_tb,
        "sb": train_sets[0].n_sb,
        "div": train_sets[0].n_int,
    }

    e_v = {c: np.empty((len(val_sets), k)) for c in comps}
    gap_sq_draws = {c: [] for c in comps}
    std_draws = {c: [] for c in comps}
    for vi, vs in enumerate(val_sets):
        point_means = {c: None for c in comps}
        for s, net in enumerate(nets):
            bundle = residuals_for(problem, network_jet_source(net), vs)
            sums = _component_sums(bundle, vs)
            psq = _pointwise_sq(bundle, problem)
            for c in comps:
                e_v[c][vi, s] = np.sqrt(sums[c])
                acc = psq[c] / k
                point_means[c] = acc if point_means[c] is None else point_means[c] + acc
        for c in comps:
            ev_bar = float(np.mean(e_v[c][vi]))
            gap_sq_draws[c].append(abs(e_t_bar[c] ** 2 - ev_bar**2))
            std_draws[c].append(float(np.std(point_means[c])))

    e_v_bar = {c: float(np.mean(e_v[c])) for c in comps}
    gap_sq = {c: float(np.mean(gap_sq_draws[c])) for c in comps}
    residual_std = {c: float(np.mean(std_draws[c])) for c in comps}
    mc_error = {c: measures[c] * residual_std[c] / np.sqrt(n_train[c]) for c in comps}
    return ValidationReport(
        k_sets=k,
        components=tuple(comps),
        e_t_sets=e_t,
        e_v_sets={c: e_v[c] for c in comps},
        e_t_bar=e_t_bar,
        e_v_bar=e_v_bar,
        gap_sq=gap_sq,
        residual_std=residual_std,
        mc_error=mc_error,
        n_train=n_train,
        validation_sets=val_sets,
    )


# ---------------------------------------------------------------------------
# bound reports
# ---------------------------------------------------------------------------


@dataclass
class BoundReport:
    family: str
    constants: dict
    term_values: dict
    bound_total: float
    measured_e_g: float
    flags: tuple = ()

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "constants": self.constants,
            "term_values": self.term_values,
            "bound_total": self.bound_total,
            "measured_e_g": self.measured_e_g,
            "flags": list(self.flags),
        }


def _dense_boundary_points(problem: ProblemSpec, n: int, seed: int = 1234) -> TrainingSet:
    return build_training_set(
        problem.geometry, max(n // 10, 2), n, max(n // 10, 2), SamplingKind.MONTE_CARLO, seed
    )


def _c1_norm_on_boundary(src, points: np.ndarray) -> float:
    """max over samples of max(|u|, |du/dy_j|) for a jet source."""
    value, grad, _ = src(points, 1)
    return float(max(np.max(np.abs(value)), np.max(np.abs(grad))))


def heat_bound_total(c1: float, c2_sq: float, t: dict) -> float:
    """Assemble the heat-family bound value from its additive pieces."""
    a = (
        t["e_t_tb"] ** 2
        + t["gap_sq_tb"]
        + t["mc_tb"]
        + t["e_t_int"] ** 2
        + t["gap_sq_int"]
        + t["mc_int"]
    )
    b = c2_sq * (t["e_t_sb"] + np.sqrt(t["gap_sq_sb"]) + np.sqrt(t["mc_sb"]))
    return float(c1 * np.sqrt(a + b))


def heat_bound(
    nets: list[NetworkParams],
    problem: ProblemSpec,
    train_sets: list[TrainingSet],
    val_sets,
    n_test: int = 100_000,
    test_seed: int = 990,
    c_f: float | None = None,
    boundary_samples: int = 10_000,
) -> BoundReport:
    """Random-training-points generalization bound for the heat family.

    Requires Monte-Carlo training sets (the estimator is built on i.i.d.
    draws).  The measured value reported alongside is the cumulative
    (averaged over the K networks) generalization error.
    """
    for ts in train_sets:
        if ts.interior.kind != SamplingKind.MONTE_CARLO:
            raise ValueError("heat_bound requires MonteCarlo (i.i.d.) training sets")
    if c_f is None:
        if problem.source is not None:
            raise ValueError("c_f (Lipschitz constant of the source) must be given")
        c_f = 0.0
    T = problem.t_final
    rate = 1.0 + 2.0 * c_f
    c1 = float(np.sqrt(T + rate * T**2 * np.exp(rate * T)))

    bpts = _dense_boundary_points(problem, boundary_samples).spatial_boundary.points
    c1_exact = _c1_norm_on_boundary(problem.exact_jet, bpts)
    c1_net = max(
        _c1_norm_on_boundary(lambda p, o: _net_jet(net, p, o), bpts) for net in nets
    )
    c_dd = float(np.sqrt(problem.geometry.boundary_measure) * (c1_exact + c1_net))
    c2_sq = c_dd * np.sqrt(T)

    rep = validation_report(nets, problem, train_sets, val_sets)
    terms = {
        "e_t_tb": rep.e_t_bar["tb"],
        "e_t_sb": rep.e_t_bar["sb"],
        "e_t_int": rep.e_t_bar["int"],
        "gap_sq_tb": rep.gap_sq["tb"],
        "gap_sq_sb": rep.gap_sq["sb"],
        "gap_sq_int": rep.gap_sq["int"],
        "mc_tb": rep.mc_error["tb"],
        "mc_sb": rep.mc_error["sb"],
        "mc_int": rep.mc_error["int"],
    }
    bound = heat_bound_total(c1, c2_sq, terms)
    e_gs = [
        generalization_for_problem(net, problem, n_test=n_test, seed=test_seed).e_g
        for net in nets
    ]
    return BoundReport(
        family="heat",
        constants={"C_f": c_f, "C1": c1, "C2_sq": float(c2_sq), "C_dD": c_dd},
        term_values=terms,
        bound_total=bound,
        measured_e_g=float(np.mean(e_gs)),
    )


def _net_jet(params: NetworkParams, points: np.ndarray, order: int):
    if order == 0:
        return forward(params, points), None, None
    jet = forward_jet(params, points, need_hess=(order == 2))
    return jet.value, jet.grad, jet.hess_diag


def burgers_bound(
    net: NetworkParams,
    problem: ProblemSpec,
    sets: TrainingSet,
    reference: FvGrid,
    n_test: int = 100_000,
    test_seed: int = 990,
    dense: tuple = (400, 100),
) -> BoundReport:
    """Training-error part of the conservation-law bound.

    Sup norms of the true solution come from the finite-volume reference
    grid (|u_x|_inf by grid differencing); network sup norms from dense
    jet sampling.  Deterministic quadrature tails are not computable and
    are omitted.  For an inviscid shock-bearing reference the slope
    estimate grows like 1/dx and the constants are flagged unreliable.
    """
    flux = problem.flux
    T = problem.t_final
    lo, hi = problem.geometry.spatial_bounds[0]
    u_ref = reference.values
    sup_u = float(np.max(np.abs(u_ref)))
    sup_ux = float(np.max(np.abs(np.diff(u_ref, axis=1))) / reference.dx)

    nx, nt = dense
    xs = np.linspace(lo, hi, nx)
    ts = np.linspace(0.0, T, nt)
    X, TT = np.meshgrid(xs, ts, indexing="ij")
    pts = np.stack([X.ravel(), TT.ravel()], axis=1)
    jet = forward_jet(net, pts, need_hess=False)
    sup_u_net = float(np.max(np.abs(jet.value)))
    sup_ux_net = float(np.max(np.abs(jet.grad[:, 0, 0])))

    c_fuu = float(np.abs(flux.f_second(np.array([max(sup_u, sup_u_net)])))[0] * sup_ux)
    c_growth = 1.0 + 2.0 * c_fuu
    c_b = sup_ux + sup_ux_net

    t_dense = np.linspace(0.0, T, 400)
    traces = forward(net, np.stack([np.full_like(t_dense, lo), t_dense], axis=1))[:, 0]
    traces = np.concatenate(
        [traces, forward(net, np.stack([np.full_like(t_dense, hi), t_dense], axis=1))[:, 0]]
    )
    gammas = np.linspace(0.0, 1.0, 33)
    cbar_b = float(np.max(np.abs(flux.f_prime(gammas[:, None] * traces[None, :]))))

    bundle = residuals_for(problem, network_jet_source(net), sets)
    sums = _component_sums(bundle, sets)
    sb_parts = [float(np.sum(w * np.asarray(r) ** 2)) for r, w in zip(bundle.spatial_boundary, bundle.sb_weights)]
    sb0, sb1 = sb_parts[0], sb_parts[1]

    with np.errstate(over="ignore"):
        growth = T + c_growth * T**2 * np.exp(c_growth * T)
        bound_sq = growth * (
            sums["tb"]
            + sums["int"]
            + 2.0 * cbar_b * (sb0 + sb1)
            + 2.0 * problem.nu * c_b * np.sqrt(T) * (np.sqrt(sb0) + np.sqrt(sb1))
        )
    flags = ["training-error part only: deterministic quadrature tails omitted"]
    if problem.nu == 0.0 and sup_ux >= 0.25 / reference.dx:
        flags.append("constants unreliable: ||u_x||_inf diverges under grid refinement")
    rep = generalization_for_problem(net, problem, n_test=n_test, seed=test_seed, reference=reference)
    return BoundReport(
        family="conservation",
        constants={
            "C_f_u_ustar": c_fuu,
            "C": c_growth,
            "C_b": c_b,
            "Cbar_b": cbar_b,
            "sup_u_x_reference": sup_ux,
            "sup_u_x_network": sup_ux_net,
        },
        term_values={
            "tb_sq": sums["tb"],
            "int_sq": sums["int"],
            "sb0_sq": sb0,
            "sb1_sq": sb1,
            "growth_factor": float(growth),
        },
        bound_total=float(np.sqrt(bound_sq)),
        measured_e_g=rep.e_g,
        flags=tuple(flags),
    )


def euler_bound(
    net: NetworkParams,
    problem: ProblemSpec,
    sets: TrainingSet,
    n_test: int = 100_000,
    test_seed: int = 990,
    n_dense: int = 100_000,
) -> BoundReport:
    """Training-error part of the Euler bound, C_d = d.

    |grad u|_inf of the true velocity comes from dense sampling of the
    exact jets; C0 combines sampled C0 norms of both velocity fields and
    pressures with the square root of the larger of the domain and
    boundary measures.
    """
    if problem.exact_jet is None:
        raise ValueError("euler_bound needs exact jets for the true velocity gradient")
    d = problem.spatial_dim
    T = problem.t_final
    box = _space_time_box(problem)
    pts = box[:, 0] + uniform_random(n_dense, d + 1, 4321) * (box[:, 1] - box[:, 0])
    val_ex, grad_ex, _ = problem.exact_jet(pts, 1)
    sup_grad_u = float(np.max(np.abs(grad_ex[:, :d, :d])))
    c_inf = 1.0 + 2.0 * d * sup_grad_u

    out = forward(net, pts)
    sup_u = float(np.max(np.linalg.norm(val_ex[:, :d], axis=1)))
    sup_u_net = float(np.max(np.linalg.norm(out[:, :d], axis=1)))
    sup_p = float(np.max(np.abs(val_ex[:, d]))) if problem.output_dim > d else 0.0
    sup_p_net = float(np.max(np.abs(out[:, d])))
    geom = problem.geometry
    c0 = float(
        (0.5 * (sup_u + sup_u_net) ** 2 + sup_p + sup_p_net)
        * np.sqrt(max(geom.volume, geom.boundary_measure))
    )

    bundle = residuals_for(problem, network_jet_source(net), sets)
    sums = _component_sums(bundle, sets)
    with np.errstate(over="ignore"):
        growth = T + c_inf * T**2 * np.exp(c_inf * T)
        bound_sq = growth * (
            sums["tb"]
            + sums["int"]
            + c0 * np.sqrt(T) * (np.sqrt(sums["div"]) + np.sqrt(sums["sb"]))
        )
    rep = generalization_for_problem(net, problem, n_test=n_test, seed=test_seed)
    return BoundReport(
        family="euler",
        constants={"C_inf": c_inf, "C0": c0, "C_d": float(d), "sup_grad_u": sup_grad_u},
        term_values={
            "tb_sq": sums["tb"],
            "vel_sq": sums["int"],
            "div_sq": sums["div"],
            "sb_sq": sums["sb"],
            "growth_factor": float(growth),
        },
        bound_total=float(np.sqrt(bound_sq)),
        measured_e_g=rep.e_g,
        flags=("training-error part only: deterministic quadrature tails omitted",),
    )


def vorticity_field(params: NetworkParams, points: np.ndarray) -> np.ndarray:
    """omega = dv/dx - du/dy of a 2D velocity network, from exact jets."""
    jet = forward_jet(params, np.atleast_2d(points), need_hess=False)
    return jet.grad[:, 1, 0] - jet.grad[:, 0, 1]
