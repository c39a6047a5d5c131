"""Collocation loss assembly and network training.

The loss is

    J = tb_term + sb_term + lambda * (int_term + div_term) + lambda_reg * reg

with each term a weighted sum of squared residuals over its collocation
rule and reg = ||theta_W||_q^q over the weight matrices only.  assemble_loss
evaluates the breakdown with plain numpy jets; make_loss_fn builds the
taped version returning (value, exact flat gradient) for the optimizers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from .activations import ActivationKind
from .network import NetworkParams, flatten_params, init_params, unflatten_params
from .optimizers import DivergenceError, OptimResult, adam_run, lbfgs_run
from .problems import ProblemSpec, ResidualBundle, network_jet_source, residuals_for
from .quadrature import TrainingSet
from .tape import TapeNet, Var, absolute, backward, vsum, wsum

RESTART_SEED_STRIDE = 1000003


@dataclass(frozen=True)
class LossConfig:
    lambda_residual: float = 1.0
    reg_exponent: int = 2
    lambda_reg: float = 0.0

    def __post_init__(self):
        if self.reg_exponent not in (1, 2):
            raise ValueError(f"reg_exponent must be 1 or 2, got {self.reg_exponent}")
        if self.lambda_residual < 0 or self.lambda_reg < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass(frozen=True)
class LossBreakdown:
    """Weighted squared-residual sums before the lambda scaling."""

    tb_term: float
    sb_term: float
    int_term: float
    div_term: float
    reg_term: float
    total: float
    sb_parts: tuple = ()

    @staticmethod
    def combine(cfg: LossConfig, tb, sb, int_, div, reg, sb_parts=()):
        total = tb + sb + cfg.lambda_residual * (int_ + div) + cfg.lambda_reg * reg
        return LossBreakdown(tb, sb, int_, div, reg, total, sb_parts)


def _sq_term(streams, weights) -> float:
    return sum(float(np.sum(w * np.asarray(r) ** 2)) for r, w in zip(streams, weights))


def _bundle_terms(bundle: ResidualBundle, sets: TrainingSet):
    w_int = sets.interior.weights
    w_tb = sets.temporal_boundary.weights
    int_term = _sq_term(bundle.interior, [w_int] * len(bundle.interior))
    tb_term = _sq_term(bundle.temporal_boundary, [w_tb] * len(bundle.temporal_boundary))
    sb_parts = tuple(
        float(np.sum(w * np.asarray(r) ** 2))
        for r, w in zip(bundle.spatial_boundary, bundle.sb_weights)
    )
    div_term = (
        float(np.sum(w_int * np.asarray(bundle.divergence) ** 2))
        if bundle.divergence is not None
        else 0.0
    )
    return tb_term, sum(sb_parts), int_term, div_term, sb_parts


def regularization(params: NetworkParams, q: int) -> float:
    """||theta_W||_q^q over the weight matrices (biases excluded)."""
    if q == 2:
        return float(sum(np.sum(W * W) for W in params.weights))
    return float(sum(np.sum(np.abs(W)) for W in params.weights))


def assemble_loss(
    params: NetworkParams, problem: ProblemSpec, sets: TrainingSet, cfg: LossConfig
) -> LossBreakdown:
    """Evaluate every loss term at the given parameters (no gradients)."""
    bundle = residuals_for(problem, network_jet_source(params), sets)
    tb, sb, int_, div, sb_parts = _bundle_terms(bundle, sets)
    reg = regularization(params, cfg.reg_exponent) if cfg.lambda_reg > 0 else 0.0
    return LossBreakdown.combine(cfg, tb, sb, int_, div, reg, sb_parts)


def training_error_total(bd: LossBreakdown, cfg: LossConfig, family: str) -> float:
    """Total training error: the family's lambda-weighted residual l2 sum.

    For heat and conservation laws lambda multiplies the interior term;
    for Euler it multiplies the divergence term only while the velocity
    term enters unweighted (the loss itself puts lambda on both).
    """
    lam = cfg.lambda_residual
    if family == "euler":
        return float(np.sqrt(bd.tb_term + bd.sb_term + bd.int_term + lam * bd.div_term))
    return float(np.sqrt(bd.tb_term + bd.sb_term + lam * bd.int_term))


def _tape_source(net: TapeNet):
    def src(points: np.ndarray, order: int):
        if order == 0:
            return net.forward(points), None, None
        return net.forward_jet(points, need_hess=(order == 2))

    return src


def _tape_sq_term(streams, weights) -> Var:
    total = None
    for r, w in zip(streams, weights):
        t = wsum(r * r, w)
        total = t if total is None else total + t
    return total


def make_loss_fn(problem: ProblemSpec, sets: TrainingSet, cfg: LossConfig, template: NetworkParams):
    """Build fun(theta) -> (loss, exact gradient) on the flat parameters."""
    w_int = sets.interior.weights
    w_tb = sets.temporal_boundary.weights

    def fun(theta: np.ndarray):
        params = unflatten_params(theta, template)
        net = TapeNet(params)
        bundle = residuals_for(problem, _tape_source(net), sets)
        total = _tape_sq_term(bundle.temporal_boundary, [w_tb] * len(bundle.temporal_boundary))
        total = total + _tape_sq_term(bundle.spatial_boundary, bundle.sb_weights)
        interior = _tape_sq_term(bundle.interior, [w_int] * len(bundle.interior))
        if bundle.divergence is not None:
            interior = interior + wsum(bundle.divergence * bundle.divergence, w_int)
        total = total + cfg.lambda_residual * interior
        if cfg.lambda_reg > 0:
            reg = None
            for W in net.weights:
                r = vsum(W * W) if cfg.reg_exponent == 2 else vsum(absolute(W))
                reg = r if reg is None else reg + r
            total = total + cfg.lambda_reg * reg
        backward(total)
        return float(total.value), net.grad_flat()

    return fun


@dataclass
class TrainOutcome:
    params: NetworkParams
    loss_history: list
    final_breakdown: LossBreakdown
    restart_index: int
    seed: int
    line_search_failed: bool = False
    n_iters: int = 0


def layer_dims_for(problem: ProblemSpec, hidden: int, width: int) -> list[int]:
    return [problem.spatial_dim + 1] + [width] * hidden + [problem.output_dim]


def train(
    problem: ProblemSpec,
    sets: TrainingSet,
    layer_dims,
    cfg: LossConfig,
    optimizer: str = "lbfgs",
    n_restarts: int = 5,
    seed: int = 0,
    max_iters: int = 2000,
    learning_rate: float = 1e-3,
    activation: ActivationKind = ActivationKind.TANH,
    history_size: int = 50,
    tolerance: float = 1e-9,
) -> TrainOutcome:
    """Train n_restarts independently initialized networks, keep the best.

    Restart k is initialized with seed + k * RESTART_SEED_STRIDE; the
    returned network is the one with the smallest final training loss.
    Raises DivergenceError only if every restart diverges.
    """
    template = init_params(seed, layer_dims, activation)
    fun = make_loss_fn(problem, sets, cfg, template)
    best: TrainOutcome | None = None
    failures: list[str] = []
    for k in range(n_restarts):
        restart_seed = seed + k * RESTART_SEED_STRIDE
        theta0 = flatten_params(init_params(restart_seed, layer_dims, activation))
        try:
            if optimizer == "lbfgs":
                res: OptimResult = lbfgs_run(
                    fun, theta0, max_iters, history_size=history_size, tolerance=tolerance
                )
            elif optimizer == "adam":
                res = adam_run(fun, theta0, max_iters, learning_rate)
            else:
                raise ValueError(f"unknown optimizer: {optimizer}")
        except DivergenceError as exc:
            failures.append(f"restart {k} (seed {restart_seed}): {exc}")
            continue
        if not np.isfinite(res.f):
            failures.append(f"restart {k} (seed {restart_seed}): non-finite final loss {res.f!r}")
            continue
        params = unflatten_params(res.x, template)
        if best is None or res.f < best.final_breakdown.total:
            breakdown = assemble_loss(params, problem, sets, cfg)
            best = TrainOutcome(
                params,
                res.history,
                breakdown,
                restart_index=k,
                seed=restart_seed,
                line_search_failed=res.line_search_failed,
                n_iters=res.n_iters,
            )
    if best is None:
        raise DivergenceError("all restarts diverged:\n" + "\n".join(failures))
    return best


# ---------------------------------------------------------------------------
# ensemble hyperparameter search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleEntry:
    hidden: int
    width: int
    q: int
    lambda_reg: float
    lam: float


@dataclass
class EnsembleMetrics:
    train_error: float
    gen_error_rel: float
    gen_error_abs: float
    wall_time_s: float
    final_loss: float
    error: str = ""


def expand_grid(grid: dict) -> list[EnsembleEntry]:
    """Cross product over {depth, width, q, lambda_reg, lambda}."""
    keys = ("hidden", "width", "q", "lambda_reg", "lam")
    for key in keys:
        if key not in grid:
            raise ValueError(f"ensemble grid missing '{key}'")
    return [
        EnsembleEntry(int(h), int(w), int(q), float(lr), float(lm))
        for h, w, q, lr, lm in product(*(grid[k] for k in keys))
    ]


def _run_one_config(payload) -> tuple[int, EnsembleMetrics, TrainOutcome | None]:
    (
        index,
        entry,
        factory,
        factory_kwargs,
        sets,
        n_restarts,
        seed,
        optimizer,
        max_iters,
        activation,
        n_test,
        test_seed,
        truth_grid,
    ) = payload
    from . import analysis  # local import: analysis depends on this module

    problem = factory(**factory_kwargs)
    cfg = LossConfig(lambda_residual=entry.lam, reg_exponent=entry.q, lambda_reg=entry.lambda_reg)
    dims = layer_dims_for(problem, entry.hidden, entry.width)
    start = time.perf_counter()
    try:
        outcome = train(
            problem,
            sets,
            dims,
            cfg,
            optimizer=optimizer,
            n_restarts=n_restarts,
            seed=seed + 17 * index,
            max_iters=max_iters,
            activation=activation,
        )
    except DivergenceError as exc:
        wall = time.perf_counter() - start
        return index, EnsembleMetrics(np.nan, np.nan, np.nan, wall, np.nan, str(exc)), None
    wall = time.perf_counter() - start
    e_t = training_error_total(outcome.final_breakdown, cfg, problem.family)
    report = analysis.generalization_for_problem(
        outcome.params, problem, n_test=n_test, seed=test_seed, reference=truth_grid
    )
    metrics = EnsembleMetrics(
        e_t, report.e_g_rel, report.e_g, wall, outcome.final_breakdown.total
    )
    return index, metrics, outcome


def ensemble_search(
    factory,
    factory_kwargs: dict,
    sets: TrainingSet,
    grid: dict,
    n_restarts: int = 5,
    seed: int = 0,
    optimizer: str = "lbfgs",
    max_iters: int = 500,
    activation: ActivationKind = ActivationKind.TANH,
    n_test: int = 20000,
    test_seed: int = 990,
    workers: int = 1,
    reference=None,
) -> list[tuple[EnsembleEntry, TrainOutcome | None, EnsembleMetrics]]:
    """Train every grid configuration; return results sorted by training error.

    `factory` must be a module-level problem constructor so configurations
    can be shipped to worker processes; results are merged by configuration
    index, making the output independent of worker scheduling.  Individual
    failures are recorded in the metrics, never fatal.
    """
    entries = expand_grid(grid)
    payloads = [
        (
            i,
            entry,
            factory,
            factory_kwargs,
            sets,
            n_restarts,
            seed,
            optimizer,
            max_iters,
            activation,
            n_test,
            test_seed,
            reference,
        )
        for i, entry in enumerate(entries)
    ]
    results: dict[int, tuple[EnsembleMetrics, TrainOutcome | None]] = {}
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            for index, metrics, outcome in pool.map(_run_one_config, payloads):
                results[index] = (metrics, outcome)
    else:
        for payload in payloads:
            index, metrics, outcome = _run_one_config(payload)
            results[index] = (metrics, outcome)
    merged = [(entries[i], results[i][1], results[i][0]) for i in range(len(entries))]
    merged.sort(key=lambda item: (np.isnan(item[2].train_error), item[2].train_error))
    return merged
