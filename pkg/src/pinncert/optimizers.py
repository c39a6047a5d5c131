"""Full-batch optimizers on flat parameter vectors.

Both optimizers consume a callable fun(x) -> (f, grad) and are fully
deterministic.  LBFGS uses two-loop recursion with a strong-Wolfe line
search (sufficient decrease c1, curvature c2); a failed line search
returns the best iterate so far with a warning flag instead of raising.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DivergenceError(RuntimeError):
    pass


@dataclass
class OptimResult:
    x: np.ndarray
    f: float
    grad_norm: float
    history: list = field(default_factory=list)
    n_iters: int = 0
    converged: bool = False
    line_search_failed: bool = False


def adam_run(
    fun,
    x0: np.ndarray,
    steps: int,
    learning_rate: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> OptimResult:
    """Standard Adam; full-batch gradients, hence deterministic."""
    x = np.array(x0, dtype=float)
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    history = []
    f, g = fun(x)
    for t in range(1, steps + 1):
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            raise DivergenceError(
                f"non-finite loss at Adam step {t - 1}: f={f!r}, |g|_max={np.max(np.abs(g))!r}"
            )
        history.append(f)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        x = x - learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        f, g = fun(x)
    history.append(f)
    return OptimResult(x, f, float(np.linalg.norm(g)), history, steps, True)


def _zoom(fun, x, d, f0, dphi0, lo, f_lo, dphi_lo, hi, f_hi, c1, c2, max_iter=25):
    """Strong-Wolfe zoom on a bracket [lo, hi] (bisection with a cubic try)."""
    for _ in range(max_iter):
        span = hi - lo
        # cubic minimizer from (lo, f_lo, dphi_lo) and (hi, f_hi); fall back to bisection
        alpha = lo + 0.5 * span
        d1 = dphi_lo + 3.0 * (f_lo - f_hi) / span if span != 0 else 0.0
        disc = d1 * d1 - dphi_lo * (dphi_lo + 2.0 * d1)
        if disc >= 0.0 and span != 0.0:
            cand = lo + span * dphi_lo / (dphi_lo + d1 + np.sqrt(disc))
            inside = (min(lo, hi) + 0.1 * abs(span) <= cand <= max(lo, hi) - 0.1 * abs(span))
            if np.isfinite(cand) and inside:
                alpha = cand
        f_a, g_a = fun(x + alpha * d)
        dphi_a = float(g_a @ d)
        if f_a > f0 + c1 * alpha * dphi0 or f_a >= f_lo:
            hi, f_hi = alpha, f_a
        else:
            if abs(dphi_a) <= -c2 * dphi0:
                return alpha, f_a, g_a
            if dphi_a * (hi - lo) >= 0.0:
                hi, f_hi = lo, f_lo
            lo, f_lo, dphi_lo = alpha, f_a, dphi_a
        if abs(hi - lo) < 1e-16:
            break
    return None


def _strong_wolfe(fun, x, d, f0, g0, c1, c2, alpha0=1.0, max_iter=25):
    """Line search satisfying the strong Wolfe conditions.

    Returns (alpha, f, g) or None on failure.
    """
    dphi0 = float(g0 @ d)
    if dphi0 >= 0.0:
        return None
    alpha_prev, f_prev, dphi_prev = 0.0, f0, dphi0
    alpha = alpha0
    for i in range(max_iter):
        f_a, g_a = fun(x + alpha * d)
        dphi_a = float(g_a @ d)
        if not np.isfinite(f_a):
            alpha *= 0.5
            continue
        if f_a > f0 + c1 * alpha * dphi0 or (i > 0 and f_a >= f_prev):
            return _zoom(fun, x, d, f0, dphi0, alpha_prev, f_prev, dphi_prev, alpha, f_a, c1, c2)
        if abs(dphi_a) <= -c2 * dphi0:
            return alpha, f_a, g_a
        if dphi_a >= 0.0:
            return _zoom(fun, x, d, f0, dphi0, alpha, f_a, dphi_a, alpha_prev, f_prev, c1, c2)
        alpha_prev, f_prev, dphi_prev = alpha, f_a, dphi_a
        alpha *= 2.0
    return None


def lbfgs_run(
    fun,
    x0: np.ndarray,
    max_iters: int,
    history_size: int = 50,
    tolerance: float = 1e-9,
    c1: float = 1e-4,
    c2: float = 0.9,
) -> OptimResult:
    """Limited-memory BFGS with strong-Wolfe line search.

    Terminates on gradient norm <= tolerance or the iteration cap.  Every
    accepted step satisfies sufficient decrease, so the recorded history
    is non-increasing.
    """
    x = np.array(x0, dtype=float)
    f, g = fun(x)
    if not np.isfinite(f):
        raise DivergenceError(f"non-finite loss at the initial point: f={f!r}")
    history = [f]
    s_list: list[np.ndarray] = []
    y_list: list[np.ndarray] = []
    rho_list: list[float] = []
    n_iters = 0
    for it in range(max_iters):
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tolerance:
            return OptimResult(x, f, gnorm, history, n_iters, True)
        # two-loop recursion
        q = g.copy()
        alphas = []
        for s, y, rho in zip(reversed(s_list), reversed(y_list), reversed(rho_list)):
            a = rho * (s @ q)
            alphas.append(a)
            q -= a * y
        if y_list:
            gamma = (s_list[-1] @ y_list[-1]) / (y_list[-1] @ y_list[-1])
            q *= gamma
        for (s, y, rho), a in zip(zip(s_list, y_list, rho_list), reversed(alphas)):
            b = rho * (y @ q)
            q += (a - b) * s
        d = -q
        if d @ g >= 0.0:      # safeguard: fall back to steepest descent
            d = -g
            s_list, y_list, rho_list = [], [], []
        alpha0 = min(1.0, 1.0 / max(gnorm, 1e-12)) if it == 0 else 1.0
        res = _strong_wolfe(fun, x, d, f, g, c1, c2, alpha0=alpha0)
        if res is None:
            return OptimResult(x, f, gnorm, history, n_iters, False, line_search_failed=True)
        alpha, f_new, g_new = res
        s = alpha * d
        y_vec = g_new - g
        sy = float(s @ y_vec)
        if sy > 1e-10 * float(np.linalg.norm(s)) * float(np.linalg.norm(y_vec)):
            s_list.append(s)
            y_list.append(y_vec)
            rho_list.append(1.0 / sy)
            if len(s_list) > history_size:
                s_list.pop(0)
                y_list.pop(0)
                rho_list.pop(0)
        x = x + s
        f, g = f_new, g_new
        history.append(f)
        n_iters = it + 1
    return OptimResult(x, f, float(np.linalg.norm(g)), history, n_iters, False)
