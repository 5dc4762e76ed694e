"""Loss minimization for marginal-likelihood fitting: Adam and L-BFGS(-B).

Both optimizers consume a callable theta -> (loss, grad) over raw parameters
and share an exponential-moving-average stopping rule on loss changes. The
L-BFGS path uses the two-loop recursion with a strong-Wolfe line search and,
when box bounds are supplied, projects iterates and directional derivatives
onto the feasible box.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation

_METHODS = ("adam", "lbfgs")


@dataclass(frozen=True)
class OptimizerConfig:
    method: str = "adam"
    learning_rate: float = 0.05
    max_epochs: int = 2000
    lbfgs_memory: int = 10
    bounds: tuple | None = None  # (lower, upper), scalars/arrays/None
    ema_window: int = 10
    ema_threshold: float = 1e-5
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.9
    max_line_search_evals: int = 20

    def __post_init__(self):
        if self.method not in _METHODS:
            raise ContractViolation(f"method must be one of {_METHODS}, got {self.method!r}")
        if self.learning_rate <= 0:
            raise ContractViolation("learning rate must be positive")
        if self.max_epochs < 1:
            raise ContractViolation("max_epochs must be >= 1")
        if self.lbfgs_memory < 1:
            raise ContractViolation("lbfgs_memory must be >= 1")


@dataclass
class FitTrace:
    """Per-step record of one optimization run.

    losses[0] is the starting loss; each later entry is the loss after one
    optimizer step. Line searches evaluate the objective more than once per
    step, so grad_evaluations >= number of steps.
    """

    losses: list[float] = field(default_factory=list)
    raw_params: list[np.ndarray] = field(default_factory=list)
    grad_evaluations: int = 0
    step_times: list[float] = field(default_factory=list)
    eval_counts: list[int] = field(default_factory=list)
    stop_reason: str = ""
    fallback_steps: int = 0

    @property
    def steps(self) -> int:
        return max(len(self.losses) - 1, 0)

    @property
    def best_loss(self) -> float:
        return float(np.min(self.losses))

    def evals_to_reach(self, target: float) -> int | None:
        """Cumulative gradient evaluations spent when the loss first hit target."""
        for loss, evals in zip(self.losses, self.eval_counts):
            if loss <= target:
                return evals
        return None


def ema_converged(loss_history, window: int, threshold: float) -> bool:
    """Stopping rule: EMA of |loss_t - loss_{t-1}| under threshold * (1 + |loss_t|).

    Requires at least `window` recorded differences before it can fire.
    """
    losses = np.asarray(loss_history, dtype=float)
    if losses.size == 0:
        raise ContractViolation("loss history must be nonempty")
    if losses.size < window + 1:
        return False
    diffs = np.abs(np.diff(losses))
    alpha = 2.0 / (window + 1.0)
    ema = diffs[0]
    for d in diffs[1:]:
        ema = (1.0 - alpha) * ema + alpha * d
    return bool(ema <= threshold * (1.0 + abs(losses[-1])))


def two_loop_direction(grad, s_history, y_history) -> np.ndarray:
    """L-BFGS two-loop recursion: approximates H^{-1} grad from curvature pairs."""
    q = np.array(grad, dtype=float)
    if not s_history:
        return q
    alphas = []
    rhos = [1.0 / float(y @ s) for s, y in zip(s_history, y_history)]
    for s, y, rho in zip(reversed(s_history), reversed(y_history), reversed(rhos)):
        a = rho * float(s @ q)
        q -= a * y
        alphas.append(a)
    s_last, y_last = s_history[-1], y_history[-1]
    q *= float(s_last @ y_last) / float(y_last @ y_last)
    for (s, y, rho), a in zip(zip(s_history, y_history, rhos), reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return q


def _expand_bounds(bounds, dim):
    if bounds is None:
        return None
    lo, hi = bounds
    lo = np.full(dim, -np.inf) if lo is None else np.broadcast_to(np.asarray(lo, float), (dim,))
    hi = np.full(dim, np.inf) if hi is None else np.broadcast_to(np.asarray(hi, float), (dim,))
    return lo, hi


def _project(x, bounds):
    if bounds is None:
        return x
    return np.clip(x, bounds[0], bounds[1])


def _path_derivative(g, d, x, bounds):
    """Derivative of f(project(x + a d)) in a: bound-clamped coordinates freeze."""
    if bounds is None:
        return float(g @ d)
    lo, hi = bounds
    frozen = ((x <= lo) & (d < 0)) | ((x >= hi) & (d > 0))
    return float(g[~frozen] @ d[~frozen])


class _Objective:
    """Wraps the user callable: counts evaluations, tracks the best point."""

    def __init__(self, fn):
        self._fn = fn
        self.evaluations = 0
        self.best_loss = np.inf
        self.best_x = None

    def __call__(self, x):
        f, g = self._fn(x)
        f = float(f)
        g = np.asarray(g, dtype=float)
        self.evaluations += 1
        if np.isfinite(f) and f < self.best_loss:
            self.best_loss = f
            self.best_x = np.array(x, dtype=float)
        return f, g


def _interp_bisect(a_lo, a_hi, phi_lo, dphi_lo, phi_hi):
    """Quadratic-interpolation trial point, safeguarded toward bisection."""
    denom = 2.0 * (phi_hi - phi_lo - dphi_lo * (a_hi - a_lo))
    if denom != 0 and np.isfinite(denom):
        trial = a_lo - dphi_lo * (a_hi - a_lo) ** 2 / denom
        span = abs(a_hi - a_lo)
        lo, hi = min(a_lo, a_hi), max(a_lo, a_hi)
        if np.isfinite(trial) and lo + 0.1 * span <= trial <= hi - 0.1 * span:
            return float(trial)
    return 0.5 * (a_lo + a_hi)


def _wolfe_search(objective, x, d, f0, g0, bounds, c1, c2, max_evals):
    """Strong-Wolfe line search along the (projected) ray x + a d.

    Returns (x_new, f_new, g_new, wolfe_satisfied), accepting a sufficient-
    decrease point if the curvature condition cannot be met within the
    evaluation budget; returns None when no acceptable point was found.
    """
    dphi0 = _path_derivative(g0, d, x, bounds)
    if dphi0 >= 0:
        return None

    def phi(a):
        xa = _project(x + a * d, bounds)
        f, g = objective(xa)
        return xa, f, g, _path_derivative(g, d, xa, bounds)

    evals = 0
    a_prev, phi_prev, dphi_prev = 0.0, f0, dphi0
    a = 1.0
    bracket = None
    while evals < max_evals:
        xa, fa, ga, dphia = phi(a)
        evals += 1
        if not np.isfinite(fa):
            bracket = (a_prev, a, phi_prev, dphi_prev, fa)
            break
        if fa > f0 + c1 * a * dphi0 or (evals > 1 and fa >= phi_prev):
            bracket = (a_prev, a, phi_prev, dphi_prev, fa)
            break
        if abs(dphia) <= -c2 * dphi0:
            return xa, fa, ga, True
        if dphia >= 0:
            bracket = (a, a_prev, fa, dphia, phi_prev)
            break
        a_prev, phi_prev, dphi_prev = a, fa, dphia
        a *= 2.0

    if bracket is None:
        return None
    a_lo, a_hi, phi_lo, dphi_lo, phi_hi = bracket
    fallback = None
    while evals < max_evals:
        a = _interp_bisect(a_lo, a_hi, phi_lo, dphi_lo, phi_hi)
        xa, fa, ga, dphia = phi(a)
        evals += 1
        if not np.isfinite(fa) or fa > f0 + c1 * a * dphi0 or fa >= phi_lo:
            a_hi, phi_hi = a, fa
            continue
        if abs(dphia) <= -c2 * dphi0:
            return xa, fa, ga, True
        fallback = (xa, fa, ga)
        if dphia * (a_hi - a_lo) >= 0:
            a_hi, phi_hi = a_lo, phi_lo
        a_lo, phi_lo, dphi_lo = a, fa, dphia
    if fallback is not None:
        # sufficient decrease without curvature: usable step, not a Wolfe one
        return (*fallback, True)
    return None


def fit(loss_and_grad, theta0, config: OptimizerConfig) -> tuple[np.ndarray, FitTrace]:
    """Minimize loss_and_grad from theta0; returns (best theta, trace).

    Stops at max_epochs, on the EMA convergence rule, or on a non-finite
    loss (stop_reason "divergence", returning the best point seen so far).
    """
    theta0 = np.asarray(theta0, dtype=float)
    if not np.all(np.isfinite(theta0)):
        raise ContractViolation("theta0 must be finite")
    bounds = _expand_bounds(config.bounds, theta0.shape[0])
    objective = _Objective(loss_and_grad)
    trace = FitTrace()

    x = _project(theta0.copy(), bounds)
    t0 = time.perf_counter()
    f, g = objective(x)
    trace.losses.append(f)
    trace.raw_params.append(x.copy())
    trace.step_times.append(time.perf_counter() - t0)
    trace.eval_counts.append(objective.evaluations)
    if not np.isfinite(f):
        trace.stop_reason = "divergence"
        trace.grad_evaluations = objective.evaluations
        return x.copy(), trace

    if config.method == "adam":
        _run_adam(objective, x, f, g, bounds, config, trace)
    else:
        _run_lbfgs(objective, x, f, g, bounds, config, trace)

    trace.grad_evaluations = objective.evaluations
    best = objective.best_x if objective.best_x is not None else x
    return np.array(best), trace


def _finish(trace, reason):
    trace.stop_reason = reason


def _run_adam(objective, x, f, g, bounds, cfg, trace):
    beta1, beta2 = cfg.adam_betas
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    for step in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** step)
        v_hat = v / (1.0 - beta2 ** step)
        x = _project(x - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps), bounds)
        f, g = objective(x)
        trace.losses.append(f)
        trace.raw_params.append(x.copy())
        trace.step_times.append(time.perf_counter() - t0)
        trace.eval_counts.append(objective.evaluations)
        if not np.isfinite(f):
            return _finish(trace, "divergence")
        if ema_converged(trace.losses, cfg.ema_window, cfg.ema_threshold):
            return _finish(trace, "ema_converged")
    return _finish(trace, "max_epochs")


def _run_lbfgs(objective, x, f, g, bounds, cfg, trace):
    s_hist: deque = deque(maxlen=cfg.lbfgs_memory)
    y_hist: deque = deque(maxlen=cfg.lbfgs_memory)
    for _ in range(cfg.max_epochs):
        t0 = time.perf_counter()
        if _path_derivative(g, -g, x, bounds) >= 0:
            # free-coordinate gradient is zero: converged for the boxed problem
            return _finish(trace, "projected_gradient_zero")
        d = -two_loop_direction(g, list(s_hist), list(y_hist))
        if _path_derivative(g, d, x, bounds) >= 0:
            d = -g  # stale curvature; restart from steepest descent
        result = _wolfe_search(objective, x, d, f, g, bounds,
                               cfg.wolfe_c1, cfg.wolfe_c2, cfg.max_line_search_evals)
        if result is None:
            stepped = _fallback_step(objective, x, f, g, bounds)
            trace.fallback_steps += 1
            if stepped is None:
                return _finish(trace, "line_search_failure")
            x_new, f_new, g_new = stepped
        else:
            x_new, f_new, g_new, _ = result

        s = x_new - x
        y = g_new - g
        if np.isfinite(f_new) and float(s @ y) > 1e-10 * np.linalg.norm(s) * np.linalg.norm(y):
            s_hist.append(s)
            y_hist.append(y)
        x, f, g = x_new, f_new, g_new
        trace.losses.append(f)
        trace.raw_params.append(x.copy())
        trace.step_times.append(time.perf_counter() - t0)
        trace.eval_counts.append(objective.evaluations)
        if not np.isfinite(f):
            return _finish(trace, "divergence")
        if ema_converged(trace.losses, cfg.ema_window, cfg.ema_threshold):
            return _finish(trace, "ema_converged")
    return _finish(trace, "max_epochs")


def fit_two_phase(loss_and_grad, theta0, config: OptimizerConfig,
                  pretrain_steps: int = 10) -> tuple[np.ndarray, FitTrace]:
    """L-BFGS warm-up for `pretrain_steps` epochs, then Adam from its best point.

    The phase split is a harness knob; the combined trace concatenates both
    phases (the Adam phase re-evaluates its starting point).
    """
    from dataclasses import replace

    pre_cfg = replace(config, method="lbfgs", max_epochs=max(pretrain_steps, 1))
    theta1, pre = fit(loss_and_grad, theta0, pre_cfg)
    theta2, main = fit(loss_and_grad, theta1, replace(config, method="adam"))
    combined = FitTrace(
        losses=pre.losses + main.losses,
        raw_params=pre.raw_params + main.raw_params,
        grad_evaluations=pre.grad_evaluations + main.grad_evaluations,
        step_times=pre.step_times + main.step_times,
        eval_counts=pre.eval_counts + [pre.grad_evaluations + c for c in main.eval_counts],
        stop_reason=main.stop_reason,
        fallback_steps=pre.fallback_steps + main.fallback_steps,
    )
    best = theta2 if main.best_loss <= pre.best_loss else theta1
    return best, combined


def _fallback_step(objective, x, f, g, bounds, tries: int = 30):
    """Backtracking steepest-descent step used when the Wolfe search fails."""
    gnorm = np.linalg.norm(g)
    if gnorm == 0:
        return None
    a = 1.0 / gnorm
    for _ in range(tries):
        x_new = _project(x - a * g, bounds)
        if np.array_equal(x_new, x):
            return None  # projection pinned every coordinate
        f_new, g_new = objective(x_new)
        if np.isfinite(f_new) and f_new < f:
            return x_new, f_new, g_new
        a *= 0.25
    return None
