"""L-BFGS with a Strong Wolfe line search, and a central-difference gradient."""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LbfgsConfig:
    max_steps: int = 10
    learning_rate: float = 1.0
    history: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    grad_tol: float = 1e-8
    change_tol: float = 1e-12
    max_evals: int = 25  # per line search

    def __post_init__(self):
        if not 0 < self.c1 < self.c2 < 1:
            raise ValueError(f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")
        for name in ("max_steps", "history", "max_evals"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < (0 if name == "max_steps" else 1):
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if not (self.learning_rate > 0 and math.isfinite(self.learning_rate)):
            raise ValueError("learning_rate must be positive")
        if self.grad_tol < 0 or self.change_tol < 0:
            raise ValueError("tolerances must be >= 0")


@dataclass(frozen=True)
class Step:
    """One accepted iterate. phi0/dphi0 are value and slope at the start of the step."""

    value: float
    step_length: float
    phi0: float
    dphi0: float
    dphi: float
    evaluations: int

    def armijo(self, c1: float) -> bool:
        return self.value <= self.phi0 + c1 * self.step_length * self.dphi0

    def curvature(self, c2: float) -> bool:
        return abs(self.dphi) <= -c2 * self.dphi0


@dataclass
class Trace:
    initial_value: float
    steps: list = field(default_factory=list)
    status: str = "max_steps"
    evaluations: int = 1

    @property
    def values(self) -> list:
        return [self.initial_value] + [s.value for s in self.steps]

    @property
    def failed(self) -> bool:
        return self.status == "line_search_failed"


class OptimizationError(RuntimeError):
    pass


def _cubic_min(x1, f1, g1, x2, f2, g2, lo, hi):
    """Minimiser of the cubic through two points with slopes, clamped to [lo, hi]."""
    if not (math.isfinite(f1) and math.isfinite(f2)) or x1 == x2:
        return 0.5 * (lo + hi)
    d1 = g1 + g2 - 3 * (f1 - f2) / (x1 - x2)
    disc = d1 * d1 - g1 * g2
    if disc < 0:
        return 0.5 * (lo + hi)
    d2 = math.sqrt(disc)
    if x1 <= x2:
        t = x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2 * d2))
    else:
        t = x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2 * d2))
    if not math.isfinite(t):
        return 0.5 * (lo + hi)
    return min(max(t, lo), hi)


def _evaluate(fun, x):
    f, g = fun(x)
    f = float(f)
    g = np.asarray(g, dtype=np.float64)
    if not (math.isfinite(f) and np.all(np.isfinite(g))):
        return math.inf, g
    return f, g


def strong_wolfe(fun, x, d, f0, g0, t, c1=1e-4, c2=0.9, max_evals=25, change_tol=1e-12):
    """Bracket then zoom until both Strong Wolfe inequalities hold.

    Returns (ok, t, f, g, evaluations). When ok is False the returned point is
    the lowest Armijo-satisfying trial seen, or t = 0 if there was none.
    """
    dphi0 = float(g0 @ d)
    dmax = float(np.max(np.abs(d)))
    best = (0.0, f0, g0)

    def probe(step):
        f, g = _evaluate(fun, x + step * d)
        return f, g, (float(g @ d) if math.isfinite(f) else math.nan)

    def armijo(step, f):
        return f <= f0 + c1 * step * dphi0

    t_prev, f_prev, dphi_prev = 0.0, f0, dphi0
    f, g, dphi = probe(t)
    evals = 1
    lo = hi = None
    while True:
        if armijo(t, f) and f < best[1]:
            best = (t, f, g)
        if not armijo(t, f) or (evals > 1 and f >= f_prev):
            lo, hi = (t_prev, f_prev, dphi_prev), (t, f, dphi)
            break
        if abs(dphi) <= -c2 * dphi0:
            return True, t, f, g, evals
        if dphi >= 0:
            lo, hi = (t, f, dphi), (t_prev, f_prev, dphi_prev)
            break
        if evals >= max_evals:
            return False, best[0], best[1], best[2], evals
        nxt = _cubic_min(t_prev, f_prev, dphi_prev, t, f, dphi, t + 0.01 * (t - t_prev), 10 * t)
        t_prev, f_prev, dphi_prev = t, f, dphi
        t = nxt
        f, g, dphi = probe(t)
        evals += 1

    # zoom: lo always satisfies Armijo and has the lower value
    while evals < max_evals:
        a, b = min(lo[0], hi[0]), max(lo[0], hi[0])
        width = b - a
        if width * dmax < change_tol:
            break
        t = _cubic_min(lo[0], lo[1], lo[2], hi[0], hi[1], hi[2], a, b)
        t = min(max(t, a + 0.1 * width), b - 0.1 * width)
        f, g, dphi = probe(t)
        evals += 1
        if not armijo(t, f) or f >= lo[1]:
            hi = (t, f, dphi)
            continue
        if f < best[1]:
            best = (t, f, g)
        if abs(dphi) <= -c2 * dphi0:
            return True, t, f, g, evals
        if dphi * (hi[0] - lo[0]) >= 0:
            hi = lo
        lo = (t, f, dphi)
    return False, best[0], best[1], best[2], evals


def two_loop_direction(grad, s_hist, y_hist) -> np.ndarray:
    """-H grad for the limited-memory inverse Hessian built from (s, y) pairs."""
    q = -np.asarray(grad, dtype=np.float64)
    if not s_hist:
        return q
    rho = [1.0 / float(y @ s) for s, y in zip(s_hist, y_hist)]
    alpha = [0.0] * len(s_hist)
    for i in range(len(s_hist) - 1, -1, -1):
        alpha[i] = rho[i] * float(s_hist[i] @ q)
        q -= alpha[i] * y_hist[i]
    y_last = y_hist[-1]
    q *= float(s_hist[-1] @ y_last) / float(y_last @ y_last)
    for i in range(len(s_hist)):
        beta = rho[i] * float(y_hist[i] @ q)
        q += (alpha[i] - beta) * s_hist[i]
    return q


def minimize(fun, x0, config: LbfgsConfig | None = None):
    """Minimise fun(x) -> (value, gradient). Returns (x, value, trace).

    The first trial step is scaled by min(1, 1/|g|_1) because no curvature
    is known yet; later steps start from the configured learning rate.
    """
    cfg = config or LbfgsConfig()
    x = np.array(x0, dtype=np.float64).reshape(-1)
    f, g = _evaluate(fun, x)
    if not math.isfinite(f):
        raise OptimizationError("objective or gradient is not finite at the starting point")
    trace = Trace(initial_value=f)
    if np.max(np.abs(g), initial=0.0) <= cfg.grad_tol:
        trace.status = "converged"
        return x, f, trace

    s_hist: deque = deque(maxlen=cfg.history)
    y_hist: deque = deque(maxlen=cfg.history)
    for k in range(cfg.max_steps):
        d = two_loop_direction(g, s_hist, y_hist)
        dphi0 = float(g @ d)
        if not dphi0 < 0:
            s_hist.clear()
            y_hist.clear()
            d = -g
            dphi0 = float(g @ d)
        t0 = cfg.learning_rate * (min(1.0, 1.0 / np.sum(np.abs(g))) if not s_hist else 1.0)
        ok, t, f_new, g_new, evals = strong_wolfe(
            fun, x, d, f, g, t0, cfg.c1, cfg.c2, cfg.max_evals, cfg.change_tol)
        trace.evaluations += evals
        if not ok:
            if t > 0 and f_new < f:
                x, f, g = x + t * d, f_new, g_new
            trace.status = "line_search_failed"
            logger.debug("line search failed at step %d; keeping best iterate", k)
            break
        s = t * d
        y = g_new - g
        if float(y @ s) > 1e-10:
            s_hist.append(s)
            y_hist.append(y)
        trace.steps.append(Step(f_new, t, f, dphi0, float(g_new @ d), evals))
        change = f - f_new
        x, f, g = x + s, f_new, g_new
        if np.max(np.abs(g)) <= cfg.grad_tol:
            trace.status = "converged"
            break
        if abs(change) < cfg.change_tol or np.max(np.abs(s)) < cfg.change_tol:
            trace.status = "stalled"
            break
    return x, f, trace


def finite_difference_gradient(fun, x, h: float = 1e-5, indices=None) -> np.ndarray:
    """Central differences. fun may return a scalar or (value, gradient)."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.array(x, dtype=np.float64).reshape(-1)
    idx = range(len(x)) if indices is None else indices

    def value(p):
        out = fun(p)
        v = float(out[0] if isinstance(out, tuple) else out)
        if not math.isfinite(v):
            raise ValueError("objective is not finite near x")
        return v

    grad = np.zeros_like(x)
    for i in idx:
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        grad[i] = (value(xp) - value(xm)) / (2 * h)
    return grad
