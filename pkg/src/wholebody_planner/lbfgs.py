"""Limited-memory BFGS with a strong-Wolfe line search."""

from __future__ import annotations

import logging
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import line_search

log = logging.getLogger(__name__)

Objective = Callable[[NDArray[np.float64]], tuple[float, NDArray[np.float64]]]


class LineSearchError(RuntimeError):
    """No strong-Wolfe step found, even along steepest descent."""

    def __init__(self, message: str, x: NDArray[np.float64], f: float):
        super().__init__(message)
        self.x = x
        self.f = f


@dataclass
class LbfgsResult:
    x: NDArray[np.float64]
    f: float
    g: NDArray[np.float64]
    iterations: int
    evaluations: int
    status: str
    f_history: list[float] = field(default_factory=list)


class _Cached:
    # line_search asks for f and f' separately; evaluate once per point.
    def __init__(self, fun: Objective):
        self.fun = fun
        self.key = None
        self.val = None
        self.evaluations = 0

    def __call__(self, x):
        key = x.tobytes()
        if key != self.key:
            self.val = self.fun(x)
            self.key = key
            self.evaluations += 1
        return self.val

    def f(self, x):
        return self(x)[0]

    def g(self, x):
        return self(x)[1]


def _two_loop(g, s_hist, y_hist):
    q = g.copy()
    alphas = []
    for s, y in reversed(list(zip(s_hist, y_hist))):
        rho = 1.0 / (y @ s)
        a = rho * (s @ q)
        alphas.append((rho, a))
        q -= a * y
    if s_hist:
        s, y = s_hist[-1], y_hist[-1]
        q *= (s @ y) / (y @ y)
    for (s, y), (rho, a) in zip(zip(s_hist, y_hist), reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return -q


def _backtrack(f, x, f0, g, d, c1, shrink=0.5, max_steps=60):
    slope = g @ d
    alpha = 1.0
    for _ in range(max_steps):
        fa = f(x + alpha * d)
        if np.isfinite(fa) and fa <= f0 + c1 * alpha * slope:
            return alpha
        alpha *= shrink
    return None


def minimize_lbfgs(
    fun: Objective,
    x0: NDArray[np.float64],
    memory: int = 8,
    g_tol: float = 1e-5,
    max_iter: int = 2000,
    past: int = 3,
    delta: float = 1e-4,
    c1: float = 1e-4,
    c2: float = 0.9,
    callback: Callable[[int, NDArray[np.float64], float, NDArray[np.float64]], None] | None = None,
) -> LbfgsResult:
    """Minimize ``fun`` returning ``(value, gradient)``.

    Stops when ``|g| < g_tol * max(1, |f|)``, when the relative decrease over
    the last ``past`` iterations falls below ``delta`` (``past=0`` disables
    it), or after ``max_iter`` iterations.
    """
    cached = _Cached(fun)
    x = np.array(x0, dtype=float)
    f, g = cached(x)
    if not np.isfinite(f):
        raise LineSearchError("objective is not finite at the initial point", x, f)
    s_hist: deque = deque(maxlen=memory)
    y_hist: deque = deque(maxlen=memory)
    history = [f]
    status = "max_iter"
    it = 0
    while it < max_iter:
        gnorm = np.linalg.norm(g)
        if gnorm < g_tol * max(1.0, abs(f)):
            status = "gradient"
            break
        d = _two_loop(g, list(s_hist), list(y_hist)) if s_hist else -g / max(gnorm, 1e-12)
        if g @ d >= 0:
            s_hist.clear()
            y_hist.clear()
            d = -g / max(gnorm, 1e-12)
        alpha = None
        for attempt in range(2):
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")  # scipy warns on every failed search
                alpha, *_ = line_search(cached.f, cached.g, x, d, gfk=g, old_fval=f, c1=c1, c2=c2, maxiter=30)
            if alpha is not None:
                break
            log.debug("line search failed at iteration %d, restarting along -g", it)
            s_hist.clear()
            y_hist.clear()
            d = -g / max(gnorm, 1e-12)
        if alpha is None:
            # curvature condition unattainable (kinks): settle for sufficient decrease
            alpha = _backtrack(cached.f, x, f, g, d, c1)
        if alpha is None:
            raise LineSearchError(f"line search failed at iteration {it}", x, f)
        x_new = x + alpha * d
        f_new, g_new = cached(x_new)
        s, y = x_new - x, g_new - g
        if s @ y > 1e-12 * (s @ s):
            s_hist.append(s)
            y_hist.append(y)
        x, f, g = x_new, f_new, g_new
        it += 1
        history.append(f)
        if callback is not None:
            callback(it, x, f, g)
        if past and len(history) > past:
            ref = history[-1 - past]
            if (ref - f) / max(1.0, abs(f)) < delta:
                status = "stalled"
                break
    return LbfgsResult(x, f, g, it, cached.evaluations, status, history)
