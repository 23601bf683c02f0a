"""Quasi-Newton minimization on numerically differentiated objectives.

Two variants share the same Armijo backtracking line search: a bounded
limited-memory method (gradient projection onto the box, one-sided
differences at active bounds) and an unbounded dense-update method. Both
are deterministic: identical inputs give bit-identical traces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EvaluationError, PreconditionError

TERM_GRAD = "converged-grad"
TERM_STEP = "converged-step"
TERM_FTOL = "converged-ftol"
TERM_MAXITER = "max-iters"


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 100
    grad_tol: float = 1e-5
    step_tol: float = 1e-9
    fd_step: float = 1e-6   # relative finite-difference step
    memory: int = 10        # history pairs for the limited-memory variant
    obj_rel_tol: float = 0.0  # stop once an accepted step improves f by less
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 60

    def __post_init__(self):
        if self.max_iters < 1:
            raise PreconditionError("max_iters must be >= 1")
        for name in ("grad_tol", "step_tol", "fd_step"):
            if getattr(self, name) <= 0:
                raise PreconditionError(f"{name} must be positive")
        if self.obj_rel_tol < 0:
            raise PreconditionError("obj_rel_tol must be >= 0")


@dataclass
class OptimTrace:
    """Accepted iterates: (state copy, objective, inf-norm of gradient)."""

    iterates: list = field(default_factory=list)
    termination: str = ""

    def record(self, x, fx, gnorm):
        self.iterates.append((x.copy(), float(fx), float(gnorm)))

    @property
    def objectives(self):
        return [f for (_, f, _) in self.iterates]

    @property
    def n_iters(self):
        return max(len(self.iterates) - 1, 0)


def _eval(f, x, coordinate=None):
    v = float(f(x))
    if not np.isfinite(v):
        raise EvaluationError(f"objective returned {v} at x={x!r}",
                              coordinate=coordinate)
    return v


def numeric_gradient(f, x, fd_step: float = 1e-6) -> np.ndarray:
    """Central differences with per-coordinate step fd_step * max(1, |x_i|)."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(len(x)):
        h = fd_step * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (_eval(f, xp, i) - _eval(f, xm, i)) / (2.0 * h)
    return g


def _bounded_gradient(f, x, fx, lo, hi, fd_step):
    """Central differences, switching to one-sided at active bounds.

    Probe points never leave [lo, hi].
    """
    g = np.zeros_like(x)
    for i in range(len(x)):
        h = fd_step * max(1.0, abs(x[i]))
        room_up = hi[i] - x[i]
        room_dn = x[i] - lo[i]
        if room_up >= h and room_dn >= h:
            xp = x.copy()
            xm = x.copy()
            xp[i] += h
            xm[i] -= h
            g[i] = (_eval(f, xp, i) - _eval(f, xm, i)) / (2.0 * h)
        elif room_up >= h:
            xp = x.copy()
            xp[i] += h
            g[i] = (_eval(f, xp, i) - fx) / h
        elif room_dn >= h:
            xm = x.copy()
            xm[i] -= h
            g[i] = (fx - _eval(f, xm, i)) / h
        else:
            g[i] = 0.0  # interval narrower than the probe; treat as flat
    return g


def _normalize_bounds(bounds, n):
    if bounds is None:
        return np.full(n, -np.inf), np.full(n, np.inf)
    lo = np.full(n, -np.inf)
    hi = np.full(n, np.inf)
    for i, pair in enumerate(bounds):
        if pair is None:
            continue
        a, b = pair
        lo[i] = -np.inf if a is None else float(a)
        hi[i] = np.inf if b is None else float(b)
    if np.any(lo > hi):
        raise PreconditionError("lower bound exceeds upper bound")
    return lo, hi


def _line_search(f, x, fx, g, d, lo, hi, cfg):
    """Backtracking Armijo on the projected step; largest passing step wins."""
    alpha = 1.0
    for _ in range(cfg.max_backtracks):
        x_new = np.clip(x + alpha * d, lo, hi)
        s = x_new - x
        if np.max(np.abs(s)) == 0.0:
            return None
        f_new = float(f(x_new))
        if np.isfinite(f_new) and f_new <= fx + cfg.armijo_c1 * float(g @ s):
            return x_new, f_new, s
        alpha *= cfg.backtrack
    return None


def _two_loop(g, history, gamma):
    q = g.copy()
    alphas = []
    for s, y, rho in reversed(history):
        a = rho * (s @ q)
        alphas.append(a)
        q -= a * y
    q *= gamma
    for (s, y, rho), a in zip(history, reversed(alphas)):
        b = rho * (y @ q)
        q += (a - b) * s
    return q


def minimize_bounded(f, x0, bounds, cfg: OptimizerConfig = OptimizerConfig()):
    """Limited-memory quasi-Newton descent inside a coordinate box.

    bounds: per-coordinate (lo, hi) pairs, None entries for unbounded.
    Returns (x, f(x), OptimTrace). The objective is never evaluated outside
    the box, accepted objectives decrease monotonically, and termination is
    one of converged-grad / converged-step / max-iters.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    lo, hi = _normalize_bounds(bounds, len(x))
    if np.any(x < lo) or np.any(x > hi):
        raise PreconditionError("x0 violates bounds")

    fx = _eval(f, x)
    g = _bounded_gradient(f, x, fx, lo, hi, cfg.fd_step)
    trace = OptimTrace()
    trace.record(x, fx, np.max(np.abs(g)))

    history = []
    gamma = 1.0
    for _ in range(cfg.max_iters):
        if np.max(np.abs(g)) <= cfg.grad_tol:
            trace.termination = TERM_GRAD
            return x, fx, trace

        d = -_two_loop(g, history, gamma)
        if g @ d >= 0:  # direction lost descent property; restart
            history.clear()
            gamma = 1.0
            d = -g

        hit = _line_search(f, x, fx, g, d, lo, hi, cfg)
        if hit is None:
            trace.termination = TERM_STEP
            return x, fx, trace
        x_new, f_new, s = hit

        g_new = _bounded_gradient(f, x_new, f_new, lo, hi, cfg.fd_step)
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            history.append((s, y, 1.0 / sy))
            if len(history) > cfg.memory:
                history.pop(0)
            gamma = sy / float(y @ y)

        f_prev = fx
        x, fx, g = x_new, f_new, g_new
        trace.record(x, fx, np.max(np.abs(g)))
        if np.max(np.abs(s)) <= cfg.step_tol * (1.0 + np.max(np.abs(x))):
            trace.termination = TERM_STEP
            return x, fx, trace
        if cfg.obj_rel_tol > 0 and (f_prev - fx) <= cfg.obj_rel_tol * max(
                abs(f_prev), abs(fx), 1e-12):
            trace.termination = TERM_FTOL
            return x, fx, trace

    trace.termination = TERM_MAXITER
    return x, fx, trace


def minimize(f, x0, cfg: OptimizerConfig = OptimizerConfig()):
    """Unbounded quasi-Newton descent with a dense inverse-Hessian update."""
    x = np.asarray(x0, dtype=np.float64).copy()
    n = len(x)
    fx = _eval(f, x)
    g = numeric_gradient(f, x, cfg.fd_step)
    trace = OptimTrace()
    trace.record(x, fx, np.max(np.abs(g)))

    h_inv = np.eye(n)
    first = True
    for _ in range(cfg.max_iters):
        if np.max(np.abs(g)) <= cfg.grad_tol:
            trace.termination = TERM_GRAD
            return x, fx, trace

        d = -h_inv @ g
        if g @ d >= 0:
            h_inv = np.eye(n)
            d = -g

        hit = _line_search(f, x, fx, g, d, -np.inf, np.inf, cfg)
        if hit is None:
            trace.termination = TERM_STEP
            return x, fx, trace
        x_new, f_new, s = hit

        g_new = numeric_gradient(f, x_new, cfg.fd_step)
        y = g_new - g
        sy = float(s @ y)
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            if first:
                h_inv *= sy / float(y @ y)
                first = False
            rho = 1.0 / sy
            a = np.eye(n) - rho * np.outer(s, y)
            h_inv = a @ h_inv @ a.T + rho * np.outer(s, s)

        f_prev = fx
        x, fx, g = x_new, f_new, g_new
        trace.record(x, fx, np.max(np.abs(g)))
        if np.max(np.abs(s)) <= cfg.step_tol * (1.0 + np.max(np.abs(x))):
            trace.termination = TERM_STEP
            return x, fx, trace
        if cfg.obj_rel_tol > 0 and (f_prev - fx) <= cfg.obj_rel_tol * max(
                abs(f_prev), abs(fx), 1e-12):
            trace.termination = TERM_FTOL
            return x, fx, trace

    trace.termination = TERM_MAXITER
    return x, fx, trace


def dump_trace_csv(trace: OptimTrace, path) -> None:
    """CSV of (iter, objective, grad_norm) for plotting decay curves."""
    with open(path, "w", newline="") as fh:
        fh.write("iter,objective,grad_norm\n")
        for i, (_, fx, gn) in enumerate(trace.iterates):
            fh.write(f"{i},{fx!r},{gn!r}\n")
