"""Rate functions on path space and their minimization.

``eval_control_rate`` implements the control rate I' for the supported
noise families: quadratic action for the Brownian family, time integral of
the cumulant conjugate for the Levy family, and sums over independent
coordinate blocks.  ``eval_composite_rate`` adds the skeleton-equation
membership branch: the value is I'(x) when y solves y = u + F(y) . x within
a residual tolerance and infinity otherwise.

``minimize_endpoint`` searches piecewise-linear controls on a uniform grid
for the cheapest control that drives the skeleton solution into a target
event (terminal level, terminal point, or running maximum).  The event
constraint is handled by a quadratic penalty with multiplicative
continuation; the inner optimizer is a derivative-free simplex for small
grids and finite-difference gradient descent with backtracking otherwise,
with several independent starts.  The returned value is the best feasible
iterate and is an upper bound for the projected rate: controls with jumps
are outside the search class.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize as _sciopt

from . import levy as _levy
from .paths import CadlagPath, select_coords
from .sde import VectorField, _grid_data, _refined_grid

__all__ = [
    "RateModel",
    "ControlGrid",
    "EndpointEvent",
    "OptimizerConfig",
    "OptimizationFailure",
    "eval_control_rate",
    "eval_composite_rate",
    "minimize_endpoint",
]

_INF = float("inf")
_BARRIER = 1e9


@dataclass(frozen=True)
class RateModel:
    """Control rate evaluator for a noise family on [0, T]."""

    kind: str
    T: float
    cov: np.ndarray = None
    triplet: object = None
    components: tuple = ()

    @staticmethod
    def brownian(cov, T, scale=1.0) -> "RateModel":
        cov = np.atleast_2d(np.asarray(cov, dtype=float)) * float(scale)
        if cov.shape[0] != cov.shape[1]:
            raise ValueError("covariance must be square")
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise ValueError("covariance must be positive definite")
        return RateModel(kind="brownian", T=float(T), cov=cov)

    @staticmethod
    def levy(triplet, T) -> "RateModel":
        return RateModel(kind="levy", T=float(T), triplet=triplet)

    @staticmethod
    def product(components, T) -> "RateModel":
        comps = tuple((m, tuple(int(c) for c in coords)) for m, coords in components)
        seen = [c for _, coords in comps for c in coords]
        dim = sum(m.dim for m, _ in comps)
        if sorted(seen) != list(range(dim)):
            raise ValueError("component blocks must be disjoint and cover all coordinates")
        for m, coords in comps:
            if m.dim != len(coords):
                raise ValueError("component dimension must match its block size")
            if abs(m.T - float(T)) > 1e-12 * max(1.0, float(T)):
                raise ValueError("component horizons must match the product horizon")
        return RateModel(kind="product", T=float(T), components=comps)

    @property
    def dim(self) -> int:
        if self.kind == "brownian":
            return self.cov.shape[0]
        if self.kind == "levy":
            return self.triplet.dim
        return sum(m.dim for m, _ in self.components)


def _segment_slopes(x: CadlagPath):
    """(durations, slopes) of every inter-breakpoint segment."""
    dt = np.diff(x.times)
    disp = x.left_values[1:] - x.values[:-1]
    return dt, disp / dt[:, None]


def _slope_rates(model: RateModel, slopes: np.ndarray) -> np.ndarray:
    """Per-slope rate density Lambda*(slope) (or the quadratic form) as an array."""
    if model.kind == "brownian":
        sol = np.linalg.solve(model.cov, slopes.T).T
        return 0.5 * np.einsum("kd,kd->k", slopes, sol)
    if model.kind == "levy":
        if model.triplet.dim == 1:
            return _levy.legendre_batch(model.triplet, slopes[:, 0])
        return np.array([_levy.legendre(model.triplet, z) for z in slopes])
    raise ValueError("product models evaluate per component")


def eval_control_rate(model: RateModel, x: CadlagPath) -> float:
    """Control rate I'(x); inf when x leaves the finite class.

    Finite only for jump-free paths starting at 0 (piecewise-linear controls
    are absolutely continuous); then the Brownian value is the quadratic
    action sum over segments and the Levy value the conjugate integral.
    """
    if x.dim != model.dim:
        raise ValueError("path dimension does not match the model")
    if abs(x.horizon - model.T) > 1e-12 * max(1.0, model.T):
        raise ValueError("path horizon does not match the model")
    if model.kind == "product":
        total = 0.0
        for comp, coords in model.components:
            sub = eval_control_rate(comp, select_coords(x, coords))
            if np.isinf(sub):
                return _INF
            total += sub
        return total
    if x.has_jumps() or np.linalg.norm(x.values[0]) > 0.0:
        return _INF
    dt, slopes = _segment_slopes(x)
    dens = _slope_rates(model, slopes)
    if np.any(np.isinf(dens)):
        return _INF
    return float(np.sum(dt * dens))


def eval_composite_rate(model: RateModel, F: VectorField, x: CadlagPath,
                        u: CadlagPath, y: CadlagPath, tol: float,
                        step: float = None) -> float:
    """Two-branch composite rate: I'(x) when y solves the skeleton equation.

    The membership test is residual(F, u, x, y) <= tol in sup norm (the
    finite-variation requirement is automatic in this path class); the
    default residual resolution is 1e-3 of the horizon.
    """
    from .sde import residual

    if tol <= 0:
        raise ValueError("tol must be positive")
    step = 1e-3 * x.horizon if step is None else step
    if residual(F, u, x, y, step=step) <= tol:
        return eval_control_rate(model, x)
    return _INF


@dataclass(frozen=True)
class ControlGrid:
    """Uniform piecewise-linear control parametrization: m segments from 0."""

    m: int

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("need at least one segment")


@dataclass(frozen=True)
class EndpointEvent:
    """Target event for the solved skeleton path.

    kind: "terminal_ge" (terminal coordinate >= level), "terminal_eq"
    (terminal coordinate equals level within tol), or "sup_ge" (running max
    of the coordinate >= level).
    """

    kind: str
    level: float
    coordinate: int = 0
    tol: float = 1e-3

    def __post_init__(self):
        if self.kind not in ("terminal_ge", "terminal_eq", "sup_ge"):
            raise ValueError(f"unknown event kind {self.kind!r}")


@dataclass(frozen=True)
class OptimizerConfig:
    starts: int = 8
    stages: int = 5
    penalty0: float = 10.0
    iters: int = 60
    solver_step: float = None
    event_tol: float = 1e-3
    seed: int = 0
    simplex_dim_cap: int = 8


class OptimizationFailure(RuntimeError):
    """No feasible control found; carries the optimizer trace."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


class _BatchSkeleton:
    """RK4 skeleton solves for batches of piecewise-linear controls.

    The control grid has m uniform segments on [0, T]; solver cells refine
    each segment.  The fixed control path u is pre-evaluated on the cells;
    its jumps apply at cell ends.
    """

    def __init__(self, F: VectorField, u: CadlagPath, m: int, solver_step: float):
        self.F = F
        self.m = m
        T = u.horizon
        self.T = T
        self.delta = T / m
        knots = np.linspace(0.0, T, m + 1)
        grid = _refined_grid([u], max(solver_step, 1e-9))
        grid = np.union1d(grid, knots)
        self.grid = grid
        self.h = np.diff(grid)
        uv, ul, uj = _grid_data(u, grid)
        self.u_slope = (ul[1:] - uv[:-1]) / self.h[:, None]
        self.u_jump = uj
        self.y0 = uv[0]
        # control segment owning each cell (cells never straddle knots)
        self.cell_seg = np.minimum(
            (np.searchsorted(knots, grid[:-1], side="right") - 1), m - 1
        )

    def solve(self, increments: np.ndarray, coordinate: int):
        """increments: (B, m, d) -> terminal (B, n), running max of coordinate (B,)."""
        B = increments.shape[0]
        slopes = increments / self.delta
        F = self.F
        Y = np.broadcast_to(self.y0, (B, F.n)).copy()
        run_max = Y[:, coordinate].copy()
        for k in range(self.grid.size - 1):
            h = self.h[k]
            su = self.u_slope[k]
            sx = slopes[:, self.cell_seg[k], :]

            def rhs(state):
                return su + np.einsum("bnd,bd->bn", F(state), sx)

            k1 = rhs(Y)
            k2 = rhs(Y + 0.5 * h * k1)
            k3 = rhs(Y + 0.5 * h * k2)
            k4 = rhs(Y + h * k3)
            Y = Y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            jump = self.u_jump[k + 1]
            if np.any(jump):
                Y = Y + jump
            np.maximum(run_max, Y[:, coordinate], out=run_max)
        return Y, run_max


def _batch_rate(model: RateModel, increments: np.ndarray, delta: float) -> np.ndarray:
    """Control rate per batch row for piecewise-linear controls."""
    B, m, d = increments.shape
    slopes = increments / delta
    if model.kind == "product":
        total = np.zeros(B)
        for comp, coords in model.components:
            total = total + _batch_rate(comp, increments[:, :, coords], delta)
        return total
    dens = _slope_rates(model, slopes.reshape(B * m, d)).reshape(B, m)
    with np.errstate(invalid="ignore"):
        return delta * dens.sum(axis=1)


def _violation(event: EndpointEvent, terminal: np.ndarray, run_max: np.ndarray) -> np.ndarray:
    c = event.coordinate
    if event.kind == "terminal_ge":
        return np.maximum(0.0, event.level - terminal[:, c])
    if event.kind == "terminal_eq":
        return np.abs(terminal[:, c] - event.level)
    return np.maximum(0.0, event.level - run_max)


def _penalized(model, solver, event, flat, weight, delta, m, d):
    """Objective, rate and violation arrays for flattened parameter rows."""
    inc = flat.reshape(-1, m, d)
    rate = _batch_rate(model, inc, delta)
    terminal, run_max = solver.solve(inc, event.coordinate)
    viol = _violation(event, terminal, run_max)
    # barrier replaces infinite rates so descent can re-enter the finite region
    bad = ~np.isfinite(rate)
    if bad.any():
        norms = np.linalg.norm(flat, axis=1)
        rate = np.where(bad, _BARRIER * (1.0 + norms), rate)
    return rate + weight * viol**2, rate, viol


def _initial_starts(event, starts, m, d, level_scale, rng):
    """Deterministic ramp start toward the event level plus random starts."""
    inits = np.zeros((starts, m, d))
    for s in range(starts):
        if s == 0:
            inits[s, :, min(d - 1, 0)] = level_scale / m
        elif s == 1:
            pass  # zero control
        else:
            inits[s] = rng.normal(scale=max(abs(level_scale), 0.5) / m, size=(m, d))
            inits[s, :, 0] += level_scale / m
    return inits.reshape(starts, m * d)


def _descent_stage(objective, X, iters):
    """Finite-difference gradient descent with backtracking, batched over starts."""
    S, P = X.shape
    fX, _, _ = objective(X)
    alpha = np.full(S, 1.0)
    for _ in range(iters):
        hstep = 1e-6 * (1.0 + np.abs(X))
        probes = np.empty((S, 2 * P, P))
        probes[:] = X[:, None, :]
        idx = np.arange(P)
        probes[:, idx, idx] += hstep
        probes[:, P + idx, idx] -= hstep
        fp, _, _ = objective(probes.reshape(S * 2 * P, P))
        fp = fp.reshape(S, 2 * P)
        grad = (fp[:, :P] - fp[:, P:]) / (2.0 * hstep)
        gnorm2 = (grad**2).sum(axis=1)
        if np.all(np.sqrt(gnorm2) <= 1e-10 * (1.0 + np.abs(fX))):
            break
        alpha = np.minimum(alpha * 4.0, 1e6)
        accepted = np.zeros(S, dtype=bool)
        Xn, fn = X.copy(), fX.copy()
        for _ in range(40):
            trial = X - alpha[:, None] * grad
            ft, _, _ = objective(trial)
            ok = (ft <= fX - 1e-4 * alpha * gnorm2) & ~accepted
            Xn[ok] = trial[ok]
            fn[ok] = ft[ok]
            accepted |= ok
            if accepted.all():
                break
            alpha = np.where(accepted, alpha, alpha * 0.5)
        X, fX = Xn, fn
    return X


def _simplex_stage(objective, X, iters):
    """Nelder-Mead per start (small parameter counts only)."""
    S, P = X.shape
    out = X.copy()
    for s in range(S):
        def fun(p):
            return float(objective(p[None, :])[0][0])

        res = _sciopt.minimize(
            fun, X[s], method="Nelder-Mead",
            options={"maxiter": iters * (P + 1) * 4, "xatol": 1e-10, "fatol": 1e-12},
        )
        out[s] = res.x
    return out


def minimize_endpoint(model: RateModel, F: VectorField, u: CadlagPath,
                      event: EndpointEvent, grid: ControlGrid,
                      opt: OptimizerConfig = None):
    """Minimize the control rate subject to an event on the skeleton solution.

    Returns (x_star, rate, trace) for the best feasible iterate (event
    violation within ``opt.event_tol``); raises OptimizationFailure when no
    start produces a feasible control.  The reported value is an upper bound
    for the projected rate: only piecewise-linear controls on the grid are
    searched.
    """
    opt = opt or OptimizerConfig()
    m, d = grid.m, model.dim
    if F.d != d:
        raise ValueError("field noise dimension must match the model")
    if F.n != u.dim:
        raise ValueError("control path dimension must match the field's state dim")
    T = u.horizon
    if abs(T - model.T) > 1e-12 * max(1.0, T):
        raise ValueError("control path horizon must match the model")
    delta = T / m
    solver_step = opt.solver_step if opt.solver_step is not None else T / 64.0
    solver = _BatchSkeleton(F, u, m, solver_step)
    rng = np.random.default_rng(opt.seed)
    level_scale = event.level
    X = _initial_starts(event, opt.starts, m, d, level_scale, rng)

    weights = [opt.penalty0 * 10.0**s for s in range(opt.stages)]
    use_simplex = m * d <= opt.simplex_dim_cap
    stage_log = []
    for w in weights:
        def objective(flat):
            return _penalized(model, solver, event, flat, w, delta, m, d)

        if use_simplex:
            X = _simplex_stage(objective, X, opt.iters)
        else:
            X = _descent_stage(objective, X, opt.iters)
        _, rate_w, viol_w = _penalized(model, solver, event, X, w, delta, m, d)
        stage_log.append({
            "weight": w,
            "best_rate": float(np.nanmin(rate_w)),
            "max_violation": float(viol_w.max()),
        })

    rates = _batch_rate(model, X.reshape(-1, m, d), delta)
    terminal, run_max = solver.solve(X.reshape(-1, m, d), event.coordinate)
    viols = _violation(event, terminal, run_max)
    feasible = (viols <= opt.event_tol) & np.isfinite(rates)
    trace = {
        "method": "simplex" if use_simplex else "fd_gradient_descent",
        "m": m,
        "starts": opt.starts,
        "stages": stage_log,
        "rates": [float(r) for r in rates],
        "violations": [float(v) for v in viols],
        "feasible": [bool(f) for f in feasible],
        "upper_bound": True,
    }
    if not feasible.any():
        raise OptimizationFailure(
            "no start produced a control satisfying the event within tolerance",
            trace,
        )
    best = int(np.argmin(np.where(feasible, rates, _INF)))
    trace["best_start"] = best
    inc = X[best].reshape(m, d)
    knots = np.linspace(0.0, T, m + 1)
    xvals = np.vstack([np.zeros(d), np.cumsum(inc, axis=0)])
    x_star = CadlagPath(knots, xvals)
    rate = eval_control_rate(model, x_star)
    return x_star, float(rate), trace
