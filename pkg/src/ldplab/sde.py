"""Pathwise solvers for noise-driven systems.

``solve_sde`` integrates y = u + integral of F(y_-) dx by the left-point
(Euler) scheme on the merged breakpoint grid of the control and the noise,
refined to a step size; jump times are grid points and jumps are applied
exactly as dy = du + F(y_-) dx.  ``solve_skeleton`` solves the deterministic
skeleton equation for finite-variation drivers with a classical 4th-order
one-step method between jumps.  ``solve_ito`` stacks an Ito-form system
(drift part, continuous martingale part, jump parts) into a single driven
equation.  ``residual`` measures how far a candidate y is from satisfying
the skeleton equation, which is the membership test used by the rate
functions.

Left-point quadrature everywhere is forced by the left-limit integrand; the
residual uses trapezoidal quadrature on continuous segments (and left limits
at jumps) so that self-consistency of the 4th-order solution is not drowned
by first-order quadrature error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .paths import CadlagPath, CONSTANT, LINEAR, add_paths, stack_paths

__all__ = [
    "VectorField",
    "SdeProblem",
    "field_catalog",
    "solve_sde",
    "solve_skeleton",
    "solve_ito",
    "residual",
]

_VALIDATION_SAMPLES = 10**4
_VALIDATION_RADIUS = 100.0
_VALIDATION_SEED = 0x5DE


class VectorField:
    """Coefficient field F: R^n -> R^{n x d} with declared bound and Lipschitz constant.

    ``func`` must accept arrays of shape (..., n) and return (..., n, d).
    Construction samples random point pairs in a ball and aborts when the
    declared constants are violated (matrix norms are Frobenius).  Unbounded
    fields are rejected unless ``allow_unbounded`` is set; the Lipschitz
    check always applies.
    """

    def __init__(self, n, d, func, bound, lip, name=None, allow_unbounded=False):
        self.n = int(n)
        self.d = int(d)
        self.func = func
        self.bound = float(bound)
        self.lip = float(lip)
        self.name = name or getattr(func, "__name__", "field")
        self.allow_unbounded = bool(allow_unbounded)
        if self.bound <= 0:
            raise ValueError("bound must be positive")
        if self.lip < 0:
            raise ValueError("Lipschitz constant must be nonnegative")
        self._validate()

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        out = np.asarray(self.func(y), dtype=float)
        want = y.shape[:-1] + (self.n, self.d)
        if out.shape != want:
            raise ValueError(f"field returned shape {out.shape}, expected {want}")
        return out

    def _validate(self):
        rng = np.random.default_rng(_VALIDATION_SEED)
        y1 = rng.normal(size=(_VALIDATION_SAMPLES, self.n))
        y2 = rng.normal(size=(_VALIDATION_SAMPLES, self.n))
        for y in (y1, y2):
            radii = rng.uniform(0.0, _VALIDATION_RADIUS, size=_VALIDATION_SAMPLES)
            norms = np.linalg.norm(y, axis=1)
            y *= (radii / np.where(norms == 0.0, 1.0, norms))[:, None]
        f1 = self(y1)
        f2 = self(y2)
        tol = 1e-9 * max(1.0, self.bound)
        if not self.allow_unbounded:
            fmax = float(np.sqrt((f1**2).sum(axis=(1, 2)).max()))
            if fmax > self.bound + tol:
                raise ValueError(
                    f"field {self.name!r} violates its bound: sampled norm "
                    f"{fmax:.6g} > {self.bound:.6g}"
                )
        diffs = np.sqrt(((f1 - f2) ** 2).sum(axis=(1, 2)))
        dists = np.linalg.norm(y1 - y2, axis=1)
        mask = dists > 1e-12
        ratio = diffs[mask] / dists[mask]
        if ratio.size and float(ratio.max()) > self.lip + 1e-9 * max(1.0, self.lip):
            raise ValueError(
                f"field {self.name!r} violates its Lipschitz constant: sampled "
                f"ratio {float(ratio.max()):.6g} > {self.lip:.6g}"
            )


def field_catalog(name, **params) -> VectorField:
    """Named coefficient fields with analytically known constants.

    constant:      params A (n x d matrix)
    clamp:         params lo, hi; scalar state and noise, F(y) = clip(y, lo, hi)
    clamp_linear:  params A ((n d) x n), c (n d), lo, hi; clip(A y + c) reshaped
    tanh:          params scale, A ((n d) x n), c (n d); scale*tanh(A y + c)
    """
    if name == "constant":
        A = np.atleast_2d(np.asarray(params["A"], dtype=float))
        n, d = A.shape

        def const_field(y):
            return np.broadcast_to(A, y.shape[:-1] + (n, d)).copy()

        return VectorField(n, d, const_field, bound=max(np.linalg.norm(A), 1e-12),
                           lip=0.0, name="constant")
    if name == "clamp":
        lo, hi = float(params["lo"]), float(params["hi"])
        if lo >= hi:
            raise ValueError("need lo < hi")

        def clamp_field(y):
            return np.clip(y, lo, hi)[..., None]

        return VectorField(1, 1, clamp_field, bound=max(abs(lo), abs(hi)),
                           lip=1.0, name="clamp")
    if name == "clamp_linear":
        lo, hi = float(params["lo"]), float(params["hi"])
        A = np.atleast_2d(np.asarray(params["A"], dtype=float))
        c = np.atleast_1d(np.asarray(params["c"], dtype=float))
        n = A.shape[1]
        d = A.shape[0] // n
        if A.shape[0] != n * d or c.shape != (n * d,):
            raise ValueError("A must be (n d) x n and c length n d")

        def clamp_linear_field(y):
            z = np.clip(y @ A.T + c, lo, hi)
            return z.reshape(y.shape[:-1] + (n, d))

        return VectorField(
            n, d, clamp_linear_field,
            bound=np.sqrt(n * d) * max(abs(lo), abs(hi)),
            lip=np.linalg.norm(A, 2), name="clamp_linear",
        )
    if name == "tanh":
        scale = float(params["scale"])
        A = np.atleast_2d(np.asarray(params["A"], dtype=float))
        c = np.atleast_1d(np.asarray(params["c"], dtype=float))
        n = A.shape[1]
        d = A.shape[0] // n
        if A.shape[0] != n * d or c.shape != (n * d,):
            raise ValueError("A must be (n d) x n and c length n d")

        def tanh_field(y):
            z = scale * np.tanh(y @ A.T + c)
            return z.reshape(y.shape[:-1] + (n, d))

        return VectorField(
            n, d, tanh_field,
            bound=abs(scale) * np.sqrt(n * d),
            lip=abs(scale) * np.linalg.norm(A, 2), name="tanh",
        )
    raise ValueError(f"unknown field {name!r}")


@dataclass(frozen=True)
class SdeProblem:
    """Driven system y = u + F(y_-) . x with a refinement step for the solver."""

    F: VectorField
    control: CadlagPath
    noise: CadlagPath
    step: float

    def __post_init__(self):
        if self.control.dim != self.F.n:
            raise ValueError("control dimension must match the field's state dim")
        if self.noise.dim != self.F.d:
            raise ValueError("noise dimension must match the field's noise dim")
        if abs(self.control.horizon - self.noise.horizon) > 1e-12 * max(
            1.0, self.noise.horizon
        ):
            raise ValueError("control and noise must share the horizon")
        if self.step <= 0:
            raise ValueError("step must be positive")


def _refined_grid(paths, step: float) -> np.ndarray:
    """Union of breakpoints refined so that every gap is at most ``step``."""
    times = paths[0].times
    for p in paths[1:]:
        times = np.union1d(times, p.times)
    pieces = [times[:1]]
    for a, b in zip(times[:-1], times[1:]):
        extra = int(np.ceil((b - a) / step - 1e-9))
        pieces.append(np.linspace(a, b, extra + 1)[1:])
    return np.concatenate(pieces)


def _grid_data(path: CadlagPath, grid: np.ndarray):
    """Right values, left values and jump sizes of the path on the grid."""
    vals = np.empty((grid.size, path.dim))
    lefts = np.empty((grid.size, path.dim))
    for i, t in enumerate(grid):
        vals[i] = path._value_at(t)
        lefts[i] = path.left_limit(t) if i else vals[i]
    return vals, lefts, vals - lefts


def _output_path(grid, vals, lefts) -> CadlagPath:
    return CadlagPath(grid, np.asarray(vals), np.asarray(lefts),
                      modes=(LINEAR,) * (grid.size - 1))


def solve_sde(problem: SdeProblem) -> CadlagPath:
    """Left-point Euler solution of y = u + F(y_-) . x.

    Between grid points the update is y_{k+1} = y_k + du + F(y_k) dx using
    the continuous parts of the increments; jumps sitting at grid point
    t_{k+1} are then applied exactly as dy = du_jump + F(y_-) dx_jump.
    """
    u, x, F = problem.control, problem.noise, problem.F
    grid = _refined_grid([u, x], problem.step)
    uv, ul, uj = _grid_data(u, grid)
    xv, xl, xj = _grid_data(x, grid)
    y = uv[0].copy()
    vals = [y.copy()]
    lefts = [y.copy()]
    for k in range(grid.size - 1):
        y_pre = y + (ul[k + 1] - uv[k]) + F(y) @ (xl[k + 1] - xv[k])
        lefts.append(y_pre.copy())
        y = y_pre + uj[k + 1] + F(y_pre) @ xj[k + 1]
        vals.append(y.copy())
    return _output_path(grid, vals, lefts)


def _rk4_segment(F, y, h, slope_u, slope_x):
    def rhs(state):
        return slope_u + F(state) @ slope_x

    k1 = rhs(y)
    k2 = rhs(y + 0.5 * h * k1)
    k3 = rhs(y + 0.5 * h * k2)
    k4 = rhs(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def solve_skeleton(F: VectorField, u: CadlagPath, x: CadlagPath, step: float) -> CadlagPath:
    """Deterministic solution of the skeleton equation y = u + F(y) . x.

    Between jumps integrates dy/dt = du/dt + F(y) dx/dt with the classical
    4th-order one-step method at resolution ``step``; at jump times applies
    y <- y_- + du + F(y_-) dx with left-limit evaluation.
    """
    problem = SdeProblem(F=F, control=u, noise=x, step=step)  # reuse validation
    grid = _refined_grid([u, x], step)
    uv, ul, uj = _grid_data(u, grid)
    xv, xl, xj = _grid_data(x, grid)
    y = uv[0].copy()
    vals = [y.copy()]
    lefts = [y.copy()]
    for k in range(grid.size - 1):
        h = grid[k + 1] - grid[k]
        slope_u = (ul[k + 1] - uv[k]) / h
        slope_x = (xl[k + 1] - xv[k]) / h
        y_pre = _rk4_segment(F, y, h, slope_u, slope_x)
        lefts.append(y_pre.copy())
        y = y_pre + uj[k + 1] + F(y_pre) @ xj[k + 1]
        vals.append(y.copy())
    return _output_path(grid, vals, lefts)


def solve_ito(F1, F2, F3, u: CadlagPath, parts, step: float) -> CadlagPath:
    """Ito-form system: drift, continuous-martingale and jump drivers.

    ``parts`` are the four driver paths (finite-variation part, continuous
    part, small-jump part, large-jump part), each of the noise dimension.
    The small and large jump parts are summed, the three drivers are stacked
    into a 3d-dimensional noise, the three coefficient blocks are stacked
    accordingly, and the equation is handed to ``solve_sde``.
    """
    b_part, c_part, small, large = parts
    dims = {p.dim for p in parts}
    if len(dims) != 1:
        raise ValueError("all driver parts must share the noise dimension")
    d = dims.pop()
    for F in (F1, F2, F3):
        if F.d != d:
            raise ValueError("coefficient noise dims must match the drivers")
    if not (F1.n == F2.n == F3.n):
        raise ValueError("coefficient state dims must agree")
    jump_part = add_paths(small, large)
    stacked = stack_paths([b_part, c_part, jump_part])
    n = F1.n

    def stacked_field(y):
        return np.concatenate([F1(y), F2(y), F3(y)], axis=-1)

    F = VectorField(
        n, 3 * d, stacked_field,
        bound=float(np.sqrt(F1.bound**2 + F2.bound**2 + F3.bound**2)),
        lip=float(np.sqrt(F1.lip**2 + F2.lip**2 + F3.lip**2)),
        name="stacked",
    )
    return solve_sde(SdeProblem(F=F, control=u, noise=stacked, step=step))


def residual(F: VectorField, u: CadlagPath, x: CadlagPath, y: CadlagPath, step: float) -> float:
    """Sup-norm defect of y against the skeleton equation, y as given.

    Accumulates the integral of F(y) dx on the merged refined grid with
    trapezoidal quadrature on continuous segments and exact left-limit terms
    F(y_-) dx at jumps, then returns the largest deviation |y - u - I| over
    grid points (right values and left limits).
    """
    if step <= 0:
        raise ValueError("step must be positive")
    grid = _refined_grid([u, x, y], step)
    uv, ul, _ = _grid_data(u, grid)
    xv, xl, xj = _grid_data(x, grid)
    yv, yl, _ = _grid_data(y, grid)
    f_right = F(yv)
    f_left = F(yl)
    worst = float(np.linalg.norm(yv[0] - uv[0]))
    integral = np.zeros(F.n)
    for k in range(grid.size - 1):
        integral = integral + 0.5 * (f_right[k] + f_left[k + 1]) @ (xl[k + 1] - xv[k])
        defect_left = np.linalg.norm(yl[k + 1] - ul[k + 1] - integral)
        integral = integral + f_left[k + 1] @ xj[k + 1]
        defect = np.linalg.norm(yv[k + 1] - uv[k + 1] - integral)
        worst = max(worst, float(defect_left), float(defect))
    return worst
