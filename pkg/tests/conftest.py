"""Shared helpers for the test suite: random path generation and the
brute-force partition-modulus oracle used to check the DP implementation."""

from functools import lru_cache

import numpy as np

from ldplab.paths import CadlagPath, CONSTANT, LINEAR


def make_random_path(rng, dim=1, max_breaks=6, T=1.0, on_grid=None, jump_scale=1.0):
    """Random valid CadlagPath with mixed segment modes and jumps.

    With ``on_grid=g`` the breakpoint times are multiples of g, so that a
    uniform grid of spacing g contains every breakpoint.
    """
    n_interior = int(rng.integers(0, max_breaks - 1))
    if on_grid is not None:
        slots = np.arange(1, int(round(T / on_grid)))
        n_interior = min(n_interior, slots.size)
        interior = np.sort(rng.choice(slots, size=n_interior, replace=False)) * on_grid
    else:
        interior = np.sort(rng.uniform(0.0, T, size=n_interior))
        interior = interior[np.diff(np.concatenate([[0.0], interior, [T]]))[:-1] > 1e-6]
    times = np.concatenate([[0.0], interior, [T]])
    k = times.size
    values = rng.normal(scale=1.0, size=(k, dim))
    left_values = values.copy()
    modes = []
    for i in range(k - 1):
        if rng.random() < 0.5:
            modes.append(CONSTANT)
            left_values[i + 1] = values[i]
        else:
            modes.append(LINEAR)
            left_values[i + 1] = values[i] + rng.normal(scale=1.0, size=dim)
    # sprinkle jumps at interior breakpoints (values already differ from the
    # assigned left limits unless we re-sync them here)
    for i in range(1, k):
        if rng.random() < 0.5:
            values[i] = left_values[i]  # continuous at this breakpoint
        else:
            values[i] = left_values[i] + rng.normal(scale=jump_scale, size=dim)
    values[0] = left_values[0]
    # re-impose constant-segment consistency after the jump pass
    for i in range(k - 1):
        if modes[i] == CONSTANT:
            left_values[i + 1] = values[i]
    return CadlagPath(times, values, left_values, tuple(modes))


def modulus_bruteforce(path, T, rho, grid_n=100):
    """Exhaustive partition search for w_T(x, rho) on a uniform grid.

    Explores every partition whose cuts sit on the grid (memoized plain
    recursion, independent of the library's DP).  Exact when all the path's
    breakpoints lie on the grid: within a grid cell the extremes of a
    constant/linear piece are the cell-start right value and the cell-end
    left value.
    """
    assert path.dim == 1
    cuts = np.linspace(0.0, T, grid_n + 1)
    vals = np.array([path(c)[0] for c in cuts])
    lefts = np.array([path.left_limit(c)[0] for c in cuts])
    cell_hi = np.maximum(vals[:-1], lefts[1:])
    cell_lo = np.minimum(vals[:-1], lefts[1:])
    n = cuts.size

    def osc(i, j):
        if j <= i:
            return 0.0
        return float(cell_hi[i:j].max() - cell_lo[i:j].min())

    @lru_cache(maxsize=None)
    def best(i):
        # close the partition now: final interval [c_i, T) is unconstrained
        out = osc(i, n - 1)
        for j in range(i + 1, n):
            if cuts[j] - cuts[i] > rho:
                out = min(out, max(osc(i, j), best(j)))
        return out

    return best(0)
