"""Levy noise families: exact simulation of the scaled processes

    X_t = b t + sqrt(eps) * Sigma^{1/2} W_t + (scaled compound Poisson jumps),

their characteristic triplets under jump-size truncation, the deterministic
tightness statistics of the scaled family, cumulant functions and convex
(Legendre) conjugates.

The jump measure is a finite atomic measure nu = sum_i lambda_i delta_{x_i},
so simulation is exact in law and every integral against nu is a finite sum.
Jumps of the scaled process have sizes eps * x_i and arrive at rate
lambda_i / eps; by default the compound Poisson part is left uncompensated
(the ``compensated`` flag switches to the convention that atoms with
|x_i| <= 1 are compensated).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .paths import CadlagPath, CONSTANT, LINEAR

__all__ = [
    "JumpMeasure",
    "LevyTriplet",
    "CharTriplet",
    "LegendreConvergenceError",
    "simulate",
    "characteristics",
    "three_families",
    "xi_process",
    "cumulant",
    "legendre",
    "legendre_batch",
]

_DIVERGENCE_CAP = 1e12


@dataclass(frozen=True)
class JumpMeasure:
    """Finite atomic jump measure: atoms x_i (nonzero vectors) with rates lambda_i."""

    atoms: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        rates = np.asarray(self.rates, dtype=float)
        if atoms.shape[0] != rates.shape[0]:
            raise ValueError("atoms and rates must have matching lengths")
        if np.any(rates <= 0):
            raise ValueError("atom intensities must be positive")
        if atoms.shape[0] and np.any(np.linalg.norm(atoms, axis=1) == 0.0):
            raise ValueError("no atom at the origin")
        atoms.setflags(write=False)
        rates.setflags(write=False)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "rates", rates)

    @property
    def dim(self) -> int:
        return self.atoms.shape[1]

    @property
    def total_rate(self) -> float:
        return float(self.rates.sum())

    @property
    def num_atoms(self) -> int:
        return self.atoms.shape[0]

    def atom_norms(self) -> np.ndarray:
        return np.linalg.norm(self.atoms, axis=1)

    def exp_moment(self, lam: float) -> float:
        """integral of exp(lam |x|) against the measure (always finite here)."""
        return float(np.sum(self.rates * np.exp(lam * self.atom_norms())))

    @staticmethod
    def empty(dim: int) -> "JumpMeasure":
        return JumpMeasure(np.zeros((0, dim)), np.zeros(0))


@dataclass(frozen=True)
class LevyTriplet:
    """Law of the noise family: drift rule, diffusion matrix and jump measure.

    ``drift`` is the constant drift vector b; an optional ``drift_rule``
    callable eps -> vector overrides it per scale (it must stay uniformly
    bounded over eps in (0, 1]).  ``compensated`` selects the convention in
    which atoms with |x_i| <= 1 are compensated in simulation and cumulants.
    """

    dim: int
    drift: np.ndarray = None
    diffusion: np.ndarray = None
    jumps: JumpMeasure = None
    compensated: bool = False
    drift_rule: object = None

    def __post_init__(self):
        d = int(self.dim)
        drift = np.zeros(d) if self.drift is None else np.atleast_1d(
            np.asarray(self.drift, dtype=float)
        )
        if drift.shape != (d,):
            raise ValueError(f"drift must have shape ({d},)")
        diff = self.diffusion
        if diff is None:
            diff = np.zeros((d, d))
        else:
            diff = np.asarray(diff, dtype=float)
            if diff.ndim == 0:
                diff = float(diff) * np.eye(d)
        if diff.shape != (d, d):
            raise ValueError(f"diffusion must have shape ({d}, {d})")
        if not np.allclose(diff, diff.T):
            raise ValueError("diffusion matrix must be symmetric")
        eigvals = np.linalg.eigvalsh(diff)
        if eigvals.min() < -1e-10:
            raise ValueError("diffusion matrix must be nonnegative definite")
        jumps = self.jumps if self.jumps is not None else JumpMeasure.empty(d)
        if jumps.num_atoms and jumps.dim != d:
            raise ValueError("jump measure dimension mismatch")
        drift.setflags(write=False)
        diff.setflags(write=False)
        object.__setattr__(self, "dim", d)
        object.__setattr__(self, "drift", drift)
        object.__setattr__(self, "diffusion", diff)
        object.__setattr__(self, "jumps", jumps)

    def drift_at(self, eps: float) -> np.ndarray:
        if self.drift_rule is not None:
            b = np.atleast_1d(np.asarray(self.drift_rule(eps), dtype=float))
            if b.shape != (self.dim,):
                raise ValueError("drift_rule must return a vector of the noise dim")
            return b
        return self.drift

    def diffusion_root(self) -> np.ndarray:
        """Symmetric square root of the diffusion matrix."""
        w, v = np.linalg.eigh(self.diffusion)
        return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T

    def compensation_flags(self) -> np.ndarray:
        """Per-atom indicator of compensation under the active convention."""
        if not self.compensated or self.jumps.num_atoms == 0:
            return np.zeros(self.jumps.num_atoms, dtype=bool)
        return self.jumps.atom_norms() <= 1.0

    def compensator_drift(self) -> np.ndarray:
        """Drift correction -sum of lambda_i x_i over compensated atoms."""
        flags = self.compensation_flags()
        if not flags.any():
            return np.zeros(self.dim)
        return -np.sum(self.jumps.rates[flags, None] * self.jumps.atoms[flags], axis=0)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "drift": self.drift.tolist(),
            "diffusion": self.diffusion.tolist(),
            "atoms": [
                {"x": x.tolist(), "lambda": float(l)}
                for x, l in zip(self.jumps.atoms, self.jumps.rates)
            ],
            "compensated": self.compensated,
        }

    @staticmethod
    def from_dict(doc: dict) -> "LevyTriplet":
        atoms = doc.get("atoms", [])
        jumps = (
            JumpMeasure(
                np.array([a["x"] for a in atoms], dtype=float).reshape(len(atoms), -1),
                np.array([a["lambda"] for a in atoms], dtype=float),
            )
            if atoms
            else JumpMeasure.empty(int(doc["dim"]))
        )
        return LevyTriplet(
            dim=int(doc["dim"]),
            drift=doc.get("drift"),
            diffusion=doc.get("diffusion"),
            jumps=jumps,
            compensated=bool(doc.get("compensated", False)),
        )


@dataclass(frozen=True)
class CharTriplet:
    """Characteristics of the scaled noise at a fixed eps.

    ``B(t, b)`` is the first characteristic under jump truncation at level b
    (linear in t), ``C_over_eps(t)`` the rescaled second characteristic t *
    Sigma, and ``nu_eps`` the scaled jump measure with atoms eps * x_i at
    rates lambda_i / eps.
    """

    eps: float
    trunc_b: float
    drift: np.ndarray
    diffusion: np.ndarray
    triplet: LevyTriplet
    nu_eps: JumpMeasure = field(default=None)

    def B_slope(self, b: float = None) -> np.ndarray:
        b = self.trunc_b if b is None else float(b)
        if b <= 0:
            raise ValueError("truncation level must be positive")
        slope = self.drift.copy()
        jm = self.triplet.jumps
        if jm.num_atoms:
            norms = jm.atom_norms()
            window = (norms > b) & (norms <= b / self.eps)
            slope = slope + np.sum(jm.rates[window, None] * jm.atoms[window], axis=0)
        return slope

    def B(self, t: float, b: float = None) -> np.ndarray:
        return float(t) * self.B_slope(b)

    def C_over_eps(self, t: float) -> np.ndarray:
        return float(t) * self.diffusion


class LegendreConvergenceError(RuntimeError):
    """Raised when the conjugate maximization fails; carries the last iterate."""

    def __init__(self, message, last_iterate):
        super().__init__(message)
        self.last_iterate = last_iterate


# ---------------------------------------------------------------------------
# simulation


def simulate(triplet: LevyTriplet, eps: float, T: float, grid_step: float, seed) -> CadlagPath:
    """Exact-in-law sample path of the scaled noise on [0, T].

    Jump times arrive with Exp(total_rate / eps) interarrivals, sizes are
    eps times an atom drawn proportionally to its rate; the Brownian part is
    sampled on the uniform grid of spacing ``grid_step`` with linear
    interpolation; drift (plus the compensator correction when the triplet
    is compensated) is folded into the segments.  Deterministic given seed.
    """
    if not (0.0 < eps <= 1.0):
        raise ValueError("eps must lie in (0, 1]")
    if grid_step <= 0 or grid_step > T:
        raise ValueError("grid_step must lie in (0, T]")
    rng = np.random.default_rng(seed)
    d = triplet.dim

    # jumps first (fixed draw order makes the path reproducible)
    jump_times = np.zeros(0)
    jump_sizes = np.zeros((0, d))
    jm = triplet.jumps
    if jm.num_atoms:
        rate = jm.total_rate / eps
        arrivals = [0.0]
        while arrivals[-1] <= T:
            block = rng.exponential(1.0 / rate, size=max(8, int(rate * T) + 1))
            arrivals = np.concatenate([arrivals, arrivals[-1] + np.cumsum(block)])
        jump_times = arrivals[(arrivals > 0.0) & (arrivals <= T)]
        if jump_times.size:
            idx = rng.choice(jm.num_atoms, size=jump_times.size, p=jm.rates / jm.total_rate)
            jump_sizes = eps * jm.atoms[idx]

    n_grid = max(1, int(np.ceil(T / grid_step - 1e-9)))
    tgrid = np.linspace(0.0, T, n_grid + 1)
    slope = triplet.drift_at(eps) + triplet.compensator_drift()
    has_bm = bool(np.any(triplet.diffusion != 0.0))
    if has_bm:
        root = triplet.diffusion_root()
        incr = rng.standard_normal((n_grid, d)) * np.sqrt(eps * np.diff(tgrid))[:, None]
        bm = np.vstack([np.zeros(d), np.cumsum(incr @ root.T, axis=0)])
    else:
        bm = np.zeros((n_grid + 1, d))

    times = np.union1d(tgrid, jump_times)
    cont = times[:, None] * slope[None, :]
    if has_bm:
        for j in range(d):
            cont[:, j] += np.interp(times, tgrid, bm[:, j])

    jump_at = np.zeros((times.size, d))
    if jump_times.size:
        pos = np.searchsorted(times, jump_times)
        np.add.at(jump_at, pos, jump_sizes)
    cum_jumps = np.cumsum(jump_at, axis=0)

    values = cont + cum_jumps
    left_values = values - jump_at
    left_values[0] = values[0]
    moving = has_bm or np.any(slope != 0.0)
    modes = (LINEAR if moving else CONSTANT,) * (times.size - 1)
    return CadlagPath(times, values, left_values, modes)


# ---------------------------------------------------------------------------
# characteristics and deterministic diagnostics


def characteristics(triplet: LevyTriplet, eps: float, trunc_b: float) -> CharTriplet:
    """Characteristic triplet of the scaled noise under truncation h_{trunc_b}.

    The first characteristic is B_t = t * (b + sum of lambda_i x_i over atoms
    with trunc_b < |x_i| <= trunc_b / eps); the rescaled second is t * Sigma;
    the scaled jump measure has atoms eps * x_i at rates lambda_i / eps.
    """
    if not (0.0 < eps <= 1.0):
        raise ValueError("eps must lie in (0, 1]")
    if trunc_b <= 0:
        raise ValueError("trunc_b must be positive")
    jm = triplet.jumps
    nu_eps = (
        JumpMeasure(eps * jm.atoms, jm.rates / eps)
        if jm.num_atoms
        else JumpMeasure.empty(triplet.dim)
    )
    return CharTriplet(
        eps=float(eps),
        trunc_b=float(trunc_b),
        drift=triplet.drift_at(eps),
        diffusion=triplet.diffusion,
        triplet=triplet,
        nu_eps=nu_eps,
    )


def three_families(triplet: LevyTriplet, eps: float, t: float, trunc_b: float, r: float):
    """The three scalar tightness statistics of the scaled family at time t.

    Returns (variation of the first characteristic, rescaled quadratic
    variation of the continuous part reported as t * opnorm(Sigma), and the
    rescaled exponential jump integral t * sum_i lambda_i exp(|x_i|/r or 1)).
    The third value is independent of eps for atomic measures.
    """
    if r <= 0:
        raise ValueError("r must be positive")
    ch = characteristics(triplet, eps, trunc_b)
    v1 = float(t) * float(np.linalg.norm(ch.B_slope()))
    v2 = float(t) * _opnorm(triplet.diffusion)
    jm = triplet.jumps
    if jm.num_atoms:
        v3 = float(t) * float(
            np.sum(jm.rates * np.exp(np.maximum(jm.atom_norms() / r, 1.0)))
        )
    else:
        v3 = 0.0
    return v1, v2, v3


def xi_process(triplet: LevyTriplet, eps: float, t: float, lip_C: float) -> float:
    """A priori growth functional of the scaled noise at time t.

    Sum of the drift variation t |b|, the rescaled continuous quadratic
    variation t * opnorm(Sigma), and the exponential jump-moment term, which
    collapses to t * sum_i lambda_i exp(2 C |x_i|) |x_i|^2: the eps factors
    of the scaled atoms (eps x_i at rate lambda_i/eps) cancel exactly.
    """
    if lip_C <= 0:
        raise ValueError("lip_C must be positive")
    if not (0.0 < eps <= 1.0):
        raise ValueError("eps must lie in (0, 1]")
    b = triplet.drift_at(eps)
    total = float(t) * float(np.linalg.norm(b)) + float(t) * _opnorm(triplet.diffusion)
    jm = triplet.jumps
    if jm.num_atoms:
        norms = jm.atom_norms()
        total += float(t) * float(
            np.sum(jm.rates * np.exp(2.0 * lip_C * norms) * norms**2)
        )
    return total


def _opnorm(mat: np.ndarray) -> float:
    if not np.any(mat):
        return 0.0
    return float(np.linalg.norm(mat, 2))


# ---------------------------------------------------------------------------
# cumulant and Legendre transform


def cumulant(triplet: LevyTriplet, lam) -> float:
    """Log moment generating function of the unscaled noise at time 1.

    Linear drift term plus the Gaussian quadratic form plus, for each atom,
    lambda_i (e^{<lam, x_i>} - 1 - <lam, x_i> flag_i), where the flag marks
    atoms compensated under the triplet's simulation convention.
    """
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    val = float(lam @ triplet.drift_at(1.0)) + 0.5 * float(
        lam @ triplet.diffusion @ lam
    )
    jm = triplet.jumps
    if jm.num_atoms:
        inner = jm.atoms @ lam
        flags = triplet.compensation_flags().astype(float)
        with np.errstate(over="ignore"):
            val += float(np.sum(jm.rates * (np.exp(inner) - 1.0 - inner * flags)))
    return val


def _cumulant_1d_funcs(triplet: LevyTriplet):
    b = float(triplet.drift_at(1.0)[0])
    s2 = float(triplet.diffusion[0, 0])
    jm = triplet.jumps
    x = jm.atoms[:, 0] if jm.num_atoms else np.zeros(0)
    lamb = jm.rates if jm.num_atoms else np.zeros(0)
    flags = triplet.compensation_flags().astype(float)

    def lam_fn(theta):
        theta = np.asarray(theta, dtype=float)
        with np.errstate(over="ignore"):
            e = np.exp(np.multiply.outer(theta, x))
            jump = (lamb * (e - 1.0 - np.multiply.outer(theta, x) * flags)).sum(-1)
        return b * theta + 0.5 * s2 * theta**2 + jump

    def dlam_fn(theta):
        theta = np.asarray(theta, dtype=float)
        with np.errstate(over="ignore"):
            e = np.exp(np.multiply.outer(theta, x))
            jump = (lamb * x * (e - flags)).sum(-1)
        return b + s2 * theta + jump

    return lam_fn, dlam_fn


def legendre_batch(triplet: LevyTriplet, zs: np.ndarray) -> np.ndarray:
    """Vectorized one-dimensional convex conjugate sup (theta z - Lambda(theta)).

    Brackets the increasing derivative equation Lambda'(theta) = z by
    geometric expansion per element, then runs a fixed-depth bisection on
    the whole array.  Entries whose supremum diverges (objective exceeding
    1e12 along the expansion) come back as inf; boundary values of the
    gradient range saturate to their finite limits.
    """
    if triplet.dim != 1:
        raise ValueError("legendre_batch supports one-dimensional noise only")
    zs = np.asarray(zs, dtype=float).ravel()
    lam_fn, dlam_fn = _cumulant_1d_funcs(triplet)

    def g(theta):
        return dlam_fn(theta) - zs

    def obj(theta):
        return theta * zs - lam_fn(theta)

    lo = np.full(zs.shape, -1.0)
    hi = np.full(zs.shape, 1.0)
    diverged = np.zeros(zs.shape, dtype=bool)
    saturated = np.zeros(zs.shape, dtype=bool)

    # grow the lower end while the derivative still exceeds z there
    for _ in range(220):
        need = (g(lo) > 0.0) & ~diverged
        if not need.any():
            break
        diverged |= need & (obj(lo) > _DIVERGENCE_CAP)
        need &= ~diverged
        lo = np.where(need, lo * 2.0, lo)
    saturated |= (g(lo) > 0.0) & ~diverged  # derivative never drops below z

    # grow the upper end while the derivative is still finite and below z
    for _ in range(220):
        ghi = g(hi)
        need = np.isfinite(ghi) & (ghi < 0.0) & ~diverged
        if not need.any():
            break
        diverged |= need & (obj(hi) > _DIVERGENCE_CAP)
        need &= ~diverged
        hi = np.where(need, hi * 2.0, hi)
    ghi = g(hi)
    top_saturated = np.isfinite(ghi) & (ghi < 0.0) & ~diverged

    # bisection; infinities count as positive (overflowed derivative)
    active = ~(diverged | saturated | top_saturated)
    for _ in range(120):
        mid = 0.5 * (lo + hi)
        gm = g(mid)
        below = (gm < 0.0) & active
        lo = np.where(below, mid, lo)
        hi = np.where(~below & active, mid, hi)

    theta = np.where(saturated, lo, np.where(top_saturated, hi, 0.5 * (lo + hi)))
    with np.errstate(invalid="ignore"):
        vals = obj(theta)
    vals = np.maximum(vals, 0.0)
    vals = np.where(vals > _DIVERGENCE_CAP, np.inf, vals)
    vals[diverged] = np.inf
    return vals


def legendre(triplet: LevyTriplet, z) -> float:
    """Convex conjugate of the cumulant: sup_lam (<lam, z> - Lambda(lam)).

    Returns inf when the supremum diverges (z outside the closure of the
    gradient range).  One-dimensional noise reduces to the vectorized
    derivative solve; higher dimensions run BFGS ascent.
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.shape != (triplet.dim,):
        raise ValueError("z must match the noise dimension")
    if triplet.dim == 1:
        return float(legendre_batch(triplet, z)[0])

    jm = triplet.jumps
    flags = triplet.compensation_flags().astype(float)

    def neg_obj(lam):
        return cumulant(triplet, lam) - float(lam @ z)

    def grad(lam):
        g = triplet.drift_at(1.0) + triplet.diffusion @ lam - z
        if jm.num_atoms:
            with np.errstate(over="ignore"):
                e = np.exp(jm.atoms @ lam)
            g = g + np.sum(jm.rates[:, None] * jm.atoms * (e - flags)[:, None], axis=0)
        return g

    res = optimize.minimize(neg_obj, np.zeros(triplet.dim), jac=grad, method="BFGS",
                            options={"maxiter": 500, "gtol": 1e-10})
    if res.fun < -_DIVERGENCE_CAP:
        return float("inf")
    if not res.success:
        if np.linalg.norm(res.x) > 1e6 and np.linalg.norm(grad(res.x)) > 1e-6:
            return float("inf")
        if np.linalg.norm(grad(res.x)) > 1e-5:
            raise LegendreConvergenceError(
                f"conjugate maximization did not converge: {res.message}", res.x
            )
    return float(max(-res.fun, 0.0))
