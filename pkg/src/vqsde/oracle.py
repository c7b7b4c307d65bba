"""Classical references for the lattice evolution.

RK4 on the master equation, closed-form GBM and OU moments, Euler-Maruyama
Monte Carlo and summary statistics of lattice distributions.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .generator import LatticeDistribution, ProcessSpec, nearest_index


class OracleError(ArithmeticError):
    pass


@dataclass(frozen=True)
class Trajectory:
    times: tuple[float, ...]
    distributions: tuple[LatticeDistribution, ...]

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if len(times) != len(self.distributions):
            raise ValueError("one distribution per time")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "distributions", tuple(self.distributions))

    def __len__(self):
        return len(self.times)

    @property
    def final(self) -> LatticeDistribution:
        return self.distributions[-1]

    def probabilities(self) -> np.ndarray:
        return np.array([d.p for d in self.distributions])

    def stats(self, dx: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Mass, mean and variance at every recorded time."""
        rows = np.array([distribution_stats(d, dx) for d in self.distributions])
        return rows[:, 0], rows[:, 1], rows[:, 2]

    def at(self, t: float) -> LatticeDistribution:
        """Distribution at the recorded time closest to ``t``."""
        i = int(np.argmin(np.abs(np.array(self.times) - t)))
        return self.distributions[i]


def runge_kutta(L_provider, p0, T: float, dt: float = 0.001, record_every: int = 1) -> Trajectory:
    """Classic fourth-order Runge-Kutta on dP/dt = L(t) P.

    ``L_provider`` is a matrix or a callable returning one for a time.  The
    final step is shortened if ``dt`` does not divide ``T``.
    """
    if dt <= 0 or T < 0:
        raise ValueError("need dt > 0 and T >= 0")
    provider = L_provider if callable(L_provider) else (lambda t, L=np.asarray(L_provider, dtype=float): L)
    p = np.array(getattr(p0, "p", p0), dtype=float)
    steps = max(int(math.ceil(T / dt - 1e-9)), 0)
    t = 0.0
    times, dists = [0.0], [LatticeDistribution(p, 0.0)]
    for k in range(steps):
        h = min(dt, T - t)
        with np.errstate(over="ignore", invalid="ignore"):
            k1 = provider(t) @ p
            k2 = provider(t + h / 2) @ (p + h / 2 * k1)
            k3 = provider(t + h / 2) @ (p + h / 2 * k2)
            k4 = provider(t + h) @ (p + h * k3)
            p = p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t = (k + 1) * dt if k + 1 < steps else T
        if not np.all(np.isfinite(p)):
            raise OracleError(f"non-finite probabilities at step {k + 1} (t={t})")
        if (k + 1) % record_every == 0 or k + 1 == steps:
            times.append(t)
            dists.append(LatticeDistribution(p, t))
    return Trajectory(tuple(times), tuple(dists))


@dataclass(frozen=True)
class GBMParams:
    r: float
    sigma: float
    x0: float


@dataclass(frozen=True)
class OUParams:
    r: float
    sigma: float
    eta: float
    x0: float


def analytic_moments(process: GBMParams | OUParams, t: float) -> tuple[float, float]:
    """Mean and variance of X(t) started at x0."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if isinstance(process, GBMParams):
        growth = math.exp(process.r * t)
        return process.x0 * growth, process.x0**2 * growth**2 * math.expm1(process.sigma**2 * t)
    if isinstance(process, OUParams):
        mean = process.r + (process.x0 - process.r) * math.exp(-process.eta * t)
        if process.eta == 0:
            return mean, process.sigma**2 * t
        return mean, process.sigma**2 * -math.expm1(-2 * process.eta * t) / (2 * process.eta)
    raise TypeError(f"unsupported process {process!r}")


def analytic_density(process: GBMParams | OUParams, t: float, x) -> np.ndarray:
    """Lognormal (GBM) or normal (OU) density of X(t) at ``x``."""
    if t <= 0:
        raise ValueError("density needs t > 0")
    x = np.asarray(x, dtype=float)
    if isinstance(process, GBMParams):
        s = process.sigma * math.sqrt(t)
        scale = process.x0 * math.exp((process.r - process.sigma**2 / 2) * t)
        return stats.lognorm.pdf(x, s, scale=scale)
    mean, var = analytic_moments(process, t)
    return stats.norm.pdf(x, mean, math.sqrt(var))


@dataclass(frozen=True)
class MonteCarloResult:
    distribution: LatticeDistribution
    out_of_range: float
    sample_mean: float
    sample_std: float
    payoff_mean: float | None = None
    payoff_stderr: float | None = None


def euler_maruyama_mc(spec: ProcessSpec, paths: int, dt: float, T: float, seed=None,
                      payoff: Callable | None = None, x0: float | None = None) -> MonteCarloResult:
    """Euler-Maruyama paths of dX = mu dt + sigma dW.

    Sample moments and the payoff use the raw terminal values.  For the
    lattice histogram a path that ever leaves the grid (by more than half a
    cell) is absorbed, mirroring the truncated generator; surviving paths are
    binned to the nearest grid point.
    """
    if paths < 1 or dt <= 0 or T < 0:
        raise ValueError("need paths >= 1, dt > 0, T >= 0")
    rng = np.random.default_rng(seed)
    if x0 is None:
        x = rng.choice(spec.grid, size=paths, p=spec.initial_lattice())
    else:
        x = np.full(paths, float(x0))
    lo, hi = -0.5 * spec.dx, spec.x_max + 0.5 * spec.dx
    alive = np.ones(paths, dtype=bool)
    steps = max(int(math.ceil(T / dt - 1e-9)), 0)
    t = 0.0
    for k in range(steps):
        h = min(dt, T - t)
        sigma = np.sqrt(np.maximum(spec.sigma2(x, t), 0.0))
        x = x + spec.mu(x, t) * h + sigma * math.sqrt(h) * rng.standard_normal(paths)
        alive &= (x >= lo) & (x <= hi)
        t = (k + 1) * dt if k + 1 < steps else T
    hist = np.zeros(spec.size)
    idx = np.clip(np.ceil(x[alive] / spec.dx - 0.5), 0, spec.size - 1).astype(int)
    np.add.at(hist, idx, 1.0)
    result = dict(
        distribution=LatticeDistribution(hist / paths, T),
        out_of_range=float(1.0 - alive.mean()),
        sample_mean=float(x.mean()),
        sample_std=float(x.std(ddof=1)) if paths > 1 else 0.0,
    )
    if payoff is not None:
        values = np.asarray(payoff(x), dtype=float)
        result["payoff_mean"] = float(values.mean())
        result["payoff_stderr"] = float(values.std(ddof=1) / math.sqrt(paths)) if paths > 1 else 0.0
    return MonteCarloResult(**result)


def distribution_stats(p, dx: float) -> tuple[float, float, float]:
    """(mass, mean, variance) with mean and variance normalised by the mass."""
    p = np.asarray(getattr(p, "p", p), dtype=float)
    mass = float(p.sum())
    if mass < 1e-12:
        raise OracleError(f"distribution mass {mass} too small to normalise")
    x = dx * np.arange(p.size)
    mean = float(x @ p / mass)
    var = float(((x - mean) ** 2) @ p / mass)
    return mass, mean, var


def total_variation(p, q) -> float:
    p = np.asarray(getattr(p, "p", p), dtype=float)
    q = np.asarray(getattr(q, "p", q), dtype=float)
    return 0.5 * float(np.abs(p - q).sum())


def delta_index(spec: ProcessSpec) -> int:
    """Grid index of a delta initial distribution."""
    if spec.initial.kind != "delta":
        raise ValueError("initial distribution is not a delta")
    return nearest_index(spec.initial.x0, spec.dx, spec.size)


def moments_params(spec: ProcessSpec, kind: str, **params) -> GBMParams | OUParams:
    """Closed-form parameter set for ``spec`` started at its delta point."""
    x0 = spec.dx * delta_index(spec)
    if kind == "gbm":
        return GBMParams(params["r"], params["sigma"], x0)
    if kind == "ou":
        return OUParams(params["r"], params["sigma"], params["eta"], x0)
    raise ValueError(f"unknown process kind {kind!r}")


def vqs_trajectory(times: Sequence[float], distributions: Sequence[np.ndarray]) -> Trajectory:
    return Trajectory(tuple(times), tuple(LatticeDistribution(p, t) for t, p in zip(times, distributions)))
