"""Bayesian optimization of classifier hyperparameters.

A Gaussian process with a squared-exponential kernel models the
objective over scale-normalized coordinates; expected improvement picks
the next point from a seeded quasi-random candidate set with local
refinement.  Everything is deterministic per seed.

Kernel hyperparameters are fixed heuristically (length scale 0.2 of the
normalized range, signal variance from the observations, noise 1e-6)
rather than fitted, keeping the tuner dependency-free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29)

DEFAULT_NOISE = 1e-6
DEFAULT_LENGTH_SCALE = 0.2
DEFAULT_INIT_POINTS = 5
CANDIDATES_PER_STEP = 2048


class SingularGram(ValueError):
    """Noise-free GP over duplicate points has a singular Gram matrix."""


@dataclass(frozen=True)
class Dim:
    name: str
    lower: float
    upper: float
    scale: str = "linear"  # or "log"
    integer: bool = False

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"dim {self.name!r}: lower must be < upper")
        if self.scale not in ("linear", "log"):
            raise ValueError(f"dim {self.name!r}: scale must be linear or log")
        if self.scale == "log" and self.lower <= 0:
            raise ValueError(f"dim {self.name!r}: log scale needs positive bounds")


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[Dim, ...]

    @property
    def ndim(self) -> int:
        return len(self.dims)

    def to_unit(self, point) -> np.ndarray:
        """Map a point in space coordinates onto the unit cube."""
        out = np.empty(self.ndim)
        for k, (dim, v) in enumerate(zip(self.dims, point)):
            if dim.scale == "log":
                out[k] = (math.log(v) - math.log(dim.lower)) / (
                    math.log(dim.upper) - math.log(dim.lower)
                )
            else:
                out[k] = (v - dim.lower) / (dim.upper - dim.lower)
        return np.clip(out, 0.0, 1.0)

    def from_unit(self, u) -> tuple:
        """Map unit-cube coordinates into the space; integer dims round."""
        vals = []
        for dim, t in zip(self.dims, np.clip(u, 0.0, 1.0)):
            if dim.scale == "log":
                v = math.exp(
                    math.log(dim.lower)
                    + float(t) * (math.log(dim.upper) - math.log(dim.lower))
                )
            else:
                v = dim.lower + float(t) * (dim.upper - dim.lower)
            if dim.integer:
                v = int(round(v))
                v = min(max(v, int(math.ceil(dim.lower))), int(math.floor(dim.upper)))
            vals.append(v)
        return tuple(vals)

    def contains(self, point) -> bool:
        return all(
            dim.lower - 1e-12 <= v <= dim.upper + 1e-12
            for dim, v in zip(self.dims, point)
        )

    def point_dict(self, point) -> dict:
        return {dim.name: v for dim, v in zip(self.dims, point)}


def default_search_space() -> SearchSpace:
    """Ranges containing the reference optimum (gamma 0.0098, nu 0.4,
    176 iterations) with comfortable headroom."""
    return SearchSpace(
        dims=(
            Dim("gamma", 1e-4, 1.0, scale="log"),
            Dim("nu", 0.05, 0.95),
            Dim("max_iter", 50, 500, integer=True),
        )
    )


@dataclass(frozen=True)
class Observation:
    point: tuple
    value: float


@dataclass(frozen=True)
class TuneResult:
    best_point: tuple
    best_value: float
    history: tuple[Observation, ...]


class GpPosterior:
    """GP regression over unit-cube coordinates with an SE kernel.

    Prior mean is the observation mean; signal variance the observation
    variance (floored).  predict() returns (mean, variance) per query.
    """

    def __init__(self, points: np.ndarray, values: np.ndarray, noise: float,
                 length_scale: float = DEFAULT_LENGTH_SCALE):
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if points.shape[0] != values.shape[0] or points.shape[0] < 1:
            raise ValueError("need one value per point, at least one point")
        if noise < 0:
            raise ValueError("noise must be >= 0")
        if noise == 0.0 and points.shape[0] > 1:
            diff = points[:, None, :] - points[None, :, :]
            dist = np.sqrt(np.sum(diff * diff, axis=2))
            np.fill_diagonal(dist, np.inf)
            if np.min(dist) == 0.0:
                raise SingularGram("duplicate points with zero noise")

        self.points = points
        self.mean_prior = float(np.mean(values))
        var = float(np.var(values))
        self.signal_var = var if var > 0 else 1e-12
        self.noise = float(noise)
        self.length_scale = float(length_scale)

        K = self._kernel(points, points)
        K[np.diag_indices_from(K)] += max(self.noise, 0.0) + 1e-12
        try:
            self._chol = np.linalg.cholesky(K)
        except np.linalg.LinAlgError as exc:
            raise SingularGram(f"Gram matrix not positive definite: {exc}") from exc
        resid = values - self.mean_prior
        self._alpha = np.linalg.solve(
            self._chol.T, np.linalg.solve(self._chol, resid)
        )

    def _kernel(self, A, B):
        sq = (
            np.sum(A * A, axis=1)[:, None]
            + np.sum(B * B, axis=1)[None, :]
            - 2.0 * (A @ B.T)
        )
        np.maximum(sq, 0.0, out=sq)
        return self.signal_var * np.exp(-sq / (2.0 * self.length_scale**2))

    def predict_batch(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        k_star = self._kernel(self.points, queries)
        means = self.mean_prior + k_star.T @ self._alpha
        v = np.linalg.solve(self._chol, k_star)
        variances = self.signal_var - np.sum(v * v, axis=0)
        np.maximum(variances, 0.0, out=variances)
        return means, variances

    def predict(self, query) -> tuple[float, float]:
        means, variances = self.predict_batch(np.asarray(query, dtype=np.float64)[None, :])
        return float(means[0]), float(variances[0])


def gp_posterior(observations, noise: float, space: SearchSpace | None = None) -> GpPosterior:
    """Fit the GP over a list of Observations.

    With a space, points are normalized onto the unit cube first (the
    coordinates the optimizer itself uses).
    """
    if not observations:
        raise ValueError("need at least one observation")
    if space is not None:
        pts = np.array([space.to_unit(o.point) for o in observations])
    else:
        pts = np.array([np.asarray(o.point, dtype=np.float64) for o in observations])
    vals = np.array([o.value for o in observations])
    return GpPosterior(pts, vals, noise)


def expected_improvement(mean: float, variance: float, best_so_far: float) -> float:
    """EI for maximization: (mu - f*) Phi(z) + sigma phi(z), z = (mu - f*)/sigma."""
    if variance < 0:
        raise ValueError("variance must be >= 0")
    sigma = math.sqrt(variance)
    improvement = mean - best_so_far
    if sigma == 0.0:
        return max(0.0, improvement)
    z = improvement / sigma
    cdf = 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))
    pdf = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    return improvement * cdf + sigma * pdf


def _ei_batch(means: np.ndarray, variances: np.ndarray, best: float) -> np.ndarray:
    sigma = np.sqrt(variances)
    imp = means - best
    out = np.maximum(imp, 0.0)
    ok = sigma > 0
    z = np.zeros_like(imp)
    np.divide(imp, sigma, out=z, where=ok)
    cdf = 0.5 * (1.0 + np.vectorize(math.erf)(z / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    out[ok] = (imp * cdf + sigma * pdf)[ok]
    return out


def _halton(start: int, count: int, ndim: int, shift: np.ndarray) -> np.ndarray:
    """Shifted Halton block: rows start..start+count-1 of the sequence,
    rotated by ``shift`` modulo 1 (Cranley-Patterson)."""
    if ndim > len(_PRIMES):
        raise ValueError(f"at most {len(_PRIMES)} dimensions supported")
    idx = np.arange(start + 1, start + count + 1, dtype=np.int64)
    out = np.empty((count, ndim))
    for k in range(ndim):
        base = _PRIMES[k]
        n = idx.copy()
        value = np.zeros(count)
        denom = np.ones(count)
        while np.any(n > 0):
            denom *= base
            value += (n % base) / denom
            n //= base
        out[:, k] = value
    return (out + shift[None, :]) % 1.0


def bayes_optimize(
    objective,
    space: SearchSpace,
    budget: int,
    seed: int = 0,
    n_init: int = DEFAULT_INIT_POINTS,
    noise: float = DEFAULT_NOISE,
    trace=None,
) -> TuneResult:
    """Maximize ``objective`` over ``space`` with ``budget`` evaluations.

    The first n_init evaluations are quasi-random; each later step fits
    the GP, maximizes EI over a 2048-point candidate set plus local
    refinement, and evaluates there.  ``trace``, when given, is called
    with a dict per evaluation (step, point, value, best).
    """
    if budget < n_init:
        raise ValueError(f"budget {budget} is below the initial design size {n_init}")
    rng = np.random.default_rng(seed)
    shift = rng.uniform(size=space.ndim)

    history: list[Observation] = []
    best_value = -np.inf

    def record(step, point, value):
        nonlocal best_value
        history.append(Observation(point=point, value=value))
        best_value = max(best_value, value)
        if trace is not None:
            trace(
                {
                    "step": step,
                    "point": space.point_dict(point),
                    "value": value,
                    "best": best_value,
                }
            )

    for i, u in enumerate(_halton(0, n_init, space.ndim, shift)):
        point = space.from_unit(u)
        record(i, point, float(objective(point)))

    offset = n_init
    for step in range(n_init, budget):
        units = np.array([space.to_unit(o.point) for o in history])
        values = np.array([o.value for o in history])
        gp = GpPosterior(units, values, noise)

        cands = _halton(offset, CANDIDATES_PER_STEP, space.ndim, shift)
        offset += CANDIDATES_PER_STEP
        means, variances = gp.predict_batch(cands)
        ei = _ei_batch(means, variances, best_value)
        best_idx = int(np.argmax(ei))
        x = cands[best_idx]
        best_ei = float(ei[best_idx])

        for scale in (0.05, 0.02, 0.008):
            local = np.clip(x[None, :] + rng.normal(0.0, scale, size=(32, space.ndim)), 0.0, 1.0)
            l_means, l_vars = gp.predict_batch(local)
            l_ei = _ei_batch(l_means, l_vars, best_value)
            j = int(np.argmax(l_ei))
            if l_ei[j] > best_ei:
                best_ei = float(l_ei[j])
                x = local[j]

        point = space.from_unit(x)
        record(step, point, float(objective(point)))

    best = max(history, key=lambda o: o.value)
    return TuneResult(best_point=best.point, best_value=best.value, history=tuple(history))
