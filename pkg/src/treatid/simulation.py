"""Synthetic heterogeneous-coefficient data with a valid control variable.

Each row draws V, then a treatment state from the categorical distribution
(gps_1, ..., gps_T, 1 - sum gps) given V, then coefficients
eps = alpha(V) + noise_scale * eta with eta standard normal and independent of
everything else, and sets Y = p(X)'eps. Because X depends on V and on a
uniform draw that is independent of eta, E[eps | X, V] = alpha(V) holds exactly.

Randomness
----------
Draws come from per-row substreams of a counter-based generator: uniform
number j of row i is SplitMix64(SplitMix64(seed) + i * GOLDEN + (j + 1) * STEP),
turned into a double in (0, 1). Row i always sees the same numbers no matter
how many rows are generated or in which order, so generation can be chunked
or parallelized without changing the output. Per row, slots 0..d-1 hold the
control draw(s), slot d the treatment draw and slots d+1..d+T+1 the noise
(mapped through the normal quantile function).
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace
from typing import Any, Union

import numpy as np
from scipy.special import ndtri

from .core_algebra import GpsVector
from .estimation import (
    DEFAULT_LAMBDA_THRESHOLD,
    DEFAULT_OVERLAP_DELTA,
    Dataset,
    IdentificationReport,
    NotIdentifiedError,
    QuantileBins,
    audit,
    estimate_asf,
)

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_STEP = np.uint64(0xD1B54A32D192ED03)
_MASK64 = (1 << 64) - 1

TRUE_ATE_DRAWS = 1_000_000
PROBE_POINTS = 10_000


def _splitmix64(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):
        z ^= z >> np.uint64(30)
        z *= np.uint64(0xBF58476D1CE4E5B9)
        z ^= z >> np.uint64(27)
        z *= np.uint64(0x94D049BB133111EB)
        z ^= z >> np.uint64(31)
    return z


def row_uniforms(seed: int, rows: np.ndarray, n_draws: int) -> np.ndarray:
    """(len(rows), n_draws) array of uniforms in (0, 1) from per-row substreams."""
    base = _splitmix64(np.array([int(seed) & _MASK64], dtype=np.uint64))[0]
    rows = np.asarray(rows, dtype=np.uint64)
    j = np.arange(1, n_draws + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        counters = base + rows[:, None] * _GOLDEN + j[None, :] * _STEP
    bits = _splitmix64(counters) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) / 2.0**53


@dataclass(frozen=True)
class DiscreteControl:
    """V takes values 0..K-1 with the given probabilities."""

    weights: tuple[float, ...]

    def __init__(self, weights: Sequence[float]):
        w = tuple(float(x) for x in weights)
        if len(w) == 0 or any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-10:
            raise ValueError("discrete control weights must be nonnegative and sum to 1")
        object.__setattr__(self, "weights", w)

    @property
    def K(self) -> int:
        return len(self.weights)


@dataclass(frozen=True)
class UniformControl:
    """V uniform on the unit cube [0, 1]^dim."""

    dim: int = 1

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("continuous control needs dim >= 1")


Control = Union[DiscreteControl, UniformControl]


@dataclass(frozen=True)
class DgpSpec:
    """Data generating process.

    ``gps_fn`` and ``coef_mean_fn`` take one control value (an int level for a
    discrete control, a length-d array for a continuous one) and return the
    T propensity scores and the T+1 coefficient means alpha(v) = E[eps | V=v].
    """

    T: int
    n: int
    control: Control
    gps_fn: Callable[[Any], Sequence[float]]
    coef_mean_fn: Callable[[Any], Sequence[float]]
    noise_scale: float = 1.0
    seed: int = 0
    true_ate_seed: int = 12345
    name: str = "custom"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be at least 1")
        if self.n < 1:
            raise ValueError("n must be at least 1")
        if not self.noise_scale >= 0:
            raise ValueError("noise_scale must be nonnegative")


def _gps_row(spec: DgpSpec, v) -> np.ndarray:
    p = np.asarray(spec.gps_fn(v), dtype=float)
    if p.shape != (spec.T,):
        raise ValueError(f"gps_fn returned shape {p.shape}, expected ({spec.T},)")
    GpsVector(p)
    return p


def _alpha_row(spec: DgpSpec, v) -> np.ndarray:
    a = np.asarray(spec.coef_mean_fn(v), dtype=float)
    if a.shape != (spec.T + 1,):
        raise ValueError(f"coef_mean_fn returned shape {a.shape}, expected ({spec.T + 1},)")
    return a


def validate_spec(spec: DgpSpec) -> None:
    """Check the propensity scores on the support (or a probe of it)."""
    try:
        if isinstance(spec.control, DiscreteControl):
            for k in range(spec.control.K):
                _gps_row(spec, k)
                _alpha_row(spec, k)
        else:
            u = row_uniforms(spec.seed ^ 0x5EED, np.arange(PROBE_POINTS), spec.control.dim)
            for v in u:
                _gps_row(spec, v)
    except ValueError as exc:
        raise ValueError(f"invalid DGP: {exc}") from None


def true_ate(spec: DgpSpec) -> np.ndarray:
    """E[alpha(V)] restricted to the treatment coordinates.

    Exact for discrete controls; for continuous controls a Monte Carlo mean
    over TRUE_ATE_DRAWS points drawn with ``spec.true_ate_seed``.
    """
    if isinstance(spec.control, DiscreteControl):
        alphas = np.array([_alpha_row(spec, k) for k in range(spec.control.K)])
        return np.asarray(spec.control.weights) @ alphas[:, 1:]
    total = np.zeros(spec.T + 1)
    chunk = 100_000
    for start in range(0, TRUE_ATE_DRAWS, chunk):
        rows = np.arange(start, min(start + chunk, TRUE_ATE_DRAWS))
        for v in row_uniforms(spec.true_ate_seed, rows, spec.control.dim):
            total += _alpha_row(spec, v)
    return (total / TRUE_ATE_DRAWS)[1:]


def simulate(spec: DgpSpec) -> tuple[Dataset, np.ndarray]:
    """Draw ``spec.n`` rows; returns the dataset and the true ATE vector.

    The result is a deterministic function of ``spec``.
    """
    data, _ = simulate_with_coefficients(spec)
    return data, true_ate(spec)


def simulate_with_coefficients(spec: DgpSpec) -> tuple[Dataset, np.ndarray]:
    """Like :func:`simulate` but returns the (n, T+1) latent coefficients instead of the ATE."""
    validate_spec(spec)
    T, n = spec.T, spec.n
    d = 1 if isinstance(spec.control, DiscreteControl) else spec.control.dim
    u = row_uniforms(spec.seed, np.arange(n), d + 1 + T + 1)

    if isinstance(spec.control, DiscreteControl):
        cum = np.cumsum(spec.control.weights)
        level = np.minimum(np.searchsorted(cum, u[:, 0], side="right"), spec.control.K - 1)
        gps_table = np.array([_gps_row(spec, k) for k in range(spec.control.K)])
        alpha_table = np.array([_alpha_row(spec, k) for k in range(spec.control.K)])
        gps, alpha = gps_table[level], alpha_table[level]
        v = np.array([str(k) for k in level], dtype=object)
    else:
        v = u[:, :d]
        gps = np.array([_gps_row(spec, row) for row in v])
        alpha = np.array([_alpha_row(spec, row) for row in v])

    # treatment t (1-based) when the draw lands in [cum_{t-1}, cum_t); untreated beyond cum_T
    cum_gps = np.cumsum(gps, axis=1)
    # scores exhausting the population leave no untreated rows, rounding aside
    cum_gps[cum_gps[:, -1] >= 1.0 - 1e-12, -1] = np.inf
    treat = (u[:, [d]] >= cum_gps).sum(axis=1)
    x = np.zeros((n, T), dtype=np.int8)
    on = treat < T
    x[np.flatnonzero(on), treat[on]] = 1

    eta = ndtri(u[:, d + 1 :])
    eps = alpha + spec.noise_scale * eta
    y = eps[:, 0] + (x * eps[:, 1:]).sum(axis=1)
    return Dataset(y=y, x=x, v=v, mode="exclusive"), eps


def rescale_gps(spec: DgpSpec, target_sum: float) -> DgpSpec:
    """Same DGP with each cell's scores rescaled to sum to ``target_sum``."""
    base = spec.gps_fn

    def gps_fn(v):
        p = np.asarray(base(v), dtype=float)
        s = p.sum()
        if s <= 0:
            raise ValueError("cannot rescale all-zero propensity scores")
        out = p * (target_sum / s)
        # keep the boundary case exactly on the boundary
        if target_sum == 1.0:
            out[-1] = 1.0 - out[:-1].sum()
        return out

    return replace(spec, gps_fn=gps_fn)


@dataclass(frozen=True)
class SweepPoint:
    gps_sum: float
    identified: bool
    ate_error: float | None
    report: IdentificationReport
    ate: np.ndarray | None = field(default=None, compare=False)

    @property
    def verdict(self) -> str:
        return "IDENTIFIED" if self.identified else "NOT_IDENTIFIED"


def failure_sweep(
    base: DgpSpec,
    sums: Sequence[float],
    scheme="discrete",
    overlap_delta: float = DEFAULT_OVERLAP_DELTA,
    threshold: float = DEFAULT_LAMBDA_THRESHOLD,
    min_cell_size: int | None = None,
) -> list[SweepPoint]:
    """Simulate, audit and estimate as the propensity scores approach summing to one.

    ``ate_error`` is the Euclidean distance between estimated and true ATE, or
    None when every cell is trimmed.
    """
    if list(sums) != sorted(sums):
        raise ValueError("sums must be sorted ascending")
    if any(not 0 < s <= 1 for s in sums):
        raise ValueError("sums must lie in (0, 1]")
    if scheme == "discrete" and isinstance(base.control, UniformControl):
        scheme = QuantileBins(4)
    out = []
    for s in sums:
        data, truth = simulate(rescale_gps(base, s))
        report = audit(data, scheme, overlap_delta, min_cell_size, threshold)
        try:
            est = estimate_asf(data, scheme, threshold, min_cell_size, overlap_delta)
        except NotIdentifiedError:
            out.append(SweepPoint(float(s), report.identified, None, report))
            continue
        err = float(np.linalg.norm(est.ate - truth))
        out.append(SweepPoint(float(s), report.identified, err, report, est.ate))
    return out


# ---------------------------------------------------------------------------
# Named DGPs used by the CLI and the test-suite.


def tabular_dgp(
    weights: Sequence[float],
    gps: Sequence[Sequence[float]],
    coef_mean: Sequence[Sequence[float]],
    n: int,
    noise_scale: float = 1.0,
    seed: int = 0,
    name: str = "tabular",
) -> DgpSpec:
    """Discrete-control DGP given by per-level tables."""
    gps_t = np.array(gps, dtype=float)
    coef_t = np.array(coef_mean, dtype=float)
    if gps_t.ndim != 2 or coef_t.ndim != 2 or coef_t.shape[1] != gps_t.shape[1] + 1:
        raise ValueError("gps must be K x T and coef_mean K x (T+1)")
    if not len(weights) == gps_t.shape[0] == coef_t.shape[0]:
        raise ValueError("weights, gps and coef_mean must have one row per level")
    return DgpSpec(
        T=gps_t.shape[1],
        n=n,
        control=DiscreteControl(weights),
        gps_fn=lambda k: gps_t[k],
        coef_mean_fn=lambda k: coef_t[k],
        noise_scale=noise_scale,
        seed=seed,
        name=name,
        meta={"weights": list(map(float, weights)), "gps": gps_t.tolist(), "coef_mean": coef_t.tolist()},
    )


def heterogeneous_dgp(n: int = 200_000, seed: int = 0, noise_scale: float = 1.0, K: int = 10) -> DgpSpec:
    """Two treatments, K equally likely control levels, true ATE (2, -1).

    Slopes alternate between levels (1, -2) and (3, 0) and the propensity of
    treatment 1 rises with the level, so a raw comparison of treated and
    untreated means is confounded.
    """
    if K % 2:
        raise ValueError("K must be even for the alternating slopes to average to (2, -1)")
    ks = np.arange(K)
    coef = np.column_stack([0.5 * ks, 1.0 + 2.0 * (ks % 2), -2.0 + 2.0 * (ks % 2)])
    gps = np.column_stack([0.15 + 0.3 * ks / (K - 1), 0.35 - 0.15 * ks / (K - 1)])
    return tabular_dgp(np.full(K, 1.0 / K), gps, coef, n, noise_scale, seed, name="heterogeneous")


def homogeneous_dgp(n: int = 1000, seed: int = 0, noise_scale: float = 0.0, K: int = 4) -> DgpSpec:
    """Y = 1 + 2 X(1) + 3 X(2) in every control level (with overlap)."""
    gps = [[0.3, 0.3]] * K
    coef = [[1.0, 2.0, 3.0]] * K
    return tabular_dgp(np.full(K, 1.0 / K), gps, coef, n, noise_scale, seed, name="homogeneous")


def continuous_dgp(n: int = 50_000, seed: int = 0, noise_scale: float = 1.0) -> DgpSpec:
    """Scalar uniform control; scores and coefficient means vary smoothly in V."""
    return DgpSpec(
        T=2,
        n=n,
        control=UniformControl(1),
        gps_fn=lambda v: (0.2 + 0.2 * v[0], 0.3 - 0.1 * v[0]),
        coef_mean_fn=lambda v: (v[0], 1.0 + 2.0 * v[0], -1.0 - v[0] ** 2),
        noise_scale=noise_scale,
        seed=seed,
        name="continuous",
    )


PRESETS: dict[str, Callable[..., DgpSpec]] = {
    "heterogeneous": heterogeneous_dgp,
    "homogeneous": homogeneous_dgp,
    "continuous": continuous_dgp,
}


def spec_metadata(spec: DgpSpec, ate: np.ndarray) -> dict:
    """JSON-ready description of a DGP and its true ATE."""
    if isinstance(spec.control, DiscreteControl):
        control = {"type": "discrete", "weights": list(spec.control.weights)}
    else:
        control = {"type": "uniform_continuous", "dim": spec.control.dim}
    meta = {
        "name": spec.name,
        "T": spec.T,
        "n": spec.n,
        "control": control,
        "noise_scale": spec.noise_scale,
        "seed": spec.seed,
        "rng": "splitmix64 counter streams, one per row",
        "true_ate": [float(a) for a in ate],
    }
    if isinstance(spec.control, UniformControl):
        meta["true_ate_method"] = {"monte_carlo_draws": TRUE_ATE_DRAWS, "seed": spec.true_ate_seed}
    if spec.meta:
        meta["tables"] = spec.meta
    return meta
