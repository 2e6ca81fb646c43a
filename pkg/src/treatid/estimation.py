"""Cell-wise least squares estimation of the control regression and the ATEs.

Within a control cell v the regression E[Y | X, V=v] = p(X)'q0(v) is fit by
solving the sample normal equations. Averaging q_hat(v) over cells estimates
E[q0(V)], whose treatment components are the average treatment effects.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np

from .core_algebra import GpsVector, MomentMatrix, eigenvalues
from .identification import Reason, classify_gps, classify_moment, sorted_ids

DEFAULT_LAMBDA_THRESHOLD = 1e-6
DEFAULT_OVERLAP_DELTA = 0.01

MODES = ("exclusive", "general")


class NotIdentifiedError(RuntimeError):
    """Raised when the requested average cannot be formed from identified cells.

    ``code`` is NOT_IDENTIFIED_EVERYWHERE when every cell was trimmed and
    NOT_IDENTIFIED when strict mode refuses to trim some cells.
    """

    def __init__(self, code: str, message: str, trimmed: Sequence[tuple[Any, Reason]] = ()):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.trimmed = tuple(trimmed)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observations (y, x, v) in columnar form.

    ``x`` is an (n, T) 0/1 array. ``v`` is either a length-n array of string
    labels (discrete control) or an (n, d) float array (continuous control).
    """

    y: np.ndarray
    x: np.ndarray
    v: np.ndarray
    mode: str = "exclusive"

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        x = np.array(self.x)
        if y.ndim != 1:
            raise ValueError("y must be one-dimensional")
        n = y.size
        if n == 0:
            raise ValueError("EMPTY_DATASET: no observations")
        if x.ndim == 1:
            x = x.reshape(n, -1)
        if x.ndim != 2 or x.shape[0] != n or x.shape[1] < 1:
            raise ValueError(f"x must have shape (n, T) with T >= 1, got {x.shape}")
        if not np.all((x == 0) | (x == 1)):
            raise ValueError("treatment indicators must be 0 or 1")
        x = x.astype(np.int8)
        if not np.all(np.isfinite(y)):
            raise ValueError("y must be finite")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == "exclusive":
            bad = np.flatnonzero(x.sum(axis=1) > 1)
            if bad.size:
                raise ValueError(f"row {int(bad[0])} has more than one treatment in exclusive mode")
        v = np.asarray(self.v)
        if v.dtype.kind in "US" or v.dtype == object:
            v = np.array([str(s) for s in v.ravel()], dtype=object)
            if v.size != n:
                raise ValueError("one control label per row is required")
        else:
            v = np.array(v, dtype=float)
            if v.ndim == 1:
                v = v.reshape(n, 1)
            if v.ndim != 2 or v.shape[0] != n:
                raise ValueError(f"v must have shape (n, d), got {v.shape}")
            if not np.all(np.isfinite(v)):
                raise ValueError("control values must be finite")
        for name, arr in (("y", y), ("x", x), ("v", v)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def T(self) -> int:
        return self.x.shape[1]

    @property
    def discrete(self) -> bool:
        return self.v.dtype == object

    @property
    def control_dim(self) -> int:
        return 1 if self.discrete else self.v.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.y[idx], self.x[idx], self.v[idx], self.mode)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.mode == other.mode
            and self.discrete == other.discrete
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.v, other.v)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class QuantileBins:
    """Bin every control coordinate at its empirical k-quantiles."""

    k: int

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("quantile binning needs k >= 2")


Scheme = Union[str, QuantileBins]


def partition_controls(data: Dataset, scheme: Scheme = "discrete") -> dict[str, np.ndarray]:
    """Map cell id -> sorted row indices.

    ``"discrete"`` groups rows by their control label. ``QuantileBins(k)``
    cuts each coordinate at its empirical quantiles j/k (linear interpolation);
    values equal to a cut point go to the lower bin. Quantile cell ids look
    like ``"q0.1"`` for bin 0 in v1 and bin 1 in v2.
    """
    if scheme == "discrete":
        if not data.discrete:
            raise ValueError("discrete partition requires label-valued controls")
        labels, inverse = np.unique(data.v.astype(str), return_inverse=True)
        return {str(lab): np.flatnonzero(inverse == i) for i, lab in enumerate(labels)}
    if not isinstance(scheme, QuantileBins):
        raise ValueError(f"unknown partition scheme {scheme!r}")
    if data.discrete:
        raise ValueError("quantile binning requires real-valued controls")
    k = scheme.k
    codes = np.empty((data.n, data.control_dim), dtype=int)
    for j in range(data.control_dim):
        col = data.v[:, j]
        if np.unique(col).size < k:
            raise ValueError(
                f"control coordinate v{j + 1} has {np.unique(col).size} distinct values, "
                f"fewer than k={k} bins"
            )
        edges = np.quantile(col, np.arange(1, k) / k)
        codes[:, j] = np.searchsorted(edges, col, side="left")
    cells: dict[str, list[int]] = {}
    for i, row in enumerate(codes):
        cells.setdefault("q" + ".".join(map(str, row)), []).append(i)
    return {cid: np.array(ix) for cid, ix in cells.items()}


def design_matrix(x: np.ndarray) -> np.ndarray:
    return np.column_stack([np.ones(x.shape[0]), np.asarray(x, dtype=float)])


def passes_lambda(lambda_min: float, lambda_max: float, threshold: float) -> bool:
    return lambda_min > threshold * lambda_max


@dataclass(frozen=True, eq=False)
class CellEstimate:
    cell_id: Any
    n_obs: int
    moment_hat: MomentMatrix
    cross_moment_hat: np.ndarray
    q_hat: np.ndarray | None
    lambda_min_hat: float
    gps_hat: GpsVector | None = None
    reason: Reason | None = None
    warnings: tuple[str, ...] = ()

    @property
    def retained(self) -> bool:
        return self.q_hat is not None


def estimate_cell(
    y,
    x,
    *,
    cell_id: Any = None,
    threshold: float = DEFAULT_LAMBDA_THRESHOLD,
    min_cell_size: int | None = None,
    exclusive: bool = True,
    overlap_delta: float = DEFAULT_OVERLAP_DELTA,
) -> CellEstimate:
    """Sample analog of q0(v) = E[p(X)p(X)' | v]^{-1} E[p(X)Y | v] in one cell.

    ``q_hat`` is None when the cell has fewer than ``min_cell_size`` rows
    (default T+2) or its moment matrix has lambda_min <= threshold * lambda_max;
    ``reason`` then says why.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    n, T = x.shape
    if n == 0:
        raise ValueError("estimate_cell needs at least one row")
    if min_cell_size is None:
        min_cell_size = T + 2
    P = design_matrix(x)
    raw = P.T @ P
    m = MomentMatrix((raw + raw.T) / (2.0 * n))
    c = P.T @ y / n
    ev = eigenvalues(m)
    gps = GpsVector(x.mean(axis=0)) if exclusive else None

    warnings: list[str] = []
    reason = None
    q = None
    if n < min_cell_size:
        reason = Reason.INSUFFICIENT_DATA
    elif not passes_lambda(ev[0], ev[-1], threshold):
        reason = (classify_gps(gps.probs, overlap_delta) if gps is not None else None) or (
            Reason.SINGULAR_MOMENT_MATRIX
        )
    else:
        q = np.linalg.solve(m.values, c)
        weak = (
            classify_gps(gps.probs, overlap_delta)
            if gps is not None
            else classify_moment(m, overlap_delta)
        )
        if weak is not None:
            warnings.append(f"cell {cell_id}: estimated but fails overlap check ({weak})")
    if reason is not None:
        warnings.append(f"cell {cell_id}: trimmed ({reason})")
    return CellEstimate(
        cell_id=cell_id,
        n_obs=int(n),
        moment_hat=m,
        cross_moment_hat=c,
        q_hat=q,
        lambda_min_hat=float(ev[0]),
        gps_hat=gps,
        reason=reason,
        warnings=tuple(warnings),
    )


@dataclass(frozen=True, eq=False)
class AsfEstimate:
    eq_mean: np.ndarray
    ate: np.ndarray
    trimmed_mass: float
    cell_estimates: tuple[CellEstimate, ...]
    warnings: tuple[str, ...] = ()

    def asf(self, profile: Sequence[int]) -> float:
        """mu(x) = p(x)'E[q0(V)]."""
        return float(np.concatenate(([1.0], np.asarray(profile, dtype=float))) @ self.eq_mean)


def estimate_cells(
    data: Dataset,
    scheme: Scheme = "discrete",
    threshold: float = DEFAULT_LAMBDA_THRESHOLD,
    min_cell_size: int | None = None,
    overlap_delta: float = DEFAULT_OVERLAP_DELTA,
) -> list[CellEstimate]:
    cells = partition_controls(data, scheme)
    return [
        estimate_cell(
            data.y[cells[cid]],
            data.x[cells[cid]],
            cell_id=cid,
            threshold=threshold,
            min_cell_size=min_cell_size,
            exclusive=data.mode == "exclusive",
            overlap_delta=overlap_delta,
        )
        for cid in sorted_ids(cells)
    ]


def estimate_asf(
    data: Dataset,
    scheme: Scheme = "discrete",
    threshold: float = DEFAULT_LAMBDA_THRESHOLD,
    min_cell_size: int | None = None,
    overlap_delta: float = DEFAULT_OVERLAP_DELTA,
    strict: bool = False,
) -> AsfEstimate:
    """Average q_hat over retained cells, weighting by cell row counts.

    Cells without q_hat are trimmed and their share of rows is reported as
    ``trimmed_mass``. With ``strict=True`` any trimming raises instead.
    """
    estimates = estimate_cells(data, scheme, threshold, min_cell_size, overlap_delta)
    kept = [e for e in estimates if e.retained]
    trimmed = [(e.cell_id, e.reason) for e in estimates if not e.retained]
    if not kept:
        raise NotIdentifiedError(
            "NOT_IDENTIFIED_EVERYWHERE", "every control cell was trimmed", trimmed
        )
    if strict and trimmed:
        names = ", ".join(f"{cid} ({r})" for cid, r in trimmed)
        raise NotIdentifiedError("NOT_IDENTIFIED", f"strict mode: trimmed cells {names}", trimmed)
    n_kept = sum(e.n_obs for e in kept)
    eq_mean = np.zeros(data.T + 1)
    for e in kept:
        eq_mean += (e.n_obs / n_kept) * e.q_hat
    trimmed_mass = sum(e.n_obs for e in estimates if not e.retained) / data.n
    warnings = tuple(w for e in estimates for w in e.warnings)
    return AsfEstimate(
        eq_mean=eq_mean,
        ate=eq_mean[1:].copy(),
        trimmed_mass=float(trimmed_mass),
        cell_estimates=tuple(estimates),
        warnings=warnings,
    )


@dataclass(frozen=True)
class CellAudit:
    cell_id: Any
    n_obs: int
    gps: tuple[float, ...] | None
    gps_sum: float | None
    lambda_min: float
    reason: Reason | None

    @property
    def identified(self) -> bool:
        return self.reason is None

    @property
    def verdict(self) -> str:
        return "IDENTIFIED" if self.identified else "NOT_IDENTIFIED"


@dataclass(frozen=True)
class IdentificationReport:
    mode: str
    T: int
    overlap_delta: float
    min_cell_size: int
    lambda_threshold: float
    cells: tuple[CellAudit, ...] = field(default_factory=tuple)

    @property
    def identified(self) -> bool:
        return all(c.identified for c in self.cells)

    @property
    def verdict(self) -> str:
        return "IDENTIFIED" if self.identified else "NOT_IDENTIFIED"

    @property
    def failing_cells(self) -> list[tuple[Any, Reason]]:
        return [(c.cell_id, c.reason) for c in self.cells if not c.identified]


def audit(
    data: Dataset,
    scheme: Scheme = "discrete",
    overlap_delta: float = DEFAULT_OVERLAP_DELTA,
    min_cell_size: int | None = None,
    lambda_threshold: float = DEFAULT_LAMBDA_THRESHOLD,
) -> IdentificationReport:
    """Per-cell identification diagnostics on data.

    Exclusive data is judged on the estimated propensity scores (each at least
    ``overlap_delta``, sum at most ``1 - overlap_delta``); general data on the
    estimated moment matrix. Cells smaller than ``min_cell_size`` are reported
    as INSUFFICIENT_DATA. The lambda threshold is the one used by estimation,
    so any cell the estimator trims fails here with the same reason.
    """
    if min_cell_size is None:
        min_cell_size = data.T + 2
    exclusive = data.mode == "exclusive"
    records = []
    for e in estimate_cells(data, scheme, lambda_threshold, min_cell_size, overlap_delta):
        ev = eigenvalues(e.moment_hat)
        if e.n_obs < min_cell_size:
            reason = Reason.INSUFFICIENT_DATA
        elif exclusive:
            reason = classify_gps(e.gps_hat.probs, overlap_delta)
            if reason is None and not passes_lambda(ev[0], ev[-1], lambda_threshold):
                reason = Reason.SINGULAR_MOMENT_MATRIX
        elif not passes_lambda(ev[0], ev[-1], lambda_threshold):
            reason = Reason.SINGULAR_MOMENT_MATRIX
        else:
            reason = classify_moment(e.moment_hat, overlap_delta)
        gps = e.gps_hat.probs if e.gps_hat is not None else None
        records.append(
            CellAudit(
                cell_id=e.cell_id,
                n_obs=e.n_obs,
                gps=gps,
                gps_sum=float(sum(gps)) if gps is not None else None,
                lambda_min=e.lambda_min_hat,
                reason=reason,
            )
        )
    return IdentificationReport(
        mode=data.mode,
        T=data.T,
        overlap_delta=float(overlap_delta),
        min_cell_size=int(min_cell_size),
        lambda_threshold=float(lambda_threshold),
        cells=tuple(records),
    )
