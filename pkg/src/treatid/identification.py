"""Identification verdicts over a collection of control cells.

A cell is one value (or bin) of the control variable V together with its
probability mass and the conditional distribution of treatments in it.
"""

from __future__ import annotations

import enum
import re
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any, Union

import numpy as np

from .core_algebra import (
    SINGULAR_RTOL,
    GpsVector,
    MomentMatrix,
    conditional_variance,
    eigenvalues,
    is_singular,
    moment_matrix_from_gps,
    moment_matrix_from_joint,
    null_space_direction,
)

WEIGHT_SUM_TOL = 1e-10
# Strict "sum < 1" for exact distributions, i.e. when no overlap margin is asked for.
GPS_SUM_STRICT_TOL = 1e-12

JointDistribution = Mapping[tuple, float]
TreatmentDist = Union[GpsVector, JointDistribution]


class Reason(str, enum.Enum):
    SINGULAR_MOMENT_MATRIX = "SINGULAR_MOMENT_MATRIX"
    ZERO_GPS = "ZERO_GPS"
    GPS_SUM_AT_ONE = "GPS_SUM_AT_ONE"
    INSUFFICIENT_DATA = "INSUFFICIENT_DATA"

    def __str__(self) -> str:
        return self.value


def cell_sort_key(cell_id: Any):
    """Natural ordering: 'c2' before 'c10', numbers before text."""
    if isinstance(cell_id, (int, np.integer)):
        return ((0, int(cell_id), ""),)
    parts = re.split(r"(\d+)", str(cell_id))
    return tuple((0, int(p), "") if p.isdigit() else (1, 0, p) for p in parts if p != "")


def sorted_ids(ids: Iterable[Any]) -> list:
    return sorted(ids, key=lambda c: (cell_sort_key(c), str(c)))


@dataclass(frozen=True, eq=False)
class CellDistribution:
    cell_id: Any
    weight: float
    treatment_dist: TreatmentDist

    def __post_init__(self):
        if not (np.isfinite(self.weight) and 0.0 <= self.weight <= 1.0):
            raise ValueError(f"cell {self.cell_id!r}: weight {self.weight!r} outside [0, 1]")
        if not isinstance(self.treatment_dist, GpsVector):
            dist = {tuple(int(v) for v in k): float(p) for k, p in self.treatment_dist.items()}
            object.__setattr__(self, "treatment_dist", dist)
        # fail early on malformed distributions
        object.__setattr__(self, "_moment", self._build_moment())

    @property
    def exclusive(self) -> bool:
        return isinstance(self.treatment_dist, GpsVector)

    @property
    def T(self) -> int:
        return self.moment.T

    @property
    def moment(self) -> MomentMatrix:
        return self._moment  # type: ignore[attr-defined]

    def _build_moment(self) -> MomentMatrix:
        if self.exclusive:
            return moment_matrix_from_gps(self.treatment_dist)
        return moment_matrix_from_joint(self.treatment_dist)


@dataclass(frozen=True)
class CellDiagnostics:
    lambda_min: float
    gps_sum: float | None = None
    min_gps: float | None = None


@dataclass(frozen=True)
class IdentificationVerdict:
    identified: bool
    failing_cells: tuple[tuple[Any, Reason], ...]
    per_cell: dict[Any, CellDiagnostics] = field(default_factory=dict)

    def reason_for(self, cell_id) -> Reason | None:
        for cid, reason in self.failing_cells:
            if cid == cell_id:
                return reason
        return None


@dataclass(frozen=True, eq=False)
class QFunction:
    """Per-cell coefficient means q(v), each a vector of length T+1."""

    values: dict

    def __init__(self, values: Mapping[Any, Sequence[float]]):
        object.__setattr__(
            self, "values", {k: np.array(v, dtype=float) for k, v in values.items()}
        )

    def __getitem__(self, cell_id) -> np.ndarray:
        return self.values[cell_id]

    def mean(self, cells: Sequence[CellDistribution]) -> np.ndarray:
        """E[q(V)] under the cell weights."""
        return sum(c.weight * self.values[c.cell_id] for c in _ordered(cells))


def validate_cells(cells: Sequence[CellDistribution]) -> None:
    if len(cells) == 0:
        raise ValueError("empty cell collection")
    ids = [c.cell_id for c in cells]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate cell ids")
    Ts = {c.T for c in cells}
    if len(Ts) != 1:
        raise ValueError(f"cells disagree on the number of treatments: {sorted(Ts)}")
    total = float(sum(c.weight for c in cells))
    if abs(total - 1.0) > WEIGHT_SUM_TOL:
        raise ValueError(f"cell weights sum to {total!r}, not 1")


def _ordered(cells: Sequence[CellDistribution]) -> list[CellDistribution]:
    by_id = {c.cell_id: c for c in cells}
    return [by_id[k] for k in sorted_ids(by_id)]


def classify_gps(gps: Sequence[float], overlap_delta: float = 0.0) -> Reason | None:
    """Overlap check for mutually exclusive treatments.

    Fails with GPS_SUM_AT_ONE when the scores leave less than ``overlap_delta``
    of mass untreated, else ZERO_GPS when some score is below ``overlap_delta``.
    With ``overlap_delta == 0`` both inequalities are strict.
    """
    p = np.asarray(gps, dtype=float)
    total = float(p.sum())
    if overlap_delta > 0:
        if total > 1.0 - overlap_delta:
            return Reason.GPS_SUM_AT_ONE
        if float(p.min()) < overlap_delta:
            return Reason.ZERO_GPS
        return None
    if not total < 1.0 - GPS_SUM_STRICT_TOL:
        return Reason.GPS_SUM_AT_ONE
    if not float(p.min()) > 0.0:
        return Reason.ZERO_GPS
    return None


def classify_moment(
    m: MomentMatrix, overlap_delta: float = 0.0, rtol: float = SINGULAR_RTOL
) -> Reason | None:
    """Nonsingularity check on the full second moment matrix.

    With a positive ``overlap_delta`` the conditional variance of the treatment
    dummies must also have smallest eigenvalue at least delta * (1 - delta),
    which for a single binary treatment is exactly delta <= P <= 1 - delta.
    """
    if is_singular(m, rtol):
        return Reason.SINGULAR_MOMENT_MATRIX
    if overlap_delta > 0:
        if eigenvalues(conditional_variance(m))[0] < overlap_delta * (1.0 - overlap_delta):
            return Reason.SINGULAR_MOMENT_MATRIX
    return None


def verdict_theorem1(
    cells: Sequence[CellDistribution], overlap_delta: float = 0.0, rtol: float = SINGULAR_RTOL
) -> IdentificationVerdict:
    """Identified iff every positive-weight cell has a nonsingular moment matrix."""
    validate_cells(cells)
    if overlap_delta < 0:
        raise ValueError("overlap_delta must be nonnegative")
    failing, per_cell = [], {}
    for c in _ordered(cells):
        gps = c.treatment_dist.probs if c.exclusive else None
        per_cell[c.cell_id] = CellDiagnostics(
            lambda_min=float(eigenvalues(c.moment)[0]),
            gps_sum=float(sum(gps)) if gps is not None else None,
            min_gps=float(min(gps)) if gps is not None else None,
        )
        if c.weight <= 0:
            continue
        reason = classify_moment(c.moment, overlap_delta, rtol)
        if reason is not None:
            failing.append((c.cell_id, reason))
    return IdentificationVerdict(not failing, tuple(failing), per_cell)


def verdict_theorem3(
    cells: Sequence[CellDistribution], overlap_delta: float = 0.0
) -> IdentificationVerdict:
    """Identified iff, in every positive-weight cell, each score is at least
    ``overlap_delta`` and their sum at most ``1 - overlap_delta``."""
    validate_cells(cells)
    if overlap_delta < 0:
        raise ValueError("overlap_delta must be nonnegative")
    for c in cells:
        if not c.exclusive:
            raise ValueError(f"cell {c.cell_id!r} is not in mutually exclusive mode")
    failing, per_cell = [], {}
    for c in _ordered(cells):
        p = c.treatment_dist.probs
        per_cell[c.cell_id] = CellDiagnostics(
            lambda_min=float(eigenvalues(c.moment)[0]),
            gps_sum=float(sum(p)),
            min_gps=float(min(p)),
        )
        if c.weight <= 0:
            continue
        reason = classify_gps(p, overlap_delta)
        if reason is not None:
            failing.append((c.cell_id, reason))
    return IdentificationVerdict(not failing, tuple(failing), per_cell)


def verdict_theorem2(
    cells: Sequence[CellDistribution], rtol: float = SINGULAR_RTOL
) -> IdentificationVerdict:
    """Identified iff var(X | V) is nonsingular in every positive-weight cell.

    The variance is judged on the scale of the full moment matrix it is the
    Schur complement of: singular when its smallest eigenvalue is at most
    dim * lambda_max(M) * rtol. (Its own spectrum gives no scale for T = 1.)
    """
    validate_cells(cells)
    failing, per_cell = [], {}
    for c in _ordered(cells):
        lam = float(eigenvalues(conditional_variance(c.moment))[0])
        per_cell[c.cell_id] = CellDiagnostics(lambda_min=lam)
        scale = c.moment.dim * float(eigenvalues(c.moment)[-1])
        if c.weight > 0 and lam <= scale * rtol:
            failing.append((c.cell_id, Reason.SINGULAR_MOMENT_MATRIX))
    return IdentificationVerdict(not failing, tuple(failing), per_cell)


def verdicts_agree(cells: Sequence[CellDistribution]) -> bool:
    """Check that the three criteria give the same answer on exact distributions.

    The moment-matrix test, the conditional-variance test and the
    score-sum test are computed independently; all scores must be strictly
    positive for the score-sum test to apply.
    """
    validate_cells(cells)
    for c in cells:
        if not c.exclusive:
            raise ValueError(f"cell {c.cell_id!r} is not in mutually exclusive mode")
        if min(c.treatment_dist.probs) <= 0:
            raise ValueError(f"cell {c.cell_id!r} has a zero propensity score")
    v1 = verdict_theorem1(cells).identified
    v2 = verdict_theorem2(cells).identified
    v3 = verdict_theorem3(cells).identified
    return v1 == v2 == v3


def construct_equivalent_q(
    cells: Sequence[CellDistribution], q0: QFunction, rtol: float = SINGULAR_RTOL
) -> QFunction | None:
    """Build q_bar = q0 + D with the same control regression but a different mean.

    D is a unit null-space direction of the moment matrix on the singular cells
    where its j*-th coordinate is nonzero (j* the smallest coordinate for which
    such a cell exists), signed so that D[j*] > 0, and zero everywhere else.
    Returns None when every positive-weight cell is nonsingular.
    """
    validate_cells(cells)
    directions = {}
    for c in _ordered(cells):
        if c.weight <= 0:
            continue
        d = null_space_direction(c.moment, rtol)
        if d is not None:
            directions[c.cell_id] = d
    if not directions:
        return None
    dim = next(iter(directions.values())).size
    nonzero = lambda d, j: abs(d[j]) > 1e-8  # noqa: E731
    j_star = min(j for j in range(dim) for d in directions.values() if nonzero(d, j))

    qbar = {}
    for c in cells:
        q = np.array(q0[c.cell_id], dtype=float)
        d = directions.get(c.cell_id)
        if d is not None and nonzero(d, j_star):
            q = q + np.sign(d[j_star]) * d / np.linalg.norm(d)
        qbar[c.cell_id] = q
    return QFunction(qbar)


def observational_distance(
    cells: Sequence[CellDistribution], qa: QFunction, qb: QFunction
) -> float:
    """E[(p(X)'(qa(V) - qb(V)))^2]: how far apart the implied E[Y | X, V] are."""
    total = 0.0
    for c in _ordered(cells):
        diff = qa[c.cell_id] - qb[c.cell_id]
        total += c.weight * float(diff @ c.moment.values @ diff)
    return total


def lemma1_inequality_gap(
    cells: Sequence[CellDistribution], qa: QFunction, qb: QFunction
) -> tuple[float, float]:
    """Both sides of the bound E[(p'd)^2] >= E[|d|^2 lambda_min(V)], d = qa - qb."""
    lhs = observational_distance(cells, qa, qb)
    rhs = 0.0
    for c in _ordered(cells):
        diff = qa[c.cell_id] - qb[c.cell_id]
        rhs += c.weight * float(diff @ diff) * max(float(eigenvalues(c.moment)[0]), 0.0)
    return lhs, rhs
