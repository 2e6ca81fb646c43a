"""Small dense linear algebra on treatment design vectors and moment matrices.

Everything here works on (T+1)x(T+1) matrices where row/column 0 belongs to
the intercept and rows/columns 1..T to the treatment dummies.
"""

from __future__ import annotations

import itertools
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

# Singularity is judged relative to the spectrum: lambda_min <= dim * lambda_max * SINGULAR_RTOL.
SINGULAR_RTOL = 1e-10
GPS_SUM_TOL = 1e-12
JOINT_SUM_TOL = 1e-12
# Projections of the unit axes onto a null space shorter than this count as zero.
_NULL_COMPONENT_TOL = 1e-8


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def design_vector(profile: Sequence[int], exclusive: bool = False) -> np.ndarray:
    """Return p(x) = (1, x_1, ..., x_T) for a binary treatment profile."""
    x = np.asarray(profile)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("treatment profile must be a non-empty 1-d sequence")
    if not np.all((x == 0) | (x == 1)):
        raise ValueError(f"treatment indicators must be 0 or 1, got {list(profile)}")
    if exclusive and x.sum() > 1:
        raise ValueError(f"profile {list(profile)} has more than one treatment switched on")
    return np.concatenate(([1.0], x.astype(float)))


@dataclass(frozen=True)
class GpsVector:
    """Generalized propensity scores of mutually exclusive treatments.

    ``probs[t]`` is Pr[X(t+1) = 1 | V]; the leftover mass ``1 - sum(probs)``
    belongs to the untreated state.
    """

    probs: tuple[float, ...]

    def __init__(self, probs: Sequence[float]):
        p = tuple(float(v) for v in probs)
        if len(p) == 0:
            raise ValueError("at least one treatment is required (T >= 1)")
        if not all(np.isfinite(v) and 0.0 <= v <= 1.0 for v in p):
            raise ValueError(f"propensity scores must lie in [0, 1], got {p}")
        if sum(p) > 1.0 + GPS_SUM_TOL:
            raise ValueError(
                f"propensity scores sum to {sum(p)!r} > 1; treatments are not mutually exclusive"
            )
        object.__setattr__(self, "probs", p)

    @property
    def T(self) -> int:
        return len(self.probs)

    @property
    def total(self) -> float:
        return float(sum(self.probs))

    def as_joint(self) -> dict[tuple[int, ...], float]:
        """The induced distribution over {0, e_1, ..., e_T}."""
        dist: dict[tuple[int, ...], float] = {(0,) * self.T: max(1.0 - self.total, 0.0)}
        for t, p in enumerate(self.probs):
            profile = tuple(int(s == t) for s in range(self.T))
            dist[profile] = p
        return dist


@dataclass(frozen=True, eq=False)
class MomentMatrix:
    """Symmetric matrix E[p(X)p(X)' | V = v] of dimension T+1."""

    values: np.ndarray

    def __init__(self, values):
        a = np.array(values, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"moment matrix must be square, got shape {a.shape}")
        if a.shape[0] < 2:
            raise ValueError("moment matrix needs at least one treatment (dim >= 2)")
        if not np.all(np.isfinite(a)):
            raise ValueError("moment matrix has non-finite entries")
        if not np.array_equal(a, a.T):
            raise ValueError("moment matrix must be exactly symmetric")
        object.__setattr__(self, "values", _readonly(a))

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.dim - 1

    def __eq__(self, other) -> bool:
        if not isinstance(other, MomentMatrix):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def __hash__(self) -> int:
        return hash(self.values.tobytes())

    def __repr__(self) -> str:
        return f"MomentMatrix({self.values.tolist()!r})"


def _as_gps(gps) -> GpsVector:
    return gps if isinstance(gps, GpsVector) else GpsVector(gps)


def moment_matrix_from_gps(gps: GpsVector | Sequence[float]) -> MomentMatrix:
    """Block form [[1, p'], [p, diag(p)]] for mutually exclusive treatments."""
    p = np.array(_as_gps(gps).probs)
    T = p.size
    m = np.zeros((T + 1, T + 1))
    m[0, 0] = 1.0
    m[0, 1:] = p
    m[1:, 0] = p
    m[1:, 1:] = np.diag(p)
    return MomentMatrix(m)


def moment_matrix_from_joint(dist: Mapping[Sequence[int], float]) -> MomentMatrix:
    """Second moment matrix sum_x Pr[x] p(x)p(x)' of a distribution on {0,1}^T.

    Parameters
    ----------
    dist : mapping
        Treatment profile (length-T tuple of 0/1) to probability. Profiles
        that are absent have probability zero.
    """
    if not dist:
        raise ValueError("empty treatment distribution")
    lengths = {len(tuple(k)) for k in dist}
    if len(lengths) != 1:
        raise ValueError(f"treatment profiles have inconsistent lengths {sorted(lengths)}")
    T = lengths.pop()
    if T == 0:
        raise ValueError("at least one treatment is required (T >= 1)")
    probs = np.array([float(v) for v in dist.values()])
    if np.any(probs < 0) or not np.all(np.isfinite(probs)):
        raise ValueError("probabilities must be finite and nonnegative")
    if abs(probs.sum() - 1.0) > JOINT_SUM_TOL:
        raise ValueError(f"probabilities sum to {probs.sum()!r}, not 1")
    m = np.zeros((T + 1, T + 1))
    for profile, prob in dist.items():
        p = design_vector(tuple(profile))
        m += prob * np.outer(p, p)
    # outer products are symmetric entrywise, but guard the accumulated sum anyway
    return MomentMatrix((m + m.T) / 2.0)


def _values(m) -> np.ndarray:
    return m.values if isinstance(m, MomentMatrix) else np.asarray(m, dtype=float)


def eigenvalues(m) -> np.ndarray:
    """Ascending eigenvalues of a symmetric matrix."""
    return np.linalg.eigvalsh(_values(m))


def smallest_eigenvalue(m) -> float:
    return float(eigenvalues(m)[0])


def is_singular(m, rtol: float = SINGULAR_RTOL) -> bool:
    """True when lambda_min <= dim * lambda_max * rtol.

    A matrix whose largest eigenvalue is not positive (e.g. all zeros) is
    singular by this rule.
    """
    a = _values(m)
    if a.size == 0:
        return True
    ev = eigenvalues(a)
    return bool(ev[0] <= a.shape[0] * max(ev[-1], 0.0) * rtol)


def conditional_variance(m: MomentMatrix) -> np.ndarray:
    """Schur complement of the intercept entry: var(X | V) when m[0, 0] == 1."""
    a = _values(m)
    if a[0, 0] <= 0:
        raise ValueError("intercept entry must be positive")
    b = a[1:, 0]
    out = a[1:, 1:] - np.outer(b, b) / a[0, 0]
    return (out + out.T) / 2.0


def schur_complement_of_diag_block(m: MomentMatrix) -> float:
    """Scalar Schur complement of the treatment block diag(E[X | V]).

    For mutually exclusive treatments this is 1 - sum_t Pr[X(t) = 1 | V].
    """
    a = _values(m)
    block = a[1:, 1:]
    d = np.diag(block)
    if np.any(block - np.diag(d) != 0):
        raise ValueError("treatment block is not diagonal; treatments are not mutually exclusive")
    if np.any(d <= 0):
        zero = [int(i) + 1 for i in np.flatnonzero(d <= 0)]
        raise ValueError(f"treatment block has zero diagonal entries at treatments {zero}")
    b = a[1:, 0]
    return float(a[0, 0] - np.sum(b * b / d))


def null_space_direction(m, rtol: float = SINGULAR_RTOL) -> np.ndarray | None:
    """Unit vector D with m @ D ~ 0, or None if m is nonsingular.

    When the null space has more than one dimension the result is the
    normalized projection of the first coordinate axis e_j that is not
    orthogonal to it. That choice is deterministic, has D[j] > 0 with all
    earlier components zero, and makes |D[j]| as large as possible.
    """
    a = _values(m)
    ev, vecs = np.linalg.eigh(a)
    cutoff = a.shape[0] * max(ev[-1], 0.0) * rtol
    basis = vecs[:, ev <= cutoff]
    if basis.shape[1] == 0:
        return None
    for j in range(a.shape[0]):
        proj = basis @ basis[j]
        norm = np.linalg.norm(proj)
        if norm > _NULL_COMPONENT_TOL:
            out = proj / norm
            # components that are zero up to rounding must not decide the sign convention
            out[np.abs(out) <= _NULL_COMPONENT_TOL] = 0.0
            return out / np.linalg.norm(out)
    raise AssertionError("non-trivial null space has no axis projection")  # pragma: no cover


def all_profiles(T: int, exclusive: bool = False) -> list[tuple[int, ...]]:
    """Every treatment profile in {0,1}^T, or only 0_T and e_t when exclusive."""
    if exclusive:
        return [(0,) * T] + [tuple(int(s == t) for s in range(T)) for t in range(T)]
    return list(itertools.product((0, 1), repeat=T))
