"""Two-type Galton-Watson observation process.

The observation mask marks which cells of the binary tree carry data.
Children appear only under observed mothers: an observed cell of type
``i`` (its label parity, except for the configurable root) produces an
observed even child, odd child, both, or neither, according to a
type-``i`` offspring law on ``{0, 1}^2``.  This module owns those laws,
their spectral theory (growth rate, eigenvectors, extinction
probabilities), mask simulation and growth-rate estimation from a mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import rng, tree
from .errors import ExtinctionError, NumericalError, ValidationError

# Offspring outcomes (even count, odd count), fixed column order.
OUTCOMES = ((0, 0), (1, 0), (0, 1), (1, 1))

_PROB_TOL = 1e-12


@dataclass(frozen=True)
class ReproductionLaw:
    """Offspring laws of the two parent types.

    ``probs[i, j]`` is the probability that a type-``i`` parent produces
    the outcome ``OUTCOMES[j]``.  Each row must be a probability vector.
    """

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (2, 4):
            raise ValidationError(f"reproduction law needs shape (2, 4), got {p.shape}")
        if np.any(p < -_PROB_TOL) or np.any(p > 1 + _PROB_TOL):
            raise ValidationError("offspring probabilities must lie in [0, 1]")
        sums = p.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > _PROB_TOL):
            raise ValidationError(f"offspring probabilities must sum to 1, got {sums}")
        object.__setattr__(self, "probs", np.clip(p, 0.0, 1.0))

    @classmethod
    def from_tables(cls, type0, type1) -> "ReproductionLaw":
        """Build from two mappings keyed by ``(j0, j1)`` pairs or ``"j0j1"`` strings."""
        rows = []
        for table in (type0, type1):
            norm = {}
            for key, value in table.items():
                if isinstance(key, str):
                    if len(key) != 2 or any(ch not in "01" for ch in key):
                        raise ValidationError(f"bad offspring outcome key {key!r}")
                    key = (int(key[0]), int(key[1]))
                norm[tuple(key)] = float(value)
            unknown = set(norm) - set(OUTCOMES)
            if unknown:
                raise ValidationError(f"unknown offspring outcomes {sorted(unknown)}")
            rows.append([norm.get(o, 0.0) for o in OUTCOMES])
        return cls(np.array(rows))

    @classmethod
    def full_observation(cls) -> "ReproductionLaw":
        """Both children always observed: the complete-tree mask."""
        return cls(np.array([[0.0, 0.0, 0.0, 1.0], [0.0, 0.0, 0.0, 1.0]]))

    @classmethod
    def from_mean_matrix(cls, mean_matrix) -> "ReproductionLaw":
        """Law with independent children matching a 2x2 matrix of means.

        Row ``i`` of ``mean_matrix`` holds the marginal observation
        probabilities of the even and odd child of a type-``i`` parent;
        the joint law is the product of the two marginals.
        """
        m = np.asarray(mean_matrix, dtype=float)
        if m.shape != (2, 2) or np.any(m < 0) or np.any(m > 1):
            raise ValidationError("mean matrix must be 2x2 with entries in [0, 1]")
        rows = []
        for i in range(2):
            p0, p1 = m[i]
            rows.append(
                [(1 - p0) * (1 - p1), p0 * (1 - p1), (1 - p0) * p1, p0 * p1]
            )
        return cls(np.array(rows))

    @property
    def mean_matrix(self) -> np.ndarray:
        """Expected children counts: entry ``(i, j)`` is the mean number
        of type-``j`` children of a type-``i`` parent."""
        p = self.probs
        return np.array(
            [
                [p[0, 1] + p[0, 3], p[0, 2] + p[0, 3]],
                [p[1, 1] + p[1, 3], p[1, 2] + p[1, 3]],
            ]
        )

    @property
    def variances(self) -> np.ndarray:
        """Bernoulli variances ``m (1 - m)`` of the children counts."""
        m = self.mean_matrix
        return m * (1.0 - m)

    def both_children_probability(self, parent_type: int) -> float:
        return float(self.probs[parent_type, 3])

    def generating_function(self, parent_type: int, s0: float, s1: float) -> float:
        p = self.probs[parent_type]
        return float(p[0] + p[1] * s0 + p[2] * s1 + p[3] * s0 * s1)

    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.probs, axis=1)


@dataclass(frozen=True)
class GWSpectral:
    """Spectral summary of a reproduction law.

    ``growth_rate`` is the dominant eigenvalue of the mean matrix;
    ``left_eigenvector`` sums to one and gives the asymptotic type
    proportions, ``right_eigenvector`` is normalised against it.
    ``pair_fraction`` is the asymptotic fraction of observed cells
    whose two children are both observed.
    """

    law: ReproductionLaw
    mean_matrix: np.ndarray
    variances: np.ndarray
    growth_rate: float
    left_eigenvector: np.ndarray
    right_eigenvector: np.ndarray
    extinction: tuple[float, float]
    pair_fraction: float
    discriminant: float
    supercritical: bool


def spectral(law: ReproductionLaw) -> GWSpectral:
    """Closed-form spectral quantities of the 2x2 mean matrix.

    Requires every entry of the mean matrix to be positive (so the
    dominant eigenvalue is simple and the eigenvectors are positive).
    Subcriticality is reported through the ``supercritical`` flag, not
    as an error.
    """
    m = law.mean_matrix
    if np.any(m <= 0.0):
        raise ValidationError(
            "positivity violated: every entry of the mean matrix must be > 0"
        )
    trace = m[0, 0] + m[1, 1]
    det = m[0, 0] * m[1, 1] - m[0, 1] * m[1, 0]
    disc = trace * trace - 4.0 * det
    if disc <= 0.0:
        raise NumericalError("dominant eigenvalue is not simple")
    pi = 0.5 * (trace + math.sqrt(disc))

    z = np.array([m[1, 0], pi - m[0, 0]])
    z = z / z.sum()
    y = np.array([m[0, 1], pi - m[0, 0]])
    y = y / float(z @ y)

    q = extinction_probabilities(law)
    pair = law.both_children_probability(0) * z[0] + law.both_children_probability(1) * z[1]
    return GWSpectral(
        law=law,
        mean_matrix=m,
        variances=law.variances,
        growth_rate=pi,
        left_eigenvector=z,
        right_eigenvector=y,
        extinction=q,
        pair_fraction=float(pair),
        discriminant=disc,
        supercritical=pi > 1.0,
    )


def extinction_probabilities(
    law: ReproductionLaw, tol: float = 1e-12, max_iter: int = 10**6
) -> tuple[float, float]:
    """Smallest fixed point of the pair of generating functions.

    Iterated from ``(0, 0)``, which converges monotonically to the
    componentwise-smallest solution of ``q_i = f_i(q_0, q_1)``.
    """
    q0 = q1 = 0.0
    for _ in range(max_iter):
        n0 = law.generating_function(0, q0, q1)
        n1 = law.generating_function(1, q0, q1)
        if abs(n0 - q0) < tol and abs(n1 - q1) < tol:
            return (n0, n1)
        q0, q1 = n0, n1
    raise NumericalError("extinction fixed-point iteration did not converge")


def extinction_probability(law: ReproductionLaw, root_type: int) -> float:
    """Extinction probability starting from one individual of ``root_type``."""
    return extinction_probabilities(law)[_check_root_type(root_type)]


def _check_root_type(root_type: int) -> int:
    if root_type not in (0, 1):
        raise ValidationError(f"root type must be 0 or 1, got {root_type}")
    return root_type


@dataclass
class ObservationMask:
    """Observed node ids of a partially observed binary tree.

    ``generations[r]`` holds the ascending observed ids of generation
    ``r``; the root (id 1) is always observed.  ``counts[r]`` are the
    per-parity observed counts ``(even, odd)`` of generation ``r >= 1``;
    the root is booked under its configured reproduction type.
    Prefix closure holds by construction: an observed cell's mother is
    observed.
    """

    depth: int
    root_type: int
    generations: list[np.ndarray]
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        tree.check_depth(self.depth)
        _check_root_type(self.root_type)
        if len(self.generations) != self.depth + 1:
            raise ValidationError("one id array per generation is required")
        if self.counts is None:
            counts = np.zeros((self.depth + 1, 2), dtype=np.int64)
            counts[0, self.root_type] = 1
            for r in range(1, self.depth + 1):
                ids = self.generations[r]
                even = int(np.count_nonzero(ids % 2 == 0))
                counts[r] = (even, ids.size - even)
            self.counts = counts

    @classmethod
    def from_ids(cls, ids, depth: int | None = None, root_type: int = 0) -> "ObservationMask":
        """Build (and validate) a mask from a flat iterable of node ids."""
        arr = np.unique(np.asarray(list(ids), dtype=np.int64))
        if arr.size == 0 or arr[0] < 1:
            raise ValidationError("mask needs positive node ids")
        if arr[0] != 1:
            raise ValidationError("node 1 (the root) must be observed")
        max_gen = int(arr[-1]).bit_length() - 1
        if depth is None:
            depth = max_gen
        elif depth < max_gen:
            raise ValidationError(
                f"declared depth {depth} is below the deepest listed node (generation {max_gen})"
            )
        tree.check_depth(depth)
        gens = []
        for r in range(depth + 1):
            lo, hi = tree.generation_range(r)
            gens.append(arr[(arr >= lo) & (arr <= hi)])
        # prefix closure: every listed node's mother is listed
        flat = set(arr.tolist())
        for k in arr.tolist():
            if k >= 2 and (k // 2) not in flat:
                raise ValidationError(
                    f"orphan observation: node {k} is listed but its mother {k // 2} is not"
                )
        return cls(depth=depth, root_type=root_type, generations=gens)

    def ids(self) -> np.ndarray:
        return np.concatenate(self.generations)

    def generation_count(self, n: int) -> int:
        """Number of observed cells in generation ``n``."""
        return int(self.generations[n].size)

    def total_count(self, n: int) -> int:
        """Number of observed cells in the tree up to generation ``n``."""
        return int(sum(self.generations[r].size for r in range(n + 1)))

    def extinct_by(self, n: int) -> bool:
        return self.generation_count(n) == 0

    def child_positions(self, r: int):
        """Locate the children of generation ``r`` parents inside generation ``r + 1``.

        Returns ``(has_even, pos_even, has_odd, pos_odd)`` aligned with
        ``generations[r]``: boolean observation flags and positions into
        ``generations[r + 1]`` (valid only where the flag is set).
        """
        parents = self.generations[r]
        kids = self.generations[r + 1]

        def locate(child_ids):
            if kids.size == 0 or parents.size == 0:
                shape = parents.shape
                return np.zeros(shape, dtype=bool), np.zeros(shape, dtype=np.int64)
            pos = np.minimum(np.searchsorted(kids, child_ids), kids.size - 1)
            return kids[pos] == child_ids, pos

        has_e, pos_e = locate(2 * parents)
        has_o, pos_o = locate(2 * parents + 1)
        return has_e, pos_e, has_o, pos_o

    def pair_count(self, n: int) -> int:
        """Observed cells of generations ``0..n`` with both children observed."""
        if n + 1 > self.depth:
            raise ValidationError(
                f"pair counts up to generation {n} need mask depth {n + 1}"
            )
        total = 0
        for r in range(n + 1):
            has_e, _, has_o, _ = self.child_positions(r)
            total += int(np.count_nonzero(has_e & has_o))
        return total


def simulate_mask(
    law: ReproductionLaw, depth: int, root_type: int = 0, seed: int = 0
) -> ObservationMask:
    """Draw one observation mask down to ``depth`` generations.

    Each observed cell draws its offspring outcome from the law of its
    type (label parity; the root uses ``root_type``).  Deterministic in
    ``(seed, law, depth, root_type)``; the draw stream is independent of
    the noise stream used by the joint simulator.
    """
    tree.check_depth(depth)
    _check_root_type(root_type)
    gen = rng.generator(seed, rng.MASK_STREAM)
    cum = law.cumulative()

    gens = [np.array([1], dtype=np.int64)]
    counts = np.zeros((depth + 1, 2), dtype=np.int64)
    counts[0, root_type] = 1
    for r in range(depth):
        parents = gens[r]
        if parents.size == 0:
            gens.append(np.array([], dtype=np.int64))
            continue
        types = (parents % 2).astype(np.int64)
        if r == 0:
            types[0] = root_type
        u = gen.random(parents.size)
        outcome = (u[:, None] >= cum[types]).sum(axis=1)
        has_even = (outcome == 1) | (outcome == 3)
        has_odd = (outcome == 2) | (outcome == 3)
        kids = np.sort(
            np.concatenate([2 * parents[has_even], 2 * parents[has_odd] + 1])
        )
        gens.append(kids)
        counts[r + 1] = (int(has_even.sum()), int(has_odd.sum()))
    return ObservationMask(depth=depth, root_type=root_type, generations=gens, counts=counts)


@dataclass(frozen=True)
class GrowthRateEstimate:
    """Ratio estimator of the growth rate with a heuristic normal CI."""

    pi_hat: float
    ci_low: float
    ci_high: float
    level: float


def estimate_pi(mask: ObservationMask, level: float = 0.95) -> GrowthRateEstimate:
    """Ratio estimator: total observed children over total observed parents.

    The confidence interval is a delta-method normal interval built from
    the per-parent offspring counts (a heuristic: the exact interval
    construction for this estimator is not pinned down here).
    """
    n = mask.depth
    if n < 1 or mask.generation_count(1) == 0:
        raise ExtinctionError("mask is extinct at the root's children")
    children_total = sum(mask.generation_count(r) for r in range(1, n + 1))
    parents_total = sum(mask.generation_count(r) for r in range(n))
    pi_hat = children_total / parents_total

    # per-parent offspring counts; their spread drives the CI width
    sq_sum = 0
    for r in range(n):
        has_e, _, has_o, _ = mask.child_positions(r)
        y = has_e.astype(np.int64) + has_o.astype(np.int64)
        sq_sum += int((y * y).sum())
    var = max(sq_sum / parents_total - pi_hat * pi_hat, 0.0)
    se = math.sqrt(var / parents_total)
    z = float(stats.norm.ppf(0.5 + level / 2.0))
    return GrowthRateEstimate(pi_hat, pi_hat - z * se, pi_hat + z * se, level)


@dataclass(frozen=True)
class PopulationRenormalization:
    """Two finite-depth estimates of the branching limit variable."""

    w_last_generation: float
    w_cumulative: float


def renormalized_population(mask: ObservationMask, pi: float) -> PopulationRenormalization:
    """Normalised population sizes whose common limit is the limit variable.

    Returns the deepest generation count over ``pi**depth`` and the
    cumulative-count alternative ``(pi - 1) |T*_n| / (pi**(n+1) - 1)``;
    both converge to the same limit for supercritical laws.
    """
    if pi <= 1.0:
        raise ValidationError("renormalisation requires a supercritical growth rate")
    n = mask.depth
    w_g = mask.generation_count(n) / pi**n
    w_t = (pi - 1.0) * mask.total_count(n) / (pi ** (n + 1) - 1.0)
    return PopulationRenormalization(w_g, w_t)
