"""Randomization tests for block-randomized data.

Treatment labels are re-drawn within blocks, which is exactly the null
randomization distribution, so the resulting p-values have guaranteed size
control without distributional assumptions.  Three statistic families are
supported: block-aligned mean difference, the same aggregation on
within-block ranks, and a six-score omnibus ("energy") statistic combined
through a quadratic form against its permutation covariance.
"""

from __future__ import annotations

import itertools
import math
import zlib
from dataclasses import dataclass
from functools import reduce
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import chi2, rankdata

STATISTICS = ("mean_diff", "rank", "energy")


class PermTestError(ValueError):
    """Invalid permutation-test inputs."""


class DegenerateBlockError(PermTestError):
    """A block has no treated or no control units."""

    def __init__(self, block_ids):
        self.block_ids = list(block_ids)
        super().__init__(f"blocks without both arms: {self.block_ids}")


@dataclass(frozen=True)
class Block:
    """One experimental block: binary treatment plus a real outcome."""

    block_id: str
    treatment: np.ndarray
    outcome: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.treatment, dtype=np.int8)
        y = np.asarray(self.outcome, dtype=float)
        if t.shape != y.shape or t.ndim != 1:
            raise PermTestError(f"block {self.block_id!r}: shape mismatch")
        if not np.isin(t, (0, 1)).all():
            raise PermTestError(f"block {self.block_id!r}: treatment must be 0/1")
        if not np.isfinite(y).all():
            raise PermTestError(f"block {self.block_id!r}: non-finite outcome")
        object.__setattr__(self, "treatment", t)
        object.__setattr__(self, "outcome", y)

    @property
    def n(self) -> int:
        return self.outcome.size

    @property
    def n_treated(self) -> int:
        return int(self.treatment.sum())


@dataclass(frozen=True)
class TestSpec:
    """Statistic family, sidedness, and resampling plan for one node test."""

    __test__ = False  # keep pytest from collecting this as a test class

    statistic: str = "rank"
    sides: str = "two"             # "one" (upper tail) or "two"
    n_perms: int = 1000
    exact: bool | None = None      # None: exact iff the assignment count fits the cap
    exact_cap: int = 10_000
    seed: int = 0
    chi2_approx: bool = False      # energy only: chi-square tail instead of resampled

    def __post_init__(self):
        if self.statistic not in STATISTICS:
            raise PermTestError(f"unknown statistic: {self.statistic!r}")
        if self.sides not in ("one", "two"):
            raise PermTestError("sides must be 'one' or 'two'")
        if self.n_perms < 100:
            raise PermTestError("n_perms must be at least 100")
        if self.exact_cap < 1:
            raise PermTestError("exact_cap must be positive")


def energy_scores(outcomes) -> np.ndarray:
    """Six per-unit outcome representations, returned as an (n, 6) array.

    Columns: raw outcome; rank (mean rank on ties); mean absolute distance
    to the other units; the same on ranks; maximum absolute distance; and
    tanh of the outcome.  Distances average over the n-1 *other* units.
    """
    y = np.asarray(outcomes, dtype=float)
    if y.ndim != 1 or y.size < 2:
        raise PermTestError("need at least 2 outcomes for distance scores")
    n = y.size
    ranks = rankdata(y)
    dist = np.abs(y[:, None] - y[None, :])
    rdist = np.abs(ranks[:, None] - ranks[None, :])
    return np.column_stack(
        [
            y,
            ranks,
            dist.sum(axis=1) / (n - 1),
            rdist.sum(axis=1) / (n - 1),
            dist.max(axis=1),
            np.tanh(y),
        ]
    )


def _score_matrix(statistic: str, outcome: np.ndarray) -> np.ndarray:
    if statistic == "mean_diff":
        return np.asarray(outcome, dtype=float)[:, None]
    if statistic == "rank":
        return rankdata(outcome)[:, None]
    return energy_scores(outcome)


def _check_blocks(blocks: Sequence[Block]) -> None:
    if not blocks:
        raise PermTestError("no blocks given")
    bad = [b.block_id for b in blocks if not 1 <= b.n_treated <= b.n - 1]
    if bad:
        raise DegenerateBlockError(bad)


def _contribution(scores: np.ndarray, weight: float, m: int, sum_treated) -> np.ndarray:
    """Weighted (treated mean - control mean) from treated score sums.

    ``sum_treated`` has shape (..., q); the result keeps that shape.  The
    difference is linear in the treated sum, which lets callers evaluate
    whole batches of assignments at once.
    """
    n = scores.shape[0]
    total = scores.sum(axis=0)
    return weight * (sum_treated / m - (total - sum_treated) / (n - m))


def block_statistic(
    blocks: Sequence[Block],
    spec: TestSpec,
    assignment: Mapping[str, np.ndarray] | None = None,
):
    """Observed statistic for an assignment (defaults to the recorded one).

    Returns a float for mean_diff/rank and a length-6 vector for energy.
    Within each block the treated-minus-control score means are weighted by
    the block's share of the total sample.
    """
    _check_blocks(blocks)
    n_total = sum(b.n for b in blocks)
    parts = []
    for b in blocks:
        t = b.treatment if assignment is None else np.asarray(assignment[b.block_id])
        if t.shape != b.treatment.shape or not np.isin(t, (0, 1)).all():
            raise PermTestError(f"assignment for block {b.block_id!r} malformed")
        m = int(t.sum())
        if not 1 <= m <= b.n - 1:
            raise DegenerateBlockError([b.block_id])
        scores = _score_matrix(spec.statistic, b.outcome)
        parts.append(_contribution(scores, b.n / n_total, m, scores[t == 1].sum(axis=0)))
    stat = reduce(np.add, parts)
    return stat if spec.statistic == "energy" else float(stat[0])


def _seed_sequence(seed: int, stream_key) -> np.random.SeedSequence:
    entropy = [seed & 0xFFFFFFFF]
    if stream_key is not None:
        entropy.append(zlib.crc32(str(stream_key).encode("utf-8")))
    return np.random.SeedSequence(entropy)


def _enumerate_assignment_stats(blocks, spec, n_total) -> tuple[np.ndarray, int]:
    """All-assignment statistic matrix (M, q) plus the observed row index.

    The observed statistic is read back out of the enumeration itself, so
    it is counted in its own tail with no float round-trip.
    """
    acc = None
    obs_idx = 0
    for b in blocks:
        scores = _score_matrix(spec.statistic, b.outcome)
        m = b.n_treated
        combos = np.array(list(itertools.combinations(range(b.n), m)), dtype=np.intp)
        sums = scores[combos].sum(axis=1)  # (n_choose_m, q)
        contrib = _contribution(scores, b.n / n_total, m, sums)
        observed_combo = np.flatnonzero(b.treatment == 1)
        row = int(np.flatnonzero((combos == observed_combo).all(axis=1))[0])
        if acc is None:
            acc = contrib
        else:
            acc = (acc[:, None, :] + contrib[None, :, :]).reshape(-1, contrib.shape[1])
        obs_idx = obs_idx * contrib.shape[0] + row
    return acc, obs_idx


def _sample_assignment_stats(blocks, spec, n_total, rng) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo assignment statistics (n_perms, q) plus the observed vector."""
    B = spec.n_perms
    acc = None
    obs = None
    for b in blocks:
        scores = _score_matrix(spec.statistic, b.outcome)
        m = b.n_treated
        idx = np.argsort(rng.random((B, b.n)), axis=1)[:, :m]
        sums = scores[idx].sum(axis=1)  # (B, q)
        contrib = _contribution(scores, b.n / n_total, m, sums)
        obs_c = _contribution(
            scores, b.n / n_total, m, scores[b.treatment == 1].sum(axis=0)
        )
        if acc is None:
            acc, obs = contrib, obs_c
        else:
            acc = acc + contrib
            obs = obs + obs_c
    return acc, obs


def _energy_quadratic(stats: np.ndarray, rel_tol: float = 1e-10):
    """Quadratic forms of assignment vectors against their own covariance.

    ``stats`` must contain every vector entering the comparison, observed
    included, so all rows are exchangeable under the null and the tail count
    stays valid.  The covariance is inverted through its eigendecomposition,
    dropping eigenvalues below ``rel_tol`` times the largest; the six scores
    are collinear by construction so the matrix is always rank deficient.
    """
    mu = stats.mean(axis=0)
    centered = stats - mu
    cov = centered.T @ centered / stats.shape[0]
    eigval, eigvec = np.linalg.eigh(cov)
    top = eigval.max() if eigval.size else 0.0
    keep = eigval > rel_tol * max(top, 0.0)
    rank = int(keep.sum())
    if rank == 0:
        return np.zeros(stats.shape[0]), 0
    basis = eigvec[:, keep] / np.sqrt(eigval[keep])
    quad = np.square(centered @ basis).sum(axis=1)
    return quad, rank


def total_assignments(blocks: Sequence[Block]) -> int:
    return math.prod(math.comb(b.n, b.n_treated) for b in blocks)


def permutation_pvalue(
    blocks: Sequence[Block], spec: TestSpec, stream_key=None
) -> float:
    """Randomization p-value for the null of no effect in any unit.

    Exact mode enumerates every within-block assignment combination and
    returns the exact tail proportion (used automatically when the count
    fits ``spec.exact_cap``); otherwise ``spec.n_perms`` Monte Carlo draws
    are used with the add-one estimator ``(1 + #{>= obs}) / (1 + n_perms)``,
    which is valid at any finite number of draws.  ``stream_key`` (for
    example a node id) isolates the RNG stream of each caller.
    """
    _check_blocks(blocks)
    n_total = sum(b.n for b in blocks)
    M = total_assignments(blocks)
    exact = spec.exact if spec.exact is not None else M <= spec.exact_cap
    if exact and M > spec.exact_cap:
        raise PermTestError(
            f"{M} assignments exceed the exact-enumeration cap {spec.exact_cap}"
        )

    if exact:
        stats, obs_idx = _enumerate_assignment_stats(blocks, spec, n_total)
        obs = stats[obs_idx]
    else:
        rng = np.random.default_rng(_seed_sequence(spec.seed, stream_key))
        stats, obs = _sample_assignment_stats(blocks, spec, n_total, rng)

    if spec.statistic == "energy":
        # the observed vector joins the covariance sample so every row is
        # exchangeable under the null
        pool = stats if exact else np.vstack([stats, obs])
        quad, rank = _energy_quadratic(pool)
        quad_obs = quad[obs_idx] if exact else quad[-1]
        quad_draws = quad if exact else quad[:-1]
        if spec.chi2_approx:
            return 1.0 if rank == 0 else float(chi2.sf(quad_obs, df=rank))
        extreme = int((quad_draws >= quad_obs).sum())
    else:
        vals = stats[:, 0]
        obs_val = obs[0]
        if spec.sides == "two":
            vals, obs_val = np.abs(vals), abs(obs_val)
        extreme = int((vals >= obs_val).sum())

    if exact:
        return extreme / M
    return (1 + extreme) / (1 + spec.n_perms)
