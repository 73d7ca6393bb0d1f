"""Split-sample selection of the penalty pair ``(lam, mu)``.

Each candidate pair is fitted on the training half; its TD errors on the
validation half are regressed on the state-action pair with kernel ridge
regression, and the pair with the smallest mean squared fitted Bellman
error wins.  Ties go to the stronger penalty.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import Dataset, Policy, ReferencePoint, TuningParams, validate_dataset
from .estimator import Design, FitResult, RidgeSmoother, select_centers
from .exceptions import AvgOPEError, EmptyValidation, TooFewTrajectories
from .kernel import KernelBasis, KernelSpec, median_heuristic
from .rng import substream
from .validation import MEDIAN_MAX_POINTS, check_anchor, check_kernel

VALIDATION_RIDGE = 1e-3


@dataclass(frozen=True)
class TuningGrid:
    """Candidate penalties.

    With ``scale_by_n`` the listed values are divided by the number of
    transitions ``N = nT`` of the dataset handed to :func:`select_tuning`;
    the same absolute values are then used for the training-half fits and
    the final refit.
    """

    lambdas: tuple = tuple(np.logspace(0, -5, 6))
    mus: tuple = tuple(np.logspace(0, -5, 6))
    split_fraction: float = 0.5
    seed: int = 0
    scale_by_n: bool = True

    def __post_init__(self):
        lam = tuple(sorted((float(x) for x in self.lambdas), reverse=True))
        mu = tuple(sorted((float(x) for x in self.mus), reverse=True))
        if not lam or not mu:
            raise ValueError("tuning grid must be nonempty")
        if min(lam) <= 0 or min(mu) <= 0:
            raise ValueError("tuning grid values must be positive")
        if not 0 < self.split_fraction < 1:
            raise ValueError("split_fraction must lie in (0, 1)")
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "mus", mu)

    def resolve(self, N: int) -> Tuple[np.ndarray, np.ndarray]:
        scale = 1.0 / N if self.scale_by_n else 1.0
        return np.array(self.lambdas) * scale, np.array(self.mus) * scale


def split_dataset(data: Dataset, fraction: float = 0.5, seed: int = 0) -> Tuple[Dataset, Dataset]:
    """Trajectory-level random split; the training part gets
    ``round(fraction * n)`` trajectories, halves rounded up."""
    if data.n < 2:
        raise TooFewTrajectories(f"need at least 2 trajectories to split, got {data.n}")
    n_train = min(max(math.floor(fraction * data.n + 0.5), 1), data.n - 1)
    perm = substream(seed, 1).permutation(data.n)
    return data.subset(np.sort(perm[:n_train])), data.subset(np.sort(perm[n_train:]))


class ValidationScorer:
    """Kernel ridge smoother of TD errors over a validation set.

    The regression uses its own median-heuristic bandwidth (validation
    states), an unpenalised intercept, and ridge ``VALIDATION_RIDGE`` in
    mean-loss form.
    """

    def __init__(self, validation: Dataset, ridge: float = VALIDATION_RIDGE, max_centers: Optional[int] = 1000, random_state=0):
        if validation.n == 0:
            raise EmptyValidation("validation set is empty")
        self.batch = validation.transitions()
        if self.batch.N == 0:
            raise EmptyValidation("validation set has no transitions")
        self.ridge = ridge
        self.kernel = KernelSpec(median_heuristic(validation.all_states(), MEDIAN_MAX_POINTS, random_state))
        idx = select_centers(self.batch.N, max_centers, random_state)
        basis = KernelBasis((self.batch.states[idx], self.batch.actions[idx]), self.kernel)
        self.smoother = RidgeSmoother(basis.transform(self.batch.states, self.batch.actions), self.batch.weights)
        self._shrink = self.smoother.shrinkage(ridge)

    def score_residuals(self, td: np.ndarray) -> float:
        return self.smoother.weighted_sq_norm(td, self.ridge)

    def score(self, fit: FitResult, policy: Policy) -> float:
        return self.score_residuals(fit.td_residuals(self.batch, policy))


def validation_score(fit: FitResult, validation: Dataset, policy: Policy, ridge: float = VALIDATION_RIDGE) -> float:
    """Mean squared kernel-ridge fit of ``fit``'s TD errors on ``validation``."""
    return ValidationScorer(validate_dataset(validation), ridge).score(fit, policy)


class _PolicyScoring:
    """Validation TD errors as an affine function of ``(eta, gamma)`` in the
    training design's coordinates, projected on the scorer's smoother."""

    def __init__(self, design: Design, scorer: ValidationScorer, policy: Policy):
        vb = scorer.batch
        phi = design.q_basis.transform(vb.states, vb.actions)
        probs = policy(vb.next_states)
        nxt = np.zeros_like(phi)
        for a in range(policy.num_actions):
            m = probs[:, a] > 0
            if m.any():
                nxt[m] += probs[m, a, None] * design.q_basis.transform(vb.next_states[m], np.full(m.sum(), a))
        Z = np.hstack([-np.ones((vb.N, 1)), nxt - phi])
        sm = scorer.smoother
        self.p0 = scorer._shrink * sm.project(vb.rewards)
        self.pz = scorer._shrink[:, None] * sm.project(Z)

    def __call__(self, theta) -> float:
        return float(np.sum((self.p0 + self.pz @ theta) ** 2))


class TuningContext:
    """Everything :func:`select_tuning` precomputes for one dataset; shared
    across target policies."""

    def __init__(self, data: Dataset, kernel: KernelSpec, anchor: ReferencePoint, grid: TuningGrid, max_centers=1000, random_state=0):
        self.grid = grid
        self.lambdas, self.mus = grid.resolve(data.N)
        train, val = split_dataset(data, grid.split_fraction, grid.seed)
        self.design = Design(train.transitions(), kernel, anchor, max_centers, random_state)
        self.scorer = ValidationScorer(val, VALIDATION_RIDGE, max_centers, random_state)

    def select(self, policy: Policy) -> Tuple[TuningParams, List[dict]]:
        scoring = _PolicyScoring(self.design, self.scorer, policy)
        problem = self.design.problem(policy)
        table = []
        best = None
        for lam in self.lambdas:
            for mu in self.mus:
                try:
                    score = scoring(problem.solve(lam, mu))
                except (AvgOPEError, np.linalg.LinAlgError, FloatingPointError):
                    score = math.inf
                if not math.isfinite(score):
                    score = math.inf
                table.append({"lambda": float(lam), "mu": float(mu), "score": score})
                if best is None or score < best[2]:
                    best = (lam, mu, score)
        if not math.isfinite(best[2]):
            raise AvgOPEError("every tuning grid cell failed")
        return TuningParams(float(best[0]), float(best[1])), table


def select_tuning(
    data: Dataset,
    policy: Policy,
    kernel: Optional[KernelSpec] = None,
    anchor: Optional[ReferencePoint] = None,
    grid: Optional[TuningGrid] = None,
    max_centers=1000,
    random_state=0,
) -> Tuple[TuningParams, List[dict]]:
    """Pick ``(lam, mu)`` for ``policy`` from ``grid``.

    Returns the selected parameters and the score table (one dict per
    cell, grid order).  Refitting on the full data is left to the caller.
    """
    data = validate_dataset(data)
    kernel = check_kernel(kernel, data, random_state)
    anchor = check_anchor(anchor, data)
    ctx = TuningContext(data, kernel, anchor, grid or TuningGrid(), max_centers, random_state)
    return ctx.select(policy)


def write_score_table(table: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["lambda", "mu", "score"])
        w.writeheader()
        for row in table:
            w.writerow(row)
