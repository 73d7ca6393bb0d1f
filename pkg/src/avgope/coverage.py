"""Monte-Carlo coverage studies on the two-dimensional simulation model.

Each replication simulates a dataset, selects penalties, refits, builds
the joint covariance and records whether each interval contains the
oracle value.  Case 1 and case 2 are the single-policy intervals for
"always treat" and "no treatment"; case 3 is their contrast.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from joblib import Parallel, delayed

from .core import always_policy
from .exceptions import AvgOPEError, ConfigError, StudyFailure
from .inference import confidence_interval, contrast_interval
from .pipeline import evaluate_policies
from .rng import study_seed
from .simulator import (
    ETA_ALWAYS_TREAT,
    ETA_ALWAYS_TREAT_SE,
    ETA_NO_TREATMENT,
    ETA_NO_TREATMENT_SE,
    LuckettModelConfig,
    simulate_luckett,
)
from .tuning import TuningGrid

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"
CASES = ("case1", "case2", "case3")
MAX_FAILURE_RATE = 0.01

# name -> (action, oracle eta, oracle Monte-Carlo SE)
POLICIES = {
    "always": (1, ETA_ALWAYS_TREAT, ETA_ALWAYS_TREAT_SE),
    "never": (0, ETA_NO_TREATMENT, ETA_NO_TREATMENT_SE),
}


@dataclass(frozen=True)
class StudyConfig:
    """One cell of a coverage study.

    ``policies`` names the two compared policies (case 1 is the first,
    case 2 the second, case 3 their difference).  ``lambdas`` and ``mus``
    are grid values before the ``1/N`` scaling.
    """

    n: int
    T: int
    num_replications: int = 500
    policies: tuple = ("always", "never")
    cases: tuple = CASES
    ci_level: float = 0.95
    base_seed: int = 0
    noise_sd: float = 0.5
    behavior_prob: float = 0.5
    lambdas: tuple = tuple(np.logspace(0, -5, 6))
    mus: tuple = tuple(np.logspace(0, -5, 6))
    split_fraction: float = 0.5
    max_centers: Optional[int] = 1000

    def __post_init__(self):
        for name in ("policies", "cases", "lambdas", "mus"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.num_replications < 1:
            raise ConfigError("num_replications must be at least 1")
        if self.n < 2 or self.T < 1:
            raise ConfigError("need n >= 2 and T >= 1")
        if len(self.policies) != 2 or any(p not in POLICIES for p in self.policies):
            raise ConfigError(f"policies must be two of {sorted(POLICIES)}, got {list(self.policies)}")
        bad = [c for c in self.cases if c not in CASES]
        if bad or not self.cases:
            raise ConfigError(f"unknown case {bad[0] if bad else '(empty)'}; expected a subset of {list(CASES)}")
        if not 0 < self.ci_level < 1:
            raise ConfigError("ci_level must lie in (0, 1)")

    @classmethod
    def from_dict(cls, doc: dict) -> "StudyConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        for key in doc:
            if key not in names:
                raise ConfigError(f"unknown config key {key!r}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        for k in ("policies", "cases", "lambdas", "mus"):
            out[k] = list(out[k])
        return out

    def oracle(self) -> dict:
        e1 = POLICIES[self.policies[0]][1]
        e2 = POLICIES[self.policies[1]][1]
        return {"case1": e1, "case2": e2, "case3": e1 - e2}


def run_replication(config: StudyConfig, r: int) -> dict:
    """Simulate, tune, fit and record intervals for replication ``r``."""
    seed = study_seed(config.base_seed, r)
    rec = {"replication": r, "seed": seed}
    try:
        data = simulate_luckett(LuckettModelConfig(config.noise_sd, config.behavior_prob, seed=seed), config.n, config.T)
        pols = [always_policy(POLICIES[p][0], 2, p) for p in config.policies]
        grid = TuningGrid(config.lambdas, config.mus, config.split_fraction, seed)
        res = evaluate_policies(data, pols, config.ci_level, seed, grid, max_centers=config.max_centers).inference
    except (AvgOPEError, np.linalg.LinAlgError, FloatingPointError) as exc:
        rec["error"] = f"{type(exc).__name__}: {exc}"
        return rec
    out = {}
    for j, case in enumerate(("case1", "case2")):
        lo, hi = confidence_interval(res, j)
        out[case] = {"estimate": float(res.eta_hats[j]), "se": res.se(j), "ci": [lo, hi]}
    est, lo, hi = contrast_interval(res, 0, 1)
    S = res.Sigma_hat
    se = math.sqrt(max(S[0, 0] + S[1, 1] - 2 * S[0, 1], 0.0) / res.n)
    out["case3"] = {"estimate": est, "se": se, "ci": [lo, hi]}
    rec["cases"] = {c: out[c] for c in config.cases}
    return rec


@dataclass(frozen=True, eq=False)
class StudyResult:
    config: StudyConfig
    summary: dict
    records: List[dict]
    failures: int

    def to_dict(self) -> dict:
        return {
            "spec_version": SCHEMA_VERSION,
            "config": self.config.to_dict(),
            "oracle": self.config.oracle(),
            "failures": self.failures,
            "summary": self.summary,
            "records": self.records,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def rows(self) -> List[dict]:
        return [
            {"case": c, "n": self.config.n, "T": self.config.T, **{k: self.summary[c][k] for k in ("coverage", "MAD", "mean_se", "sd")}}
            for c in self.config.cases
        ]

    def write_csv(self, path) -> None:
        write_table(self.rows(), path)


def write_table(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["case", "n", "T", "coverage", "MAD", "mean_se", "sd"])
        w.writeheader()
        for row in rows:
            w.writerow(row)


def summarize(config: StudyConfig, records: List[dict]) -> dict:
    oracle = config.oracle()
    ok = [r for r in records if "error" not in r]
    summary = {}
    for case in config.cases:
        est = np.array([r["cases"][case]["estimate"] for r in ok])
        se = np.array([r["cases"][case]["se"] for r in ok])
        lo = np.array([r["cases"][case]["ci"][0] for r in ok])
        hi = np.array([r["cases"][case]["ci"][1] for r in ok])
        truth = oracle[case]
        summary[case] = {
            "coverage": float(np.mean((lo <= truth) & (truth <= hi))),
            "MAD": float(np.mean(np.abs(est - truth))),
            "mean_se": float(se.mean()),
            "sd": float(est.std(ddof=1)) if len(est) > 1 else 0.0,
            "replications": len(est),
        }
    return summary


def run_study(config: StudyConfig, jobs: int = 1) -> StudyResult:
    """Run every replication of ``config`` and aggregate per case.

    Results depend only on ``config``: replication seeds are derived from
    ``base_seed`` and the replication index, not from scheduling.
    """
    reps = range(config.num_replications)
    if jobs == 1:
        records = [run_replication(config, r) for r in reps]
    else:
        records = Parallel(n_jobs=jobs)(delayed(run_replication)(config, r) for r in reps)
    failures = [r for r in records if "error" in r]
    for r in failures:
        log.warning("replication %d failed: %s", r["replication"], r["error"])
    if failures and len(failures) / config.num_replications >= MAX_FAILURE_RATE:
        raise StudyFailure(f"{len(failures)} of {config.num_replications} replications failed")
    return StudyResult(config, summarize(config, records), records, len(failures))
