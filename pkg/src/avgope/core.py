"""Trajectory data model, policies and CSV ingestion."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from .exceptions import (
    ActionOutOfRange,
    AdjacencyViolation,
    DimensionMismatch,
    EmptyDataset,
    InvalidPolicyOutput,
    LengthMismatch,
    MissingColumn,
    NonContiguousTime,
    NonFiniteInput,
    RaggedTrajectories,
)

PROB_ATOL = 1e-10
ADJACENCY_ATOL = 1e-9


def _frozen(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Trajectory:
    """One unit's record ``S_1, A_1, R_2, S_2, ..., A_T, R_{T+1}, S_{T+1}``.

    ``rewards[t]`` belongs to the transition ``(states[t], actions[t],
    states[t + 1])``.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    unit_id: str = ""

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        object.__setattr__(self, "states", _frozen(states))
        actions = np.asarray(self.actions)
        if actions.size and not np.all(np.equal(np.mod(actions, 1), 0)):
            raise ActionOutOfRange(f"non-integer action in unit {self.unit_id!r}")
        object.__setattr__(self, "actions", _frozen(actions, dtype=np.int64))
        object.__setattr__(self, "rewards", _frozen(self.rewards))

    @property
    def T(self) -> int:
        return len(self.actions)

    @property
    def d(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True, eq=False)
class Dataset:
    """``n`` independent trajectories sharing length ``T``, state dimension
    ``d`` and action count ``num_actions``."""

    trajectories: tuple
    num_actions: int
    d: Optional[int] = None

    def __post_init__(self):
        trajs = tuple(self.trajectories)
        object.__setattr__(self, "trajectories", trajs)
        if self.d is None and trajs:
            object.__setattr__(self, "d", trajs[0].d)

    @property
    def n(self) -> int:
        return len(self.trajectories)

    @property
    def T(self) -> int:
        return self.trajectories[0].T

    @property
    def N(self) -> int:
        return self.n * self.T

    def __len__(self):
        return self.n

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(tuple(self.trajectories[i] for i in indices), self.num_actions, self.d)

    def all_states(self) -> np.ndarray:
        """Every observed state (including the final ``S_{T+1}``), stacked."""
        return np.concatenate([tr.states for tr in self.trajectories])

    def transitions(self) -> "TransitionBatch":
        return TransitionBatch.from_dataset(self)


@dataclass(frozen=True, eq=False)
class TransitionBatch:
    """Flat view of the transitions ``(S_t, A_t, R_{t+1}, S_{t+1})``.

    ``weights`` sum to one; a batch built from a :class:`Dataset` carries
    uniform weights ``1/(nT)`` and ``unit`` holds the trajectory index of
    each row.  Weighted batches (e.g. exact transition frequencies of a
    finite MDP) have ``unit`` set to ``None``.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    weights: np.ndarray
    num_actions: int
    unit: Optional[np.ndarray] = None
    n_units: Optional[int] = None

    def __post_init__(self):
        for name in ("states", "next_states"):
            a = np.asarray(getattr(self, name), dtype=float)
            if a.ndim == 1:
                a = a[:, None]
            object.__setattr__(self, name, _frozen(a))
        object.__setattr__(self, "actions", _frozen(self.actions, dtype=np.int64))
        object.__setattr__(self, "rewards", _frozen(self.rewards))
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", _frozen(w / w.sum()))
        if self.unit is not None:
            object.__setattr__(self, "unit", _frozen(self.unit, dtype=np.int64))

    @classmethod
    def from_dataset(cls, data: Dataset) -> "TransitionBatch":
        trajs = data.trajectories
        T = data.T
        states = np.concatenate([tr.states[:-1] for tr in trajs])
        next_states = np.concatenate([tr.states[1:] for tr in trajs])
        actions = np.concatenate([tr.actions for tr in trajs])
        rewards = np.concatenate([tr.rewards for tr in trajs])
        N = len(actions)
        return cls(
            states=states,
            actions=actions,
            rewards=rewards,
            next_states=next_states,
            weights=np.full(N, 1.0 / N),
            num_actions=data.num_actions,
            unit=np.repeat(np.arange(data.n), T),
            n_units=data.n,
        )

    @property
    def N(self) -> int:
        return len(self.actions)

    @property
    def d(self) -> int:
        return self.states.shape[1]

    def unit_means(self, values: np.ndarray) -> np.ndarray:
        """Per-trajectory average ``(1/T) sum_t values`` (length ``n``)."""
        if self.unit is None:
            raise ValueError("weighted batch has no trajectory structure")
        sums = np.bincount(self.unit, weights=values, minlength=self.n_units)
        counts = np.bincount(self.unit, minlength=self.n_units)
        return sums / counts


def validate_dataset(raw: Union[Dataset, Sequence[Trajectory]], num_actions: Optional[int] = None) -> Dataset:
    """Check every trajectory/dataset invariant and return the dataset.

    Raises the first violation found, scanning trajectories in order, with
    the trajectory index in the message.
    """
    if not isinstance(raw, Dataset):
        if num_actions is None:
            raise TypeError("num_actions is required when passing raw trajectories")
        raw = Dataset(tuple(raw), num_actions)
    trajs = raw.trajectories
    if len(trajs) == 0:
        raise EmptyDataset("dataset has no trajectories")
    d = raw.d
    K = raw.num_actions
    if K < 1:
        raise ActionOutOfRange(f"num_actions must be >= 1, got {K}")
    T0 = trajs[0].T
    for i, tr in enumerate(trajs):
        if tr.states.ndim != 2 or tr.states.shape[1] != d:
            raise DimensionMismatch(f"trajectory {i}: state dimension {tr.states.shape[-1]} != {d}")
        if not (len(tr.states) == tr.T + 1 == len(tr.rewards) + 1):
            raise LengthMismatch(
                f"trajectory {i}: {len(tr.states)} states, {tr.T} actions, {len(tr.rewards)} rewards"
            )
        if tr.T < 1:
            raise LengthMismatch(f"trajectory {i}: no transitions")
        if tr.T != T0:
            raise RaggedTrajectories(f"trajectory {i}: T={tr.T} but trajectory 0 has T={T0}")
        bad = (tr.actions < 0) | (tr.actions >= K)
        if bad.any():
            t = int(np.argmax(bad))
            raise ActionOutOfRange(f"trajectory {i}, t={t + 1}: action {tr.actions[t]} not in [0, {K})")
        if not (np.isfinite(tr.states).all() and np.isfinite(tr.rewards).all()):
            raise NonFiniteInput(f"trajectory {i}: non-finite state or reward")
    return raw


# --------------------------------------------------------------------- policies


@dataclass(frozen=True)
class Policy:
    """Stationary Markov policy over ``num_actions`` actions.

    ``fn`` maps an ``(m, d)`` array of states to an ``(m, num_actions)``
    array of action probabilities.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    num_actions: int
    label: str = "policy"

    @classmethod
    def from_state_fn(cls, fn: Callable[[np.ndarray], Sequence[float]], num_actions: int, label: str = "policy") -> "Policy":
        """Wrap a per-state callable ``fn(state) -> probabilities``."""

        def batched(states):
            return np.array([np.asarray(fn(s), dtype=float) for s in states])

        return cls(batched, num_actions, label)

    def prob(self, state) -> np.ndarray:
        return policy_prob_matrix(self, np.atleast_2d(np.asarray(state, dtype=float)))[0]

    def __call__(self, states) -> np.ndarray:
        return policy_prob_matrix(self, states)


def policy_prob_matrix(policy: Policy, states) -> np.ndarray:
    """Stack ``policy.prob`` over ``states`` and check each row is a
    probability vector."""
    states = np.asarray(states, dtype=float)
    if states.ndim == 1:
        states = states[:, None]
    if len(states) == 0:
        raise ValueError("states must be nonempty")
    probs = np.asarray(policy.fn(states), dtype=float)
    K = policy.num_actions
    if probs.shape != (len(states), K):
        raise InvalidPolicyOutput(
            f"policy {policy.label!r} returned shape {probs.shape}, expected {(len(states), K)}"
        )
    if not np.isfinite(probs).all() or (probs < 0).any():
        raise InvalidPolicyOutput(f"policy {policy.label!r} returned negative or non-finite probabilities")
    err = np.abs(probs.sum(axis=1) - 1.0)
    if (err > PROB_ATOL).any():
        i = int(np.argmax(err))
        raise InvalidPolicyOutput(
            f"policy {policy.label!r}: probabilities at state {i} sum to {probs[i].sum()!r}"
        )
    return probs


def constant_policy(probs: Sequence[float], label: str = "constant") -> Policy:
    p = np.asarray(probs, dtype=float)
    return Policy(lambda s: np.broadcast_to(p, (len(s), len(p))).copy(), len(p), label)


def always_policy(action: int, num_actions: int = 2, label: Optional[str] = None) -> Policy:
    p = np.zeros(num_actions)
    p[action] = 1.0
    return constant_policy(p, label or f"always:{action}")


def uniform_policy(num_actions: int = 2, label: str = "uniform") -> Policy:
    return constant_policy(np.full(num_actions, 1.0 / num_actions), label)


def threshold_policy(
    coordinate: int,
    threshold: float,
    above: Sequence[float],
    below: Sequence[float],
    label: str = "threshold",
) -> Policy:
    """``above`` probabilities where ``state[coordinate] >= threshold``,
    ``below`` elsewhere."""
    hi = np.asarray(above, dtype=float)
    lo = np.asarray(below, dtype=float)
    if hi.shape != lo.shape:
        raise InvalidPolicyOutput("above/below probability vectors differ in length")

    def fn(states):
        mask = states[:, coordinate] >= threshold
        return np.where(mask[:, None], hi, lo)

    return Policy(fn, len(hi), label)


def binned_policy(
    coordinates: Sequence[int],
    edges: Sequence[Sequence[float]],
    table: dict,
    default: Optional[Sequence[float]] = None,
    label: str = "table",
) -> Policy:
    """Probability table keyed by discretised state bins.

    Each listed coordinate is binned with ``np.digitize`` against its
    edges; ``table`` maps a bin-index tuple to a probability vector.
    """
    table = {tuple(int(b) for b in k): np.asarray(v, dtype=float) for k, v in table.items()}
    K = len(next(iter(table.values()))) if table else len(default)
    dflt = None if default is None else np.asarray(default, dtype=float)
    for key, v in list(table.items()) + ([("default", dflt)] if dflt is not None else []):
        if len(v) != K or (v < 0).any() or abs(v.sum() - 1.0) > PROB_ATOL:
            raise InvalidPolicyOutput(f"policy {label!r}: row {key} is not a probability vector")

    def fn(states):
        bins = np.stack([np.digitize(states[:, c], e) for c, e in zip(coordinates, edges)], axis=1)
        out = np.empty((len(states), K))
        for i, b in enumerate(map(tuple, bins)):
            row = table.get(b, dflt)
            if row is None:
                raise InvalidPolicyOutput(f"policy {label!r}: no table entry for bin {b}")
            out[i] = row
        return out

    return Policy(fn, K, label)


# ------------------------------------------------------------- small records


@dataclass(frozen=True, eq=False)
class ReferencePoint:
    """Anchor ``(s*, a*)`` at which the value-function class vanishes."""

    s_star: np.ndarray
    a_star: int

    def __post_init__(self):
        object.__setattr__(self, "s_star", _frozen(np.atleast_1d(np.asarray(self.s_star, dtype=float))))
        object.__setattr__(self, "a_star", int(self.a_star))

    def check(self, d: int, num_actions: int) -> "ReferencePoint":
        if self.s_star.shape != (d,):
            raise DimensionMismatch(f"anchor state has dimension {self.s_star.shape}, expected {d}")
        if not 0 <= self.a_star < num_actions:
            raise ActionOutOfRange(f"anchor action {self.a_star} not in [0, {num_actions})")
        return self

    def to_dict(self) -> dict:
        return {"s_star": self.s_star.tolist(), "a_star": self.a_star}


@dataclass(frozen=True)
class TuningParams:
    """Penalties for the main fit (``lam``, ``mu``) and for the direction
    fit (``lam_tilde``, ``mu_tilde``; default to the main pair)."""

    lam: float
    mu: float
    lam_tilde: Optional[float] = None
    mu_tilde: Optional[float] = None

    def __post_init__(self):
        if self.lam_tilde is None:
            object.__setattr__(self, "lam_tilde", self.lam)
        if self.mu_tilde is None:
            object.__setattr__(self, "mu_tilde", self.mu)
        for name in ("lam", "mu", "lam_tilde", "mu_tilde"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")

    def to_dict(self) -> dict:
        return {"lambda": self.lam, "mu": self.mu, "lambda_tilde": self.lam_tilde, "mu_tilde": self.mu_tilde}


# ------------------------------------------------------------------------- CSV


def _columns(d: int) -> list:
    return ["id", "t"] + [f"s_{k}" for k in range(1, d + 1)] + ["a", "r"] + [f"sp_{k}" for k in range(1, d + 1)]


def write_csv(data: Dataset, path) -> None:
    """Write one row per transition (``id,t,s_1..s_d,a,r,sp_1..sp_d``)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_columns(data.d))
        for i, tr in enumerate(data.trajectories):
            uid = tr.unit_id or str(i)
            for t in range(tr.T):
                w.writerow(
                    [uid, t + 1]
                    + [repr(float(x)) for x in tr.states[t]]
                    + [int(tr.actions[t]), repr(float(tr.rewards[t]))]
                    + [repr(float(x)) for x in tr.states[t + 1]]
                )


def load_csv(path, d: Optional[int] = None, num_actions: Optional[int] = None) -> Dataset:
    """Read the transition-per-row CSV schema into a validated dataset.

    ``d`` defaults to the number of ``s_k`` columns in the header and
    ``num_actions`` to ``max(a) + 1`` (at least 2).
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDataset(f"{path}: empty file") from None
        rows = [r for r in reader if r]
    if d is None:
        d = sum(1 for h in header if h.startswith("s_"))
    for col in _columns(d):
        if col not in header:
            raise MissingColumn(f"{path}: missing column {col!r}")
    if not rows:
        raise EmptyDataset(f"{path}: no data rows")
    idx = {h: header.index(h) for h in _columns(d)}
    s_idx = [idx[f"s_{k}"] for k in range(1, d + 1)]
    sp_idx = [idx[f"sp_{k}"] for k in range(1, d + 1)]

    units: dict = {}
    for line, r in enumerate(rows, start=2):
        try:
            rec = (
                int(r[idx["t"]]),
                [float(r[j]) for j in s_idx],
                int(r[idx["a"]]),
                float(r[idx["r"]]),
                [float(r[j]) for j in sp_idx],
            )
        except (ValueError, IndexError) as exc:
            raise MissingColumn(f"{path}, line {line}: {exc}") from None
        units.setdefault(r[idx["id"]], []).append(rec)

    trajs = []
    max_action = 0
    for uid, recs in units.items():
        recs.sort(key=lambda x: x[0])
        ts = [x[0] for x in recs]
        if ts != list(range(1, len(recs) + 1)):
            raise NonContiguousTime(f"{path}: unit {uid!r} has time indices {ts[:10]}...; expected 1..{len(recs)}")
        for a, b in zip(recs[:-1], recs[1:]):
            if not np.allclose(a[4], b[1], rtol=0.0, atol=ADJACENCY_ATOL):
                raise AdjacencyViolation(
                    f"{path}: unit {uid!r}, t={b[0]}: state {b[1]} != previous next-state {a[4]}"
                )
        states = np.array([x[1] for x in recs] + [recs[-1][4]])
        actions = np.array([x[2] for x in recs])
        max_action = max(max_action, int(actions.max()))
        trajs.append(Trajectory(states, actions, np.array([x[3] for x in recs]), unit_id=uid))
    K = num_actions if num_actions is not None else max(2, max_action + 1)
    return validate_dataset(Dataset(tuple(trajs), K, d))
