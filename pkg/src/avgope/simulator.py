"""Data generators and exact oracles.

Two sources of ground truth:

* the two-dimensional nonlinear model used in the coverage study
  (:func:`simulate_luckett`, :func:`oracle_eta_luckett`), and
* finite MDPs, for which the average reward, anchored relative value
  function, stationary distribution and direction function all follow from
  small linear solves (:func:`finite_mdp_solve`).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Union

import numpy as np
from scipy.sparse.csgraph import connected_components

from .core import Dataset, Policy, Trajectory, TransitionBatch, validate_dataset
from .exceptions import NoStationaryDistribution, NotIrreducible
from .rng import substream

# ------------------------------------------------------------ nonlinear model


@dataclass(frozen=True)
class LuckettModelConfig:
    noise_sd: float = 0.5
    behavior_prob: float = 0.5
    init: str = "standard normal"
    seed: int = 0
    escape_radius: Optional[float] = 1e3

    def __post_init__(self):
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")
        if not 0 < self.behavior_prob < 1:
            raise ValueError("behavior_prob must lie in (0, 1)")
        if self.escape_radius is not None and not self.escape_radius > 0:
            raise ValueError("escape_radius must be positive or None")
        if self.init != "standard normal":
            raise ValueError(f"unsupported initial distribution {self.init!r}")


def luckett_step(S: np.ndarray, A: np.ndarray, noise: np.ndarray):
    """One transition of the two-dimensional model.

    ``S`` has shape ``(m, 2)``, ``A`` holds 0/1 actions and ``noise`` is
    the already-scaled additive state noise.  Returns ``(S_next, R)``.
    """
    sign = 2.0 * np.asarray(A, dtype=float) - 1.0
    s1, s2 = S[:, 0], S[:, 1]
    cross = 0.25 * s1 * s2
    nxt = np.empty_like(S)
    nxt[:, 0] = 0.75 * sign * s1 + cross + noise[:, 0]
    nxt[:, 1] = -0.75 * sign * s2 + cross + noise[:, 1]
    reward = nxt[:, 0] + 0.5 * nxt[:, 1] + 0.25 * sign
    return nxt, reward


def _luckett_paths(config: LuckettModelConfig, keys, T: int):
    """Vectorised rollouts; ``keys[i]`` is the substream path of row ``i``."""
    m = len(keys)
    init = np.empty((m, 2))
    u = np.empty((m, T))
    eps = np.empty((m, T, 2))
    for i, key in enumerate(keys):
        g = substream(config.seed, *key)
        init[i] = g.standard_normal(2)
        u[i] = g.random(T)
        eps[i] = g.standard_normal((T, 2))
    actions = (u < config.behavior_prob).astype(np.int64)
    states = np.empty((m, T + 1, 2))
    rewards = np.empty((m, T))
    states[:, 0] = init
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(T):
            states[:, t + 1], rewards[:, t] = luckett_step(states[:, t], actions[:, t], config.noise_sd * eps[:, t])
    radius = np.inf if config.escape_radius is None else config.escape_radius
    escaped = ~(np.abs(states) <= radius).all(axis=(1, 2))
    return states, actions, rewards, escaped


def simulate_luckett(config: LuckettModelConfig, n: int, T: int) -> Dataset:
    """``n`` trajectories of length ``T`` under the fixed-probability
    behavior policy; trajectory ``i`` uses ``substream(config.seed, i)``.

    A trajectory that leaves the ball of radius ``config.escape_radius``
    (the chain's rare escape to infinity) is redrawn from
    ``substream(config.seed, i, k)`` for ``k = 1, 2, ...`` until it stays
    inside, so datasets are finite and still reproducible.  With
    ``escape_radius=None`` escaped trajectories are kept and validation
    rejects the non-finite values.
    """
    if n < 1 or T < 1:
        raise ValueError("n and T must be positive")
    states, actions, rewards, escaped = _luckett_paths(config, [(i,) for i in range(n)], T)
    if config.escape_radius is not None:
        for i in np.flatnonzero(escaped):
            for k in range(1, 1001):
                s, a, r, bad = _luckett_paths(config, [(int(i), k)], T)
                if not bad[0]:
                    states[i], actions[i], rewards[i] = s[0], a[0], r[0]
                    break
            else:
                raise RuntimeError(f"trajectory {i} escaped on 1000 redraws")
    trajs = tuple(Trajectory(states[i], actions[i], rewards[i], unit_id=str(i)) for i in range(n))
    return validate_dataset(Dataset(trajs, 2, 2))


class OracleEstimate(NamedTuple):
    eta: float
    se: float
    restarts: int


def oracle_eta_luckett(
    policy: Policy,
    horizon: int = 1_000_000,
    num_rollouts: int = 50,
    seed: int = 0,
    noise_sd: float = 0.5,
    burn_in: int = 1000,
    init_state=None,
    escape_radius: float = 1e3,
) -> OracleEstimate:
    """Long-run average reward of ``policy`` by on-policy rollouts.

    Returns the mean over rollouts of each rollout's time-average reward
    (after ``burn_in`` steps) and its standard error across rollouts.

    The model's quadratic cross term lets a rollout escape to infinity with
    very small probability per step.  A rollout whose state leaves the ball
    of radius ``escape_radius`` is restarted from the initial distribution;
    the estimate is therefore the quasi-stationary average reward, which is
    what finite-length trajectories estimate.
    """
    rng = substream(seed, 0)
    m = num_rollouts

    def fresh(k):
        if init_state is None:
            return rng.standard_normal((k, 2))
        return np.tile(np.asarray(init_state, dtype=float), (k, 1))

    S = fresh(m)
    total = np.zeros(m)
    restarts = 0
    for t in range(burn_in + horizon):
        probs = policy(S)
        A = (rng.random(m) < probs[:, 1]).astype(np.int64) if probs.shape[1] == 2 else _sample_rows(rng, probs)
        S, R = luckett_step(S, A, noise_sd * rng.standard_normal((m, 2)))
        if t >= burn_in:
            total += R
        bad = ~(np.abs(S) < escape_radius).all(axis=1)
        if bad.any():
            restarts += int(bad.sum())
            S[bad] = fresh(int(bad.sum()))
    means = total / horizon
    se = float(means.std(ddof=1) / np.sqrt(m)) if m > 1 else float("nan")
    return OracleEstimate(float(means.mean()), se, restarts)


def _sample_rows(rng, probs):
    u = rng.random(len(probs))
    return (u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)


# Quasi-stationary average rewards of "always treat" (action 1) and "no
# treatment" (action 0) under the default model (noise sd 0.5), from
# oracle_eta_luckett(horizon=1_000_000, num_rollouts=50, seed=20240601).
ETA_ALWAYS_TREAT = 0.27733833036612104
ETA_ALWAYS_TREAT_SE = 0.0003087521040643572
ETA_NO_TREATMENT = -0.23383652392836093
ETA_NO_TREATMENT_SE = 0.00013116321880337844


# ------------------------------------------------------------------ finite MDP


@dataclass(frozen=True, eq=False)
class FiniteMDP:
    """Tabular MDP: ``P[s, a, s']``, mean rewards ``r[s, a]``, Gaussian
    reward noise and an initial state distribution (uniform by default)."""

    P: np.ndarray
    r: np.ndarray
    reward_noise_sd: float = 0.0
    init: Optional[np.ndarray] = None

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float)
        r = np.asarray(self.r, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or r.shape != P.shape[:2]:
            raise ValueError(f"inconsistent shapes P{P.shape}, r{r.shape}")
        if (P < 0).any() or np.abs(P.sum(axis=2) - 1).max() > 1e-12:
            raise ValueError("each P[s, a] must be a probability vector")
        if self.reward_noise_sd < 0:
            raise ValueError("reward_noise_sd must be nonnegative")
        init = np.full(P.shape[0], 1.0 / P.shape[0]) if self.init is None else np.asarray(self.init, dtype=float)
        for name, val in (("P", P), ("r", r), ("init", init)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)

    @property
    def num_states(self) -> int:
        return self.P.shape[0]

    @property
    def num_actions(self) -> int:
        return self.P.shape[1]

    def one_hot(self, s) -> np.ndarray:
        return np.eye(self.num_states)[np.asarray(s)]

    @classmethod
    def random(cls, num_states: int, num_actions: int, rng, reward_noise_sd: float = 0.0, concentration: float = 1.0) -> "FiniteMDP":
        """Dense Dirichlet transitions (hence irreducible) and uniform rewards."""
        P = rng.dirichlet(np.full(num_states, concentration), size=(num_states, num_actions))
        P /= P.sum(axis=2, keepdims=True)
        r = rng.uniform(-1, 1, size=(num_states, num_actions))
        return cls(P, r, reward_noise_sd)

    def to_dict(self) -> dict:
        return {
            "num_states": self.num_states,
            "num_actions": self.num_actions,
            "P": self.P.tolist(),
            "r": self.r.tolist(),
            "reward_noise_sd": self.reward_noise_sd,
            "init": self.init.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FiniteMDP":
        mdp = cls(np.array(doc["P"]), np.array(doc["r"]), float(doc.get("reward_noise_sd", 0.0)), doc.get("init"))
        if "num_states" in doc and doc["num_states"] != mdp.num_states:
            raise ValueError("num_states does not match P")
        if "num_actions" in doc and doc["num_actions"] != mdp.num_actions:
            raise ValueError("num_actions does not match P")
        return mdp

    @classmethod
    def load(cls, path) -> "FiniteMDP":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def tabular_policy(policy: Union[Policy, np.ndarray], mdp: FiniteMDP) -> np.ndarray:
    """``pi[s, a]`` for a policy given either as a matrix or as a
    :class:`Policy` acting on one-hot states."""
    if isinstance(policy, Policy):
        return policy(np.eye(mdp.num_states))
    pi = np.asarray(policy, dtype=float)
    if pi.shape != (mdp.num_states, mdp.num_actions):
        raise ValueError(f"policy matrix has shape {pi.shape}")
    return pi


def average_distribution(mdp: FiniteMDP, behavior: np.ndarray, T: int, init=None) -> np.ndarray:
    """Average state-action distribution ``(1/T) sum_t d_t(s, a)`` of the
    first ``T`` decision times under a Markov behavior matrix."""
    nu = mdp.init if init is None else np.asarray(init, dtype=float)
    total = np.zeros((mdp.num_states, mdp.num_actions))
    for _ in range(T):
        d_t = nu[:, None] * behavior
        total += d_t
        nu = np.einsum("sa,sap->p", d_t, mdp.P)
    return total / T


def _bellman_solve(P: np.ndarray, pi: np.ndarray, reward: np.ndarray, anchor):
    S, A = reward.shape
    n = S * A
    # rows: Q(s,a) + eta - sum_{s',a'} P(s'|s,a) pi(a'|s') Q(s',a') = reward(s,a)
    M = np.zeros((n + 1, n + 1))
    M[:n, :n] = np.eye(n) - np.einsum("sap,pb->sapb", P, pi).reshape(n, n)
    M[:n, n] = 1.0
    M[n, anchor[0] * A + anchor[1]] = 1.0
    rhs = np.concatenate([reward.ravel(), [0.0]])
    try:
        sol = np.linalg.solve(M, rhs)
    except np.linalg.LinAlgError:
        raise NoStationaryDistribution("Bellman system is singular") from None
    return float(sol[n]), sol[:n].reshape(S, A)


@dataclass(frozen=True, eq=False)
class FiniteMDPSolution:
    eta: float
    q_tilde: np.ndarray
    d_pi: np.ndarray
    d_pi_sa: np.ndarray
    d_bar: Optional[np.ndarray] = None
    e_pi: Optional[np.ndarray] = None
    q_pi: Optional[np.ndarray] = None

    def ratio(self) -> np.ndarray:
        """``d_pi(s, a) / d_bar(s, a)``."""
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.d_pi_sa > 0, self.d_pi_sa / self.d_bar, 0.0)


def finite_mdp_solve(
    mdp: FiniteMDP,
    policy,
    anchor=(0, 0),
    behavior: Optional[np.ndarray] = None,
    T: Optional[int] = None,
    init=None,
) -> FiniteMDPSolution:
    """Exact quantities for ``policy`` on ``mdp``.

    Returns the stationary state distribution, the average reward, and the
    relative value function anchored to zero at ``anchor = (s*, a*)``.
    When a Markov ``behavior`` matrix and horizon ``T`` are given, also the
    behavior data's average distribution, the direction function and the
    anchored solution of its Bellman-like equation.
    """
    pi = tabular_policy(policy, mdp)
    P_pi = np.einsum("sa,sap->sp", pi, mdp.P)
    n_comp, _ = connected_components(P_pi > 0, directed=True, connection="strong")
    if n_comp != 1:
        raise NotIrreducible(f"induced chain has {n_comp} strongly connected components")
    S = mdp.num_states
    M = P_pi.T - np.eye(S)
    M[-1] = 1.0
    b = np.zeros(S)
    b[-1] = 1.0
    try:
        d = np.linalg.solve(M, b)
    except np.linalg.LinAlgError:
        raise NoStationaryDistribution("stationary equations are singular") from None
    d_sa = d[:, None] * pi
    eta, q = _bellman_solve(mdp.P, pi, mdp.r, anchor)
    if behavior is None:
        return FiniteMDPSolution(eta, q, d, d_sa)
    if T is None:
        raise ValueError("T is required with a behavior policy")
    behavior = np.asarray(behavior, dtype=float)
    d_bar = average_distribution(mdp, behavior, T, init)
    if ((d_sa > 0) & (d_bar <= 0)).any():
        raise ValueError("behavior data never visits a pair the target policy visits")
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(d_sa > 0, d_sa / d_bar, 0.0)
    e = ratio / np.sum(ratio * d_sa)
    _, q_e = _bellman_solve(mdp.P, pi, 1.0 - e, anchor)
    return FiniteMDPSolution(eta, q, d, d_sa, d_bar, e, q_e)


Behavior = Union[np.ndarray, Callable]


def simulate_finite_mdp(mdp: FiniteMDP, behavior: Behavior, n: int, T: int, seed: int = 0) -> Dataset:
    """Trajectories with one-hot state vectors.

    ``behavior`` is either a Markov matrix ``[s, a]`` or a callable
    ``behavior(states_so_far, actions_so_far) -> probabilities`` that may
    use the whole history.  Every action probability must be positive.
    Trajectory ``i`` draws its initial uniform, then ``T`` (action,
    next-state) uniform pairs, then ``T`` reward-noise normals from
    ``substream(seed, i)``; both behavior forms consume the same draws.
    """
    if n < 1 or T < 1:
        raise ValueError("n and T must be positive")
    S, K = mdp.num_states, mdp.num_actions
    u0 = np.empty(n)
    u = np.empty((n, T, 2))
    z = np.empty((n, T))
    for i in range(n):
        g = substream(seed, i)
        u0[i] = g.random()
        u[i] = g.random((T, 2))
        z[i] = g.standard_normal(T)
    cumP = np.cumsum(mdp.P, axis=2)
    states = np.empty((n, T + 1), dtype=np.int64)
    actions = np.empty((n, T), dtype=np.int64)
    states[:, 0] = np.minimum(np.searchsorted(np.cumsum(mdp.init), u0, side="right"), S - 1)
    if callable(behavior):
        for i in range(n):
            for t in range(T):
                p = np.asarray(behavior(list(states[i, : t + 1]), list(actions[i, :t])), dtype=float)
                _check_probs(p, K)
                actions[i, t] = min(int(np.searchsorted(np.cumsum(p), u[i, t, 0], side="right")), K - 1)
                states[i, t + 1] = min(int(np.searchsorted(cumP[states[i, t], actions[i, t]], u[i, t, 1], side="right")), S - 1)
    else:
        beh = np.asarray(behavior, dtype=float)
        if beh.shape != (S, K):
            raise ValueError(f"behavior matrix has shape {beh.shape}, expected {(S, K)}")
        for p in beh:
            _check_probs(p, K)
        cumB = np.cumsum(beh, axis=1)
        for t in range(T):
            s = states[:, t]
            actions[:, t] = np.minimum((u[:, t, 0, None] >= cumB[s]).sum(axis=1), K - 1)
            states[:, t + 1] = np.minimum((u[:, t, 1, None] >= cumP[s, actions[:, t]]).sum(axis=1), S - 1)
    rewards = mdp.r[states[:, :-1], actions] + mdp.reward_noise_sd * z
    eye = np.eye(S)
    trajs = tuple(Trajectory(eye[states[i]], actions[i], rewards[i], unit_id=str(i)) for i in range(n))
    return validate_dataset(Dataset(trajs, K, S))


def _check_probs(p, K):
    if p.shape != (K,) or (p <= 0).any() or abs(p.sum() - 1) > 1e-10:
        raise ValueError(f"behavior probabilities {p} must be positive and sum to 1")


def exact_frequency_batch(mdp: FiniteMDP, behavior: np.ndarray, T: int, init=None) -> TransitionBatch:
    """Population version of the behavior data: one weighted row per
    ``(s, a, s')`` with weight ``d_bar_T(s, a) P(s'|s, a)`` and the mean
    reward ``r(s, a)``."""
    d_bar = average_distribution(mdp, np.asarray(behavior, dtype=float), T, init)
    W = d_bar[:, :, None] * mdp.P
    s, a, sp = np.nonzero(W > 0)
    eye = np.eye(mdp.num_states)
    return TransitionBatch(
        states=eye[s],
        actions=a,
        rewards=mdp.r[s, a],
        next_states=eye[sp],
        weights=W[s, a, sp],
        num_actions=mdp.num_actions,
    )
