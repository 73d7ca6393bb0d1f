"""Coupled projected-Bellman-error estimator of the average reward.

For a target policy ``pi`` the estimator solves

    min_{eta, Q}  sum_j w_j g_hat(x_j; eta, Q)^2 + lam * ||Q||^2
    g_hat(.; eta, Q) = argmin_g sum_j w_j (delta_j(eta, Q) - g(x_j))^2 + mu * ||g||^2

with ``delta_j = R_j + sum_a' pi(a'|S'_j) Q(S'_j, a') - eta - Q(x_j)``,
``Q`` in the RKHS of the anchored kernel and ``g`` in constant + RKHS of
the plain kernel (the constant is not penalised).  Both problems are
quadratic, so the whole fit reduces to linear algebra:

* ``g_hat`` is a linear smoother of the residual vector.  In whitened
  coordinates (``sqrt(w) * residual``) it is ``v v' + U diag(s^2/(s^2+mu)) U'``
  where ``v = sqrt(w)`` and ``U s V'`` is the SVD of the weighted, centred
  kernel features.
* the outer problem is then a ridge-type least squares in ``(eta, gamma)``
  with ``Q = phi~ . gamma`` in orthonormal anchored-kernel coordinates.

The SVD does not depend on ``(lam, mu)``; each penalty pair costs one small
Cholesky solve, which keeps grid searches cheap.
"""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import Policy, ReferencePoint, TransitionBatch, TuningParams
from .exceptions import NonFiniteInput, SingularSystem
from .kernel import KernelBasis, KernelSpec, ShiftedKernelSpec, kernel_matrix
from .validation import check_anchor, check_batch, check_kernel

JITTER = 1e-10
MAX_CONDITION = 1e14


class RidgeSmoother:
    """Weighted kernel ridge regression with an unpenalised intercept.

    ``features`` are orthonormal RKHS coordinates of the sample points and
    ``weights`` the (normalised) sample weights.  For any target ``y`` the
    fit minimises ``sum_j w_j (y_j - c - f(x_j))^2 + mu ||f||^2``.
    """

    def __init__(self, features: np.ndarray, weights: np.ndarray, rtol: float = 1e-12):
        w = np.asarray(weights, dtype=float)
        self.weights = w / w.sum()
        self.sqrt_w = np.sqrt(self.weights)
        self.mean = self.weights @ features
        centred = features - self.mean
        G = self.sqrt_w[:, None] * centred
        if G.shape[1]:
            U, s, Vt = np.linalg.svd(G, full_matrices=False)
            keep = s > rtol * s.max() if s.size and s.max() > 0 else np.zeros(len(s), bool)
            self.U, self.s, self.V = U[:, keep], s[keep], Vt[keep].T
        else:
            self.U = np.zeros((len(w), 0))
            self.s = np.zeros(0)
            self.V = np.zeros((0, 0))

    @property
    def rank(self) -> int:
        return len(self.s)

    def project(self, Y: np.ndarray) -> np.ndarray:
        """Coordinates of ``sqrt(w) * Y`` along ``[v, U]``."""
        Y = np.asarray(Y, dtype=float)
        wy = self.sqrt_w.reshape((-1,) + (1,) * (Y.ndim - 1)) * Y
        return np.concatenate([(self.sqrt_w @ wy)[None], self.U.T @ wy], axis=0)

    def shrinkage(self, mu: float) -> np.ndarray:
        s2 = self.s**2
        return np.concatenate([[1.0], s2 / (s2 + mu)])

    def coef(self, y: np.ndarray, mu: float):
        """Intercept and feature weights of the fit to ``y``."""
        gamma = self.V @ ((self.s / (self.s**2 + mu)) * (self.U.T @ (self.sqrt_w * y)))
        return float(self.weights @ y - self.mean @ gamma), gamma

    def coef_map(self, mu: float) -> np.ndarray:
        """Matrix sending ``y`` to ``[intercept, gamma]``."""
        gmap = self.V @ (((self.s / (self.s**2 + mu)))[:, None] * (self.U.T * self.sqrt_w))
        cmap = self.weights - self.mean @ gmap
        return np.vstack([cmap, gmap])

    def fitted(self, y: np.ndarray, mu: float) -> np.ndarray:
        # sqrt(w) * (g - mean_w(y)) = U diag(s^2/(s^2+mu)) U' sqrt(w) y
        coords = self.U.T @ (self.sqrt_w * y)
        return self.weights @ y + (self.U @ (self.shrinkage(mu)[1:] * coords)) / self.sqrt_w

    def weighted_sq_norm(self, y: np.ndarray, mu: float) -> float:
        """``sum_j w_j g_hat(x_j)^2`` without forming ``g_hat``."""
        return float(np.sum((self.shrinkage(mu) * self.project(y)) ** 2))


def select_centers(N: int, max_centers: Optional[int], random_state=0) -> np.ndarray:
    if max_centers is None or N <= max_centers:
        return np.arange(N)
    rng = np.random.default_rng(random_state)
    return np.sort(rng.choice(N, max_centers, replace=False))


class Design:
    """Kernel features of one transition batch.

    Shared by every target policy and every penalty pair evaluated on the
    same batch: anchored-kernel coordinates at the current points, the
    inner smoother, and (per policy, cached) policy-averaged coordinates at
    the next states.
    """

    def __init__(
        self,
        batch: TransitionBatch,
        kernel: KernelSpec,
        anchor: ReferencePoint,
        max_centers: Optional[int] = 1000,
        random_state=0,
    ):
        self.batch = batch
        self.kernel = kernel
        self.anchor = anchor
        self.center_index = select_centers(batch.N, max_centers, random_state)
        centers = (batch.states[self.center_index], batch.actions[self.center_index])
        self.q_basis = KernelBasis(centers, ShiftedKernelSpec(kernel, anchor))
        self.g_basis = KernelBasis(centers, kernel)
        self.phi = self.q_basis.transform(batch.states, batch.actions)
        self.smoother = RidgeSmoother(self.g_basis.transform(batch.states, batch.actions), batch.weights)
        self._next = {}

    @property
    def centers(self):
        return self.q_basis.centers

    def next_features(self, policy: Policy) -> np.ndarray:
        """``sum_a' pi(a'|S') phi~(S', a')`` for every transition."""
        key = id(policy)
        if key not in self._next:
            S1 = self.batch.next_states
            probs = policy(S1)
            out = np.zeros_like(self.phi)
            for a in range(policy.num_actions):
                m = probs[:, a] > 0
                if m.any():
                    out[m] += probs[m, a, None] * self.q_basis.transform(S1[m], np.full(m.sum(), a))
            self._next[key] = (policy, out)
        return self._next[key][1]

    def problem(self, policy: Policy, rewards: Optional[np.ndarray] = None, with_eta: bool = True) -> "CoupledProblem":
        r = self.batch.rewards if rewards is None else np.asarray(rewards, dtype=float)
        D = self.next_features(policy) - self.phi
        Z = np.hstack([-np.ones((len(r), 1)), D]) if with_eta else D
        return CoupledProblem(self, policy, r, Z, with_eta)


class CoupledProblem:
    """Outer quadratic of the nested fit, projected onto smoother coordinates.

    Unknowns are ``theta = (eta, gamma)`` (or ``gamma`` alone when
    ``with_eta`` is false) and the TD residual is ``r + Z theta``.
    """

    def __init__(self, design: Design, policy: Policy, rewards, Z, with_eta: bool):
        if not (np.isfinite(rewards).all() and np.isfinite(Z).all()):
            raise NonFiniteInput("non-finite rewards or kernel features")
        self.design = design
        self.policy = policy
        self.rewards = rewards
        self.Z = Z
        self.with_eta = with_eta
        self.p0 = design.smoother.project(rewards)
        self.pz = design.smoother.project(Z)
        self.offset = 1 if with_eta else 0

    def objective(self, theta, lam: float, mu: float) -> float:
        om = self.design.smoother.shrinkage(mu) ** 2
        res = self.p0 + self.pz @ theta
        return float(om @ res**2 + lam * theta[self.offset:] @ theta[self.offset:])

    def solve(self, lam: float, mu: float) -> np.ndarray:
        om = self.design.smoother.shrinkage(mu) ** 2
        wz = om[:, None] * self.pz
        A = self.pz.T @ wz
        idx = np.arange(self.offset, A.shape[0])
        A[idx, idx] += lam
        A[np.diag_indices_from(A)] += JITTER * np.trace(A)
        b = -wz.T @ self.p0
        try:
            cf = cho_factor(A)
        except LinAlgError as exc:
            raise SingularSystem(f"normal equations not positive definite: {exc}") from None
        diag = np.abs(np.diag(cf[0]))
        if not np.isfinite(diag).all() or (diag.max() / diag.min()) ** 2 > MAX_CONDITION:
            raise SingularSystem("normal equations numerically singular")
        return cho_solve(cf, b)

    def residuals(self, theta) -> np.ndarray:
        return self.rewards + self.Z @ theta


# ----------------------------------------------------------------- public operations


@dataclass(frozen=True, eq=False)
class TDComponents:
    """Affine TD-residual map ``r - eta + (B - C) alpha`` in representer
    coordinates over the centers."""

    rewards: np.ndarray
    B: np.ndarray
    C: np.ndarray
    weights: np.ndarray
    design: Optional[Design] = None

    def residuals(self, eta: float, alpha) -> np.ndarray:
        return self.rewards - eta + (self.B - self.C) @ alpha


def build_td_components(data, policy: Policy, kernel: KernelSpec, anchor: ReferencePoint, max_centers=1000, random_state=0) -> TDComponents:
    batch = check_batch(data)
    design = Design(batch, kernel, anchor, max_centers, random_state)
    spec = design.q_basis.spec
    centers = design.centers
    C = kernel_matrix(batch.states, batch.actions, *centers, spec)
    probs = policy(batch.next_states)
    B = np.zeros_like(C)
    for a in range(policy.num_actions):
        B += probs[:, a, None] * kernel_matrix(batch.next_states, np.full(batch.N, a), *centers, spec)
    return TDComponents(batch.rewards, B, C, batch.weights, design)


class InnerFit(NamedTuple):
    intercept: float
    coef: np.ndarray
    fitted: np.ndarray


def fit_inner(td: TDComponents, eta: float, alpha, mu: float) -> InnerFit:
    """Kernel ridge fit of the TD residuals at ``(eta, alpha)``."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    y = td.residuals(eta, alpha)
    sm = td.design.smoother
    c, gamma = sm.coef(y, mu)
    return InnerFit(c, td.design.g_basis.coef(gamma), sm.fitted(y, mu))


@dataclass(frozen=True, eq=False)
class FitResult:
    """Fitted ``(eta_hat, Q_hat)`` for one target policy."""

    eta_hat: float
    q_coeffs: np.ndarray
    centers: tuple
    kernel: KernelSpec
    anchor: ReferencePoint
    tuning: TuningParams
    projected_bellman_error: float = float("nan")
    diagnostics: dict = field(default_factory=dict)
    policy_label: str = ""
    design: Optional[Design] = None
    theta: Optional[np.ndarray] = None
    policy: Optional[Policy] = None

    @property
    def shifted_kernel(self) -> ShiftedKernelSpec:
        return ShiftedKernelSpec(self.kernel, self.anchor)

    def predict(self, states, actions) -> np.ndarray:
        S = np.atleast_2d(np.asarray(states, dtype=float))
        A = np.broadcast_to(np.asarray(actions, dtype=np.int64), (len(S),))
        return kernel_matrix(S, A, *self.centers, self.shifted_kernel) @ self.q_coeffs

    def td_residuals(self, batch: TransitionBatch, policy: Policy) -> np.ndarray:
        q_next = np.zeros(batch.N)
        probs = policy(batch.next_states)
        for a in range(policy.num_actions):
            m = probs[:, a] > 0
            if m.any():
                q_next[m] += probs[m, a] * self.predict(batch.next_states[m], np.full(m.sum(), a))
        return batch.rewards + q_next - self.eta_hat - self.predict(batch.states, batch.actions)

    def g_coeffs_map(self) -> np.ndarray:
        """Map from a TD-residual vector on the training batch to the inner
        fit's ``[intercept, representer weights]``."""
        if self.design is None:
            raise ValueError("fit was reloaded without its training design")
        cm = self.design.smoother.coef_map(self.tuning.mu)
        return np.vstack([cm[:1], self.design.g_basis.proj @ cm[1:]])

    def training_point_hash(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.centers[0]).tobytes())
        h.update(np.ascontiguousarray(self.centers[1]).tobytes())
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {
            "eta_hat": self.eta_hat,
            "policy": self.policy_label,
            "tuning": self.tuning.to_dict(),
            "kernel": self.kernel.to_dict(),
            "anchor": self.anchor.to_dict(),
            "q_coeffs": self.q_coeffs.tolist(),
            "centers": {"states": self.centers[0].tolist(), "actions": self.centers[1].tolist()},
            "training_point_hash": self.training_point_hash(),
            "projected_bellman_error": self.projected_bellman_error,
            "diagnostics": self.diagnostics,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "FitResult":
        t = doc["tuning"]
        centers = (np.asarray(doc["centers"]["states"], dtype=float), np.asarray(doc["centers"]["actions"], dtype=np.int64))
        out = cls(
            eta_hat=float(doc["eta_hat"]),
            q_coeffs=np.asarray(doc["q_coeffs"], dtype=float),
            centers=centers,
            kernel=KernelSpec(**doc["kernel"]),
            anchor=ReferencePoint(doc["anchor"]["s_star"], doc["anchor"]["a_star"]),
            tuning=TuningParams(t["lambda"], t["mu"], t.get("lambda_tilde"), t.get("mu_tilde")),
            projected_bellman_error=float(doc.get("projected_bellman_error", "nan")),
            diagnostics=dict(doc.get("diagnostics", {})),
            policy_label=doc.get("policy", ""),
        )
        if "training_point_hash" in doc and doc["training_point_hash"] != out.training_point_hash():
            raise ValueError("training point hash does not match stored centers")
        return out

    @classmethod
    def from_json(cls, text: str) -> "FitResult":
        return cls.from_dict(json.loads(text))


def _diagnostics(batch: TransitionBatch, eta: float) -> dict:
    diag = {}
    r = batch.rewards
    bound = np.abs(r).max() + 10 * (r.max() - r.min())
    if abs(eta) > bound:
        diag["eta_out_of_range"] = True
    if batch.unit is not None and batch.N == batch.n_units:
        diag["single_transition_trajectories"] = True
    return diag


def fit_from_design(design: Design, policy: Policy, lam: float, mu: float) -> FitResult:
    """Solve the coupled problem on a prepared design."""
    prob = design.problem(policy)
    theta = prob.solve(lam, mu)
    eta = float(theta[0])
    alpha = design.q_basis.coef(theta[1:])
    pbe = design.smoother.weighted_sq_norm(prob.residuals(theta), mu)
    diag = _diagnostics(design.batch, eta)
    if diag.get("single_transition_trajectories"):
        warnings.warn("every trajectory has a single transition (T=1)", RuntimeWarning, stacklevel=2)
    return FitResult(
        eta_hat=eta,
        q_coeffs=alpha,
        centers=design.centers,
        kernel=design.kernel,
        anchor=design.anchor,
        tuning=TuningParams(lam, mu),
        projected_bellman_error=pbe,
        diagnostics=diag,
        policy_label=policy.label,
        design=design,
        theta=theta,
        policy=policy,
    )


def fit_coupled(
    data,
    policy: Policy,
    kernel: Optional[KernelSpec],
    anchor: Optional[ReferencePoint],
    lam: float,
    mu: float,
    max_centers: Optional[int] = 1000,
    random_state=0,
) -> FitResult:
    """Fit ``(eta_hat, Q_hat)`` for ``policy`` at penalties ``(lam, mu)``.

    ``kernel`` and ``anchor`` default to the median-heuristic bandwidth and
    the first observed state-action pair.
    """
    if not (lam > 0 and mu > 0):
        raise ValueError("lam and mu must be positive")
    batch = check_batch(data)
    kernel = check_kernel(kernel, batch, random_state)
    anchor = check_anchor(anchor, batch)
    return fit_from_design(Design(batch, kernel, anchor, max_centers, random_state), policy, lam, mu)


def predict_q(fit: FitResult, s, a) -> float:
    return float(fit.predict(np.atleast_2d(s), [a])[0])


def empirical_projected_bellman_error(fit: FitResult, data, policy: Policy, max_centers: Optional[int] = 1000, random_state=0) -> float:
    """Weighted mean of the squared inner fit of ``fit``'s TD residuals on
    ``data`` (the unpenalised part of the outer objective)."""
    batch = check_batch(data)
    if fit.design is not None and fit.design.batch is batch:
        design = fit.design
    else:
        idx = select_centers(batch.N, max_centers, random_state)
        g_basis = KernelBasis((batch.states[idx], batch.actions[idx]), fit.kernel)
        design = None
    resid = fit.td_residuals(batch, policy)
    if design is not None:
        smoother = design.smoother
    else:
        smoother = RidgeSmoother(g_basis.transform(batch.states, batch.actions), batch.weights)
    return smoother.weighted_sq_norm(resid, fit.tuning.mu)


class AverageRewardEstimator(BaseEstimator):
    """Estimator wrapper around :func:`fit_coupled`.

    Parameters
    ----------
    policy : Policy
        Target policy.
    lam, mu : float
        Outer (value function) and inner (Bellman error) ridge penalties.
    bandwidth : float, optional
        RBF bandwidth; median heuristic over the observed states if None.
    anchor : ReferencePoint, optional
        Pair where ``Q`` is pinned to zero; first observed pair if None.
    max_centers : int
        Upper bound on representer centers (uniform subsample above it).
    random_state : int
        Seed for center and bandwidth subsampling.

    Attributes
    ----------
    eta_ : float
        Estimated average reward.
    fit_result_ : FitResult
    """

    def __init__(self, policy=None, lam=1e-4, mu=1e-4, bandwidth=None, anchor=None, max_centers=1000, random_state=0):
        self.policy = policy
        self.lam = lam
        self.mu = mu
        self.bandwidth = bandwidth
        self.anchor = anchor
        self.max_centers = max_centers
        self.random_state = random_state

    def fit(self, X, y=None):
        kernel = None if self.bandwidth is None else KernelSpec(self.bandwidth)
        self.fit_result_ = fit_coupled(X, self.policy, kernel, self.anchor, self.lam, self.mu, self.max_centers, self.random_state)
        self.eta_ = self.fit_result_.eta_hat
        return self

    def predict(self, states, actions):
        check_is_fitted(self, "fit_result_")
        return self.fit_result_.predict(states, actions)

    def score(self, X, y=None):
        """Negative projected Bellman error on ``X``."""
        check_is_fitted(self, "fit_result_")
        return -empirical_projected_bellman_error(self.fit_result_, X, self.policy, self.max_centers, self.random_state)
