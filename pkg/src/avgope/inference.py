"""Direction function, density ratio, plug-in covariance and intervals."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm

from .core import Policy, ReferencePoint, TransitionBatch
from .estimator import Design, FitResult
from .exceptions import IndexOutOfRange, MismatchedFits
from .kernel import KernelSpec, kernel_matrix
from .validation import check_anchor, check_batch, check_kernel

RATIO_FLOOR = 1e-6
SCHEMA_VERSION = "1.0"


@dataclass(frozen=True, eq=False)
class DirectionFit:
    """Fitted direction function ``e_hat`` for one target policy.

    ``e_values`` are the raw inner-fit values at the training points and
    ``normalizer`` the training average of the floored values.
    """

    q_coeffs: np.ndarray
    e_values: np.ndarray
    normalizer: float
    intercept: float
    g_coeffs: np.ndarray
    centers: tuple
    kernel: KernelSpec
    anchor: ReferencePoint
    floor: float = RATIO_FLOOR
    policy_label: str = ""

    def e(self, states, actions) -> np.ndarray:
        """Inner-fit expansion of ``e_hat`` at arbitrary pairs."""
        S = np.atleast_2d(np.asarray(states, dtype=float))
        A = np.broadcast_to(np.asarray(actions, dtype=np.int64), (len(S),))
        return self.intercept + kernel_matrix(S, A, *self.centers, self.kernel) @ self.g_coeffs

    def ratio(self, states, actions) -> np.ndarray:
        return np.maximum(self.e(states, actions), self.floor) / self.normalizer

    def training_ratio(self) -> np.ndarray:
        return np.maximum(self.e_values, self.floor) / self.normalizer


def direction_from_design(design: Design, policy: Policy, lam_tilde: float, mu_tilde: float, floor: float = RATIO_FLOOR) -> DirectionFit:
    """Solve the surrogate problem with unit reward and no free offset.

    The fitted ``q`` minimises the projected error of
    ``1 - q(S, A) + sum_a' pi(a'|S') q(S', a')``; the direction function is
    the inner fit of that residual at the minimiser.
    """
    batch = design.batch
    prob = design.problem(policy, rewards=np.ones(batch.N), with_eta=False)
    gamma = prob.solve(lam_tilde, mu_tilde)
    y = prob.residuals(gamma)
    sm = design.smoother
    c, g_gamma = sm.coef(y, mu_tilde)
    e_values = sm.fitted(y, mu_tilde)
    normalizer = float(batch.weights @ np.maximum(e_values, floor))
    return DirectionFit(
        q_coeffs=design.q_basis.coef(gamma),
        e_values=e_values,
        normalizer=normalizer,
        intercept=c,
        g_coeffs=design.g_basis.coef(g_gamma),
        centers=design.centers,
        kernel=design.kernel,
        anchor=design.anchor,
        floor=floor,
        policy_label=policy.label,
    )


def fit_direction(data, policy: Policy, kernel: Optional[KernelSpec], anchor: Optional[ReferencePoint], lam_tilde: float, mu_tilde: float, max_centers=1000, random_state=0) -> DirectionFit:
    batch = check_batch(data)
    kernel = check_kernel(kernel, data, random_state)
    anchor = check_anchor(anchor, batch)
    return direction_from_design(Design(batch, kernel, anchor, max_centers, random_state), policy, lam_tilde, mu_tilde)


def density_ratio(dirfit: DirectionFit, x) -> float:
    """Estimated ``d_pi / d_bar`` at one ``(state, action)`` pair."""
    return float(dirfit.ratio(np.atleast_2d(x[0]), [x[1]])[0])


def weighted_td_errors(fit: FitResult, dirfit: DirectionFit, batch: TransitionBatch, policy: Policy) -> np.ndarray:
    """Plug-in ``eps_t = ratio(S_t, A_t) * TD_t`` at every transition."""
    if fit.design is not None and fit.design.batch is batch and len(dirfit.e_values) == batch.N:
        ratio = dirfit.training_ratio()
    else:
        ratio = dirfit.ratio(batch.states, batch.actions)
    return ratio * fit.td_residuals(batch, policy)


def covariance_matrix(fits: Sequence[FitResult], dirfits: Sequence[DirectionFit], data, policies: Optional[Sequence[Policy]] = None) -> np.ndarray:
    """``Sigma_hat[i, j] = P_n{ mean_t eps_t^i * mean_t eps_t^j }``.

    ``policies`` default to the policies stored on the fits.
    """
    batch = data if isinstance(data, TransitionBatch) else check_batch(data)
    if policies is None:
        policies = [f.policy for f in fits]
        if any(p is None for p in policies):
            raise MismatchedFits("reloaded fits carry no policy; pass policies explicitly")
    if not (len(fits) == len(dirfits) == len(policies)) or not fits:
        raise MismatchedFits("need one fit, one direction fit and one policy per target policy")
    for f, df in zip(fits, dirfits):
        if len(df.e_values) != batch.N:
            raise MismatchedFits("direction fit was not computed on this data")
        if f.design is not None and f.design.batch.N != batch.N:
            raise MismatchedFits("fit was not computed on this data")
    if batch.unit is None:
        raise MismatchedFits("covariance needs trajectory structure (unit ids)")
    M = np.column_stack([batch.unit_means(weighted_td_errors(f, df, batch, p)) for f, df, p in zip(fits, dirfits, policies)])
    sigma = M.T @ M / batch.n_units
    return 0.5 * (sigma + sigma.T)


def normal_quantile(level: float) -> float:
    """Two-sided critical value ``z_{(1 + level) / 2}``."""
    if not 0 < level < 1:
        raise ValueError(f"confidence level must lie in (0, 1), got {level}")
    return float(norm.ppf(0.5 * (1.0 + level)))


@dataclass(frozen=True, eq=False)
class InferenceResult:
    eta_hats: np.ndarray
    Sigma_hat: np.ndarray
    n: int
    ci_level: float = 0.95
    labels: tuple = ()
    extras: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return len(self.eta_hats)

    def se(self, j: int) -> float:
        return float(np.sqrt(max(self.Sigma_hat[j, j], 0.0) / self.n))

    def to_dict(self) -> dict:
        labels = self.labels or tuple(f"policy_{j}" for j in range(self.K))
        policies = []
        for j in range(self.K):
            lo, hi = confidence_interval(self, j)
            policies.append({"label": labels[j], "eta_hat": float(self.eta_hats[j]), "se": self.se(j), "ci": [lo, hi]})
        contrasts = []
        for i in range(self.K):
            for j in range(i + 1, self.K):
                est, lo, hi = contrast_interval(self, i, j)
                var = self.Sigma_hat[i, i] + self.Sigma_hat[j, j] - 2 * self.Sigma_hat[i, j]
                contrasts.append(
                    {
                        "policies": [labels[i], labels[j]],
                        "estimate": est,
                        "se": float(np.sqrt(max(var, 0.0) / self.n)),
                        "ci": [lo, hi],
                    }
                )
        return {
            "spec_version": SCHEMA_VERSION,
            "ci_level": self.ci_level,
            "n": self.n,
            "policies": policies,
            "contrasts": contrasts,
            "sigma_hat": self.Sigma_hat.tolist(),
            **({"details": self.extras} if self.extras else {}),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def confidence_interval(result: InferenceResult, j: int):
    if not 0 <= j < result.K:
        raise IndexOutOfRange(f"policy index {j} out of range")
    z = normal_quantile(result.ci_level)
    half = z * result.se(j)
    eta = float(result.eta_hats[j])
    return eta - half, eta + half


def contrast_interval(result: InferenceResult, i: int, j: int):
    """Estimate and interval for ``eta_i - eta_j``."""
    if i == j:
        raise ValueError("contrast needs two distinct policies")
    for k in (i, j):
        if not 0 <= k < result.K:
            raise IndexOutOfRange(f"policy index {k} out of range")
    S = result.Sigma_hat
    var = max(S[i, i] + S[j, j] - 2 * S[i, j], 0.0)
    est = float(result.eta_hats[i] - result.eta_hats[j])
    half = normal_quantile(result.ci_level) * np.sqrt(var / result.n)
    return est, est - half, est + half
