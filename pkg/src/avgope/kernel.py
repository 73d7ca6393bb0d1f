"""State-action RBF kernels, the anchored kernel and Gram utilities."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np
from scipy.linalg import eigh
from scipy.spatial.distance import cdist, pdist

from .core import ReferencePoint
from .exceptions import AnchorDegenerate, DegenerateStates

Points = Tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class KernelSpec:
    """``k((s, a), (s', a')) = 1{a = a'} exp(-||s - s'||^2 / (2 h^2))``."""

    bandwidth: float
    action_rule: str = "delta"

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError(f"bandwidth must be positive, got {self.bandwidth!r}")
        if self.action_rule != "delta":
            raise ValueError(f"unsupported action rule {self.action_rule!r}")

    def to_dict(self) -> dict:
        return {"bandwidth": self.bandwidth, "action_rule": self.action_rule}


@dataclass(frozen=True, eq=False)
class ShiftedKernelSpec:
    """Kernel of the subspace of functions vanishing at ``anchor``:
    ``k~(x, y) = k(x, y) - k(x, x*) k(x*, y) / k(x*, x*)``."""

    base: KernelSpec
    anchor: ReferencePoint

    def __post_init__(self):
        s = self.anchor.s_star[None, :]
        a = np.array([self.anchor.a_star])
        if not rbf_matrix(s, a, s, a, self.base)[0, 0] > 0:
            raise AnchorDegenerate("k(anchor, anchor) must be positive")


def _as_points(S, A) -> Points:
    S = np.asarray(S, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    return S, np.asarray(A, dtype=np.int64).ravel()


def rbf_matrix(S1, A1, S2, A2, spec: KernelSpec) -> np.ndarray:
    S1, A1 = _as_points(S1, A1)
    S2, A2 = _as_points(S2, A2)
    K = np.exp(cdist(S1, S2, "sqeuclidean") / (-2.0 * spec.bandwidth**2))
    K *= A1[:, None] == A2[None, :]
    return K


def shifted_matrix(S1, A1, S2, A2, spec: ShiftedKernelSpec) -> np.ndarray:
    s = spec.anchor.s_star[None, :]
    a = np.array([spec.anchor.a_star])
    base = spec.base
    kaa = rbf_matrix(s, a, s, a, base)[0, 0]
    k1a = rbf_matrix(S1, A1, s, a, base)[:, 0]
    ka2 = rbf_matrix(s, a, S2, A2, base)[0]
    return rbf_matrix(S1, A1, S2, A2, base) - np.outer(k1a, ka2) / kaa


def kernel_matrix(S1, A1, S2, A2, spec: Union[KernelSpec, ShiftedKernelSpec]) -> np.ndarray:
    if isinstance(spec, ShiftedKernelSpec):
        return shifted_matrix(S1, A1, S2, A2, spec)
    return rbf_matrix(S1, A1, S2, A2, spec)


def k(x, y, spec: KernelSpec) -> float:
    """Kernel value for two ``(state, action)`` pairs."""
    return float(rbf_matrix(np.atleast_2d(x[0]), [x[1]], np.atleast_2d(y[0]), [y[1]], spec)[0, 0])


def k_shifted(x, y, spec: ShiftedKernelSpec) -> float:
    return float(shifted_matrix(np.atleast_2d(x[0]), [x[1]], np.atleast_2d(y[0]), [y[1]], spec)[0, 0])


def gram(points: Points, spec) -> np.ndarray:
    S, A = _as_points(*points)
    G = kernel_matrix(S, A, S, A, spec)
    return 0.5 * (G + G.T)


def cross_gram(rows: Points, cols: Points, spec) -> np.ndarray:
    return kernel_matrix(*rows, *cols, spec)


def median_heuristic(states, max_points: int = 2000, random_state=0) -> float:
    """Median pairwise Euclidean distance between states.

    At most ``max_points`` states (uniform without replacement) enter the
    computation.  If the median is zero because of duplicates the smallest
    nonzero distance is returned.
    """
    X = np.asarray(states, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if len(X) > max_points:
        rng = np.random.default_rng(random_state)
        X = X[rng.choice(len(X), max_points, replace=False)]
    if len(X) < 2:
        raise DegenerateStates("need at least two states")
    dist = pdist(X)
    med = float(np.median(dist))
    if med > 0:
        return med
    nz = dist[dist > 0]
    if nz.size == 0:
        raise DegenerateStates("all states are identical")
    return float(nz.min())


class KernelBasis:
    """Orthonormal coordinates for ``span{k(., c_m)}`` over a center set.

    With ``K = U diag(ev) U'`` the Gram at the centers, ``phi(x) = k(x, C)
    U ev^{-1/2}`` satisfies ``<f, g>_H = gamma_f . gamma_g`` for
    ``f = phi . gamma_f``; eigen-directions below ``rtol * max(ev)`` are
    dropped.  ``coef`` maps feature weights back to representer weights
    over the centers.
    """

    def __init__(self, centers: Points, spec, rtol: float = 1e-13):
        self.centers = _as_points(*centers)
        self.spec = spec
        G = gram(self.centers, spec)
        ev, U = eigh(G)
        top = ev[-1] if len(ev) else 0.0
        keep = ev > rtol * top if top > 0 else np.zeros(len(ev), bool)
        self.eigenvalues = ev[keep]
        self.proj = U[:, keep] / np.sqrt(ev[keep])

    @property
    def dim(self) -> int:
        return self.proj.shape[1]

    def kernel_rows(self, S, A) -> np.ndarray:
        return kernel_matrix(S, A, *self.centers, self.spec)

    def transform(self, S, A) -> np.ndarray:
        return self.kernel_rows(S, A) @ self.proj

    def coef(self, gamma) -> np.ndarray:
        return self.proj @ gamma
