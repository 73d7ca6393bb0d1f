"""Randomised invariants across modules."""
import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from avgope.core import Dataset, Policy, ReferencePoint, Trajectory, load_csv, policy_prob_matrix, validate_dataset, write_csv
from avgope.estimator import fit_coupled, predict_q
from avgope.inference import covariance_matrix, fit_direction
from avgope.kernel import KernelSpec, ShiftedKernelSpec, gram, k_shifted, median_heuristic
from avgope.simulator import FiniteMDP, LuckettModelConfig, finite_mdp_solve, simulate_finite_mdp, simulate_luckett

SETTINGS = settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
seeds = st.integers(0, 2**32 - 1)


def random_data(seed, n=None, T=None, d=None, K=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(2, 6))
    T = T or int(rng.integers(2, 6))
    d = d or int(rng.integers(1, 4))
    K = K or int(rng.integers(2, 4))
    scale = 10 ** rng.uniform(-3, 3)
    trajs = tuple(
        Trajectory(rng.normal(size=(T + 1, d)) * scale, rng.integers(0, K, T), rng.normal(size=T) * scale, unit_id=f"u{i}")
        for i in range(n)
    )
    return validate_dataset(Dataset(trajs, K, d)), rng


def softmax_policy(rng, d, K):
    W = rng.normal(size=(d, K))

    def fn(S):
        z = S @ W
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    return Policy(fn, K, "softmax")


@SETTINGS
@given(seeds)
def test_csv_round_trip(tmp_path_factory, seed):
    data, _ = random_data(seed)
    path = tmp_path_factory.mktemp("csv") / "d.csv"
    write_csv(data, path)
    back = load_csv(path, num_actions=data.num_actions)
    for a, b in zip(data.trajectories, back.trajectories):
        np.testing.assert_array_equal(a.states, b.states)
        np.testing.assert_array_equal(a.rewards, b.rewards)
        np.testing.assert_array_equal(a.actions, b.actions)


@SETTINGS
@given(seeds)
def test_policy_rows_sum_to_one(seed):
    rng = np.random.default_rng(seed)
    d, K = int(rng.integers(1, 4)), int(rng.integers(2, 5))
    P = policy_prob_matrix(softmax_policy(rng, d, K), rng.normal(size=(20, d)) * 5)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-10)


@SETTINGS
@given(seeds, st.floats(0.01, 100.0))
def test_gram_psd(seed, h):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(1, 60))
    pts = (rng.normal(size=(m, 2)) * rng.uniform(0.01, 10), rng.integers(0, 3, m))
    ev = np.linalg.eigvalsh(gram(pts, KernelSpec(h)))
    assert ev.min() >= -1e-8 * ev.max()


@SETTINGS
@given(seeds)
def test_shifted_kernel_vanishes_at_anchor(seed):
    rng = np.random.default_rng(seed)
    anchor = ReferencePoint(rng.normal(size=3), int(rng.integers(2)))
    spec = ShiftedKernelSpec(KernelSpec(rng.uniform(0.1, 5)), anchor)
    y = (rng.normal(size=3), int(rng.integers(2)))
    assert k_shifted((anchor.s_star, anchor.a_star), y, spec) == 0.0


@SETTINGS
@given(seeds)
def test_median_heuristic_invariances(seed):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(int(rng.integers(3, 80)), 2))
    h = median_heuristic(X)
    assert median_heuristic(X[rng.permutation(len(X))]) == pytest.approx(h, rel=1e-12)
    assert median_heuristic(X + rng.normal(size=2)) == pytest.approx(h, rel=1e-9)


@SETTINGS
@given(seeds)
def test_fit_is_anchored(seed):
    data, rng = random_data(seed)
    anchor = ReferencePoint(rng.normal(size=data.d), int(rng.integers(data.num_actions)))
    fit = fit_coupled(data, softmax_policy(rng, data.d, data.num_actions), None, anchor, 10 ** rng.uniform(-4, 0), 10 ** rng.uniform(-4, 0))
    assert predict_q(fit, anchor.s_star, anchor.a_star) == 0.0
    assert np.isfinite(fit.eta_hat)


@SETTINGS
@given(seeds)
def test_covariance_symmetric_psd_and_normalised(seed):
    data, rng = random_data(seed)
    pols = [softmax_policy(rng, data.d, data.num_actions) for _ in range(3)]
    lam, mu = 10 ** rng.uniform(-4, -1), 10 ** rng.uniform(-4, -1)
    fits = [fit_coupled(data, p, None, None, lam, mu) for p in pols]
    dfs = [fit_direction(data, p, None, None, lam, mu) for p in pols]
    for df in dfs:
        assert df.training_ratio().reshape(data.n, data.T).mean() == pytest.approx(1.0, abs=1e-9)
    sigma = covariance_matrix(fits, dfs, data)
    np.testing.assert_allclose(sigma, sigma.T, atol=1e-10 * max(1.0, np.abs(sigma).max()))
    assert np.linalg.eigvalsh(sigma).min() >= -1e-8 * max(1.0, np.abs(sigma).max())


@SETTINGS
@given(seeds, st.integers(3, 6))
def test_finite_mdp_oracle(seed, S):
    rng = np.random.default_rng(seed)
    mdp = FiniteMDP.random(S, 2, rng)
    pi = rng.dirichlet([1, 1], size=S)
    a = finite_mdp_solve(mdp, pi, anchor=(0, 0), behavior=rng.dirichlet([1, 1], size=S), T=5)
    b = finite_mdp_solve(mdp, pi, anchor=(S - 1, 1))
    v = (pi * a.q_tilde).sum(axis=1)
    assert np.abs(mdp.r + mdp.P @ v - a.eta - a.q_tilde).max() < 1e-10
    assert a.eta == pytest.approx(b.eta, abs=1e-10)
    diff = a.q_tilde - b.q_tilde
    assert np.ptp(diff) < 1e-10
    assert np.sum(a.e_pi * a.d_pi_sa) == pytest.approx(1.0, abs=1e-10)


@settings(max_examples=10, deadline=None)
@given(seeds)
def test_simulation_deterministic(seed):
    cfg = LuckettModelConfig(seed=seed)
    a, b = simulate_luckett(cfg, 3, 5), simulate_luckett(cfg, 3, 5)
    for x, y in zip(a.trajectories, b.trajectories):
        np.testing.assert_array_equal(x.states, y.states)
        np.testing.assert_array_equal(x.rewards, y.rewards)
    mdp = FiniteMDP.random(3, 2, np.random.default_rng(seed), reward_noise_sd=1.0)
    c, d = simulate_finite_mdp(mdp, np.full((3, 2), 0.5), 3, 5, seed), simulate_finite_mdp(mdp, np.full((3, 2), 0.5), 3, 5, seed)
    for x, y in zip(c.trajectories, d.trajectories):
        np.testing.assert_array_equal(x.rewards, y.rewards)


@settings(max_examples=10, deadline=None)
@given(seeds)
def test_fit_deterministic(seed):
    data, rng = random_data(seed, n=4, T=4)
    pol = softmax_policy(rng, data.d, data.num_actions)
    a = fit_coupled(data, pol, None, None, 1e-2, 1e-2)
    b = fit_coupled(data, pol, None, None, 1e-2, 1e-2)
    assert a.eta_hat == b.eta_hat
    np.testing.assert_array_equal(a.q_coeffs, b.q_coeffs)
