import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from embal.core import BatchTooLarge, InvalidParam, apply_annotations, init_label_state
from embal.models import init_model
from embal.strategies import (
    STRATEGIES,
    DegenerateAllZero,
    GradFactors,
    PoolScores,
    ReservedStrategy,
    StrategyParams,
    build_fisher_context,
    covering_radius,
    factored_sq_dist,
    helmert_basis,
    select,
    select_badge,
    select_badge_naive,
    select_bait,
    select_coreset,
    select_random,
    select_top,
    uncertainty_scores,
)
from embal.strategies import bait
from embal.strategies.badge import d2_sample, naive_min_update_chunked
from embal.verify import _random_factors, optimal_radius

# ---------------------------------------------------------------- uncertainty


def test_margin_example():
    probs = np.array([[0.9, 0.05, 0.05], [0.4, 0.35, 0.25], [0.34, 0.33, 0.33]])
    s = uncertainty_scores("margin", probs)
    np.testing.assert_allclose(s.scores, [0.85, 0.05, 0.01], atol=1e-12)
    assert s.lower_is_better
    assert select_top(s, 1).indices.tolist() == [2]


def test_entropy_and_confidence_extremes():
    k = 4
    uni = np.full((1, k), 1 / k)
    assert uncertainty_scores("entropy", uni).scores[0] == pytest.approx(np.log(k))
    onehot = np.eye(k)[:1]
    assert uncertainty_scores("entropy", onehot).scores[0] == 0.0
    assert uncertainty_scores("confidence", onehot).scores[0] == 1.0
    assert uncertainty_scores("margin", onehot).scores[0] == 1.0
    probs = np.vstack([onehot, [[0.5, 0.3, 0.1, 0.1]]])
    for kind in ("confidence", "entropy", "margin"):
        assert select_top(uncertainty_scores(kind, probs), 1).indices.tolist() == [1]


def test_unknown_uncertainty_kind():
    with pytest.raises(ValueError):
        uncertainty_scores("variance", np.full((1, 2), 0.5))


# ---------------------------------------------------------------- select_top / random


def test_select_top_tie_rule():
    s = PoolScores(np.array([0, 1, 2]), np.array([0.2, 0.2, 0.5]), lower_is_better=True)
    assert select_top(s, 1).indices.tolist() == [0]
    assert select_top(s, 3).indices.tolist() == [0, 1, 2]
    hi = PoolScores(np.array([7, 3, 5]), np.array([1.0, 1.0, 0.0]), lower_is_better=False)
    assert select_top(hi, 2).indices.tolist() == [3, 7]
    with pytest.raises(BatchTooLarge):
        select_top(s, 4)


@settings(max_examples=80, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 40), lower=st.booleans())
def test_select_top_matches_sort_oracle(seed, n, lower):
    rng = np.random.default_rng(seed)
    idx = rng.choice(1000, n, replace=False)
    sc = rng.integers(0, 5, n).astype(float)  # many ties
    B = int(rng.integers(1, n + 1))
    res = select_top(PoolScores(idx, sc, lower), B)
    oracle = sorted(zip(sc if lower else -sc, idx))[:B]
    assert res.indices.tolist() == [int(i) for _, i in oracle]


def test_random_exhaustion_and_determinism():
    s = apply_annotations(init_label_state(10, [4, 6]), [0, 1, 2, 3])
    all_rest = select_random(s, 6, np.random.default_rng(0))
    assert sorted(all_rest.indices.tolist()) == [4, 5, 6, 7, 8, 9]
    a = select_random(s, 3, np.random.default_rng(5)).indices
    b = select_random(s, 3, np.random.default_rng(5)).indices
    assert np.array_equal(a, b)
    with pytest.raises(BatchTooLarge):
        select_random(s, 7, np.random.default_rng(0))


def test_random_uniformity():
    s = init_label_state(5, [1])
    rng = np.random.default_rng(123)
    trials = 100_000
    counts = np.zeros(5)
    for _ in range(trials):
        counts[select_random(s, 1, rng).indices[0]] += 1
    sigma = np.sqrt(trials * 0.2 * 0.8)
    assert np.all(np.abs(counts - trials / 5) <= 3 * sigma)


# ---------------------------------------------------------------- coreset


def test_coreset_examples():
    X = np.array([[0.0], [1.0], [10.0]])
    assert select_coreset(X, [0], 1).indices.tolist() == [2]
    r = select_coreset(X, [0], 2)
    assert r.indices.tolist() == [2, 1]
    np.testing.assert_allclose(r.scores, [10.0, 1.0])


def test_coreset_never_picks_duplicate_of_center():
    X = np.array([[0.0, 0.0], [0.0, 0.0], [3.0, 0.0], [3.0, 0.0], [0.0, 5.0]])
    r = select_coreset(X, [0, 2], 1)
    assert r.indices.tolist() == [4]
    r = select_coreset(X, [0, 2], 2)
    assert set(r.indices.tolist()) == {4, 1} or set(r.indices.tolist()) == {4, 3}


def test_coreset_cold_start_uses_centroid():
    X = np.array([[0.0], [1.0], [2.0], [9.0]])
    assert select_coreset(X, np.zeros(4, bool), 1).indices.tolist() == [3]


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_coreset_two_approximation(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 13))
    B = int(rng.integers(1, min(4, n - 1) + 1))
    X = rng.standard_normal((n, 2))
    lab = rng.choice(n, size=int(rng.integers(1, n - B + 1)), replace=False)
    res = select_coreset(X, lab, B)
    greedy = covering_radius(X, list(lab) + res.indices.tolist())
    assert greedy <= 2.0 * optimal_radius(X, lab.tolist(), B) + 1e-12


# ---------------------------------------------------------------- BADGE


def test_factored_distance_hand_example():
    # p1=(0.4,0.6) -> yhat=1 -> q1=(-0.4, 0.4); p2=(0.9,0.1) -> q2=(0.1, -0.1)
    q = np.array([[-0.4, 0.4], [0.1, -0.1]])
    v = np.array([[2.0], [3.0]])
    f = GradFactors(q, v, np.arange(2))
    G = f.materialize()
    np.testing.assert_allclose(G, [[-0.8, 0.8], [0.3, -0.3]])
    assert factored_sq_dist(0, 1, f) == pytest.approx(2.42, abs=1e-12)
    assert factored_sq_dist(0, 0, f) == 0.0


def test_grad_factors_from_model_rows_sum_zero():
    rng = np.random.default_rng(0)
    m = init_model("linear", 6, 5, rng)
    f = GradFactors.from_model(m, rng.standard_normal((30, 6)))
    np.testing.assert_allclose(f.q.sum(1), 0.0, atol=1e-12)
    np.testing.assert_allclose(f.q_sqnorm, (f.q ** 2).sum(1), atol=1e-12)
    np.testing.assert_allclose(f.v_sqnorm, (f.v ** 2).sum(1), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_factored_distance_symmetric_and_matches_naive(seed):
    rng = np.random.default_rng(seed)
    f = _random_factors(rng, 12, int(rng.integers(2, 8)), int(rng.integers(1, 10)))
    G = f.materialize()
    for i in range(12):
        for j in range(12):
            d = factored_sq_dist(i, j, f)
            assert d == factored_sq_dist(j, i, f)
            assert d >= 0.0
            naive = float(((G[i] - G[j]) ** 2).sum())
            assert abs(d - naive) <= 1e-9 * max(naive, 1.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), first=st.sampled_from(["norm", "uniform"]))
def test_badge_matches_naive_oracle(seed, first):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(5, 60))
    f = _random_factors(rng, n, int(rng.integers(2, 6)), int(rng.integers(1, 8)))
    B = int(rng.integers(1, n + 1))
    a = select_badge(f, B, np.random.default_rng(seed), first=first)
    b = select_badge_naive(f.materialize(), B, np.random.default_rng(seed), first=first)
    if "fallback" not in a.info:
        assert np.array_equal(a.indices, b)
    assert len(set(a.indices.tolist())) == B


def test_badge_forced_first_pick():
    q = np.array([[0.0, 0.0], [0.0, 0.0], [0.5, -0.5]])
    f = GradFactors(q, np.ones((3, 2)), np.array([10, 11, 12]))
    for s in range(20):
        assert select_badge(f, 1, np.random.default_rng(s)).indices.tolist() == [12]


def test_badge_all_zero_falls_back():
    f = GradFactors(np.zeros((6, 3)), np.ones((6, 2)), np.arange(6))
    with pytest.warns(DegenerateAllZero):
        r = select_badge(f, 4, np.random.default_rng(0))
    assert len(set(r.indices.tolist())) == 4


def test_badge_identical_embeddings_terminates():
    q = np.tile([0.3, -0.3], (8, 1))
    f = GradFactors(q, np.ones((8, 2)), np.arange(8))
    r = select_badge(f, 5, np.random.default_rng(0))
    assert len(set(r.indices.tolist())) == 5
    assert r.info["fallback"] == 4


def test_d2_sample_never_returns_zero_weight():
    w = np.array([0.0, 1.0, 0.0, 2.0, 0.0])
    rng = np.random.default_rng(0)
    picks = [d2_sample(w, rng) for _ in range(3000)]
    assert set(picks) == {1, 3}
    # chi-square goodness of fit against weights 1:2
    c = np.bincount(picks, minlength=5)[[1, 3]]
    assert stats.chisquare(c, [1000, 2000]).pvalue > 1e-4


def test_naive_chunked_update_matches_kernel():
    rng = np.random.default_rng(3)
    f = _random_factors(rng, 50, 4, 6)
    a = np.full(50, np.inf)
    b = np.full(50, np.inf)
    naive_min_update_chunked(f.q, f.v, 7, a, chunk=16)
    from embal import _kernels
    _kernels.active.factored_min_update(f.q, f.v, f.g_sqnorm, 7, b)
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


# ---------------------------------------------------------------- BAIT


@pytest.mark.parametrize("k", range(2, 11))
def test_helmert_properties(k):
    T = helmert_basis(k)
    np.testing.assert_allclose(T.T @ T, np.eye(k - 1), atol=1e-14)
    np.testing.assert_allclose(T.T @ np.ones(k), 0.0, atol=1e-14)


def test_kronecker_identity_and_onehot():
    rng = np.random.default_rng(0)
    probs = rng.dirichlet(np.ones(4), size=20)
    probs[0] = [0, 0, 1, 0]
    ctx = build_fisher_context(probs, rng.standard_normal((20, 10)), pca_dim=5)
    for i in range(20):
        U = ctx.U(i)
        np.testing.assert_allclose(U @ U.T, np.kron(np.outer(ctx.x[i], ctx.x[i]), ctx.P[i]), atol=1e-10)
    assert np.abs(ctx.U(0)).max() < 1e-12


def test_fisher_sum_matches_loop():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((7, 3))
    P = bait.reduced_covariance(rng.dirichlet(np.ones(3), 7), helmert_basis(3))
    loop = sum(np.kron(np.outer(x, x), p) for x, p in zip(X, P))
    np.testing.assert_allclose(bait.fisher_sum(X, P), loop, atol=1e-12)


def test_rank_deficiency_warns():
    rng = np.random.default_rng(2)
    feats = np.zeros((30, 6))
    feats[:, :2] = rng.standard_normal((30, 2))
    with pytest.warns(bait.RankDeficiency):
        build_fisher_context(rng.dirichlet(np.ones(3), 30), feats, pca_dim=4)


def test_bait_invalid_params():
    rng = np.random.default_rng(0)
    with pytest.raises(InvalidParam):
        build_fisher_context(rng.dirichlet(np.ones(3), 10), rng.standard_normal((10, 4)), pca_dim=5)
    with pytest.raises(InvalidParam):
        build_fisher_context(rng.dirichlet(np.ones(3), 10), rng.standard_normal((10, 4)), pca_dim=2, lam=0.0)


def _bait_ctx(seed, n=60, dp=8, k=4):
    rng = np.random.default_rng(seed)
    return build_fisher_context(rng.dirichlet(np.ones(k), n), rng.standard_normal((n, dp + 2)), pca_dim=dp)


def test_bait_sweeps_zero_is_initial_set():
    ctx = _bait_ctx(0)
    unl = np.arange(60)
    r = select_bait(ctx, unl, 6, sweeps=0, rng=np.random.default_rng(4))
    init = np.random.default_rng(4).choice(unl, size=6, replace=False)
    assert np.array_equal(r.indices, init)
    assert r.info["accepted_swaps"] == 0


@pytest.mark.parametrize("seed", range(5))
def test_bait_monotone_and_matches_dense(seed):
    ctx = _bait_ctx(seed)
    r = select_bait(ctx, np.arange(60), 6, sweeps=3, rng=np.random.default_rng(seed), record=True)
    for J_before, J_after, S in r.info["trace"]:
        assert J_after < J_before
        assert abs(J_after - ctx.objective_dense(S)) <= 1e-6 * abs(J_after)
    assert abs(r.info["objective"] - ctx.objective_dense(r.indices)) <= 1e-6 * r.info["objective"]
    init = np.random.default_rng(seed).choice(60, size=6, replace=False)
    assert r.info["objective"] <= ctx.objective_dense(init)


def test_woodbury_add_and_downdate():
    rng = np.random.default_rng(0)
    A = np.eye(6) * 2.0
    U = rng.standard_normal((6, 2))
    A_inv = np.linalg.inv(A)
    up = bait.woodbury_add(A_inv, U)
    np.testing.assert_allclose(up, np.linalg.inv(A + U @ U.T), atol=1e-12)
    back = bait.woodbury_add(up, U, sign=-1.0)
    np.testing.assert_allclose(back, A_inv, atol=1e-12)
    # removing a direction that is not there makes the inner matrix singular
    u = np.zeros((6, 1))
    u[0] = np.sqrt(2.0)
    assert bait.woodbury_add(A_inv, u, sign=-1.0) is None


def test_bait_include_labeled_prior():
    rng = np.random.default_rng(0)
    probs = rng.dirichlet(np.ones(3), 40)
    feats = rng.standard_normal((40, 5))
    ctx = build_fisher_context(probs, feats, pca_dim=4, include=np.arange(5))
    base = build_fisher_context(probs, feats, pca_dim=4)
    S = np.arange(10, 14)
    assert ctx.objective_dense(S) < base.objective_dense(S)


# ---------------------------------------------------------------- registry / universal properties


def test_reserved_and_unknown_strategy():
    s = init_label_state(10, [2])
    m = init_model("linear", 3, 2, np.random.default_rng(0))
    with pytest.raises(ReservedStrategy):
        select("galaxy", m, np.zeros((10, 3)), s, 2, np.random.default_rng(0))
    with pytest.raises(InvalidParam):
        select("oracle", m, np.zeros((10, 3)), s, 2, np.random.default_rng(0))
    with pytest.raises(InvalidParam):
        StrategyParams(badge_first="max")


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), strategy=st.sampled_from(STRATEGIES), tier=st.sampled_from(["linear", "shallow"]))
def test_every_strategy_returns_valid_batch(seed, strategy, tier):
    rng = np.random.default_rng(seed)
    n, d, k = int(rng.integers(8, 40)), int(rng.integers(2, 6)), int(rng.integers(2, 5))
    X = rng.standard_normal((n, d))
    m = init_model(tier, d, k, rng)
    n_lab = int(rng.integers(1, n // 2))
    B = int(rng.integers(1, n - n_lab + 1))
    state = apply_annotations(init_label_state(n, [n_lab, B]), rng.choice(n, n_lab, replace=False))
    params = StrategyParams(pca_dim=min(3, d))
    res = select(strategy, m, X, state, B, np.random.default_rng(seed), params)
    idx = res.indices
    assert idx.size == B and len(set(idx.tolist())) == B
    assert ((idx >= 0) & (idx < n)).all()
    assert not state.labeled[idx].any()
    assert np.isfinite(res.scores).all()
    # the batch is always acceptable to the label state
    apply_annotations(state, idx)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), kind=st.sampled_from(["confidence", "entropy", "margin", "coreset"]))
def test_permutation_equivariance(seed, kind):
    rng = np.random.default_rng(seed)
    n, d = 30, 4
    X = rng.standard_normal((n, d))
    m = init_model("linear", d, 3, rng)
    lab = rng.choice(n, 5, replace=False)
    state = apply_annotations(init_label_state(n, [5, 6]), lab)
    perm = rng.permutation(n)  # new position i holds old row perm[i]
    inv = np.argsort(perm)
    state_p = apply_annotations(init_label_state(n, [5, 6]), inv[lab])
    a = select(kind, m, X, state, 6, np.random.default_rng(0)).indices
    b = select(kind, m, X[perm], state_p, 6, np.random.default_rng(0)).indices
    if kind == "coreset":
        assert a.tolist() == perm[b].tolist()
    else:
        assert sorted(a.tolist()) == sorted(perm[b].tolist())
