"""Oracle-equivalence checks run by ``embal verify``.

Each check compares a fast path against an independent slow computation on
random instances and reports the worst residual next to its tolerance.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import _kernels, metrics, models
from .strategies import badge, bait, coreset


@dataclass
class CheckResult:
    name: str
    passed: bool
    residual: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark} {self.name:<16} residual={self.residual:.3e} tol={self.tolerance:.1e} {self.detail}".rstrip()


def _random_factors(rng, n, k, d):
    p = rng.dirichlet(np.full(k, 0.3), size=n)
    q = -p
    q[np.arange(n), p.argmax(1)] += 1.0
    return badge.GradFactors(q=q, v=rng.standard_normal((n, d)), indices=np.arange(n))


def check_badge_oracle(seed: int = 0, instances: int = 10, n: int = 200, k: int = 10, d: int = 32, B: int = 20):
    tol = 1e-9
    rng = np.random.default_rng(seed)
    worst, mismatched = 0.0, 0
    for t in range(instances):
        f = _random_factors(rng, n, k, d)
        G = f.materialize()
        naive = ((G[:, None, :] - G[None, :, :]) ** 2).sum(-1)
        fact = np.array([[badge.factored_sq_dist(i, j, f) for j in range(n)] for i in range(n)])
        scale = np.maximum(naive, 1e-300)
        off = ~np.eye(n, dtype=bool)
        worst = max(worst, float((np.abs(fact - naive)[off] / scale[off]).max()))
        a = badge.select_badge(f, B, np.random.default_rng(1000 + t)).indices
        b = badge.select_badge_naive(G, B, np.random.default_rng(1000 + t))
        mismatched += int(not np.array_equal(a, b))
    ok = worst <= tol and mismatched == 0
    return CheckResult("badge-oracle", ok, worst, tol, f"sequence mismatches={mismatched}/{instances}")


def check_bait_woodbury(seed: int = 0, trajectories: int = 5, n: int = 60, dp: int = 8, k: int = 4, B: int = 6):
    tol, kron_tol = 1e-6, 1e-10
    rng = np.random.default_rng(seed)
    worst, kron_worst, swaps = 0.0, 0.0, 0
    for t in range(trajectories):
        probs = rng.dirichlet(np.ones(k), size=n)
        feats = rng.standard_normal((n, dp + 2))
        ctx = bait.build_fisher_context(probs, feats, pca_dim=dp, lam=1.0)
        for i in range(3):
            U = ctx.U(i)
            kron_worst = max(kron_worst, float(np.abs(U @ U.T - np.kron(np.outer(ctx.x[i], ctx.x[i]), ctx.P[i])).max()))
        res = bait.select_bait(ctx, np.arange(n), B, sweeps=2, rng=np.random.default_rng(t), record=True)
        for _, J_after, S in res.info["trace"]:
            dense = ctx.objective_dense(S)
            worst = max(worst, abs(J_after - dense) / abs(dense))
            swaps += 1
        dense = ctx.objective_dense(res.indices)
        worst = max(worst, abs(res.info["objective"] - dense) / abs(dense))
    ok = worst <= tol and kron_worst <= kron_tol
    return CheckResult("bait-woodbury", ok, worst, tol, f"kron={kron_worst:.1e} swaps={swaps}")


def brute_force_scores(y_true, y_pred, k):
    """Balanced accuracy and macro F1 straight from (y, yhat) pairs, exact rationals."""
    recalls, f1s = [], []
    for c in range(k):
        tp = sum(1 for a, b in zip(y_true, y_pred) if a == c and b == c)
        true_c = sum(1 for a in y_true if a == c)
        pred_c = sum(1 for b in y_pred if b == c)
        recalls.append(Fraction(tp, true_c) if true_c else Fraction(0))
        if tp == 0:
            f1s.append(Fraction(0))
        else:
            P, R = Fraction(tp, pred_c), Fraction(tp, true_c)
            f1s.append(2 / (1 / P + 1 / R))
    return float(sum(recalls) / k), float(sum(f1s) / k)


def check_metrics_oracle(seed: int = 0, instances: int = 50):
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(instances):
        k = int(rng.integers(2, 8))
        n = int(rng.integers(0, 60))
        # restrict labels to a random subset so some classes are absent
        present = rng.choice(k, size=int(rng.integers(1, k + 1)), replace=False)
        y = rng.choice(present, size=n)
        yh = rng.integers(0, k, size=n)
        C = metrics.confusion(y, yh, k)
        bal, f1 = brute_force_scores(y.tolist(), yh.tolist(), k)
        bad += int(metrics.balanced_accuracy(C) != bal or metrics.macro_f1(C) != f1)
    C = np.array([[40, 10], [20, 30]])
    hand = abs(metrics.balanced_accuracy(C) - 0.7) + abs(metrics.macro_f1(C) - 46 / 66)
    ok = bad == 0 and hand <= 1e-12
    return CheckResult("metrics-oracle", ok, float(bad) + hand, 1e-12, f"inexact={bad}/{instances}")


def optimal_radius(X, labeled, B):
    best = np.inf
    cand = [i for i in range(X.shape[0]) if i not in set(labeled)]
    for extra in itertools.combinations(cand, B):
        best = min(best, coreset.covering_radius(X, list(labeled) + list(extra)))
    return best


def check_kcenter_bound(seed: int = 0, instances: int = 20):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(instances):
        n = int(rng.integers(4, 13))
        B = int(rng.integers(1, min(4, n - 1) + 1))
        X = rng.standard_normal((n, 2))
        n_lab = int(rng.integers(0, min(2, n - B) + 1))
        lab = rng.choice(n, size=n_lab, replace=False)
        res = coreset.select_coreset(X, lab, B)
        greedy = coreset.covering_radius(X, list(lab) + list(res.indices))
        opt = optimal_radius(X, lab.tolist(), B)
        worst = max(worst, greedy / opt if opt > 0 else (0.0 if greedy == 0 else np.inf))
    return CheckResult("kcenter-bound", worst <= 2.0, worst, 2.0, "worst greedy/optimal radius ratio")


def _fd_grad(fun, params, eps=1e-6):
    grads = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + eps
            up = fun()
            p[idx] = old - eps
            down = fun()
            p[idx] = old
            g[idx] = (up - down) / (2 * eps)
        grads.append(g)
    return grads


def check_gradients(seed: int = 0, instances: int = 4):
    tol = 1e-5
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in range(instances):
        d, k, n = int(rng.integers(2, 9)), int(rng.integers(2, 5)), 7
        X = rng.standard_normal((n, d))
        y = rng.integers(0, k, n)
        w = rng.uniform(0.1, 1.0, n)
        for tier in models.TIERS:
            m = models.init_model(tier, d, k, rng)
            _, g = models.loss_and_grad(m, X, y, w, weight_decay=1e-3)
            fd = _fd_grad(lambda: models.loss_and_grad(m, X, y, w, weight_decay=1e-3)[0], m.params())
            for a, b in zip(g, fd):
                worst = max(worst, float(np.abs(a - b).max() / max(np.abs(b).max(), 1e-8)))
        # q equals the logit gradient of CE at the predicted label
        m = models.init_model("shallow", d, k, rng)
        x = rng.standard_normal(d)
        q, v = models.grad_embedding_factors(m, x)
        yhat = int(np.argmax(m.predict_proba(x)))
        h = m.penultimate(x)

        def ce_of_logits(z):
            z = z - z.max()
            return -(z[yhat] - np.log(np.exp(z).sum()))

        z0 = m.logits(x)
        fd_z = np.array([(ce_of_logits(z0 + 1e-6 * e) - ce_of_logits(z0 - 1e-6 * e)) / 2e-6 for e in np.eye(k)])
        # q is the negative gradient (descent direction convention)
        worst = max(worst, float(np.abs(-q - fd_z).max() / max(np.abs(fd_z).max(), 1e-8)))
        worst = max(worst, float(np.abs(v - h).max()))
    return CheckResult("grad-check", worst <= tol, worst, tol)


def check_kernel_parity(seed: int = 0):
    tol = 1e-9
    if _kernels.numba_impl is None:
        return CheckResult("kernel-parity", True, 0.0, tol, "numba unavailable; skipped")
    rng = np.random.default_rng(seed)
    worst = 0.0
    n, d, k = 50, 6, 4
    X = rng.standard_normal((n, d))
    y = rng.integers(0, k, n)
    w = rng.uniform(0, 0.1, n)
    w[::7] = 0.0
    offsets = np.array([0, 16, 32, 50])
    for tier in models.TIERS:
        outs = []
        for impl in (_kernels.numpy_impl, _kernels.numba_impl):
            m = models.init_model(tier, d, k, np.random.default_rng(1))
            vel = [np.zeros_like(p) for p in m.params()]
            fn = impl.sgd_linear_epoch if tier == "linear" else impl.sgd_shallow_epoch
            for _ in range(3):
                fn(*m.params(), *vel, X, y, w, offsets, 0.1, 0.9, 1e-3)
            outs.append(m.params())
        worst = max(worst, max(float(np.abs(a - b).max()) for a, b in zip(*outs)))
    f = _random_factors(rng, 40, 5, 7)
    for fn_name, args in (("factored_min_update", (f.q, f.v, f.g_sqnorm, 3)), ("euclid_min_update", (X, X[5]))):
        res = []
        for impl in (_kernels.numpy_impl, _kernels.numba_impl):
            mind = np.full(args[0].shape[0], np.inf)
            getattr(impl, fn_name)(*args, mind)
            res.append(mind)
        worst = max(worst, float(np.abs(res[0] - res[1]).max()))
    return CheckResult("kernel-parity", worst <= tol, worst, tol)


CHECKS = {
    "badge-oracle": check_badge_oracle,
    "bait-woodbury": check_bait_woodbury,
    "metrics-oracle": check_metrics_oracle,
    "kcenter-bound": check_kcenter_bound,
    "grad-check": check_gradients,
    "kernel-parity": check_kernel_parity,
}


def run_checks(names=None) -> list[CheckResult]:
    names = list(CHECKS) if not names else names
    unknown = [n for n in names if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown check(s): {', '.join(unknown)}; available: {', '.join(CHECKS)}")
    return [CHECKS[n]() for n in names]
