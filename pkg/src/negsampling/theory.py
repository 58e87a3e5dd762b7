"""Single-node analysis of the contrastive objective.

For one central node the score of every candidate ``u`` is a free logit
``theta_u``.  With positives from ``p_d`` and ``k`` negatives per positive
from ``p_n`` the expected objective

    J(theta) = sum_u p_d(u) log sigmoid(theta_u) + k p_n(u) log sigmoid(-theta_u)

is maximized at ``theta*_u = -log(k p_n(u) / p_d(u))``.  Fitting on ``T``
positives instead gives ``theta_T`` whose squared error per outcome is
about ``(1/T)(1/p_d - 1 + 1/(k p_n) - 1/k)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize
from scipy.special import expit, log_expit


@dataclass
class CategoricalPair:
    p_d: np.ndarray
    p_n: np.ndarray
    k: int = 1

    def __post_init__(self):
        self.p_d = np.asarray(self.p_d, dtype=np.float64)
        self.p_n = np.asarray(self.p_n, dtype=np.float64)
        if self.p_d.shape != self.p_n.shape or self.p_d.ndim != 1:
            raise ValueError("p_d and p_n must be vectors of the same length")
        for name, p in (("p_d", self.p_d), ("p_n", self.p_n)):
            if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} must be a probability vector")
        if self.k < 1:
            raise ValueError("k must be at least 1")

    @property
    def N(self) -> int:
        return len(self.p_d)


def random_pair(rng, N: int, k: int, concentration: float = 1.0) -> CategoricalPair:
    """Dirichlet-distributed pair, renormalized so both sums are exact to 1e-12."""
    def draw():
        p = rng.dirichlet(np.full(N, concentration))
        p = np.maximum(p, 1e-6)
        return p / p.sum()
    return CategoricalPair(draw(), draw(), k)


def optimal_logits(pair: CategoricalPair) -> np.ndarray:
    """``-log(k p_n / p_d)``; ``-inf`` where ``p_d = 0 < p_n``, ``nan`` where both vanish."""
    pd, pn, k = pair.p_d, pair.p_n, pair.k
    if np.any((pn == 0) & (pd > 0)):
        raise ValueError("p_n must be positive wherever p_d is")
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = np.log(pd) - np.log(k * pn)
    theta[(pd == 0) & (pn > 0)] = -np.inf
    theta[(pd == 0) & (pn == 0)] = np.nan
    return theta


def expected_objective(theta, pair: CategoricalPair) -> float:
    return float(np.sum(pair.p_d * log_expit(theta) + pair.k * pair.p_n * log_expit(-theta)))


def maximize_objective(pair: CategoricalPair, x0=None) -> np.ndarray:
    """Numerical maximizer of ``J`` by trust-region Newton; independent of the closed form."""
    pd, kpn = pair.p_d, pair.k * pair.p_n

    def f(t):
        return -np.sum(pd * log_expit(t) + kpn * log_expit(-t))

    def g(t):
        s = expit(t)
        return -(pd * (1 - s) - kpn * s)

    def h(t):
        s = expit(t)
        return np.diag((pd + kpn) * s * (1 - s))

    x0 = np.zeros(pair.N) if x0 is None else x0
    res = optimize.minimize(f, x0, jac=g, hess=h, method="trust-exact", options={"gtol": 1e-14, "maxiter": 10_000})
    return res.x


def risk_model(pair: CategoricalPair) -> np.ndarray:
    """``m_u = k p_d p_n / (p_d + k p_n)``, the diagonal of the limiting negative Hessian."""
    pd, pn, k = pair.p_d, pair.p_n, pair.k
    with np.errstate(invalid="ignore", divide="ignore"):
        return k * pd * pn / (pd + k * pn)


def risk_prediction(pair: CategoricalPair, T: int) -> np.ndarray:
    """Predicted per-outcome mean squared error of the fitted logits after ``T`` positives."""
    if T < 1:
        raise ValueError("T must be at least 1")
    pd, pn, k = pair.p_d, pair.p_n, pair.k
    if np.any(pd <= 0) or np.any(pn <= 0):
        raise ValueError("risk is undefined for zero-probability outcomes")
    return (1.0 / pd - 1.0 + 1.0 / (k * pn) - 1.0 / k) / T


def fit_counts(pos_counts, neg_counts, T: int, tol: float = 1e-8, max_iter: int = 100_000) -> np.ndarray:
    """Maximize the empirical objective for given draw counts.

    Full-batch ascent with each coordinate's step scaled by its exact
    curvature (the objective is separable), steps capped at 2.  Outcomes
    missing from either the positive or the negative draws have no finite
    maximizer and come back as ``nan``.
    """
    a = np.asarray(pos_counts, dtype=np.float64) / T
    b = np.asarray(neg_counts, dtype=np.float64) / T
    ok = (a > 0) & (b > 0)
    theta = np.zeros(len(a))
    aa, bb = a[ok], b[ok]
    t = np.zeros(len(aa))
    for _ in range(max_iter):
        s = expit(t)
        grad = aa * (1 - s) - bb * s
        if np.linalg.norm(grad) < tol:
            break
        curv = (aa + bb) * s * (1 - s)
        t += np.clip(grad / curv, -2.0, 2.0)
    theta[ok] = t
    theta[~ok] = np.nan
    return theta


def fit_single_node(pair: CategoricalPair, T: int, seed=None) -> np.ndarray:
    """Draw ``T`` positives and ``kT`` negatives, then fit the ``N`` logits."""
    if T < 1:
        raise ValueError("T must be at least 1")
    rng = np.random.default_rng(seed)
    pos = rng.multinomial(T, pair.p_d)
    neg = rng.multinomial(pair.k * T, pair.p_n)
    return fit_counts(pos, neg, T)


def empirical_risk(pair: CategoricalPair, T: int, trials: int, seed=None) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo per-outcome MSE of ``theta_T`` against ``theta*``.

    Returns ``(mse, n_used)``; each outcome averages over the trials in which
    it was drawn both as a positive and as a negative.
    """
    theta_star = optimal_logits(pair)
    sq = np.zeros(pair.N)
    used = np.zeros(pair.N, dtype=np.int64)
    for child in np.random.SeedSequence(seed).spawn(trials):
        th = fit_single_node(pair, T, child)
        ok = np.isfinite(th)
        sq[ok] += (th[ok] - theta_star[ok]) ** 2
        used += ok
    with np.errstate(invalid="ignore"):
        return sq / used, used


def _ordering_ok(values, key, increasing: bool) -> tuple[bool, list]:
    """Strict order of ``values`` along ``key`` between distinct keys; ties in ``key`` are tie groups."""
    order = np.argsort(key, kind="stable")
    v, kk = values[order], key[order]
    ok = True
    ties = []
    for i in range(len(v) - 1):
        if kk[i + 1] == kk[i]:
            ties.append([int(order[i]), int(order[i + 1])])
            continue
        ok &= bool(v[i + 1] > v[i]) if increasing else bool(v[i + 1] < v[i])
    return ok, ties


def sublinear_check(p_d, alpha: float, k: int = 1, uniform_negatives: bool = False, T: int = 1000) -> dict:
    """Check what ``p_n ~ p_d^alpha`` does to the optimum and to the risk.

    (a) optimal logits are ordered like ``p_d``; (b) they are affine in
    ``log p_d`` with slope ``1 - alpha`` (slope 1 for uniform negatives);
    (c) the predicted risk is ordered inversely to ``p_d``.
    """
    p_d = np.asarray(p_d, dtype=np.float64)
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if uniform_negatives:
        p_n = np.full(len(p_d), 1.0 / len(p_d))
        expected_slope = 1.0
    else:
        w = p_d ** alpha
        p_n = w / w.sum()
        expected_slope = 1.0 - alpha
    pair = CategoricalPair(p_d, p_n / p_n.sum(), k)
    theta = optimal_logits(pair)
    x = np.log(p_d)
    A = np.stack([x, np.ones_like(x)], axis=1)
    (slope, const), *_ = np.linalg.lstsq(A, theta, rcond=None)
    residual = float(np.max(np.abs(A @ np.array([slope, const]) - theta)))
    mono, ties = _ordering_ok(theta, p_d, increasing=True)
    risk = risk_prediction(pair, T)
    inverse, _ = _ordering_ok(risk, p_d, increasing=False)
    return {
        "alpha": alpha,
        "k": k,
        "monotone": mono,
        "tie_groups": ties,
        "slope": float(slope),
        "expected_slope": expected_slope,
        "constant": float(const),
        "affine_residual": residual,
        "affine_ok": residual < 1e-10 and abs(slope - expected_slope) < 1e-10,
        "risk_inverse_order": inverse,
        "passed": bool(mono and inverse and residual < 1e-10 and abs(slope - expected_slope) < 1e-10),
    }


def verify_theory(T: int = 1000, trials: int = 500, seed: int = 0, alpha: float = 0.75,
                  num_pairs: int = 100, risk_tolerance: float = 0.2) -> dict:
    """Run every numerical check and return a JSON-ready report."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    checks = {}

    worst = 0.0
    for i in range(num_pairs):
        pair = random_pair(rng, int(rng.integers(2, 21)), int((1, 5)[i % 2]))
        worst = max(worst, float(np.max(np.abs(maximize_objective(pair) - optimal_logits(pair)))))
    checks["optimal_logits_vs_numeric"] = {"max_abs_diff": worst, "tolerance": 1e-4,
                                           "pairs": num_pairs, "passed": worst < 1e-4}

    worst = 0.0
    for _ in range(num_pairs):
        pair = random_pair(rng, int(rng.integers(2, 21)), int(rng.choice([1, 5])))
        th = optimal_logits(pair)
        worst = max(worst, float(np.max(np.abs(expit(th) * (pair.p_d + pair.k * pair.p_n) - pair.p_d))))
    checks["sigmoid_identity"] = {"max_abs_diff": worst, "tolerance": 1e-12, "passed": worst < 1e-12}

    pair = CategoricalPair(np.full(10, 0.1), np.full(10, 0.1), 1)
    pred = risk_prediction(pair, T)
    emp, used = empirical_risk(pair, T, trials, seed=rng.integers(2**63))
    ratio = emp / pred
    checks["risk_prediction_vs_monte_carlo"] = {
        "T": T, "trials": trials, "predicted": float(pred[0]), "empirical": emp.tolist(),
        "ratio_min": float(ratio.min()), "ratio_max": float(ratio.max()), "tolerance": risk_tolerance,
        "passed": bool(np.all(np.abs(ratio - 1) <= risk_tolerance)),
    }

    pair = random_pair(rng, 8, 5, concentration=5.0)
    big = 10**6
    th = fit_single_node(pair, big, seed=rng.integers(2**63))
    ok = np.isfinite(th)
    diff = float(np.max(np.abs(th[ok] - optimal_logits(pair)[ok])))
    checks["large_T_consistency"] = {"T": big, "max_abs_diff": diff, "tolerance": 0.01, "passed": diff < 0.01}

    p_d = np.sort(rng.dirichlet(np.ones(10)))[::-1]
    sub = sublinear_check(p_d, alpha, k=1, T=T)
    checks["sublinear_principle"] = {k: v for k, v in sub.items() if k != "tie_groups"}

    return {"alpha": alpha, "T": T, "trials": trials, "seed": seed,
            "checks": checks, "passed": all(c["passed"] for c in checks.values())}
