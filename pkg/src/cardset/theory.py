"""Exact computations on finite distributions and numerical checks of the
consistency bounds relating surrogate excess error to target excess error.

Every surrogate conditional error reduces to a weighted cost-sensitive form:
for a top-k comp-sum surrogate ``C(h, x) = sum_y p_y comp(h, y)``, which is the
cost-sensitive comp-sum loss with cost row ``1 - p``; for a constrained
surrogate ``C(h, x) = sum_y (1 - p_y) phi(h_y)``, the cost-sensitive
constrained loss with cost row ``1 - p``. With a cost tensor the row is the
expected cost ``cbar_k = sum_y p_y c(x, k, y)``. So one numerical minimizer
serves all cases.
"""
from __future__ import annotations

import functools
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.optimize import linprog, minimize

from .core import (
    PROB_SUM_TOL, InvalidInputError, argmax_last, as_finite, check_prob_vector, rank_desc,
)
from .losses import (
    CompSumKind, ConstrainedKind, cost_sensitive_grad, cost_sensitive_loss, all_kinds,
)
from .sets import cardinality_cost

BOUND_SLACK = 1e-6
INNER_GTOL = 1e-9
BOX = 10.0
NONCONVEX = ("gce", "mae", "rho_margin")


# -- distributions ------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteDistribution:
    """Finite support: point weights, conditional label distributions and,
    optionally, per-point costs ``c(x, k, y)`` stored as (points, n, |K|)."""

    weights: np.ndarray
    conditionals: np.ndarray
    costs: np.ndarray | None = None

    def __post_init__(self):
        w = as_finite(self.weights, "weights", ndim=1)
        P = as_finite(self.conditionals, "conditionals", ndim=2)
        if w.shape[0] != P.shape[0]:
            raise InvalidInputError("one conditional per support point required")
        if np.any(w <= 0) or np.any(w > 1) or abs(w.sum() - 1) > PROB_SUM_TOL:
            raise InvalidInputError("weights must lie in (0, 1] and sum to 1")
        for row in P:
            check_prob_vector(row, "conditional")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "conditionals", P)
        if self.costs is not None:
            c = as_finite(self.costs, "costs", ndim=3)
            if c.shape[:2] != P.shape:
                raise InvalidInputError("costs must be (points, n, |K|)")
            if np.any(c < 0) or np.any(c > 1):
                raise InvalidInputError("costs must lie in [0, 1]")
            object.__setattr__(self, "costs", c)

    @property
    def n(self) -> int:
        return self.conditionals.shape[1]

    @property
    def n_points(self) -> int:
        return self.conditionals.shape[0]

    def expected_costs(self) -> np.ndarray:
        """(points, |K|) array of ``sum_y p(x, y) c(x, k, y)``."""
        if self.costs is None:
            raise InvalidInputError("distribution carries no costs")
        return np.einsum("py,pyk->pk", self.conditionals, self.costs)


# -- transforms ---------------------------------------------------------------

def _xlogx(x: float) -> float:
    return 0.0 if x <= 0 else x * math.log(x)


def psi(kind: CompSumKind, t: float, n: int) -> float:
    """Transform for comp-sum surrogates in the top-k bound."""
    if not 0.0 <= t <= 1.0:
        raise InvalidInputError(f"t={t} outside [0, 1]")
    if kind.name == "logistic":
        return 0.5 * (_xlogx(1 - t) + _xlogx(1 + t))
    if kind.name == "sum_exponential":
        return 1.0 - math.sqrt(max(0.0, 1.0 - t * t))
    if kind.name == "mae":
        return t / n
    q = kind.q
    a = 1.0 / (1.0 - q)
    inner = ((1 + t) ** a + (1 - t) ** a) / 2.0
    return (inner ** (1.0 - q) - 1.0) / (q * n ** q)


@dataclass(frozen=True)
class Inverse:
    t: float
    clamped: bool


def psi_inverse(kind: CompSumKind, v: float, n: int, return_flag: bool = False):
    """Bisection inverse of ``psi`` on [0, 1]; values above psi(1) map to 1."""
    if v < 0:
        raise InvalidInputError("psi_inverse needs v >= 0")
    top = psi(kind, 1.0, n)
    if v >= top:
        res = Inverse(1.0, v > top)
    elif v == 0:
        res = Inverse(0.0, False)
    elif kind.name == "mae":
        res = Inverse(min(1.0, v * n), False)
    else:
        lo, hi = 0.0, 1.0
        while hi - lo > 1e-13:
            mid = 0.5 * (lo + hi)
            if psi(kind, mid, n) < v:
                lo = mid
            else:
                hi = mid
        res = Inverse(hi, False)
    return res if return_flag else res.t


def gamma(kind: CompSumKind | ConstrainedKind, t: float, n_candidates: int | None = None) -> float:
    """Transform for constrained top-k bounds and for the cost-sensitive bounds.

    For cost-sensitive gce and mae it depends on the candidate count |K|.
    """
    if t < 0:
        raise InvalidInputError("gamma needs t >= 0")
    name = kind.name
    if name in ("logistic", "sum_exponential", "exponential", "squared_hinge"):
        return 2.0 * math.sqrt(t)
    if name in ("hinge", "rho_margin"):
        return t
    if n_candidates is None:
        raise InvalidInputError(f"gamma for {name} needs |K|")
    if name == "gce":
        return 2.0 * math.sqrt(n_candidates ** kind.q * t)
    return n_candidates * t  # mae


# -- top-k target -------------------------------------------------------------

def topk_conditional_error(p, scores, k: int) -> float:
    p = np.asarray(p, dtype=np.float64)
    order = rank_desc(scores)
    return 1.0 - float(p[order[:k]].sum())


def best_topk_conditional_error(p, k: int) -> float:
    p = np.asarray(p, dtype=np.float64)
    return 1.0 - float(p[rank_desc(p)[:k]].sum())


def topk_conditional_regret(p, scores, k: int) -> float:
    p = np.asarray(p, dtype=np.float64)
    best = p[rank_desc(p)[:k]]
    got = p[rank_desc(scores)[:k]]
    return float(np.sum(best - got))


# -- cardinality-aware target -------------------------------------------------

def cardinality_conditional_regret(p, costs, r_scores) -> float:
    """Expected cost of the selected index minus the best expected cost.

    ``costs`` is (n labels, |K|).
    """
    p = np.asarray(p, dtype=np.float64)
    C = as_finite(costs, "costs", ndim=2)
    cbar = p @ C
    return float(cbar[argmax_last(r_scores)] - cbar.min())


def bayes_selector(p, family_sets, lam: float, cost_kind: str = "logarithmic") -> int:
    """Index of the set minimizing ``lam * cost(|g_k|) - P(y in g_k)``; ties to larger index."""
    p = np.asarray(p, dtype=np.float64)
    obj = np.array([
        lam * cardinality_cost(len(g), cost_kind) - float(p[list(g)].sum())
        for g in family_sets
    ])
    return argmax_last(-obj)


def bayes_selector_batch(P, members, lam: float, cost_kind: str = "logarithmic") -> np.ndarray:
    """Row-wise ``bayes_selector`` for conditionals ``P`` (m, n) and boolean
    set memberships (m, |K|, n)."""
    P = as_finite(P, "P", ndim=2)
    M = np.asarray(members, dtype=bool)
    mass = np.einsum("mkn,mn->mk", M, P)
    obj = lam * cardinality_cost(M.sum(axis=2), cost_kind) - mass
    return argmax_last(-obj, axis=1)


# -- surrogate conditional errors ---------------------------------------------

def conditional_cost_row(p, kind) -> np.ndarray:
    """Cost row that turns a top-k surrogate conditional error into a weighted sum."""
    return 1.0 - np.asarray(p, dtype=np.float64)


def conditional_surrogate(cost_row, scores, kind) -> float:
    return cost_sensitive_loss(scores, cost_row, kind)


@dataclass(frozen=True)
class MinResult:
    value: float
    tolerance: float  # gradient norm at the returned point, or solver tolerance
    at_box: bool = False


def _lbfgs(f, g, x0):
    res = minimize(f, x0, jac=g, method="L-BFGS-B",
                   options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 5000, "maxcor": 20})
    return res.x


def _hinge_lp(b: np.ndarray) -> MinResult:
    # min sum b_k t_k  s.t.  t_k >= 1 + s_k - mean(s), t >= 0
    n = b.shape[0]
    A = np.hstack([np.eye(n) - 1.0 / n, -np.eye(n)])
    res = linprog(np.concatenate([np.zeros(n), b]), A_ub=A, b_ub=-np.ones(n),
                  A_eq=np.concatenate([np.ones(n), np.zeros(n)])[None, :], b_eq=[0.0],
                  bounds=[(-BOX * n, BOX * n)] * n + [(0, None)] * n, method="highs")
    if not res.success:
        raise RuntimeError(f"hinge LP failed: {res.message}")
    s = res.x[:n]
    return MinResult(cost_sensitive_loss(s, b, ConstrainedKind("hinge")), 1e-9)


def best_conditional_surrogate(cost_row, kind, seed: int = 0, restarts: int = 3) -> MinResult:
    """Numerical infimum over score vectors of ``sum_k`` weighted surrogate terms.

    Smooth kinds use L-BFGS from several starts (random plus structured
    one-vs-rest starts); hinge is solved exactly as a linear program.
    Results are memoized on the exact cost row.
    """
    c = as_finite(cost_row, "cost_row", ndim=1)
    return _best_cached(c.tobytes(), kind, int(seed), int(restarts))


@functools.lru_cache(maxsize=1 << 16)
def _best_cached(key: bytes, kind, seed: int, restarts: int) -> MinResult:
    c = np.frombuffer(key, dtype=np.float64).copy()
    n = c.shape[0]
    if isinstance(kind, ConstrainedKind) and kind.name == "hinge":
        return _hinge_lp(c)
    rng = np.random.default_rng(seed)

    def f(s):
        return cost_sensitive_loss(s, c, kind)

    def g(s):
        return cost_sensitive_grad(s, c, kind)

    weights = 1.0 - c if isinstance(kind, CompSumKind) else c
    starts = [np.zeros(n)]
    starts += [rng.normal(scale=2.0, size=n) for _ in range(restarts)]
    if isinstance(kind, CompSumKind):
        power = 1.0 / (1.0 - kind.q) if kind.name == "gce" else (0.5 if kind.name == "sum_exponential" else 1.0)
        starts.append(power * np.log(np.maximum(weights, 1e-300)).clip(-BOX, None))
    else:
        starts.append(-np.log(np.maximum(weights, 1e-300)).clip(None, BOX))
    if kind.name in NONCONVEX:
        scale = kind.rho if kind.name == "rho_margin" else 1.0
        for j in range(n):
            for mag in (1.0, BOX):
                e = np.full(n, -mag * scale)
                e[j] = mag * scale * (n - 1)
                starts.append(e)

    best_s, best_v = None, math.inf
    for s0 in starts:
        v0 = f(s0)
        if v0 < best_v:
            best_s, best_v = s0, v0
        if kind.name == "rho_margin":
            # piecewise linear: derivative-free refinement
            res = minimize(f, s0, method="Powell", options={"xtol": 1e-10, "ftol": 1e-14, "maxfev": 20000})
            s = res.x
        else:
            s = _lbfgs(f, g, s0)
        v = f(s)
        if v < best_v:
            best_s, best_v = s, v
    gn = float(np.linalg.norm(g(best_s))) if kind.name != "rho_margin" else 0.0
    at_box = bool(np.max(np.abs(best_s - best_s.mean())) >= BOX)
    return MinResult(float(best_v), gn, at_box)


def pointwise_best_surrogate(dist: DiscreteDistribution, kind, cost_context: bool = False,
                             seed: int = 0) -> MinResult:
    """``E_x[C*(H_all, x)]`` for a top-k surrogate, or for the cost-sensitive one."""
    rows = dist.expected_costs() if cost_context else 1.0 - dist.conditionals
    results = [best_conditional_surrogate(r, kind, seed=seed + i) for i, r in enumerate(rows)]
    val = float(sum(w * r.value for w, r in zip(dist.weights, results)))
    return MinResult(val, max(r.tolerance for r in results), any(r.at_box for r in results))


def generalization_error(dist: DiscreteDistribution, hypothesis, loss) -> float:
    """``E_x[C(h, x)]``; ``loss`` is an int k (top-k loss), ``"cost"`` (target
    cardinality-aware loss, hypothesis over K) or a surrogate kind."""
    H = as_finite(hypothesis, "hypothesis", ndim=2)
    total = 0.0
    for i, (w, p) in enumerate(zip(dist.weights, dist.conditionals)):
        if isinstance(loss, (int, np.integer)):
            v = topk_conditional_error(p, H[i], int(loss))
        elif loss == "cost":
            cbar = p @ dist.costs[i]
            v = float(cbar[argmax_last(H[i])])
        else:
            v = conditional_surrogate(1.0 - p, H[i], loss)
        total += w * v
    return total


# -- bound verification -------------------------------------------------------

@dataclass
class BoundReport:
    trial_id: int
    kind: str
    k: int  # top-k level; 0 for the cost-sensitive bound
    lhs: float
    rhs: float
    margin: float
    inner_tolerance: float
    slack: float = BOUND_SLACK

    @property
    def ok(self) -> bool:
        return self.margin >= -self.slack

    def as_row(self) -> dict:
        d = asdict(self)
        d.pop("slack")
        return d


def verify_topk_bound(dist: DiscreteDistribution, hypothesis, kind, k: int,
                      trial_id: int = 0, k_factor: bool = True, seed: int = 0,
                      best: MinResult | None = None) -> BoundReport:
    """Both sides of the top-k bound for an all-measurable hypothesis set.

    ``k_factor=False`` drops the multiplier k on the right side; it exists
    only to show the checker catches a wrong transform.
    """
    H = as_finite(hypothesis, "hypothesis", ndim=2)
    if not 1 <= k <= dist.n:
        raise InvalidInputError(f"k={k} outside 1..{dist.n}")
    lhs = float(sum(w * topk_conditional_regret(p, H[i], k)
                    for i, (w, p) in enumerate(zip(dist.weights, dist.conditionals))))
    if best is None:
        best = pointwise_best_surrogate(dist, kind, seed=seed)
    surr = generalization_error(dist, H, kind)
    excess = max(0.0, surr - best.value)
    if isinstance(kind, CompSumKind):
        t = psi_inverse(kind, excess, dist.n)
    else:
        t = gamma(kind, excess)
    rhs = (k if k_factor else 1) * t
    return BoundReport(trial_id, str(kind), k, lhs, float(rhs), float(rhs - lhs), best.tolerance)


def verify_cost_bound(dist: DiscreteDistribution, selector_scores, kind,
                      trial_id: int = 0, seed: int = 0) -> BoundReport:
    """Both sides of the cost-sensitive bound; the Bayes selector is per-point argmin of expected cost."""
    R = as_finite(selector_scores, "selector_scores", ndim=2)
    cbar = dist.expected_costs()
    if R.shape != cbar.shape:
        raise InvalidInputError("selector scores must be (points, |K|)")
    sel = argmax_last(R, axis=1)
    lhs = float(np.sum(dist.weights * (cbar[np.arange(len(sel)), sel] - cbar.min(axis=1))))
    best = pointwise_best_surrogate(dist, kind, cost_context=True, seed=seed)
    surr = float(sum(w * cost_sensitive_loss(R[i], cbar[i], kind) for i, w in enumerate(dist.weights)))
    excess = max(0.0, surr - best.value)
    rhs = gamma(kind, excess, cbar.shape[1])
    return BoundReport(trial_id, str(kind), 0, lhs, float(rhs), float(rhs - lhs), best.tolerance)


# -- minimizability gap -------------------------------------------------------

def _shared_best(dist: DiscreteDistribution, loss, seed: int) -> float:
    # one score vector for every x: the objective is the conditional error at
    # the mixture pbar = sum_x w_x p(x), since it is linear in p
    pbar = dist.weights @ dist.conditionals
    if isinstance(loss, (int, np.integer)):
        return best_topk_conditional_error(pbar, int(loss))
    return best_conditional_surrogate(1.0 - pbar, loss, seed=seed).value


def minimizability_gap(dist: DiscreteDistribution, hypothesis_set: str, loss, seed: int = 0) -> float:
    """``E*(H) - E_x[C*(H, x)]`` for ``all_measurable`` or ``shared_scores``."""
    if isinstance(loss, (int, np.integer)):
        pointwise = float(sum(w * best_topk_conditional_error(p, int(loss))
                              for w, p in zip(dist.weights, dist.conditionals)))
    else:
        pointwise = pointwise_best_surrogate(dist, loss, seed=seed).value
    if hypothesis_set == "all_measurable":
        # the infimum over all measurable h decouples across support points
        best = pointwise
    elif hypothesis_set == "shared_scores":
        best = _shared_best(dist, loss, seed)
    else:
        raise InvalidInputError(f"unknown hypothesis set {hypothesis_set!r}")
    return best - pointwise


# -- randomized sweeps --------------------------------------------------------

def random_distribution(rng: np.random.Generator, n: int, max_points: int = 6,
                        n_candidates: int | None = None) -> DiscreteDistribution:
    """Random support with a mix of diffuse, peaked, tied and one-hot conditionals."""
    m = int(rng.integers(1, max_points + 1))
    w = rng.dirichlet(np.ones(m))
    w = np.maximum(w, 1e-3)
    w /= w.sum()
    rows = []
    for _ in range(m):
        style = rng.integers(5)
        if style == 0:
            p = rng.dirichlet(np.full(n, 0.3))
        elif style == 1:
            p = rng.dirichlet(np.full(n, 3.0))
        elif style == 2:
            # near ties at the top-k boundary
            p = np.sort(rng.dirichlet(np.ones(n)))[::-1]
            j = int(rng.integers(n - 1))
            mid = 0.5 * (p[j] + p[j + 1])
            p[j] = mid + 1e-4
            p[j + 1] = mid - 1e-4
            p = rng.permutation(np.maximum(p, 0))
        elif style == 3:
            # two probability levels
            hi = int(rng.integers(1, n))
            gap = float(rng.uniform(0.01, 0.5))
            p = np.where(np.arange(n) < hi, 1.0 + gap, 1.0 - gap)
            p = rng.permutation(p)
        else:
            p = np.zeros(n)
            p[rng.integers(n)] = 1.0
        rows.append(p / p.sum())
    costs = None
    if n_candidates is not None:
        costs = rng.uniform(size=(m, n, n_candidates))
        if rng.random() < 0.3:
            costs = np.round(costs * 2) / 2  # coarse grid produces exact ties
    return DiscreteDistribution(w, np.array(rows), costs)


def random_hypothesis(rng: np.random.Generator, dist: DiscreteDistribution, width: int,
                      target: np.ndarray | None = None) -> np.ndarray:
    """Random scores: pure noise, a perturbed good score vector, tied integer
    scores, one-vs-rest vectors, or a correct top entry over a reversed tail."""
    m = dist.n_points
    style = rng.integers(6)
    scale = float(rng.choice([0.05, 0.5, 2.0]))
    if target is None and style in (1, 4, 5):
        style = 0
    if style == 0:
        return rng.normal(scale=scale, size=(m, width))
    if style == 1:
        return target + rng.normal(scale=scale, size=(m, width))
    if style == 2:
        return rng.integers(-1, 2, size=(m, width)).astype(np.float64) * scale
    if style == 5:
        # best candidate on top, the others nearly tied in reverse order of
        # the target; flat loss regions leave that tail almost unpenalized
        a = float(rng.choice([1.0, 3.0, 12.0]))
        H = np.empty((m, width))
        for i in range(m):
            order = rank_desc(target[i])
            H[i, order[0]] = a * (width - 1)
            H[i, order[1:]] = -a - 1e-3 * np.arange(width - 1)[::-1]
        return H
    if style == 3:
        top = rng.integers(width, size=m)
    else:
        # one-vs-rest on the worst candidate with a wide margin; ties among
        # the rest then decide the ranking
        top = np.argmin(target, axis=1)
        scale = float(rng.choice([2.0, 5.0]))
    H = np.full((m, width), -scale)
    H[np.arange(m), top] = scale * (width - 1)
    return H


def _topk_trial(trial_id: int, seed_seq: np.random.SeedSequence, kinds, ns, k_factor: bool):
    rng = np.random.default_rng(seed_seq)
    n = int(rng.choice(ns))
    kind = kinds[int(rng.integers(len(kinds)))]
    k = int(rng.integers(1, n + 1))
    dist = random_distribution(rng, n)
    target = np.log(np.maximum(dist.conditionals, 1e-6))
    H = random_hypothesis(rng, dist, n, target)
    return verify_topk_bound(dist, H, kind, k, trial_id=trial_id, k_factor=k_factor,
                             seed=int(rng.integers(2**31)))


def _cost_trial(trial_id: int, seed_seq: np.random.SeedSequence, kinds, sizes):
    rng = np.random.default_rng(seed_seq)
    n = int(rng.integers(2, 6))
    nk = int(rng.choice(sizes))
    kind = kinds[int(rng.integers(len(kinds)))]
    dist = random_distribution(rng, n, n_candidates=nk)
    target = -np.log(np.maximum(dist.expected_costs(), 1e-6))
    R = random_hypothesis(rng, dist, nk, target)
    return verify_cost_bound(dist, R, kind, trial_id=trial_id, seed=int(rng.integers(2**31)))


def run_bound_sweep(n_trials: int, seed: int = 0, family: str = "topk", kinds=None,
                    k_factor: bool = True, workers: int = 1, ns=(3, 4, 5),
                    sizes=(2, 3, 4)) -> list[BoundReport]:
    """Randomized bound checks; trial i always uses the i-th spawned seed."""
    if n_trials < 1:
        raise InvalidInputError("empty trial list")
    kinds = list(kinds) if kinds is not None else all_kinds()
    seqs = np.random.SeedSequence(seed).spawn(n_trials)
    if family == "topk":
        def job(i):
            return _topk_trial(i, seqs[i], kinds, ns, k_factor)
    elif family == "cost":
        def job(i):
            return _cost_trial(i, seqs[i], kinds, sizes)
    else:
        raise InvalidInputError(f"unknown bound family {family!r}")
    if workers <= 1:
        return [job(i) for i in range(n_trials)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, range(n_trials)))


def enumerate_rankings(n: int):
    return itertools.permutations(range(n))
