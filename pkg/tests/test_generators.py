import functools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, optimize, special, stats

from cascadelab import generators as G
from cascadelab.errors import DimensionOverflowError, DivergentMomentError
from conftest import BUILTINS, W

ALL = list(BUILTINS.values())
IDS = list(BUILTINS)


# ---------------------------------------------------------------- oracles
# E w_*^q computed straight from each distribution, not through the package.

def star_moment_oracle(gen, q, fast=False):
    c = gen.c
    fam = gen.family
    if fam == G.Family.DETERMINISTIC:
        return 1.0
    if fam == G.Family.DISCRETE_IID:
        atoms, probs = gen.params
        return sum(p * v ** q for v, p in zip(atoms, probs) if p > 0 and (v > 0 or q > 0)) + \
            (sum(p for v, p in zip(atoms, probs) if v == 0) if q == 0 else 0.0)
    if fam == G.Family.LOGNORMAL:
        s2 = gen.params[0]
        x, w = np.polynomial.hermite_e.hermegauss(120)     # E f(Z), Z ~ N(0, 1)
        return float(np.sum(w * np.exp(q * (-s2 / 2 + math.sqrt(s2) * x))) / math.sqrt(2 * math.pi))
    if fam == G.Family.LOG_POISSON:
        lam, beta = gen.params
        a = math.exp(-lam * (beta - 1))
        ks = np.arange(0, 200)
        return float(np.sum(stats.poisson.pmf(ks, lam) * (a * beta ** ks) ** q))
    if fam == G.Family.DIRICHLET:
        conc = np.array(gen.params)
        tot = conc.sum()
        # w_* = c w_U, U uniform; each marginal is Beta(a, tot - a)
        if fast:
            return float(np.mean([c ** q * special.beta(a + q, tot - a) / special.beta(a, tot - a)
                                  for a in conc]))
        vals = [integrate.quad(lambda x: (c * x) ** q * stats.beta(a, tot - a).pdf(x), 0, 1, limit=200)[0]
                for a in conc]
        return float(np.mean(vals))
    if fam == G.Family.ONE_HOT:
        return 1.0 if q == 0 else c ** (q - 1)   # w_* in {0, c} with P(c) = 1/c
    raise NotImplementedError(fam)


def tau_oracle(gen, q, fast=False):
    return q - math.log(star_moment_oracle(gen, q, fast)) / math.log(gen.c) - 1.0


def critical_oracle(gen, h=1e-5):
    """brentq on tau - q tau' with a central finite-difference slope."""
    def g(q):
        t = functools.partial(tau_oracle, gen, fast=True)
        return t(q) - q * (t(q + h) - t(q - h)) / (2 * h)
    grid = np.linspace(1.0, 16.0, 151)
    vals = [g(q) for q in grid]
    for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if fa < 0 <= fb:
            return optimize.brentq(g, a, b, xtol=1e-12)
    return math.inf


# ---------------------------------------------------- documented examples

def test_component_moment_examples():
    assert G.component_moment(G.deterministic(2), 0, 2) == 0.25
    assert G.component_moment(W, 0, 2) == pytest.approx((0.5 ** 2 + 1.5 ** 2) / 2 / 4, abs=1e-15)
    assert G.component_moment(W, 0, 2) == pytest.approx(0.3125, abs=1e-15)
    assert G.component_moment(G.lognormal(2, 0.2), 1, 1) == pytest.approx(0.5, abs=1e-15)


def test_component_moment_errors():
    with pytest.raises(IndexError):
        G.component_moment(W, 2, 1.0)
    with pytest.raises(ValueError):
        G.component_moment(W, 0, -0.5)


def test_star_moment_examples():
    assert G.star_moment(W, 2) == pytest.approx(1.25, abs=1e-15)
    for gen in ALL:
        assert G.star_moment(gen, 1) == pytest.approx(1.0, abs=1e-12)
        assert G.star_moment(gen, 0) == pytest.approx(1.0, abs=1e-12)


@pytest.mark.parametrize("gen", ALL, ids=IDS)
@pytest.mark.parametrize("rho", [0.5, 1.0, 2.0, 3.0])
def test_star_moment_identity(gen, rho):
    total = sum(G.component_moment(gen, a, rho) for a in range(gen.c))
    assert G.star_moment(gen, rho) == pytest.approx(gen.c ** (rho - 1) * total, rel=1e-12)


@pytest.mark.parametrize("name", [k for k in IDS if k != "tensor"])
@pytest.mark.parametrize("q", [0.5, 1.5, 2.0, 2.5])
def test_tau_heuristic_matches_direct_oracle(name, q):
    gen = BUILTINS[name]
    assert G.tau_heuristic(gen, q) == pytest.approx(tau_oracle(gen, q), abs=1e-8)


def test_tau_heuristic_lognormal_example():
    value = G.tau_heuristic(G.lognormal(2, 0.2), 2.0)
    assert value == pytest.approx(1 - 0.2 / math.log(2), abs=1e-12)
    assert round(value, 5) == 0.71146


@pytest.mark.parametrize("gen", ALL, ids=IDS)
def test_tau_anchors(gen):
    assert abs(G.tau_heuristic(gen, 0.0) + 1.0) <= 1e-12
    assert abs(G.tau_heuristic(gen, 1.0)) <= 1e-12


def test_tau_negative_q_with_zero_atom_rejected():
    with pytest.raises(DivergentMomentError):
        G.tau_heuristic(BUILTINS["discrete-zero-atom"], -0.5)
    with pytest.raises(DivergentMomentError):
        G.tau_heuristic(G.one_hot(2), -1.0)


@pytest.mark.parametrize("gen", [g for g in ALL if g.locally_positive],
                         ids=[k for k in IDS if BUILTINS[k].locally_positive])
def test_minus_tau_convex(gen):
    lo = max(-3.0, G._negative_moment_bound(gen) + 0.05)
    qs = np.linspace(lo, 4.0, 81)
    tau = np.array([G.tau_heuristic(gen, q) for q in qs])
    second = tau[2:] - 2 * tau[1:-1] + tau[:-2]
    assert np.all(second <= 1e-12)


@pytest.mark.parametrize("gen", ALL, ids=IDS)
def test_slope_is_analytic_derivative(gen):
    for q in (0.5, 1.0, 2.0):
        h = 1e-6
        fd = (G.tau_heuristic(gen, q + h) - G.tau_heuristic(gen, q - h)) / (2 * h)
        assert G.tau_heuristic_slope(gen, q) == pytest.approx(fd, abs=1e-6)


# ------------------------------------------------------- nondegeneracy

def test_nondegenerate_examples():
    assert G.nondegenerate(G.deterministic(2))
    assert G.nondegenerate(G.deterministic(7))
    assert G.nondegenerate(G.lognormal(2, 0.2))
    assert not G.nondegenerate(G.lognormal(2, 2 * math.log(2)))
    # E w_* ln w_* = sigma^2/2 for the lognormal
    assert G.star_log_moment(G.lognormal(2, 0.2)) == pytest.approx(0.1 / math.log(2), abs=1e-12)


def test_star_log_moment_oracle_discrete():
    expected = sum(0.5 * v * math.log(v, 2) for v in (0.5, 1.5))
    assert G.star_log_moment(W) == pytest.approx(expected, abs=1e-14)


# ------------------------------------------------- critical exponents

def test_critical_exponents_examples():
    assert G.critical_exponents(G.deterministic(2)) == G.CriticalExponents(-math.inf, math.inf)
    ce = G.critical_exponents(G.lognormal(2, 2 * math.log(2) / 9))
    assert ce.q_plus == pytest.approx(3.0, abs=1e-9)
    assert ce.q_minus == pytest.approx(-3.0, abs=1e-9)
    assert G.critical_exponents(G.lognormal(2, 0.2)).q_plus == pytest.approx(math.sqrt(2 * math.log(2) / 0.2), abs=1e-12)
    assert round(G.critical_exponents(G.lognormal(2, 0.2)).q_plus, 4) == 2.6328


@given(c=st.integers(2, 12), sigma2=st.floats(0.02, 3.0))
@settings(max_examples=60, deadline=None)
def test_lognormal_critical_closed_form(c, sigma2):
    expected = math.sqrt(2 * math.log(c) / sigma2)
    ce = G.critical_exponents(G.lognormal(c, sigma2))
    if expected < 1.0:
        # degenerate cascade (sigma2 > 2 ln c): the scan starts at q = 1
        assert not G.nondegenerate(G.lognormal(c, sigma2))
        assert ce.q_plus == 1.0
    elif expected <= G.ROOT_SCAN_LIMIT:
        assert ce.q_plus == pytest.approx(expected, abs=1e-9)
        assert ce.q_minus == pytest.approx(-expected, abs=1e-9)


@pytest.mark.parametrize("name", ["lognormal-2", "lognormal-3", "logpoisson", "dirichlet"])
def test_critical_exponent_vs_brentq_oracle(name):
    gen = BUILTINS[name]
    assert G.critical_exponents(gen).q_plus == pytest.approx(critical_oracle(gen), abs=1e-5)


def test_critical_exponent_discrete_finite_root():
    gen = G.discrete_iid(3, [0.5, 1.0, 2.0], [0.5, 0.25, 0.25])
    assert G.critical_exponents(gen).q_plus == pytest.approx(critical_oracle(gen), abs=1e-5)


def test_critical_exponents_tangency_holds():
    for gen in ALL:
        ce = G.critical_exponents(gen)
        assert ce.q_minus <= 0 < 1 <= ce.q_plus
        for q in (ce.q_minus, ce.q_plus):
            if math.isfinite(q) and q != 0 and gen.locally_positive:
                gap = G.tau_heuristic(gen, q) - q * G.tau_heuristic_slope(gen, q)
                assert abs(gap) < 1e-9


def test_binomial_gap_only_asymptotic():
    # tau - q tau' = -log2(1 + 3^-q) - ... < 0 for every q > 0: no finite tangency
    assert G.critical_exponents(W).q_plus == math.inf


def test_zero_atom_families_have_q_minus_zero():
    assert G.critical_exponents(BUILTINS["discrete-zero-atom"]).q_minus == 0.0
    assert G.critical_exponents(G.one_hot(3)) == G.CriticalExponents(0.0, 1.0)


# ------------------------------------------------------ tensor products

def test_tensor_product_examples():
    assert G.tensor_product(G.deterministic(2), G.lognormal(3, 0.1)).c == 6
    assert G.tensor_product(G.deterministic(2), G.deterministic(3)) == G.deterministic(6)
    ww = G.tensor_product(W, W)
    assert G.component_moment(ww, 3, 2) == pytest.approx(0.3125 ** 2, abs=1e-15)
    assert G.component_moment(ww, 3, 2) == pytest.approx(0.09765625, abs=1e-15)


def test_tensor_overflow_guard():
    with pytest.raises(DimensionOverflowError):
        G.tensor_product(G.deterministic(64), G.deterministic(128))
    assert G.tensor_product(G.deterministic(64), G.deterministic(128), max_dim=8192).c == 8192


def _enumerate_tensor(xi_atoms, xi_probs, eta_atoms, eta_probs, c1, c2):
    """Exact joint law of xi (x) eta for discrete iid factors: list of (prob, vector)."""
    import itertools
    out = []
    xs = list(zip(xi_atoms, xi_probs))
    es = list(zip(eta_atoms, eta_probs))
    for xi in itertools.product(xs, repeat=c1):
        for etas in itertools.product(itertools.product(es, repeat=c2), repeat=c1):
            p = np.prod([t[1] for t in xi]) * np.prod([t[1] for e in etas for t in e])
            vec = [xi[a][0] / c1 * etas[a][b][0] / c2 for a in range(c1) for b in range(c2)]
            out.append((p, np.array(vec)))
    return out


def test_tensor_cross_moments_by_enumeration():
    eta = G.discrete_iid(2, [0.4, 1.6], [0.5, 0.5])
    gen = G.tensor_product(W, eta)
    law = _enumerate_tensor([0.5, 1.5], [0.5, 0.5], [0.4, 1.6], [0.5, 0.5], 2, 2)
    for i in range(4):
        for j in range(4):
            exact = sum(p * v[i] * v[j] for p, v in law)
            assert G.cross_moment(gen, i, j) == pytest.approx(exact, abs=1e-15)
        exact3 = sum(p * v[i] ** 3 for p, v in law)
        assert G.component_moment(gen, i, 3) == pytest.approx(exact3, rel=1e-13)


@pytest.mark.parametrize("name", ["discrete-W", "lognormal-2", "dirichlet", "logpoisson"])
def test_tensor_square_same_exponents(name):
    gen = BUILTINS[name]
    sq = G.tensor_product(gen, gen)
    for q in np.linspace(0.0, 3.0, 13):
        assert G.tau_heuristic(sq, q) == pytest.approx(G.tau_heuristic(gen, q), abs=1e-12)


# ----------------------------------------------------------- sampling

def test_sample_weights_examples():
    for s in range(20):
        assert np.array_equal(G.sample_weights(G.deterministic(4), s), np.full(4, 0.25))
        v = G.sample_weights(G.one_hot(3), s)
        assert sorted(v.tolist()) == [0.0, 0.0, 1.0]
        assert set(G.sample_weights(W, s).tolist()) <= {0.25, 0.75}


def test_sample_weights_deterministic_in_stream():
    for gen in ALL:
        assert np.array_equal(G.sample_weights(gen, 99), G.sample_weights(gen, 99))


@pytest.mark.parametrize("gen", ALL, ids=IDS)
def test_weight_sum_mean_is_one(gen):
    keys = np.arange(100_000, dtype=np.uint64) * np.uint64(0x9E3779B97F4A7C15)
    w = G.weights_from_keys(gen, keys)
    assert np.all(w >= 0)
    s = w.sum(axis=1)
    if gen.family in (G.Family.DIRICHLET, G.Family.ONE_HOT, G.Family.DETERMINISTIC):
        assert np.max(np.abs(s - 1.0)) <= 1e-12
    se = s.std(ddof=1) / math.sqrt(s.size)
    assert abs(s.mean() - 1.0) <= 3 * se + 1e-15


@pytest.mark.parametrize("gen", ALL, ids=IDS)
@pytest.mark.parametrize("rho", [0.5, 1.0, 2.0])
def test_star_moment_monte_carlo(gen, rho):
    n = 100_000
    keys = np.arange(n, dtype=np.uint64) * np.uint64(0xD1B54A32D192ED03) + np.uint64(7)
    w = G.weights_from_keys(gen, keys)
    u = np.arange(n) % gen.c                      # balanced uniform component index
    vals = (gen.c * w[np.arange(n), u]) ** rho
    se = vals.std(ddof=1) / math.sqrt(n)
    assert abs(vals.mean() - G.star_moment(gen, rho)) <= 3 * se + 1e-12


def test_onehot_star_support():
    keys = np.arange(1000, dtype=np.uint64)
    w = G.weights_from_keys(G.one_hot(5), keys)
    assert set(np.unique(5 * w).tolist()) <= {0.0, 5.0}


# ---------------------------------------------------------- validation

@pytest.mark.parametrize("build", [
    lambda: G.deterministic(1),
    lambda: G.discrete_iid(2, [0.5, 1.5], [0.3, 0.3]),
    lambda: G.discrete_iid(2, [0.5, 1.0], [0.5, 0.5]),
    lambda: G.discrete_iid(2, [-1.0, 3.0], [0.5, 0.5]),
    lambda: G.lognormal(2, 0.0),
    lambda: G.log_poisson(2, -1.0, 0.5),
    lambda: G.dirichlet(3, [1.0, 2.0]),
    lambda: G.dirichlet(2, [1.0, 0.0]),
    lambda: G.tensor_power(W, 0),
])
def test_invalid_generators_rejected(build):
    with pytest.raises(ValueError):
        build()


def test_components_iid_flags():
    assert W.components_iid and G.lognormal(2, 0.1).components_iid
    assert not G.dirichlet(2, 1.0).components_iid and not G.one_hot(2).components_iid


def test_generator_spec_is_hashable_and_immutable():
    assert hash(G.lognormal(2, 0.1)) == hash(G.lognormal(2, 0.1))
    with pytest.raises(AttributeError):
        W.c = 3
