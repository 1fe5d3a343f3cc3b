"""Cascade generator families and their exact moments.

A generator is a random vector ``W = (w_0, ..., w_{c-1})`` of non-negative
weights with ``E sum(w) = 1``.  ``w_*`` denotes ``c * w_U`` for a uniformly
chosen component ``U``; its moments drive the heuristic scaling function
``tau_H(q) = q - log_c E w_*^q - 1``.

For the iid families the components are ``v_i / c`` with ``v_i`` independent
copies of ``w_*``.  Dirichlet and one-hot generators are conservative
(``sum(w) == 1`` on every draw).
"""

from __future__ import annotations

import enum
import functools
import math
import sys
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln

from . import _rng
from ._backend import kernels
from .errors import DimensionOverflowError, DivergentMomentError, RootFindingError

MAX_TENSOR_DIM = 4096
ROOT_SCAN_LIMIT = 64.0
_CLOSED_FORM_TOL = 1e-12


class Family(str, enum.Enum):
    DETERMINISTIC = "deterministic"
    DISCRETE_IID = "discrete"
    LOGNORMAL = "lognormal"
    LOG_POISSON = "logpoisson"
    DIRICHLET = "dirichlet"
    ONE_HOT = "onehot"
    TENSOR = "tensor"


_IID_FAMILIES = (Family.DISCRETE_IID, Family.LOGNORMAL, Family.LOG_POISSON)


@dataclass(frozen=True)
class GeneratorSpec:
    """Immutable description of a generator family with branching ``c``.

    ``params`` layout by family:

    * DISCRETE_IID: ``(atoms, probs)`` -- atoms of ``w_*`` and their probabilities
    * LOGNORMAL: ``(sigma2,)`` -- variance of ``ln w_*``
    * LOG_POISSON: ``(lam, beta)`` -- ``w_* = A beta**N`` with ``N ~ Poisson(lam)``
    * DIRICHLET: concentration vector of length ``c``
    * DETERMINISTIC, ONE_HOT: empty

    TENSOR generators carry their two factors in ``factors``.
    """

    family: Family
    c: int
    params: tuple = ()
    factors: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        if not isinstance(self.c, (int, np.integer)) or self.c < 2:
            raise ValueError(f"branching parameter must be an integer >= 2, got {self.c!r}")
        _validate(self)

    @property
    def components_iid(self):
        return self.family in _IID_FAMILIES

    @property
    def locally_positive(self):
        """True when every component is a.s. positive."""
        if self.family == Family.ONE_HOT:
            return False
        if self.family == Family.DISCRETE_IID:
            atoms, probs = self.params
            return all(v > 0 for v, p in zip(atoms, probs) if p > 0)
        if self.family == Family.TENSOR:
            return all(f.locally_positive for f in self.factors)
        return True

    def describe(self):
        out = {"family": self.family.value, "c": int(self.c)}
        if self.family == Family.DISCRETE_IID:
            out["atoms"] = list(self.params[0])
            out["probs"] = list(self.params[1])
        elif self.family == Family.LOGNORMAL:
            out["sigma2"] = self.params[0]
        elif self.family == Family.LOG_POISSON:
            out["lam"], out["beta"] = self.params
        elif self.family == Family.DIRICHLET:
            out["concentration"] = list(self.params)
        elif self.family == Family.TENSOR:
            out["factors"] = [f.describe() for f in self.factors]
        return out


def _validate(gen):
    fam, p = gen.family, gen.params
    if fam == Family.DISCRETE_IID:
        atoms, probs = p
        if len(atoms) != len(probs) or not atoms:
            raise ValueError("atoms and probabilities must be non-empty and of equal length")
        if any(v < 0 for v in atoms) or any(q < 0 for q in probs):
            raise ValueError("atoms and probabilities must be non-negative")
        if abs(math.fsum(probs) - 1.0) > _CLOSED_FORM_TOL:
            raise ValueError("probabilities must sum to 1")
        if abs(math.fsum(v * q for v, q in zip(atoms, probs)) - 1.0) > _CLOSED_FORM_TOL:
            raise ValueError("atoms of w_* must have mean 1")
    elif fam == Family.LOGNORMAL:
        if not p[0] > 0:
            raise ValueError("sigma2 must be > 0")
    elif fam == Family.LOG_POISSON:
        lam, beta = p
        if not 0 < lam <= 500:
            raise ValueError("lam must lie in (0, 500]")
        if not beta > 0:
            raise ValueError("beta must be > 0")
    elif fam == Family.DIRICHLET:
        if len(p) != gen.c or any(not a > 0 for a in p):
            raise ValueError("dirichlet needs c positive concentrations")
    elif fam == Family.TENSOR:
        g1, g2 = gen.factors
        if g1.c * g2.c != gen.c:
            raise ValueError("tensor dimension must equal the product of factor dimensions")
    elif p:
        raise ValueError(f"{fam.value} takes no parameters")


def deterministic(c):
    """Constant weights 1/c; the cascade measure is Lebesgue measure."""
    return GeneratorSpec(Family.DETERMINISTIC, int(c))


lebesgue = deterministic


def discrete_iid(c, atoms, probs):
    return GeneratorSpec(Family.DISCRETE_IID, int(c),
                         (tuple(float(v) for v in atoms), tuple(float(q) for q in probs)))


def lognormal(c, sigma2):
    return GeneratorSpec(Family.LOGNORMAL, int(c), (float(sigma2),))


def log_poisson(c, lam, beta):
    return GeneratorSpec(Family.LOG_POISSON, int(c), (float(lam), float(beta)))


def dirichlet(c, concentration):
    if np.isscalar(concentration):
        concentration = [concentration] * int(c)
    return GeneratorSpec(Family.DIRICHLET, int(c), tuple(float(a) for a in concentration))


def one_hot(c):
    return GeneratorSpec(Family.ONE_HOT, int(c))


def tensor_product(gen1, gen2, max_dim=MAX_TENSOR_DIM):
    """Composite generator with component ``c2*alpha + beta`` equal to
    ``xi_alpha * eta^(alpha)_beta`` where the ``eta^(alpha)`` are independent
    copies of ``gen2``.
    """
    c = gen1.c * gen2.c
    if c > max_dim:
        raise DimensionOverflowError(f"tensor dimension {c} exceeds maximum {max_dim}")
    if gen1.family == Family.DETERMINISTIC and gen2.family == Family.DETERMINISTIC:
        return deterministic(c)
    return GeneratorSpec(Family.TENSOR, c, (), (gen1, gen2))


def tensor_power(gen, k, max_dim=MAX_TENSOR_DIM):
    if k < 1:
        raise ValueError("tensor power must be >= 1")
    out = gen
    for _ in range(k - 1):
        out = tensor_product(out, gen, max_dim)
    return out


# ---------------------------------------------------------------- moments


def _mean(gen, alpha):
    if gen.family == Family.DIRICHLET:
        return gen.params[alpha] / math.fsum(gen.params)
    if gen.family == Family.TENSOR:
        g1, g2 = gen.factors
        a, b = divmod(alpha, g2.c)
        return _mean(g1, a) * _mean(g2, b)
    return 1.0 / gen.c


def _rising(a, k):
    out = 1.0
    for i in range(k):
        out *= a + i
    return out


def _moment(gen, alpha, rho):
    """(E w_alpha^rho, d/drho E w_alpha^rho); rho may be negative where finite."""
    fam, c = gen.family, gen.c
    lc = math.log(c)
    if fam == Family.DETERMINISTIC:
        m = c ** -rho
        return m, -lc * m
    if fam == Family.DISCRETE_IID:
        atoms, probs = gen.params
        m = dm = 0.0
        for v, p in zip(atoms, probs):
            if p == 0:
                continue
            if v == 0:
                if rho < 0:
                    raise DivergentMomentError("negative moment of a generator with an atom at zero")
                if rho == 0:
                    m += p
                continue
            w = v / c
            t = p * w ** rho
            m += t
            dm += t * math.log(w)
        return m, dm
    if fam == Family.LOGNORMAL:
        s2 = gen.params[0]
        m = c ** -rho * math.exp(rho * (rho - 1.0) * s2 / 2.0)
        return m, m * (-lc + (2.0 * rho - 1.0) * s2 / 2.0)
    if fam == Family.LOG_POISSON:
        lam, beta = gen.params
        log_m = lam * (beta ** rho - 1.0) - rho * lam * (beta - 1.0)
        m = c ** -rho * math.exp(log_m)
        return m, m * (-lc + lam * beta ** rho * math.log(beta) - lam * (beta - 1.0))
    if fam == Family.DIRICHLET:
        a = gen.params[alpha]
        total = math.fsum(gen.params)
        if rho <= -a:
            raise DivergentMomentError(f"E w^{rho} diverges for Beta({a}, {total - a}) marginal")
        if float(rho).is_integer() and rho >= 0:
            m = _rising(a, int(rho)) / _rising(total, int(rho))
        else:
            m = math.exp(gammaln(a + rho) - gammaln(a) + gammaln(total) - gammaln(total + rho))
        return m, m * float(digamma(a + rho) - digamma(total + rho))
    if fam == Family.ONE_HOT:
        if rho < 0:
            raise DivergentMomentError("negative moment of a one-hot generator")
        return (1.0 if rho == 0 else 1.0 / c), 0.0
    g1, g2 = gen.factors
    a, b = divmod(alpha, g2.c)
    m1, d1 = _moment(g1, a, rho)
    m2, d2 = _moment(g2, b, rho)
    return m1 * m2, d1 * m2 + m1 * d2


def _moment_sum(gen, rho):
    """(sum_alpha E w_alpha^rho, its rho-derivative)."""
    if gen.family == Family.TENSOR:
        g1, g2 = gen.factors
        s1, d1 = _moment_sum(g1, rho)
        s2, d2 = _moment_sum(g2, rho)
        return s1 * s2, d1 * s2 + s1 * d2
    if gen.family == Family.DIRICHLET:
        parts = [_moment(gen, a, rho) for a in range(gen.c)]
        return math.fsum(p[0] for p in parts), math.fsum(p[1] for p in parts)
    m, dm = _moment(gen, 0, rho)
    return gen.c * m, gen.c * dm


def _check_alpha(gen, alpha):
    if not 0 <= alpha < gen.c:
        raise IndexError(f"component index {alpha} out of range for c={gen.c}")


def component_moment(gen, alpha, rho):
    """E w_alpha^rho in closed form."""
    _check_alpha(gen, alpha)
    if rho < 0:
        raise ValueError("rho must be >= 0")
    return _moment(gen, alpha, rho)[0]


def component_mean(gen, alpha):
    _check_alpha(gen, alpha)
    return _mean(gen, alpha)


def cross_moment(gen, i, j):
    """E w_i w_j (i == j gives the second moment)."""
    _check_alpha(gen, i)
    _check_alpha(gen, j)
    fam, c = gen.family, gen.c
    if i == j:
        return _moment(gen, i, 2.0)[0]
    if fam == Family.DIRICHLET:
        total = math.fsum(gen.params)
        return gen.params[i] * gen.params[j] / (total * (total + 1.0))
    if fam == Family.ONE_HOT:
        return 0.0
    if fam == Family.TENSOR:
        g1, g2 = gen.factors
        a1, b1 = divmod(i, g2.c)
        a2, b2 = divmod(j, g2.c)
        if a1 == a2:
            return _moment(g1, a1, 2.0)[0] * cross_moment(g2, b1, b2)
        return cross_moment(g1, a1, a2) * _mean(g2, b1) * _mean(g2, b2)
    return 1.0 / (c * c)


def star_moment(gen, rho):
    """E w_*^rho = c^(rho-1) * sum_alpha E w_alpha^rho."""
    if rho < 0:
        raise ValueError("rho must be >= 0")
    return gen.c ** (rho - 1.0) * _moment_sum(gen, rho)[0]


def tau_heuristic(gen, q):
    s = _moment_sum(gen, q)[0]
    if not (math.isfinite(s) and s > 0):
        raise DivergentMomentError(f"E w_*^{q} is not finite and positive")
    # q - log_c(c^(q-1) s) - 1 simplifies to -log_c s
    return -math.log(s) / math.log(gen.c)


def tau_heuristic_slope(gen, q):
    """d tau_H / dq, from closed-form moment derivatives."""
    s, ds = _moment_sum(gen, q)
    if not (math.isfinite(s) and s > 0):
        raise DivergentMomentError(f"E w_*^{q} is not finite and positive")
    return -ds / (s * math.log(gen.c))


def star_log_moment(gen):
    """E w_* log_c w_*."""
    s, ds = _moment_sum(gen, 1.0)
    return s + ds / math.log(gen.c)


def nondegenerate(gen):
    return star_log_moment(gen) < 1.0


# ---------------------------------------------------- critical exponents


@dataclass(frozen=True)
class CriticalExponents:
    q_minus: float
    q_plus: float


def _negative_moment_bound(gen):
    """Infimum of q < 0 with finite E w_*^q (0 when no negative moment exists)."""
    if not gen.locally_positive:
        return 0.0
    if gen.family == Family.DIRICHLET:
        return -min(gen.params)
    if gen.family == Family.TENSOR:
        return max(_negative_moment_bound(f) for f in gen.factors)
    return -math.inf


def _tangency_gap(gen, q):
    return tau_heuristic(gen, q) - q * tau_heuristic_slope(gen, q)


def _gap_floor(gen, q):
    # rounding noise of tau - q tau'; a gap that never clears it is treated
    # as approaching zero only asymptotically
    return 64.0 * sys.float_info.epsilon * (
        abs(tau_heuristic(gen, q)) + abs(q * tau_heuristic_slope(gen, q)) + 1.0)


def _bisect(f, lo, hi, flo, fhi):
    # invariant: f(lo) < 0 <= f(hi)
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        fm = f(mid)
        if math.isnan(fm):
            raise RootFindingError(f"tangency function undefined at q={mid}", (lo, hi))
        if fm >= 0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


def _scan(gen, points):
    f = functools.partial(_tangency_gap, gen)
    prev, fprev = points[0], f(points[0])
    if fprev >= 0:
        return prev
    for q in points[1:]:
        fq = f(q)
        if math.isnan(fq):
            raise RootFindingError(f"tangency function undefined at q={q}", (prev, q))
        if fq > _gap_floor(gen, q):
            return _bisect(f, prev, q, fprev, fq)
        prev, fprev = q, fq
    return None


def critical_exponents(gen):
    """Tangency points q_- <= 0 and q_+ >= 1 of support lines through 0.

    Roots of ``tau_H(q) - q tau_H'(q)`` closest to the origin, found by
    doubling a bracket out to |q| = 64 and bisecting; no root inside that
    range is reported as an infinite exponent.  Generators without negative
    moments (atoms at zero) get ``q_minus = 0``.
    """
    doubling = [2.0 ** k for k in range(int(math.log2(ROOT_SCAN_LIMIT)) + 1)]
    qp = _scan(gen, [1.0] + doubling[1:])
    q_plus = math.inf if qp is None else qp

    bound = _negative_moment_bound(gen)
    if bound == 0.0:
        return CriticalExponents(0.0, q_plus)
    neg = [-q for q in doubling if -q > bound]
    if bound > -ROOT_SCAN_LIMIT:
        start = neg[-1] if neg else 0.0
        neg += [bound * (1.0 - 2.0 ** -k) for k in range(1, 60)
                if bound * (1.0 - 2.0 ** -k) < start]
    qm = _scan(gen, [0.0] + neg)
    q_minus = -math.inf if qm is None else qm
    return CriticalExponents(q_minus, q_plus)


# ---------------------------------------------------------------- sampling


@functools.lru_cache(maxsize=128)
def kernel_args(gen):
    fam = gen.family
    if fam == Family.DETERMINISTIC:
        return _rng.DETERMINISTIC, np.empty(0)
    if fam == Family.ONE_HOT:
        return _rng.ONE_HOT, np.empty(0)
    if fam == Family.LOGNORMAL:
        return _rng.LOGNORMAL, np.array(gen.params)
    if fam == Family.DIRICHLET:
        return _rng.DIRICHLET, np.array(gen.params)
    if fam == Family.DISCRETE_IID:
        atoms, probs = gen.params
        return _rng.DISCRETE, _discrete_table(atoms, np.cumsum(probs))
    lam, beta = gen.params
    log_a = -lam * (beta - 1.0)
    p = math.exp(-lam)
    atoms, cum = [math.exp(log_a)], [p]
    n_max = int(lam + 20.0 * math.sqrt(lam) + 40)
    n = 0
    while n < n_max and cum[-1] < 1.0 - 1e-16:
        n += 1
        p = p * (lam / n)
        cum.append(cum[-1] + p)
        atoms.append(math.exp(log_a + n * math.log(beta)))
    return _rng.DISCRETE, _discrete_table(atoms, cum)


def _discrete_table(atoms, cum):
    return np.concatenate([[len(atoms)], np.asarray(atoms, float), np.asarray(cum, float)])


def weights_from_keys(gen, keys):
    """One weight vector per cell stream key; returns shape (len(keys), c)."""
    keys = np.ascontiguousarray(keys, dtype=np.uint64).ravel()
    if gen.family != Family.TENSOR:
        code, params = kernel_args(gen)
        return kernels.sample_family(keys, code, gen.c, params)
    g1, g2 = gen.factors
    xi = weights_from_keys(g1, _rng.derive(keys, 0, _rng.SUB_STEP))
    out = np.empty((keys.size, gen.c))
    for a in range(g1.c):
        eta = weights_from_keys(g2, _rng.derive(keys, a + 1, _rng.SUB_STEP))
        out[:, a * g2.c:(a + 1) * g2.c] = xi[:, a, None] * eta
    return out


def sample_weights(gen, rng_stream):
    """Draw (w_0, ..., w_{c-1}) from the cell stream key ``rng_stream``."""
    return weights_from_keys(gen, np.array([int(rng_stream) & _rng.MASK64], dtype=np.uint64))[0]
