"""Arithmetic of tensor-commuting vectors, remainder maps and power bases.

The tensor product follows ``np.kron``: ``(x (x) y)[q] = x[q // len(y)] * y[q % len(y)]``.
Two positive vectors commute when ``x (x) y == y (x) x``.  Integer and
``Fraction`` inputs are handled in exact rational arithmetic; floats use a
relative tolerance.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from numbers import Rational

CONSTANT_RTOL = 1e-9
AMBIGUITY_FACTOR = 10.0


# -------------------------------------------------------------- vectors


def _is_exact(values):
    return all(isinstance(v, Rational) and not isinstance(v, bool) for v in values)


def _as_vector(v, exact, name):
    vals = list(v)
    if len(vals) < 2:
        raise ValueError(f"{name} must have dimension >= 2")
    if exact:
        vals = [Fraction(t) for t in vals]
    else:
        vals = [float(t) for t in vals]
        if not all(math.isfinite(t) for t in vals):
            raise ValueError(f"{name} entries must be finite")
    if any(t <= 0 for t in vals):
        raise ValueError(f"{name} entries must be strictly positive")
    return vals


def kron(x, y):
    return [a * b for a in x for b in y]


def _rel_diff(u, v):
    scale = max(abs(u), abs(v))
    return abs(u - v) / scale if scale else 0 * scale


def _commutation(x, y):
    """Max relative residual of x(x)y vs y(x)x and the first index attaining it."""
    lhs, rhs = kron(x, y), kron(y, x)
    worst, witness = 0, None
    for q, (u, v) in enumerate(zip(lhs, rhs)):
        r = _rel_diff(u, v)
        if r > worst:
            worst, witness = r, q
    return worst, witness


def _ordered(x, y):
    return (y, x) if len(x) > len(y) else (x, y)


def commutes(x, y, tol=1e-12):
    """(x (x) y == y (x) x within tol, max relative residual)."""
    if tol < 0:
        raise ValueError("tol must be >= 0")
    exact = _is_exact(list(x) + list(y))
    x = _as_vector(x, exact, "x")
    y = _as_vector(y, exact, "y")
    x, y = _ordered(x, y)
    residual, _ = _commutation(x, y)
    return residual <= tol, float(residual)


def commutation_witness(x, y):
    """Index q of the first maximal mismatch (after ordering by dimension), or None."""
    exact = _is_exact(list(x) + list(y))
    x, y = _ordered(_as_vector(x, exact, "x"), _as_vector(y, exact, "y"))
    return _commutation(x, y)[1]


def _constancy(v):
    return max(v) / min(v) - 1


# ----------------------------------------------------------- integers


def gcd(a, b):
    return math.gcd(int(a), int(b))


def multiplicity(c1, c2):
    """(r1, c2') with c2 = c1^r1 * c2' and c1 not dividing c2'."""
    if c1 < 2 or c2 < 1:
        raise ValueError("need c1 >= 2 and c2 >= 1")
    r = 0
    while c2 % c1 == 0:
        c2 //= c1
        r += 1
    return r, c2


def _int_root(c, k):
    r = round(c ** (1.0 / k))
    for cand in (r - 1, r, r + 1):
        if cand >= 2 and cand ** k == c:
            return cand
    return None


def minimal_base(c):
    """Smallest p with c = p^k for some k >= 1."""
    c = int(c)
    if c < 2:
        raise ValueError("c must be >= 2")
    for k in range(c.bit_length(), 1, -1):
        p = _int_root(c, k)
        if p is not None:
            return p
    return c


def _log_int(c, p):
    k = 0
    while c > 1:
        c //= p
        k += 1
    return k


def common_power_base(c1, c2):
    """Minimal (p, k1, k2) with c1 = p^k1 and c2 = p^k2, or None."""
    p = minimal_base(c1)
    if minimal_base(c2) != p:
        return None
    return p, _log_int(int(c1), p), _log_int(int(c2), p)


def remainder_orbit(n1, n2, alpha, steps=None):
    """alpha, T alpha, T^2 alpha, ... for T a = (n2 a) mod n1."""
    steps = n1 if steps is None else steps
    out = [alpha]
    for _ in range(steps):
        out.append(n2 * out[-1] % n1)
    return out


def remainder_cycle(n1, n2):
    """First (alpha, k) with 0 < alpha < n1 and T^k alpha = alpha, or None."""
    if n1 < 2 or n2 < 2:
        raise ValueError("n1 and n2 must be >= 2")
    for alpha in range(1, n1):
        a = alpha
        for k in range(1, n1 + 1):
            a = n2 * a % n1
            if a == alpha:
                return alpha, k
            if a == 0:
                break
    return None


# -------------------------------------------------------- certificate

NOT_COMMUTING = "NotCommuting"
ALL_CONSTANT = "AllConstant"
COMMON_BASE = "CommonBase"
AMBIGUOUS = "Ambiguous"


@dataclass(frozen=True)
class CommutationCertificate:
    verdict: str
    c1: int
    c2: int
    exact: bool
    tolerance: float
    residual: float
    witness: int | None = None
    p: int | None = None
    k1: int | None = None
    k2: int | None = None
    ambiguous: bool = False
    trace: list = field(default_factory=list)
    note: str = ""

    @property
    def commuting(self):
        return self.verdict in (ALL_CONSTANT, COMMON_BASE)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _a0(eta, c1, c2):
    """a_0 = eta[beta0] / eta[alpha0] with alpha0*c2 = beta0*c1 + gcd(c1, c2)."""
    d = math.gcd(c1, c2)
    for alpha0 in range(c1 // d):
        rem = alpha0 * c2 - d
        if rem >= 0 and rem % c1 == 0:
            return eta[rem // c1] / eta[alpha0]
    raise AssertionError("no solution of alpha0*c2 = beta0*c1 + D")


def certify_commuting_pair(x, y, tol=1e-12, exact=None) -> CommutationCertificate:
    """Classify a pair of positive vectors under tensor commutation.

    The smaller vector plays xi.  After checking commutation, eta is scaled so
    that its first entries match xi.  Coprime-ish stages (gcd < c1) must be
    constant (a_0 = 1); divisible stages reduce (c1, c2) to (c1, c2 / c1)
    using eta = kron(eta[:c2/c1], xi) / xi[0].  Reaching equal dimensions
    certifies a common integer base.

    ``exact`` defaults to True when every entry is an int or Fraction.
    """
    if tol < 0:
        raise ValueError("tol must be >= 0")
    raw = list(x) + list(y)
    exact = _is_exact(raw) if exact is None else bool(exact)
    xi = _as_vector(x, exact, "x")
    eta = _as_vector(y, exact, "y")
    xi, eta = _ordered(xi, eta)
    c1, c2 = len(xi), len(eta)
    residuals = []

    def flag(r):
        residuals.append(float(r))

    def done(verdict, residual, **kw):
        ambiguous = (not exact) and any(
            tol / AMBIGUITY_FACTOR < r <= tol * AMBIGUITY_FACTOR for r in residuals)
        if verdict == AMBIGUOUS:
            ambiguous = True
        return CommutationCertificate(verdict, c1, c2, exact, float(tol), float(residual),
                                      ambiguous=ambiguous, **kw)

    residual, witness = _commutation(xi, eta)
    flag(residual)
    if residual > tol:
        return done(NOT_COMMUTING, residual, witness=witness)

    const_tol = 0 if exact else max(CONSTANT_RTOL, tol)
    cx, cy = _constancy(xi), _constancy(eta)
    if cx <= const_tol and cy <= const_tol:
        if not exact:
            flag(cx)
            flag(cy)
        return done(ALL_CONSTANT, residual, trace=[{"c1": c1, "c2": c2, "branch": "constant"}])

    trace = []
    a, b = xi, eta
    max_depth = max(1, int(c2).bit_length())
    for _ in range(max_depth + 1):
        a, b = _ordered(a, b)
        d1, d2 = len(a), len(b)
        b = [v * a[0] / b[0] for v in b]        # normalize: b[:d1] == a
        stage_res, _ = _commutation(a, b)
        flag(stage_res)
        step = {"c1": d1, "c2": d2, "residual": float(stage_res)}
        if stage_res > tol:
            trace.append({**step, "branch": "reduction-failed"})
            return done(AMBIGUOUS, residual, trace=trace,
                        note="reduced pair no longer commutes within tolerance")
        if d1 == d2:
            trace.append({**step, "branch": "equal-dimensions"})
            base = common_power_base(c1, c2)
            if base is None:
                raise AssertionError("reduction reached equal dimensions without a common base")
            p, k1, k2 = base
            return done(COMMON_BASE, residual, p=p, k1=k1, k2=k2, trace=trace)
        d = math.gcd(d1, d2)
        if d < d1:
            a0 = _a0(b, d1, d2)
            step.update(branch="gcd", gcd=d, a0=float(a0))
            trace.append(step)
            a0_dev = abs(a0 - 1)
            if not exact:
                flag(a0_dev)
            # a commuting stage with gcd < c1 forces a_0 = 1 and constant vectors
            return done(AMBIGUOUS, residual, trace=trace,
                        note="commuting stage with gcd < c1 but non-constant inputs; "
                             f"|a0 - 1| = {float(a0_dev):.3g}")
        k = d2 // d1
        trace.append({**step, "branch": "divisible", "reduced": [d1, k]})
        b = b[:k]
    raise AssertionError("reduction depth exceeded")
