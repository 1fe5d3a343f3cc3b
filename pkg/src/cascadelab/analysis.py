"""Scaling-exponent estimation and moment-consistency checks.

Empirical side: partition sums ``S_j(q) = sum_cells mu(cell)^q`` of simulated
ensembles, regressed over levels to estimate ``tau(q)``, plus Monte Carlo
moments of weights and cell masses.

Closed-form side: second moment of the total mass from the fixed-point
equation ``M = sum z_i M_i``, and the two consistency checks comparing a pair
of generators that are supposed to produce the same measure.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _rng
from ._backend import kernels
from .cascade import CascadeField, EnsembleHandle, coarsen_masses
from .errors import DegenerateRegressionError, DivergentMomentError, ZeroCellError
from .generators import (
    component_mean,
    component_moment,
    critical_exponents,
    cross_moment,
    star_moment,
    tau_heuristic,
    tensor_product,
    weights_from_keys,
)
from .numbertheory import common_power_base, commutes

CLOSED_FORM_TOL = 1e-12


class UnreliableExponentWarning(UserWarning):
    """q lies outside (q_-, q_+), where tau_H no longer describes the measure."""


class LocalPositivityWarning(UserWarning):
    """Generator has components that vanish with positive probability."""


# ----------------------------------------------------------------- tau(q)


def partition_function(field: CascadeField, q):
    m = field.masses
    if q < 0 and np.any(m == 0):
        raise ZeroCellError("negative q with zero-mass cells")
    if q == 1:
        return float(m.sum())
    pos = m[m > 0] if q > 0 else m
    return float(np.power(pos, q).sum())


def ensemble_partition_sums(ensemble: EnsembleHandle, levels, qs):
    """Per-replicate S_j(q), shape (R, len(levels), len(qs))."""
    levels = np.asarray(levels, dtype=np.int64)
    qs = np.asarray(qs, dtype=np.float64)

    def block(masses):
        if np.any(qs < 0) and np.any(masses == 0):
            raise ZeroCellError("negative q with zero-mass cells")
        return kernels.partition_sums(masses, ensemble.c, ensemble.n, levels, qs)

    return ensemble.per_replicate(block)


@dataclass(frozen=True)
class TauEstimate:
    q_grid: tuple
    tau_hat: np.ndarray
    stderr: np.ndarray
    level_range: tuple
    replicates: int
    residual_max: np.ndarray
    residual_rms: np.ndarray
    regression_stderr: np.ndarray


def default_level_range(n):
    """Upper half of the simulated levels."""
    return (n - n // 2, n)


def _slopes(levels, y):
    # least-squares slope of y (..., L) against levels
    x = levels - levels.mean()
    return (y * x).sum(axis=-1) / (x * x).sum()


def estimate_tau(ensemble: EnsembleHandle, q_grid, level_range=None) -> TauEstimate:
    """Fit tau(q) from <mu(cell)^q> ~ |cell|^(tau(q)+1) over the level range.

    Partition sums are averaged over replicates before taking logarithms;
    standard errors come from a leave-one-replicate-out jackknife.
    """
    gen = ensemble.gen
    qs = np.asarray([float(q) for q in q_grid])
    if qs.size == 0:
        raise ValueError("empty q grid")
    j_min, j_max = default_level_range(ensemble.n) if level_range is None else level_range
    if not 0 <= j_min <= j_max <= ensemble.n:
        raise ValueError(f"level range ({j_min}, {j_max}) outside [0, {ensemble.n}]")
    if j_max - j_min < 1:
        raise DegenerateRegressionError("need at least two levels to regress")
    if np.any(qs < 0):
        if not gen.locally_positive:
            raise DivergentMomentError("negative q rejected for generators with zero-mass components")
    crit = critical_exponents(gen)
    outside = qs[(qs < crit.q_minus) | (qs > crit.q_plus)]
    if outside.size:
        warnings.warn(f"q={outside.tolist()} outside ({crit.q_minus:.4g}, {crit.q_plus:.4g}); "
                      "estimates there are unreliable", UnreliableExponentWarning, stacklevel=2)

    levels = np.arange(j_min, j_max + 1)
    sums = ensemble_partition_sums(ensemble, levels, qs)          # (R, L, Q)
    r = sums.shape[0]
    total = sums.sum(axis=0)
    if np.any(~(total > 0)) or not np.all(np.isfinite(total)):
        raise DegenerateRegressionError("partition sums must be finite and positive")
    lc = math.log(ensemble.c)
    xl = levels.astype(float)

    def fit(mean_sums):
        # (..., L, Q) -> y (..., Q, L)
        y = np.log(np.moveaxis(mean_sums, -2, -1)) / lc - xl
        return y, -_slopes(xl, y) - 1.0

    y, tau = fit(total / r)
    slope = -(tau + 1.0)
    intercept = y.mean(axis=-1) - slope * xl.mean()
    resid = y - (intercept[:, None] + slope[:, None] * xl)
    res_max = np.abs(resid).max(axis=-1)
    res_rms = np.sqrt((resid ** 2).mean(axis=-1))
    dof = levels.size - 2
    if dof > 0:
        sxx = ((xl - xl.mean()) ** 2).sum()
        reg_se = np.sqrt((resid ** 2).sum(axis=-1) / dof / sxx)
    else:
        reg_se = np.zeros_like(tau)

    if r > 1:
        loo = (total[None] - sums) / (r - 1)
        if np.all(loo > 0):
            _, tau_k = fit(loo)
            stderr = np.sqrt((r - 1) / r * ((tau_k - tau_k.mean(axis=0)) ** 2).sum(axis=0))
        else:
            stderr = np.full_like(tau, np.nan)
    else:
        stderr = reg_se.copy()
    return TauEstimate(tuple(qs.tolist()), tau, stderr, (int(j_min), int(j_max)), r,
                       res_max, res_rms, reg_se)


TAU_COLUMNS = ("q", "tau_hat", "tau_heuristic", "stderr", "j_min", "j_max")


def write_tau_csv(path, estimate: TauEstimate, gen):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(TAU_COLUMNS)
        for i, q in enumerate(estimate.q_grid):
            out.writerow((_fmt(q), _fmt(estimate.tau_hat[i]), _fmt(tau_heuristic(gen, q)),
                          _fmt(estimate.stderr[i]), *estimate.level_range))


def _fmt(x):
    x = float(x) + 0.0        # no negative zero in artifacts
    if not math.isfinite(x):
        raise ValueError(f"refusing to write non-finite value {x}")
    return f"{x:.17g}"


# --------------------------------------------------------------- moments


def _second_moment_coefficients(gen):
    c = gen.c
    a = math.fsum(cross_moment(gen, i, i) for i in range(c))
    b = math.fsum(cross_moment(gen, i, j) for i in range(c) for j in range(c) if i != j)
    return a, b


def _second_moment_diverges(gen):
    a, b = _second_moment_coefficients(gen)
    if abs(b) <= CLOSED_FORM_TOL and abs(1.0 - a) <= CLOSED_FORM_TOL:
        return False                        # sum of weights is 1 a.s., so M = 1
    return a >= 1.0 - CLOSED_FORM_TOL


def total_mass_second_moment(gen, n=None):
    """E M^2 from M = sum w_i M_i:  m2 = B / (1 - A).

    A = sum_i E w_i^2 and B = sum_{i != j} E w_i w_j.  With ``n`` given,
    returns the level-n value A^n + B (1 - A^n) / (1 - A), which is finite
    for every generator.  A = 1 with B = 0 means the weights sum to one almost
    surely and E M^2 = 1.
    """
    a, b = _second_moment_coefficients(gen)
    if n is not None:
        if n < 0:
            raise ValueError("level must be >= 0")
        if abs(1.0 - a) < CLOSED_FORM_TOL:
            return 1.0 + n * b
        return a ** n + b * (1.0 - a ** n) / (1.0 - a)
    if _second_moment_diverges(gen):
        raise DivergentMomentError(f"sum of E w_i^2 is {a:.6g} >= 1; E M^2 is infinite")
    if abs(1.0 - a) <= CLOSED_FORM_TOL:
        return 1.0
    return b / (1.0 - a)


def _mean_and_se(values):
    n = values.shape[0]
    mean = values.mean(axis=0)
    se = values.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(mean)
    return mean, se


def empirical_weight_moments(gen, rho, sample_count, rng_stream):
    """Sample means and standard errors of w_alpha^rho, one per component."""
    if sample_count < 2:
        raise ValueError("sample_count must be >= 2")
    keys = kernels.mix_offsets(np.array([int(rng_stream) & _rng.MASK64], dtype=np.uint64),
                               sample_count, _rng.CELL_STEP)[0]
    w = weights_from_keys(gen, keys)
    return _mean_and_se(np.power(w, rho))


def total_mass_moments(ensemble: EnsembleHandle, rho):
    """Monte Carlo E M_n^rho and its standard error."""
    mean, se = _mean_and_se(np.power(ensemble.total_masses(), rho)[:, None])
    return float(mean[0]), float(se[0])


def cell_moments(ensemble: EnsembleHandle, level, rho):
    """Per-cell Monte Carlo E mu(cell)^rho at ``level`` (coarsened), with SEs."""
    if not 0 <= level <= ensemble.n:
        raise ValueError("level outside the simulated range")
    vals = ensemble.per_replicate(
        lambda m: np.power(coarsen_masses(m, ensemble.c, ensemble.n - level), rho))
    return _mean_and_se(vals)


def adjacent_cell_moments(ensemble: EnsembleHandle, level):
    """Monte Carlo E[mu(d_q) mu(d_{q+1})] for q = 0 .. c^level - 2, with SEs."""
    if not 0 <= level <= ensemble.n:
        raise ValueError("level outside the simulated range")

    def block(m):
        cells = coarsen_masses(m, ensemble.c, ensemble.n - level)
        return cells[:, :-1] * cells[:, 1:]

    return _mean_and_se(ensemble.per_replicate(block))


def adjacent_moments_closed(gen):
    """E w_q w_{q+1} for q = 0 .. c-2.

    Applied to a tensor power this is E[mu(d_q) mu(d_{q+1})] at the matching
    level, since the subtree masses are independent with mean 1.
    """
    return np.array([cross_moment(gen, q, q + 1) for q in range(gen.c - 1)])


def lebesgue_test(gen):
    """True iff every component has E w^2 = (E w)^2, i.e. constant weights 1/c."""
    if not gen.locally_positive:
        warnings.warn(f"{gen.family.value} generator is not locally positive",
                      LocalPositivityWarning, stacklevel=2)
    worst = max(abs(cross_moment(gen, a, a) / component_mean(gen, a) ** 2 - 1.0)
                for a in range(gen.c))
    return worst <= CLOSED_FORM_TOL


# -------------------------------------------------- consistency reports


@dataclass(frozen=True)
class MomentConsistencyReport:
    check: str
    rho: float
    c1: int
    c2: int
    tolerance: float
    moments1: list
    moments2: list
    commutation_residual: float | None = None
    constancy_residual1: float | None = None
    constancy_residual2: float | None = None
    constancy_required: bool | None = None
    eq19_residual: float | None = None
    eq19_symmetric_residual: float | None = None
    eq23_residual: float | None = None
    v_a: float | None = None
    v_b: float | None = None
    a: list = field(default_factory=list)
    b: list = field(default_factory=list)
    x: list = field(default_factory=list)
    y: list = field(default_factory=list)
    xy_residual: float | None = None
    compact_residual: float | None = None
    power_law_residual: float | None = None
    locally_positive: tuple = (True, True)
    rho_in_range: bool = True
    verdict: str = "consistent"

    @property
    def consistent(self):
        return self.verdict == "consistent"

    def to_dict(self):
        out = asdict(self)
        out["locally_positive"] = list(self.locally_positive)
        return _finite_or_none(out)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _finite_or_none(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _finite_or_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite_or_none(v) for v in obj]
    return obj


def _ordered(gen1, gen2):
    return (gen2, gen1) if gen1.c > gen2.c else (gen1, gen2)


def _max_abs(u, v):
    return float(np.max(np.abs(np.asarray(u, float) - np.asarray(v, float))))


def _q_plus(gen):
    return critical_exponents(gen).q_plus


def lemma2_moment_check(gen1, gen2, rho, tol=CLOSED_FORM_TOL) -> MomentConsistencyReport:
    """Moment relations forced on two generators of one locally positive measure.

    The vectors (E xi_a^rho) and (E eta_b^rho) must commute under the tensor
    product, and must be constant unless c1 and c2 are powers of a common
    integer; the normalized star moments must agree on the log_c scale.
    ``eq19_residual`` uses exponent 1/ln c2 on the eta side and
    ``eq19_symmetric_residual`` keeps 1/ln c1 on both sides.
    """
    if rho <= 0:
        raise ValueError("rho must be > 0")
    xi, eta = _ordered(gen1, gen2)
    x = [component_moment(xi, a, rho) for a in range(xi.c)]
    y = [component_moment(eta, b, rho) for b in range(eta.c)]
    if not all(math.isfinite(v) for v in x + y):
        raise DivergentMomentError(f"moments of order {rho} diverge")
    pos = all(v > 0 for v in x + y)
    comm = commutes(x, y, tol)[1] if pos else math.inf
    const1 = max(x) / min(x) - 1.0 if pos else math.inf
    const2 = max(y) / min(y) - 1.0 if pos else math.inf
    lc1, lc2 = math.log(xi.c), math.log(eta.c)
    r1 = x[0] / component_mean(xi, 0) ** rho
    r2 = y[0] / component_mean(eta, 0) ** rho
    eq19 = abs(r1 ** (1.0 / lc1) - r2 ** (1.0 / lc2))
    eq19_symmetric = abs(r1 ** (1.0 / lc1) - r2 ** (1.0 / lc1))
    eq23 = abs(math.log(star_moment(xi, rho)) / lc1 - math.log(star_moment(eta, rho)) / lc2)
    in_range = 1.0 < rho < min(_q_plus(xi), _q_plus(eta))
    # commuting vectors are forced to be constant only without a common base
    need_const = common_power_base(xi.c, eta.c) is None
    checked = [comm, eq19, eq23] + ([const1, const2] if need_const else [])
    ok = all(v <= tol for v in checked)
    return MomentConsistencyReport(
        check="lemma2", rho=float(rho), c1=xi.c, c2=eta.c, tolerance=tol,
        moments1=x, moments2=y, commutation_residual=comm,
        constancy_residual1=const1, constancy_residual2=const2, constancy_required=need_const,
        eq19_residual=eq19, eq19_symmetric_residual=eq19_symmetric, eq23_residual=eq23,
        locally_positive=(xi.locally_positive, eta.locally_positive),
        rho_in_range=in_range, verdict="consistent" if ok else "inconsistent")


def _compact_vectors(xi, eta):
    m1, m2 = component_mean(xi, 0), component_mean(eta, 0)
    a = [cross_moment(xi, i - 1, i) / m1 ** 2 for i in range(1, xi.c)]
    b = [cross_moment(eta, i - 1, i) / m2 ** 2 for i in range(1, eta.c)]
    v_a = cross_moment(xi, 0, 0) / m1 ** 2
    v_b = cross_moment(eta, 0, 0) / m2 ** 2
    # eta outer, xi inner
    x = [v_b * t for t in a]
    for bb in b:
        x += [bb] + [v_b * t for t in a]
    # xi outer, eta inner
    y = [v_a * t for t in b]
    for aa in a:
        y += [aa] + [v_a * t for t in b]
    return a, b, v_a, v_b, x, y


def second_moment_xy_check(gen1, gen2, tol=CLOSED_FORM_TOL) -> MomentConsistencyReport:
    """Compare E[mu(d_q) mu(d_{q+1})] on the c1*c2 partition under both
    two-level decompositions (xi then eta, eta then xi).

    The verdict uses the direct expansions only (max absolute difference).
    The compact vectors a, b, X, Y and V_a, V_b are normalized by squared
    component means.
    """
    xi, eta = _ordered(gen1, gen2)
    for g in (xi, eta):
        if _second_moment_diverges(g):
            raise DivergentMomentError("second moment of the total mass diverges")
    dim = xi.c * eta.c
    direct_xy = adjacent_moments_closed(tensor_product(xi, eta, max_dim=dim))
    direct_yx = adjacent_moments_closed(tensor_product(eta, xi, max_dim=dim))
    a, b, v_a, v_b, x, y = _compact_vectors(xi, eta)
    ratio = math.log(eta.c) / math.log(xi.c)
    xy = _max_abs(direct_xy, direct_yx)
    return MomentConsistencyReport(
        check="xy", rho=2.0, c1=xi.c, c2=eta.c, tolerance=tol,
        moments1=direct_xy.tolist(), moments2=direct_yx.tolist(),
        v_a=v_a, v_b=v_b, a=a, b=b, x=x, y=y,
        xy_residual=xy, compact_residual=_max_abs(x, y),
        power_law_residual=abs(v_a ** ratio - v_b),
        locally_positive=(xi.locally_positive, eta.locally_positive),
        rho_in_range=2.0 < min(_q_plus(xi), _q_plus(eta)),
        verdict="consistent" if xy <= tol else "inconsistent")


RESIDUAL_COLUMNS = ("rho", "residual_kind", "value")
_RESIDUAL_KINDS = ("commutation_residual", "constancy_residual1", "constancy_residual2",
                   "eq19_residual", "eq19_symmetric_residual", "eq23_residual",
                   "xy_residual", "compact_residual", "power_law_residual")


def write_residuals_csv(path, reports):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(RESIDUAL_COLUMNS)
        for rep in reports:
            for kind in _RESIDUAL_KINDS:
                value = getattr(rep, kind)
                if value is not None and math.isfinite(value):
                    out.writerow((_fmt(rep.rho), kind, _fmt(value)))
