"""Command-line driver: ``cascadelab <subcommand> --config run.toml --out DIR``.

Exit status is 0 on success, 1 when a check returns an inconsistent (or
non-commuting) verdict and 2 on input errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import re
import sys
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import analysis, generators, numbertheory
from ._rng import replicate_stream
from .cascade import EnsembleHandle, check_cells, write_cells_csv
from .errors import CascadeError

EXIT_OK, EXIT_INCONSISTENT, EXIT_INPUT = 0, 1, 2

GENERATOR_KEYS = {
    "deterministic": (),
    "discrete": ("atoms", "probs"),
    "lognormal": ("sigma2",),
    "logpoisson": ("lam", "beta"),
    "dirichlet": ("concentration",),
    "onehot": (),
}
TOP_KEYS = {"n", "replicates", "seed", "level_range", "rho", "tolerance", "threads",
            "dump_levels", "moment_samples", "vector", "x", "y",
            "generator", "generator2", "q_grid"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    generator: generators.GeneratorSpec | None = None
    generator2: generators.GeneratorSpec | None = None
    n: int = 10
    replicates: int = 100
    seed: int | None = None
    q_grid: list = field(default_factory=lambda: [0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0])
    level_range: tuple | None = None
    rho: list = field(default_factory=lambda: [2.0])
    tolerance: float = 1e-12
    threads: int = 1
    dump_levels: list | None = None
    moment_samples: int = 100_000
    vector: str = "moment"
    x: list | None = None
    y: list | None = None

    def need_generator(self):
        if self.generator is None:
            raise ConfigError("a [generator] section is required")
        return self.generator

    def need_pair(self):
        if self.generator is None or self.generator2 is None:
            raise ConfigError("[generator] and [generator2] sections are both required")
        return self.generator, self.generator2

    def need_seed(self):
        if self.seed is None:
            raise ConfigError("'seed' is required: there is no default seed")
        return self.seed

    def ensemble(self):
        gen = self.need_generator()
        return EnsembleHandle(gen, self.n, self.replicates, self.need_seed(), self.threads)


def _line_of(text, key, section=None):
    """1-based line of ``key =`` inside ``[section]`` (or top level), if found."""
    current = None
    for no, line in enumerate(text.splitlines(), 1):
        s = line.strip()
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            current = m.group(1).strip()
            continue
        if current == section and re.match(rf"{re.escape(key)}\s*=", s):
            return no
    return None


def _where(text, key, section=None):
    line = _line_of(text, key, section)
    loc = f"[{section}] {key}" if section else key
    return f"{loc} (line {line})" if line else loc


def _grid(spec):
    start, stop, step = (float(spec[k]) for k in ("start", "stop", "step"))
    if not step > 0:
        raise ConfigError("q_grid step must be > 0")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    if count < 1:
        raise ConfigError("q_grid is empty")
    return [round(start + i * step, 12) for i in range(count)]


def _build_generator(sec, name, text, base=None):
    sec = dict(sec)
    power = sec.pop("power", 1)
    family = sec.pop("family", None)
    if family is None:
        if base is None or name != "generator2":
            raise ConfigError(f"{_where(text, 'family', name)}: missing family")
        if sec:
            raise ConfigError(f"[{name}] without family accepts only 'power'")
        gen = base
    else:
        if family not in GENERATOR_KEYS:
            raise ConfigError(f"{_where(text, 'family', name)}: unknown family {family!r}; "
                              f"expected one of {sorted(GENERATOR_KEYS)}")
        c = sec.pop("c", None)
        if c is None:
            raise ConfigError(f"[{name}]: missing c")
        allowed = GENERATOR_KEYS[family]
        for key in sec:
            if key not in allowed:
                raise ConfigError(f"{_where(text, key, name)}: unexpected key for {family}")
        missing = [k for k in allowed if k not in sec]
        if missing:
            raise ConfigError(f"[{name}]: {family} needs {', '.join(missing)}")
        try:
            gen = {
                "deterministic": lambda: generators.deterministic(c),
                "discrete": lambda: generators.discrete_iid(c, sec["atoms"], sec["probs"]),
                "lognormal": lambda: generators.lognormal(c, sec["sigma2"]),
                "logpoisson": lambda: generators.log_poisson(c, sec["lam"], sec["beta"]),
                "dirichlet": lambda: generators.dirichlet(c, sec["concentration"]),
                "onehot": lambda: generators.one_hot(c),
            }[family]()
        except (TypeError, ValueError) as exc:
            named = [k for k in (*allowed, "c") if re.search(rf"\b{k}\b", str(exc))]
            key = named[0] if named else "family"
            raise ConfigError(f"{_where(text, key, name)}: {exc}") from exc
    if not isinstance(power, int) or power < 1:
        raise ConfigError(f"{_where(text, 'power', name)}: power must be an integer >= 1")
    return generators.tensor_power(gen, power)


def parse_config(text) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    for key in raw:
        if key not in TOP_KEYS:
            raise ConfigError(f"{_where(text, key)}: unknown key")
    cfg = RunConfig()
    if "generator" in raw:
        cfg.generator = _build_generator(raw["generator"], "generator", text)
    if "generator2" in raw:
        cfg.generator2 = _build_generator(raw["generator2"], "generator2", text, cfg.generator)

    def get(key, conv, check, message):
        if key not in raw:
            return getattr(cfg, key)
        try:
            value = conv(raw[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{_where(text, key)}: {exc}") from exc
        if not check(value):
            raise ConfigError(f"{_where(text, key)}: {message}")
        return value

    def as_int(v):
        if isinstance(v, bool) or not isinstance(v, int):
            raise TypeError(f"expected an integer, got {v!r}")
        return v

    cfg.n = get("n", as_int, lambda v: v >= 0, "n must be >= 0")
    cfg.replicates = get("replicates", as_int, lambda v: v >= 1, "replicates must be >= 1")
    cfg.seed = get("seed", as_int, lambda v: 0 <= v < 2 ** 64, "seed must be a 64-bit unsigned integer")
    cfg.threads = get("threads", as_int, lambda v: v >= 1, "threads must be >= 1")
    cfg.moment_samples = get("moment_samples", as_int, lambda v: v >= 2, "moment_samples must be >= 2")
    cfg.tolerance = get("tolerance", float, lambda v: v >= 0, "tolerance must be >= 0")
    cfg.rho = get("rho", lambda v: [float(t) for t in (v if isinstance(v, list) else [v])],
                  lambda v: len(v) > 0 and all(t > 0 for t in v), "rho values must be > 0")
    cfg.level_range = get("level_range", lambda v: tuple(as_int(t) for t in v),
                          lambda v: len(v) == 2 and 0 <= v[0] < v[1], "level_range must be [j_min, j_max] with j_min < j_max")
    cfg.dump_levels = get("dump_levels", lambda v: [as_int(t) for t in v],
                          lambda v: len(v) > 0 and all(t >= 0 for t in v), "dump_levels must be non-negative")
    cfg.vector = get("vector", str, lambda v: v in ("mean", "moment"), "vector must be 'mean' or 'moment'")
    for key in ("x", "y"):
        setattr(cfg, key, get(key, lambda v: list(v), lambda v: len(v) >= 2, f"{key} needs at least 2 entries"))
    if "q_grid" in raw:
        try:
            cfg.q_grid = _grid(raw["q_grid"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{_where(text, 'start', 'q_grid')}: q_grid needs numeric start, stop, step ({exc})") from exc
    if cfg.generator is not None:
        check_cells(cfg.generator.c, cfg.n)
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text)


# ------------------------------------------------------------ commands


def _fmt(x):
    return analysis._fmt(x)


def _out(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _num(x):
    x = float(x) + 0.0
    return "inf" if x == math.inf else "-inf" if x == -math.inf else f"{x:.12g}"


def cmd_gen_info(cfg, args):
    gen = cfg.need_generator()
    crit = generators.critical_exponents(gen)
    print(f"generator: {json.dumps(gen.describe(), sort_keys=True)}")
    print("q\ttau_H(q)")
    for q in cfg.q_grid:
        try:
            print(f"{_num(q)}\t{_num(generators.tau_heuristic(gen, q))}")
        except ValueError:
            print(f"{_num(q)}\tdivergent")
    print(f"q_minus = {_num(crit.q_minus)}")
    print(f"q_plus = {_num(crit.q_plus)}")
    print(f"nondegenerate = {generators.nondegenerate(gen)}")
    try:
        print(f"m2 = {_num(analysis.total_mass_second_moment(gen))}")
    except ValueError:
        print("m2 = divergent")
    v_a = generators.cross_moment(gen, 0, 0) / generators.component_mean(gen, 0) ** 2
    print(f"V_a = {_num(v_a)}")
    return EXIT_OK


def cmd_simulate(cfg, args):
    ens = cfg.ensemble()
    levels = cfg.dump_levels
    path = _out(args, "cells.csv")
    write_cells_csv(path, ens, levels)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_tau(cfg, args):
    ens = cfg.ensemble()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        est = analysis.estimate_tau(ens, cfg.q_grid, cfg.level_range)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    path = _out(args, "tau.csv")
    analysis.write_tau_csv(path, est, ens.gen)
    print(f"wrote {path}; max regression residual {float(np.max(est.residual_max)):.3g}")
    return EXIT_OK


MOMENT_COLUMNS = ("quantity", "rho", "index", "empirical", "stderr", "closed_form")


def cmd_moments(cfg, args):
    gen = cfg.need_generator()
    ens = cfg.ensemble()
    rows = []
    sample_stream = replicate_stream(cfg.need_seed(), cfg.replicates)  # disjoint from the ensemble
    for rho in cfg.rho:
        mean, se = analysis.empirical_weight_moments(gen, rho, cfg.moment_samples, sample_stream)
        for a in range(gen.c):
            closed = generators.component_moment(gen, a, rho)
            if math.isfinite(closed):
                rows.append(("weight", rho, a, mean[a], se[a], closed))
    masses = ens.total_masses()
    for rho, closed in ((1.0, 1.0), (2.0, analysis.total_mass_second_moment(gen, cfg.n))):
        vals = masses ** rho
        se = vals.std(ddof=1) / math.sqrt(vals.size) if vals.size > 1 else 0.0
        rows.append(("total_mass", rho, 0, vals.mean(), se, closed))
    if cfg.n >= 1:
        mean, se = analysis.adjacent_cell_moments(ens, 1)
        closed = analysis.adjacent_moments_closed(gen)
        for q in range(gen.c - 1):
            rows.append(("adjacent_cells", 2.0, q, mean[q], se[q], closed[q]))
    path = _out(args, "moments.csv")
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(MOMENT_COLUMNS)
        for quantity, rho, idx, emp, err, closed in rows:
            out.writerow((quantity, _fmt(rho), idx, _fmt(emp), _fmt(err), _fmt(closed)))
    print(f"wrote {path}")
    return EXIT_OK


def _parse_vector(text):
    try:
        return [Fraction(t.strip()) for t in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"cannot parse vector {text!r}: {exc}") from exc


def _json_number(v):
    if isinstance(v, Fraction):
        return str(v) if v.denominator != 1 else v.numerator
    return float(v)


def cmd_commute(cfg, args):
    x = _parse_vector(args.x) if args.x else cfg.x
    y = _parse_vector(args.y) if args.y else cfg.y
    if (x is None) != (y is None):
        raise ConfigError("literal vectors need both x and y")
    if x is not None:
        source = "literal"
    else:
        g1, g2 = cfg.need_pair()
        if cfg.vector == "mean":
            source = "component_mean"
            x = [generators.component_mean(g1, a) for a in range(g1.c)]
            y = [generators.component_mean(g2, b) for b in range(g2.c)]
        else:
            source = f"component_moment(rho={cfg.rho[0]:g})"
            x = [generators.component_moment(g1, a, cfg.rho[0]) for a in range(g1.c)]
            y = [generators.component_moment(g2, b, cfg.rho[0]) for b in range(g2.c)]
    ok, residual = numbertheory.commutes(x, y, cfg.tolerance)
    cert = numbertheory.certify_commuting_pair(x, y, cfg.tolerance)
    payload = {
        "source": source,
        "x": [_json_number(v) for v in x],
        "y": [_json_number(v) for v in y],
        "commutes": ok,
        "residual": residual,
        "certificate": cert.to_dict(),
    }
    path = _out(args, "certificate.json")
    _write_json(path, payload)
    detail = f" p={cert.p} k1={cert.k1} k2={cert.k2}" if cert.verdict == numbertheory.COMMON_BASE else ""
    flag = " (ambiguous)" if cert.ambiguous else ""
    print(f"{cert.verdict}{detail}{flag}; residual {residual:.3g}; wrote {path}")
    return EXIT_OK if cert.commuting and not cert.ambiguous else EXIT_INCONSISTENT


def _write_consistency(args, check, reports, pair):
    verdict = "consistent" if all(r.consistent for r in reports) else "inconsistent"
    payload = {
        "check": check,
        "verdict": verdict,
        "generators": [g.describe() for g in pair],
        "reports": [r.to_dict() for r in reports],
    }
    path = _out(args, "consistency.json")
    _write_json(path, payload)
    print(f"{check}: {verdict}; wrote {path}")
    return EXIT_OK if verdict == "consistent" else EXIT_INCONSISTENT


def cmd_xy_check(cfg, args):
    pair = cfg.need_pair()
    return _write_consistency(args, "xy", [analysis.second_moment_xy_check(*pair, cfg.tolerance)], pair)


def cmd_lemma2(cfg, args):
    pair = cfg.need_pair()
    reports = [analysis.lemma2_moment_check(*pair, rho, cfg.tolerance) for rho in cfg.rho]
    return _write_consistency(args, "lemma2", reports, pair)


def cmd_identify_base(cfg, args):
    c1 = args.c1 if args.c1 is not None else (cfg.generator.c if cfg.generator else None)
    c2 = args.c2 if args.c2 is not None else (cfg.generator2.c if cfg.generator2 else None)
    if c1 is None:
        raise ConfigError("identify-base needs --c1 (or a [generator] section)")
    for c in (c1, c2):
        if c is not None and c < 2:
            raise ConfigError("branching parameters must be >= 2")
    print(f"minimal_base({c1}) = {numbertheory.minimal_base(c1)}")
    if c2 is not None:
        print(f"minimal_base({c2}) = {numbertheory.minimal_base(c2)}")
        base = numbertheory.common_power_base(c1, c2)
        if base is None:
            print(f"common_power_base({c1}, {c2}) = none")
        else:
            print(f"common_power_base({c1}, {c2}): p={base[0]} k1={base[1]} k2={base[2]}")
    return EXIT_OK


COMMANDS = {
    "gen-info": (cmd_gen_info, "print tau_H table, q_-/q_+, nondegeneracy, m2 and V_a"),
    "simulate": (cmd_simulate, "write the cell-dump CSV (cells.csv)"),
    "tau": (cmd_tau, "estimate tau(q) from an ensemble (tau.csv)"),
    "moments": (cmd_moments, "empirical vs closed-form moments (moments.csv)"),
    "commute": (cmd_commute, "tensor-commutation certificate (certificate.json)"),
    "xy-check": (cmd_xy_check, "second-moment X/Y consistency report (consistency.json)"),
    "lemma2": (cmd_lemma2, "moment-relation consistency report (consistency.json)"),
    "identify-base": (cmd_identify_base, "minimal and common power bases"),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="cascadelab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--out", default=".", help="output directory (default: .)")
        p.add_argument("--threads", type=int, help="worker threads for replicate simulation")
        if name == "commute":
            p.add_argument("--x", help="literal vector, comma separated (ints/fractions are exact)")
            p.add_argument("--y", help="literal vector, comma separated")
        if name == "identify-base":
            p.add_argument("--c1", type=int)
            p.add_argument("--c2", type=int)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            cfg.threads = args.threads
        return COMMANDS[args.command][0](cfg, args)
    except (CascadeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
