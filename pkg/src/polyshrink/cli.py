"""Command-line entry point: simulate | analyze | profile | oracle-check.

Every command writes ``manifest.json`` into its output directory before the
heavy work starts and rewrites it with the end time and output list when done.
"""

import argparse
import csv
import datetime
import json
import math
import os
import sys
from dataclasses import asdict, replace

import numpy as np

from . import __version__
from .distributions import standard_normal_quantile
from .errors import NoThresholdError, NumericError, ParameterError
from .experiments import (METRICS, PosteriorAccumulator, parse_global, parse_prior,
                          parse_prior_spec, parse_signal, preset, run_grid, select_by_shrinkage)
from .oracle import shrinkage_profile
from .priors import GlobalShrinkage, PriorKind, TauSchedule, resolve_tau, threshold_value
from .sampler import ChainConfig, inject_fault, iter_chain

EXIT_OK = 0
EXIT_FAILED_CHECK = 1
EXIT_USAGE = 2


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


# ---------------------------------------------------------------------------
# small I/O helpers


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return None if not math.isfinite(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def _write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_json_safe(obj), fh, indent=2)
        fh.write("\n")


def _now():
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


class Manifest:
    def __init__(self, out_dir, command, config, seed):
        self.path = os.path.join(out_dir, "manifest.json")
        self.data = {"command": command, "config": config, "seed": seed, "version": __version__,
                     "started_at": _now(), "finished_at": None, "outputs": []}
        self.write()

    def write(self):
        _write_json(self.path, self.data)

    def finish(self, outputs, status, **extra):
        self.data.update(extra)
        self.data["outputs"] = [os.path.abspath(p) for p in outputs]
        self.data["status"] = status
        self.data["finished_at"] = _now()
        self.write()


def _log(args, msg):
    if not args.quiet:
        print(msg, file=sys.stderr)


# ---------------------------------------------------------------------------
# simulation config files

_INT_KEYS = {"replications", "seed", "n_iter", "burn_in", "thin", "grid_points"}
_LIST_KEYS = {"n_values", "s_values", "t_values", "priors"}
_KNOWN_KEYS = _INT_KEYS | _LIST_KEYS | {"preset", "signal", "init", "radius_factor"}
_ALIASES = {"n": "n_values", "s": "s_values", "t": "t_values", "master_seed": "seed"}


def read_config(path):
    """Parse ``key = value`` lines; returns {key: (value, line_number)}."""
    entries = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError("expected 'key = value'", lineno)
            key, value = (p.strip() for p in line.split("=", 1))
            key = _ALIASES.get(key.lower(), key.lower())
            if key not in _KNOWN_KEYS:
                raise ConfigError(f"unknown key {key!r}", lineno)
            if not value:
                raise ConfigError(f"empty value for {key!r}", lineno)
            if key in entries:
                raise ConfigError(f"duplicate key {key!r}", lineno)
            entries[key] = (value, lineno)
    return entries


def _split(value):
    return [v.strip() for v in value.split(",") if v.strip()]


def build_config(entries):
    """Turn parsed config entries into an ExperimentConfig (``preset`` supplies defaults)."""
    def get(key, conv, default=None):
        if key not in entries:
            return default
        value, lineno = entries[key]
        try:
            return conv(value)
        except (ValueError, ParameterError) as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno) from exc

    base = get("preset", preset, None) or preset("sim1")
    ints = lambda v: tuple(int(x) for x in _split(v))  # noqa: E731
    over = {}
    n_values = get("n_values", ints)
    if n_values:
        over["n_values"] = n_values
    s_values = get("s_values", ints)
    if s_values:
        over["s_values"] = s_values
    t_values = get("t_values", lambda v: tuple(parse_signal(x) for x in _split(v)))
    signal = get("signal", lambda v: (parse_signal(v),))
    if t_values and signal:
        raise ConfigError("give either t_values or signal, not both", entries["signal"][1])
    if t_values or signal:
        over["signals"] = t_values or signal
    priors = get("priors", lambda v: tuple(parse_prior_spec(x) for x in _split(v)))
    if priors:
        over["prior_specs"] = priors
    for key, field_name in (("replications", "replications"), ("seed", "master_seed")):
        v = get(key, int)
        if v is not None:
            over[field_name] = v
    rf = get("radius_factor", float)
    if rf is not None:
        over["radius_factor"] = rf
    chain_over = {}
    for key in ("n_iter", "burn_in", "thin", "grid_points"):
        v = get(key, int)
        if v is not None:
            chain_over[key] = v
    if "init" in entries:
        chain_over["init"] = entries["init"][0]
    try:
        if chain_over:
            over["chain"] = replace(base.chain, **chain_over)
        return replace(base, **over)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# simulate


def _results_rows(grid):
    for cell in grid.cells:
        for metric in list(METRICS) + ["l2_sq_minimax", "l1_minimax"]:
            mean, se = cell.stats[metric]
            yield [cell.n, cell.s, cell.prior_label, cell.t, metric, mean, se, cell.n_fail]


def cmd_simulate(args):
    try:
        if args.config_file:
            if not os.path.isfile(args.config_file):
                raise ConfigError(f"config file not found: {args.config_file}")
            entries = read_config(args.config_file)
            if args.preset:
                entries.setdefault("preset", (args.preset, None))
            config = build_config(entries)
        else:
            config = preset(args.preset or "sim1")
        over = {}
        if args.n:
            over["n_values"] = tuple(int(x) for x in _split(args.n))
            over["s_values"] = None
        if args.t:
            over["signals"] = tuple(parse_signal(x) for x in _split(args.t))
        if args.priors:
            over["prior_specs"] = tuple(parse_prior_spec(x) for x in args.priors.split(","))
        if args.replications is not None:
            over["replications"] = args.replications
        if args.seed is not None:
            over["master_seed"] = args.seed
        chain_over = {k: v for k, v in (("n_iter", args.n_iter), ("burn_in", args.burn_in)) if v is not None}
        if chain_over:
            over["chain"] = replace(config.chain, **chain_over)
        config = replace(config, **over)
    except (ConfigError, ParameterError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    os.makedirs(args.out, exist_ok=True)
    manifest = Manifest(args.out, "simulate", config.to_dict(), config.master_seed)
    total_chains = len(config.n_values) * len(config.signals) * len(config.prior_specs) * config.replications
    _log(args, f"running {total_chains} chains")
    step = max(1, total_chains // 10)

    def progress(done, total):
        if done % step == 0 or done == total:
            _log(args, f"  {done}/{total}")

    grid = run_grid(config, args.parallelism, progress=progress)
    csv_path = os.path.join(args.out, "results.csv")
    json_path = os.path.join(args.out, "results.json")
    _write_csv(csv_path, ["n", "s", "prior_label", "t", "metric", "mean", "se", "n_fail"], _results_rows(grid))
    _write_json(json_path, grid.to_dict())
    n_fail = sum(c.n_fail for c in grid.cells)
    manifest.finish([csv_path, json_path], "ok", failed_chains=n_fail,
                    unreliable_cells=[[c.n, c.prior_label, c.t] for c in grid.cells if c.unreliable])
    _log(args, f"wrote {csv_path} ({len(grid.cells)} cells, {n_fail} failed chains)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze


class InputError(ValueError):
    pass


def read_scores(path, kind, column=None, sign_column=None, id_column=None):
    """Read a comma-separated file with header; returns (ids, z-scores).

    ``kind`` is 'z' (values used as-is) or 'p' (two-sided p-values, mapped to
    z = Phi^-1(p/2)). An optional sign column multiplies the result.
    """
    column = column or kind
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise InputError("input file is empty") from None
        for name in filter(None, (column, sign_column, id_column)):
            if name not in header:
                raise InputError(f"column {name!r} not in header {header}")
        ci = header.index(column)
        si = header.index(sign_column) if sign_column else None
        ii = header.index(id_column) if id_column else None
        ids, values, signs = [], [], []
        bad = []
        for row_no, row in enumerate(reader, 1):
            if not any(cell.strip() for cell in row):
                continue
            try:
                v = float(row[ci])
                sgn = float(row[si]) if si is not None else 1.0
            except (ValueError, IndexError):
                raise InputError(f"row {row_no}: non-numeric value in {row!r}") from None
            if not math.isfinite(v):
                raise InputError(f"row {row_no}: non-finite value {row[ci]!r}")
            if kind == "p" and not 0.0 < v < 1.0:
                bad.append(f"row {row_no}: p-value {row[ci]!r} outside (0, 1)")
            ids.append(row[ii].strip() if ii is not None else str(row_no))
            values.append(v)
            signs.append(math.copysign(1.0, sgn) if sgn != 0 else 0.0)
    if bad:
        raise InputError("\n".join(bad))
    if not values:
        raise InputError("no data rows")
    x = np.asarray(values)
    z = standard_normal_quantile(x / 2.0) if kind == "p" else x
    return ids, z * np.asarray(signs)


def _analysis_shrinkage(prior, shrinkage_text, n, s):
    g = parse_global(shrinkage_text, prior)
    if isinstance(g, TauSchedule):
        if s is None:
            raise ParameterError("a tau schedule needs --s (number of signals)")
        return GlobalShrinkage.deterministic(resolve_tau(g, n, s))
    return g


def cmd_analyze(args):
    try:
        ids, z = read_scores(args.input_csv, args.col, args.column, args.sign_column, args.id_column)
        prior = parse_prior(args.prior)
        shrinkage = _analysis_shrinkage(prior, args.shrinkage, z.size, args.s)
        chain = ChainConfig(n_iter=args.n_iter, burn_in=args.burn_in, seed=args.seed or 0)
    except (InputError, ParameterError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    os.makedirs(args.out, exist_ok=True)
    config = {"input": os.path.abspath(args.input_csv), "col": args.col, "column": args.column or args.col,
              "sign_column": args.sign_column, "id_column": args.id_column, "prior": args.prior,
              "shrinkage": args.shrinkage, "s": args.s, "chain": asdict(chain)}
    manifest = Manifest(args.out, "analyze", config, chain.seed)
    _log(args, f"analyzing {z.size} coordinates")
    acc = PosteriorAccumulator()
    try:
        for _, state in iter_chain(z, prior, shrinkage, chain):
            acc.add(state.theta, state.tau)
    except (NumericError, ArithmeticError) as exc:
        manifest.finish([], "failed", error=str(exc))
        print(f"error: chain failed: {exc}", file=sys.stderr)
        return EXIT_FAILED_CHECK
    iv = acc.intervals()
    sel_shrink = select_by_shrinkage(iv.mean, z)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(z != 0, iv.mean / z, np.nan)
    path = os.path.join(args.out, "summary.csv")
    rows = zip(ids, z, iv.mean, iv.sd, iv.lower, iv.upper, ratio, sel_shrink, iv.selected)
    _write_csv(path, ["id", "y", "post_mean", "post_sd", "ci_lower", "ci_upper", "shrink_ratio",
                      "selected_shrink", "selected_interval"], rows)
    counts = {"selected_shrink": int(sel_shrink.sum()), "selected_interval": int(iv.selected.sum()),
              "n": int(z.size), "tau_mean": acc.tau_sum / acc.count}
    manifest.finish([path], "ok", selection=counts)
    _log(args, f"selected {counts['selected_shrink']} by shrinkage ratio, {counts['selected_interval']} by interval")
    return EXIT_OK


# ---------------------------------------------------------------------------
# profile


def parse_c_grid(text):
    """``lo:hi:step`` (inclusive) or a comma list."""
    text = text.strip()
    if ":" in text:
        lo, hi, step = (float(v) for v in text.split(":"))
        if step <= 0 or hi < lo:
            raise ParameterError("c grid needs lo <= hi and step > 0")
        k = int(math.floor((hi - lo) / step + 1e-9))
        return [lo + i * step for i in range(k + 1)]
    return [float(v) for v in _split(text)]


def cmd_profile(args):
    try:
        prior = _profile_prior(args.prior, args.alpha)
        g = parse_global(args.tau_rule, prior)
        ratios = [float(v) for v in _split(args.n_over_s)]
        c_grid = parse_c_grid(args.c_grid)
        if not c_grid or not ratios:
            raise ParameterError("c grid and n/s list must be non-empty")
        if any(c <= 0 for c in c_grid) or any(r <= 1 for r in ratios):
            raise ParameterError("c values must be positive and n/s values must exceed 1")
    except (ParameterError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    os.makedirs(args.out, exist_ok=True)
    config = {"prior": prior.label, "tau_rule": args.tau_rule, "n_over_s": ratios, "c_grid": c_grid}
    manifest = Manifest(args.out, "profile", config, args.seed)
    rows = []
    for ratio in ratios:
        # schedules depend on n and s only through n/s when s = 1
        tau = resolve_tau(g, ratio, 1.0) if isinstance(g, TauSchedule) else g.tau
        if tau is None or not tau > 0:
            print("error: profile needs a fixed or scheduled tau", file=sys.stderr)
            manifest.finish([], "failed")
            return EXIT_USAGE
        alpha = 2.0 if prior.kind is PriorKind.HORSESHOE else prior.alpha
        warning, threshold = "", None
        try:
            threshold = threshold_value(alpha, tau)
        except (NoThresholdError, ParameterError) as exc:
            warning = f"no threshold: {exc}"
        for c, y, coef in shrinkage_profile(prior, tau, ratio, c_grid):
            rows.append([ratio, tau, c, y, coef, threshold, warning])
    path = os.path.join(args.out, "profile.csv")
    _write_csv(path, ["n_over_s", "tau", "c", "y", "coefficient", "threshold", "warning"], rows)
    manifest.finish([path], "ok")
    _log(args, f"wrote {path}")
    return EXIT_OK


def _profile_prior(kind, alpha):
    if kind == "t":
        return parse_prior(f"t:{alpha}")
    return parse_prior(kind)


# ---------------------------------------------------------------------------
# oracle-check


def cmd_oracle_check(args):
    from .checks import LATTICE_MIN_PASS, run_checks

    os.makedirs(args.out, exist_ok=True)
    config = {"inject_fault": args.inject_fault, "lattice_min_pass": LATTICE_MIN_PASS}
    manifest = Manifest(args.out, "oracle-check", config, args.seed)
    _log(args, "running sampler checks")
    if args.inject_fault:
        with inject_fault(args.inject_fault):
            report = run_checks(args.seed)
    else:
        report = run_checks(args.seed)
    path = os.path.join(args.out, "report.csv")
    _write_csv(path, ["check", "case", "expected", "estimate", "se", "z", "tolerance_se", "passed"],
               ([r.check, r.case, r.expected, r.estimate, r.se, r.z, r.tolerance_se, r.passed]
                for r in report.rows))
    for name, ok in report.summary.items():
        _log(args, f"{name:10s} {'PASS' if ok else 'FAIL'}")
    manifest.finish([path], "ok" if report.passed else "failed", summary=report.summary)
    return EXIT_OK if report.passed else EXIT_FAILED_CHECK


# ---------------------------------------------------------------------------
# parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--parallelism", type=int, default=1, help="worker processes")
    common.add_argument("--quiet", action="store_true", help="suppress progress messages")

    parser = argparse.ArgumentParser(prog="polyshrink", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run a replicated simulation grid")
    p.add_argument("config_file", nargs="?", help="key = value config file")
    p.add_argument("--preset", choices=["sim1", "sim2", "varying", "inference"])
    p.add_argument("--replications", type=int)
    p.add_argument("--n", help="comma list of n values")
    p.add_argument("--t", help="comma list of signal strengths, or uniform:<lo>:<hi>")
    p.add_argument("--priors", help="comma list of prior specs, e.g. t:1.1/sparsity:sharp")
    p.add_argument("--n-iter", type=int)
    p.add_argument("--burn-in", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", parents=[common], help="posterior summaries for observed scores")
    p.add_argument("input_csv")
    p.add_argument("--col", choices=["p", "z"], default="z", help="input holds p-values or z-scores")
    p.add_argument("--column", help="name of the value column (default: same as --col)")
    p.add_argument("--sign-column", help="optional column whose sign is applied to z")
    p.add_argument("--id-column", help="optional identifier column")
    p.add_argument("--prior", default="t:1.1", help="t:<alpha> or hs")
    p.add_argument("--shrinkage", default="beta:sharp", help="tau specification, e.g. beta:11.5")
    p.add_argument("--s", type=float, help="number of signals, needed for tau schedules")
    p.add_argument("--n-iter", type=int, default=12000)
    p.add_argument("--burn-in", type=int, default=2000)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("profile", parents=[common], help="exact shrinkage profiles")
    p.add_argument("--prior", choices=["t", "hs"], default="t")
    p.add_argument("--alpha", type=float, default=1.1)
    p.add_argument("--tau-rule", default="sparsity:sharp", help="e.g. sparsity:11.5, fixed:1e-6, hs-oracle")
    p.add_argument("--n-over-s", default="100,1000,100000")
    p.add_argument("--c-grid", default="0.1:6:0.1", help="lo:hi:step or comma list")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("oracle-check", parents=[common], help="sampler-versus-exact checks")
    p.add_argument("--inject-fault", choices=["rate"], help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.parallelism < 1:
        parser.error("--parallelism must be positive")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
