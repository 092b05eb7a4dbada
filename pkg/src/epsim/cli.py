"""Command-line runner: ``epsim <subcommand> [options]``.

Exit status is 0 on success, 1 on configuration/input errors and 2 on
numerical failures.  CSV outputs start with a ``#`` line carrying the tool
version and a hash of the fully resolved configuration; the resolved
configuration itself is written next to every output file.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import os
import sys

import numpy as np

from . import __version__
from .dispersion import (
    Band,
    ConfigError,
    DEFAULT_BAND_EPSILON,
    eval_d2p,
    eval_d3p,
    eval_dp,
    eval_p,
    eval_q,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


# --------------------------------------------------------------------------
# config files and output helpers


def read_config(path) -> dict:
    """``key = value`` lines with ``#`` comments; returns raw strings."""
    out = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise ConfigError("cannot read config %s: %s" % (path, exc)) from None
    with fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError("%s:%d: expected 'key = value'" % (path, lineno))
            key = key.strip().replace("-", "_")
            if key in out:
                raise ConfigError("%s:%d: duplicate key %r" % (path, lineno, key))
            out[key] = value.strip()
    return out


def _resolved_text(cfg: dict) -> str:
    return "".join("%s = %s\n" % (k, cfg[k]) for k in sorted(cfg))


_PATH_KEYS = ("out", "out_dir", "histogram")


def config_hash(cfg: dict) -> str:
    """Hash of the resolved configuration; output locations do not enter it."""
    body = {k: v for k, v in cfg.items() if k not in _PATH_KEYS}
    return hashlib.sha256(_resolved_text(body).encode()).hexdigest()[:16]


def _header(cfg):
    return "# epsim %s config=%s\n" % (__version__, config_hash(cfg))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    return str(v)


def write_csv(path, columns, rows, cfg):
    """Write (or print when ``path`` is None/'-') a CSV with the provenance header."""
    buf = io.StringIO()
    buf.write(_header(cfg))
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    _emit(path, buf.getvalue(), cfg)


def write_report(path, lines, cfg):
    _emit(path, _header(cfg) + "".join(line + "\n" for line in lines), cfg)


def _emit(path, text, cfg):
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    with open(str(path) + ".cfg", "w", encoding="utf-8") as fh:
        fh.write(_header(cfg) + _resolved_text(cfg))


# --------------------------------------------------------------------------
# subcommands


def _cmd_dispersion_table(a, cfg):
    if not (0 < a.rmin < a.rmax):
        raise ConfigError("need 0 < rmin < rmax")
    if a.samples < 2:
        raise ConfigError("samples must be >= 2")
    r = np.geomspace(a.rmin, a.rmax, a.samples)
    cols = [r, eval_p(r), eval_q(r), eval_dp(r), eval_d2p(r), eval_d3p(r)]
    write_csv(a.out, ["r", "p", "q", "dp", "d2p", "d3p"], zip(*cols), cfg)


def _cmd_kernel(a, cfg):
    from .propagator import kernel_radial_full

    xs = np.linspace(a.xmin, a.xmax, a.points)
    res = kernel_radial_full(a.t, xs, Band(a.band), a.epsilon, a.sigma)
    rows = [(a.t, x, v.real, v.imag, e, res.tail_bound) for x, v, e in zip(xs, res.value, res.error)]
    write_csv(a.out, ["t", "x", "re", "im", "error", "tail_bound"], rows, cfg)


def _cmd_decay(a, cfg):
    from .fields import Grid3
    from .propagator import decay_scan

    times = np.geomspace(a.t0, a.t1, a.points)
    window = (a.fit_lo if a.fit_lo is not None else a.t0, a.fit_hi if a.fit_hi is not None else a.t1)
    grid = Grid3(a.n, a.box_len) if a.datum == "grid_field" else None
    tr = decay_scan(
        Band(a.band), a.norm, a.datum, times, epsilon=a.epsilon, sigma=a.sigma, grid=grid, window=window
    )
    write_csv(a.out, ["t", "value"], zip(tr.times, tr.values), cfg)
    print("fitted_exponent: %.10g" % tr.fitted_exponent)
    print("fit_window: %g %g" % tuple(tr.fit_window))


def _solver_config(a, cfg):
    from .solver import SolverConfig

    keys = {k: v for k, v in cfg.items() if k in _SOLVER_KEYS and v is not None}
    return SolverConfig.from_mapping(keys)


def _cmd_simulate(a, cfg):
    from .solver import DIAG_COLUMNS, RunAborted, run

    sc = _solver_config(a, cfg)
    os.makedirs(a.out_dir, exist_ok=True)
    snaps = a.out_dir if a.snapshots else None
    full = dict(cfg)
    full.update({k: str(v) for k, v in sc.as_dict().items()})
    path = os.path.join(a.out_dir, "diagnostics.csv")
    try:
        diag = run(sc, snapshot_dir=snaps)
    except RunAborted as exc:
        # keep what was computed; the exit code still reports the failure
        full["aborted"] = exc.diagnostics.partial
        write_csv(path, list(DIAG_COLUMNS), [["" if v is None else v for v in r] for r in exc.diagnostics.rows], full)
        raise
    write_csv(path, list(DIAG_COLUMNS), [["" if v is None else v for v in r] for r in diag.rows], full)
    mass = diag.column("mass")
    print("rows: %d" % len(diag.rows))
    print("mass_drift: %.3e" % float(np.max(np.abs(mass - mass[0]))))
    print("max_sup_rho: %.10g" % float(np.max(diag.column("sup_rho"))))
    print("max_poisson_residual: %.3e" % float(np.nanmax(diag.column("poisson_res"))))


def _cmd_norms(a, cfg):
    from .fields import RealField, read_snapshot
    from .norms import NormKind, NormSpec, norm
    from .solver import FluidState

    grid, t, rho, psi = read_snapshot(a.snapshot)
    specs = [NormSpec.parse(s) for s in a.norm] if a.norm else [NormSpec.L2(), NormSpec.Hs(1.0)]
    field_ = {"rho": rho, "psi": psi}[a.field]
    cols, vals = ["t"], [t]
    for text, spec in zip(a.norm or ["L2", "Hs(1)"], specs):
        if spec.kind is NormKind.ENERGY:
            v = norm(FluidState(RealField(grid, rho), RealField(grid, psi), t), spec)
        elif spec.kind is NormKind.XSNAP and spec.t == 0.0:
            v = norm(RealField(grid, field_), NormSpec.Xsnap(spec.k, t))
        else:
            v = norm(RealField(grid, field_), spec)
        cols.append(text.replace(",", ";"))
        vals.append(v)
    write_csv(a.out, cols, [vals], cfg)


def _cmd_phase_verify(a, cfg):
    from .multiplier import verify_phase_bound, verify_phi1_derivative_bounds

    rep = verify_phase_bound(a.samples, a.seed, (a.rmin, a.rmax))
    lines = rep.lines()
    if a.derivatives:
        lines += verify_phi1_derivative_bounds(a.derivative_samples, a.seed, (a.rmin, a.rmax)).lines()
    write_report(a.out, lines, cfg)
    if a.histogram:
        e = rep.hist_edges
        write_csv(a.histogram, ["log10_ratio_lo", "log10_ratio_hi", "count"], zip(e[:-1], e[1:], rep.hist_counts), cfg)


def _xi_samples(radii):
    d = np.array([0.6, 0.64, 0.48])  # generic unit direction
    return np.array([r * d for r in radii])


def _cmd_mult_norms(a, cfg):
    from .multiplier import KERNEL_CONVENTION, slice_norm_estimate

    rep = slice_norm_estimate(
        a.lam, a.s, _xi_samples(a.xi_radii), eta_grid=(a.n, a.box_len), weight=a.weight
    )
    lines = rep.lines()
    for role, vals in rep.per_scale.items():
        lines.append("per_scale_%s: %s" % (role, " ".join("%.10g" % v for v in vals)))
    lines.append("kernel_convention: %s" % KERNEL_CONVENTION)
    write_report(a.out, lines, cfg)


def _cmd_bilinear_check(a, cfg):
    from .multiplier import bilinear_check

    rep = bilinear_check(a.pairs, a.seed, a.n, a.box_len, a.lam, a.s)
    write_report(a.out, rep.lines(), cfg)


_SOLVER_KEYS = (
    "n", "box_len", "dt", "t_end", "poisson_tol", "poisson_max_iter", "mode", "integrator",
    "snapshot_every", "k_norm", "amplitude", "sigma", "seed",
)


def build_parser():
    p = _Parser(prog="epsim", description="Euler-Poisson dispersive-decay experiments.")
    p.add_argument("--version", action="version", version="epsim " + __version__)
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_,
                            formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        sp.set_defaults(func=fn)
        sp.add_argument("--config", help="key = value file; keys are the long option names")
        sp.add_argument("--out", default=None, help="output file ('-' or omitted: stdout)")
        return sp

    sp = add("dispersion-table", _cmd_dispersion_table, "tabulate q, p and p', p'', p''' on a log grid")
    sp.add_argument("--rmin", type=float, default=0.01)
    sp.add_argument("--rmax", type=float, default=100.0)
    sp.add_argument("--samples", type=int, default=1000)

    def band_opts(sp):
        sp.add_argument("--band", choices=[b.value for b in Band], default="crit")
        sp.add_argument("--epsilon", type=float, default=DEFAULT_BAND_EPSILON, help="band half-width")
        sp.add_argument("--sigma", type=float, default=None, help="Gaussian datum width (none: point mass)")

    sp = add("kernel", _cmd_kernel, "radial kernel of the band-limited half-wave group")
    band_opts(sp)
    sp.add_argument("--t", type=float, default=100.0)
    sp.add_argument("--xmin", type=float, default=0.0)
    sp.add_argument("--xmax", type=float, default=200.0)
    sp.add_argument("--points", type=int, default=201)

    sp = add("decay", _cmd_decay, "norm decay of the propagated datum with a fitted exponent")
    band_opts(sp)
    sp.add_argument("--norm", default="inf", help="inf, l10 or l2")
    sp.add_argument("--datum", choices=["radial_gaussian", "grid_field"], default="radial_gaussian")
    sp.add_argument("--t0", type=float, default=10.0)
    sp.add_argument("--t1", type=float, default=3000.0)
    sp.add_argument("--points", type=int, default=24)
    sp.add_argument("--fit-lo", type=float, default=None, help="fit window start (default t0)")
    sp.add_argument("--fit-hi", type=float, default=None, help="fit window end (default t1)")
    sp.add_argument("--n", type=int, default=96, help="grid size for grid_field")
    sp.add_argument("--box-len", type=float, default=128.0)

    sp = add("simulate", _cmd_simulate, "nonlinear run from Gaussian data, writes diagnostics.csv")
    sp.add_argument("--out-dir", default="epsim_run")
    sp.add_argument("--snapshots", action="store_true", help="also write binary snapshots")
    from .solver import SolverConfig

    defaults = SolverConfig().as_dict()
    for key in _SOLVER_KEYS:
        d = defaults[key]
        typ = type(d) if not isinstance(d, str) else str
        sp.add_argument("--" + key.replace("_", "-"), type=typ, default=d)

    sp = add("norms", _cmd_norms, "norms of one snapshot as a CSV row")
    sp.add_argument("--snapshot", required=True)
    sp.add_argument("--field", choices=["rho", "psi"], default="rho")
    sp.add_argument("--norm", action="append", help="e.g. L2, Hs(1.5), Wkp(2,10), Xsnap(5); repeatable")

    sp = add("phase-verify", _cmd_phase_verify, "sampled phase lower bound (and derivative bounds)")
    sp.add_argument("--samples", type=int, default=10 ** 6)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--rmin", type=float, default=1e-3)
    sp.add_argument("--rmax", type=float, default=1e3)
    sp.add_argument("--derivatives", action="store_true")
    sp.add_argument("--derivative-samples", type=int, default=10 ** 5)
    sp.add_argument("--histogram", default=None, help="CSV path for the log-ratio histogram")

    sp = add("mult-norms", _cmd_mult_norms, "dyadic Sobolev-slice norms of the weighted phase multiplier")
    sp.add_argument("--lam", type=float, default=1.25)
    sp.add_argument("--s", type=float, default=1.15)
    sp.add_argument("--n", type=int, default=64)
    sp.add_argument("--box-len", type=float, default=16.0)
    sp.add_argument("--weight", choices=["eta", "xi_minus_eta"], default=None)
    sp.add_argument("--xi-radii", type=float, nargs="+", default=[0.25, 0.5, 1.0, 2.0, 4.0])

    sp = add("bilinear-check", _cmd_bilinear_check, "measured bilinear-estimate ratios over random pairs")
    sp.add_argument("--pairs", type=int, default=50)
    sp.add_argument("--seed", type=int, default=1)
    sp.add_argument("--n", type=int, default=16)
    sp.add_argument("--box-len", type=float, default=16.0)
    sp.add_argument("--lam", type=float, default=1.25)
    sp.add_argument("--s", type=float, default=1.2)
    return p, sub


def _apply_config(parser, sub, argv):
    """Parse, then fold in ``--config`` values as defaults so explicit flags win."""
    args = parser.parse_args(argv)
    if args.command is None:
        raise ConfigError("a subcommand is required (see --help)")
    if args.config:
        sp = sub.choices[args.command]
        actions = {a.dest: a for a in sp._actions if a.dest not in ("help", "config", "func")}
        values = read_config(args.config)
        new = {}
        for key, raw in values.items():
            act = actions.get(key)
            if act is None:
                raise ConfigError("unknown config key %r for %s" % (key, args.command))
            if act.nargs in ("+", "*"):
                new[key] = [act.type(v) for v in raw.replace(",", " ").split()]
            elif isinstance(act, argparse._StoreTrueAction):
                new[key] = raw.lower() in ("1", "true", "yes", "on")
            elif raw.lower() == "none" and act.default is None:
                new[key] = None
            else:
                try:
                    new[key] = act.type(raw) if act.type else raw
                except (TypeError, ValueError):
                    raise ConfigError("bad value %r for %s" % (raw, key)) from None
                if act.choices is not None and new[key] not in act.choices:
                    raise ConfigError("%s must be one of %s" % (key, ", ".join(map(str, act.choices))))
        sp.set_defaults(**new)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    parser, sub = build_parser()
    try:
        args = _apply_config(parser, sub, sys.argv[1:] if argv is None else list(argv))
        cfg = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
        cfg = {k: (" ".join(map(str, v)) if isinstance(v, list) else v) for k, v in cfg.items()}
        args.func(args, cfg)
    except ConfigError as exc:
        print("epsim: config error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except (ValueError, OSError) as exc:
        print("epsim: input error: %s" % exc, file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, FloatingPointError) as exc:
        print("epsim: numerical error (%s): %s" % (type(exc).__name__, exc), file=sys.stderr)
        return EXIT_NUMERIC
    except RuntimeError as exc:
        # RunAborted wraps the numerical failure together with partial diagnostics
        cause = exc.__cause__
        if isinstance(cause, ArithmeticError):
            print("epsim: numerical error (%s): %s" % (type(cause).__name__, exc), file=sys.stderr)
            return EXIT_NUMERIC
        raise
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
