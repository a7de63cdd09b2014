"""Command-line entry point: ``theory``, ``simulate``, ``analyze`` and ``verify``."""

from __future__ import annotations

import argparse
import math
import os
import secrets
import sys

import numpy as np

from . import mcsim
from .analysis import RESULT_COLUMNS, emit_table, pattern_row, read_records, tally_records
from .detector import ClickDistribution, DetectorConfig, bhattacharyya
from .errors import HeraldError, InvalidArgument
from .expop import gain_from_zeta
from .protocol import CONVENTIONS, HeraldPattern, LoopConfig, fidelity_target, sweep_fp, zeta_grid

THREADS_ENV = "HERALDLOOP_THREADS"
DEFAULTS = {"herald_bins": 4, "signal_bins": 8, "eta_prime": 0.36, "eta": 0.38, "eta_loop": 0.6}
ORACLE_COLUMNS = ("P_exact", "P_dev_sigma", "F_exact", "F_dev_sigma")


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(int(raw), 1)
    except ValueError:
        raise InvalidArgument(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise InvalidArgument(f"expected comma-separated numbers, got {text!r}") from None


def _config(args, zeta: float) -> LoopConfig:
    """Detector and loop settings from the flags; experimental values unless lossless."""
    eta_prime = 1.0 if args.lossless else DEFAULTS["eta_prime"]
    eta = 1.0 if args.lossless else DEFAULTS["eta"]
    eta_loop = 1.0 if args.lossless else DEFAULTS["eta_loop"]
    if args.eta_prime is not None:
        eta_prime = args.eta_prime
    if args.eta is not None:
        eta = args.eta
    if args.eta_loop is not None:
        effs = _floats(args.eta_loop)
        eta_loop = effs[0] if len(effs) == 1 else tuple(effs)
    return LoopConfig(
        gain_from_zeta(zeta),
        DetectorConfig(args.herald_bins, eta_prime),
        DetectorConfig(args.signal_bins, eta),
        eta_loop,
    )


def _zetas(args) -> list[float]:
    if args.zeta_grid:
        parts = _floats(args.zeta_grid.replace(":", ","))
        if len(parts) != 3:
            raise InvalidArgument("--zeta-grid takes start:stop:step")
        return [float(z) for z in zeta_grid(*parts)]
    if args.zeta is None:
        raise InvalidArgument("give --zeta or --zeta-grid")
    return [args.zeta]


def _custom_target(args, bins: int) -> ClickDistribution | None:
    if args.convention != "c":
        return None
    if not args.target_file:
        raise InvalidArgument("convention 'c' needs --target-file")
    probs = np.atleast_1d(np.loadtxt(args.target_file, delimiter=",", comments="#", ndmin=1).ravel())
    if probs.size != bins + 1:
        raise InvalidArgument(f"target file has {probs.size} entries, expected {bins + 1}")
    return ClickDistribution(probs)


def _out(args):
    return args.output if args.output else sys.stdout


def cmd_theory(args) -> int:
    zetas = _zetas(args)
    base = _config(args, zetas[0])
    custom = _custom_target(args, base.signal_det.bins)
    meta = {"command": "theory", "config": base.to_dict(), "zetas": zetas, "convention": args.convention}
    if args.n is not None:
        if args.pattern:
            raise InvalidArgument("--n and --pattern are mutually exclusive")
        dh = sweep_fp(base, HeraldPattern.dh(args.n), zetas, args.convention, custom, args.threads)
        fh = sweep_fp(base, HeraldPattern.fh(args.n), zetas, args.convention, custom, args.threads)
        rows = [
            {"zeta": d.zeta, "gamma": d.gamma, "P_DH": d.P, "P_FH": f.P, "F_DH": d.F, "F_FH": f.F}
            for d, f in zip(dh, fh)
        ]
        columns = ("zeta", "gamma", "P_DH", "P_FH", "F_DH", "F_FH")
        meta["n"] = args.n
    elif args.pattern:
        pat = HeraldPattern.parse(args.pattern)
        rows = [vars(r) for r in sweep_fp(base, pat, zetas, args.convention, custom, args.threads)]
        columns = ("zeta", "gamma", "P", "F")
        meta["pattern"] = str(pat)
    else:
        raise InvalidArgument("give --n or --pattern")
    del meta["config"]["zeta"]
    emit_table(rows, _out(args), args.format, columns, meta)
    return 0


def cmd_simulate(args) -> int:
    if args.shots < 1:
        raise InvalidArgument("--shots must be at least 1")
    if args.zeta is None:
        raise InvalidArgument("simulate needs --zeta")
    if not args.output:
        raise InvalidArgument("simulate needs -o")
    seed = args.seed if args.seed is not None else secrets.randbits(63)
    cfg = _config(args, args.zeta)
    mcsim.write_records(args.output, cfg, args.t, args.shots, seed, args.threads)
    if args.seed is None:
        print(f"seed {seed}", file=sys.stderr)
    return 0


def _parse_patterns(text: str) -> list[HeraldPattern]:
    pats = [HeraldPattern.parse(p) for p in text.split(";") if p.strip()]
    if not pats:
        raise InvalidArgument("--patterns is empty")
    return pats


def cmd_analyze(args) -> int:
    meta_in, blocks = read_records(args.records)
    cfg = LoopConfig.from_dict(meta_in["config"])
    passes = meta_in["passes"]
    patterns = _parse_patterns(args.patterns)
    for pat in patterns:
        pat.check(cfg.herald_det)
        if pat.t > passes:
            raise InvalidArgument(f"pattern {pat} has more passes than the records ({passes})")
    custom = _custom_target(args, cfg.signal_det.bins)
    tally = tally_records(blocks, passes=passes, signal_bins=cfg.signal_det.bins)
    rows, missing = [], []
    for pat in patterns:
        target = fidelity_target(pat.n, cfg.signal_det, args.convention, custom)
        row = pattern_row(pat, tally.condition(pat), target, args.matrix_size)
        if row["status"] != "ok":
            missing.append(str(pat))
            print(f"warning: {pat} has too few matching records ({tally.histogram(pat).total})", file=sys.stderr)
        if args.check_oracle:
            P_ref, _, clicks = mcsim.exact_chain(cfg, pat, passes=passes)
            row["P_exact"] = P_ref
            row["P_dev_sigma"] = (row["P"] - P_ref) / row["sigma_P"] if row["sigma_P"] > 0 else math.nan
            F_ref = bhattacharyya(clicks, target) if clicks is not None else math.nan
            row["F_exact"] = F_ref
            row["F_dev_sigma"] = (row["F"] - F_ref) / row["sigma_F"] if row["sigma_F"] > 0 else math.nan
        rows.append(row)
    columns = RESULT_COLUMNS + (ORACLE_COLUMNS if args.check_oracle else ())
    meta = {
        "command": "analyze",
        "source": meta_in,
        "records": tally.total,
        "patterns": [str(p) for p in patterns],
        "convention": args.convention,
        "matrix_size": args.matrix_size,
        "insufficient_data": missing,
    }
    emit_table(rows, _out(args), args.format, columns, meta)
    return 4 if len(missing) == len(rows) else 0


def cmd_verify(args) -> int:
    from .verify import run_checks

    only = {int(x) for x in args.only.split(",")} if args.only else None
    results = run_checks(quick=args.quick, only=only, fault=args.inject_gain_fault, report=print)
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        print(f"first failure: {failed[0].line()}", file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heraldloop", description="Heralded photon-number states from a PDC loop.")
    sub = parser.add_subparsers(dest="command", required=True)

    def physics(p):
        p.add_argument("--zeta", type=float, help="squeezing parameter |zeta|")
        p.add_argument("--lossless", action="store_true", help="unit efficiencies unless overridden")
        p.add_argument("--eta", type=float, help="signal detector efficiency (default 0.38)")
        p.add_argument("--eta-prime", type=float, help="herald detector efficiency (default 0.36)")
        p.add_argument("--eta-loop", help="loop efficiency, scalar or comma list per round trip (default 0.6)")
        p.add_argument("--herald-bins", type=int, default=DEFAULTS["herald_bins"])
        p.add_argument("--signal-bins", type=int, default=DEFAULTS["signal_bins"])

    def output(p):
        p.add_argument("-o", "--output", help="output file (default stdout)")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    def fidelity(p):
        p.add_argument("--convention", choices=CONVENTIONS, default="b",
                       help="fidelity target: a ideal |n>, b |n> through the signal detector, c --target-file")
        p.add_argument("--target-file", help="comma-separated click probabilities for convention c")

    def threads(p):
        p.add_argument("--threads", type=int, default=None, help=f"worker threads (default ${THREADS_ENV} or 1)")

    p = sub.add_parser("theory", help="success probability and fidelity sweeps")
    physics(p)
    p.add_argument("--zeta-grid", help="inclusive start:stop:step")
    p.add_argument("--n", type=int, help="compare direct and feedback heralding of n photons")
    p.add_argument("--pattern", help="single herald pattern such as (1,1)")
    fidelity(p)
    output(p)
    threads(p)
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("simulate", help="Monte Carlo click records")
    physics(p)
    p.add_argument("--t", type=int, default=2, help="passes per shot")
    p.add_argument("--shots", type=int, required=True)
    p.add_argument("--seed", type=int, help="64-bit seed; generated and recorded when omitted")
    p.add_argument("-o", "--output", help="record file")
    threads(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="estimate results from a record file")
    p.add_argument("records")
    p.add_argument("--patterns", required=True, help='semicolon-separated, e.g. "(2);(1,1);(2,0)"')
    p.add_argument("--check-oracle", action="store_true", help="append exact reference values and deviations")
    p.add_argument("--matrix-size", type=int, default=None)
    fidelity(p)
    output(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("verify", help="run the acceptance checks")
    p.add_argument("--quick", action="store_true", help="skip the 1e7-shot checks")
    p.add_argument("--only", help="comma-separated check numbers")
    p.add_argument("--inject-gain-fault", type=float, default=0.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "threads", 1) is None:
            args.threads = _default_threads()
        return args.func(args)
    except HeraldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 5
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return InvalidArgument.exit_code
