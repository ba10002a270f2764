"""Command-line driver: scenario runs, eps sweeps, verification campaigns and
decay fits of stored diagnostics.

Exit codes: 0 success, 1 configuration error, 2 solver error, 3 invariant
violations present.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import verify
from .config import ConfigError, load_config
from .dynamics import SolverError, simulate
from .entropy import (CSV_COLUMNS, DecayFitError, entropy, fit_decay_rate,
                      l1_mass_cap, row_values, rows_to_arrays)
from .equilibrium import EquilibriumError, SimParams, solve_equilibrium
from .meshfield import PotentialPair, build_grid, l1_distance

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VIOLATION = 0, 1, 2, 3

# slack of the inline invariant checks
MASS_TOL = 1e-10
ENTROPY_SLACK = 1e-10
CKP_SLACK = 1e-10
ALREADY_CONVERGED = 1e-10


@dataclass
class EpsRun:
    eps: float
    fit: object
    fit_error: str | None
    final_l1: tuple
    violations: dict
    csv_path: str | None
    max_picard_iters: int

    def to_dict(self):
        out = asdict(self)
        out["fit"] = None if self.fit is None else asdict(self.fit)
        return out


@dataclass
class RunReport:
    name: str
    runs: list
    limit_table: list
    already_converged: bool
    trajectories: dict = field(default_factory=dict, repr=False)

    @property
    def violation_count(self):
        return sum(sum(r.violations.values()) for r in self.runs)

    def to_dict(self):
        return {
            "name": self.name,
            "runs": [r.to_dict() for r in self.runs],
            "limit_table": [{"eps": e, "sup_l1_gap": g} for e, g in self.limit_table],
            "already_converged": self.already_converged,
            "violation_count": self.violation_count,
        }


def format_float(x):
    return f"{x:.17g}"


def write_csv(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            values = row_values(row)
            writer.writerow([format_float(v) for v in values[:-1]] + [str(values[-1])])


def read_csv(path):
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        missing = [c for c in ("t", "E_rel") if c not in header]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        data = np.array([[float(v) for v in row] for row in reader if row], dtype=float)
    if data.size == 0:
        data = np.empty((0, len(header)))
    return {name: data[:, j] for j, name in enumerate(header)}


def _eps_tag(eps):
    return f"eps{eps:g}"


def check_invariants(traj, params, E_initial):
    """Count outputs breaking conservation, the box, entropy monotonicity,
    the CKP bound and the mass cap."""
    cols = rows_to_arrays(traj.rows)
    counts = {"mass": 0, "positivity": 0, "monotonicity": 0, "ckp": 0, "l1_cap": 0}
    if not traj.rows:
        return counts
    counts["mass"] = int(np.sum(np.abs(cols["mass"] - cols["mass"][0]) > MASS_TOL))
    box = traj.min_n < 0 or traj.min_p < 0
    if traj.ntr is not None:
        box = box or traj.min_ntr < 0 or traj.max_ntr > 1
    counts["positivity"] = int(box)
    # the first interval may start from a singular state, so it is skipped
    dE = np.diff(cols["E"])[1:]
    counts["monotonicity"] = int(np.sum(dE > ENTROPY_SLACK))
    counts["ckp"] = int(np.sum(cols["E_rel"] < cols["ckp"] - CKP_SLACK))
    M1 = l1_mass_cap(params, E_initial)
    counts["l1_cap"] = int(np.sum((cols["nbar"] > M1) | (cols["pbar"] > M1)))
    return counts


def _run_one(cfg, eps, potentials, out_dir):
    params = cfg.build_params(eps, potentials)
    initial = cfg.initial_state(params)
    try:
        traj = simulate(initial, params, cfg.stepper)
    except (SolverError, EquilibriumError) as exc:
        raise SolverError(f"scenario {cfg.name!r}, eps={eps:g}: {exc}") from exc
    csv_path = None
    if out_dir is not None:
        csv_path = str(Path(out_dir) / f"{cfg.name}_{_eps_tag(eps)}.csv")
        write_csv(traj.rows, csv_path)
    try:
        fit, fit_error = fit_decay_rate(traj.rows), None
    except DecayFitError as exc:
        fit, fit_error = None, str(exc)
    final = traj.final
    eq = traj.eq
    final_l1 = (float(l1_distance(final.n, eq.n_inf)),
                float(l1_distance(final.p, eq.p_inf)),
                float(l1_distance(final.ntr, eq.ntr_inf)) if final.ntr is not None else 0.0)
    violations = check_invariants(traj, params, float(entropy(initial, params)))
    run = EpsRun(eps, fit, fit_error, final_l1, violations, csv_path,
                 traj.max_picard_iters)
    return run, traj


def limit_gap(traj_eps, traj_0):
    """sup over common outputs of ||n_eps - n_0||_1 + ||p_eps - p_0||_1."""
    k = min(len(traj_eps.times), len(traj_0.times))
    if k == 0:
        return 0.0
    gap = (l1_distance(traj_eps.n[:k], traj_0.n[:k])
           + l1_distance(traj_eps.p[:k], traj_0.p[:k]))
    return float(np.max(gap))


def run_scenario(cfg, output=None, write=True):
    """Simulate every eps of the sweep, fit decay rates and compare each
    eps > 0 run with the eps = 0 run when the sweep contains one."""
    out_dir = None
    if write:
        out_dir = Path(output or cfg.output or "out")
        out_dir.mkdir(parents=True, exist_ok=True)
    potentials = cfg.potentials()

    def job(eps):
        return _run_one(cfg, eps, potentials, out_dir)

    if cfg.threads > 1 and len(cfg.eps_sweep) > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(job, cfg.eps_sweep))
    else:
        results = [job(eps) for eps in cfg.eps_sweep]

    runs = [r for r, _ in results]
    trajectories = {eps: t for eps, (_, t) in zip(cfg.eps_sweep, results)}
    limit_table = []
    if 0.0 in trajectories:
        base = trajectories[0.0]
        limit_table = [(eps, limit_gap(t, base))
                       for eps, t in trajectories.items() if eps > 0]
    converged = all(
        r.fit is None and (not t.rows or t.rows[0].E_rel <= ALREADY_CONVERGED)
        for r, t in results)
    report = RunReport(cfg.name, runs, limit_table, converged, trajectories)
    if out_dir is not None:
        (out_dir / f"{cfg.name}_report.json").write_text(
            json.dumps(report.to_dict(), indent=2) + "\n")
    return report


# -- verification -----------------------------------------------------------

@dataclass
class VerificationReport:
    name: str
    results: list
    eep_uniformity: float | None
    uniform: bool | None

    @property
    def violation_count(self):
        return sum(r.n_violations for r in self.results)

    def table(self):
        return [{"check": r.check, "eps": r.eps, "exact": r.exact,
                 "n_samples": r.n_samples, "n_evaluated": r.n_evaluated,
                 "sup_ratio": r.sup_ratio, "violations": r.n_violations}
                for r in self.results]


UNIFORMITY_FACTOR = 3.0


def run_verification(cfg, n_samples, output=None, write=True, checks=None):
    """All verification checks with ``n_samples`` samples each, for every eps
    of the sweep. The charge and the cap M1 come from the scenario's initial
    data."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    checks = tuple(checks or verify.EXACT_CHECKS + verify.EMPIRICAL_CHECKS)
    potentials = cfg.potentials()
    results = []
    for eps in cfg.eps_sweep:
        params = cfg.build_params(eps, potentials)
        initial = cfg.initial_state(params)
        M = initial.mass(eps)
        M1 = verify.mass_cap_for(params, initial)
        for check in checks:
            results.append(verify.run_check(check, params, M, M1, n_samples, cfg.seed))

    sups = [r.sup_ratio for r in results if r.check == "eep_ratio" and r.eps > 0]
    factor = uniform = None
    if len(sups) >= 2 and min(sups) > 0:
        factor = max(sups) / min(sups)
        uniform = factor < UNIFORMITY_FACTOR
    report = VerificationReport(cfg.name, results, factor, uniform)

    if write:
        out_dir = Path(output or cfg.output or "out")
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / f"{cfg.name}_verification.csv"
        with path.open("w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(report.table()[0]),
                                    lineterminator="\n")
            writer.writeheader()
            for row in report.table():
                row = dict(row)
                row["eps"] = format_float(row["eps"])
                row["sup_ratio"] = format_float(row["sup_ratio"])
                writer.writerow(row)
        dump_dir = out_dir / "violations"
        for r in results:
            for v in r.violations:
                dump_dir.mkdir(exist_ok=True)
                fname = f"{v.check}_{_eps_tag(r.eps)}_{v.seed}_{v.chunk}_{v.index}.json"
                (dump_dir / fname).write_text(v.to_json() + "\n")
    return report


# -- command line -----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    # usage errors are configuration errors, not solver errors
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _build_parser():
    parser = _Parser(prog="trapdd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("equilibrium", help="print the equilibrium as JSON")
    p.add_argument("config", nargs="?", help="scenario document (defaults if omitted)")
    p.add_argument("--charge", type=float, help="charge M (default: from initial data)")
    p.add_argument("--eps", type=float, help="override params.eps")
    p.add_argument("--profiles", action="store_true", help="include n_inf, p_inf arrays")

    for name, text in (("simulate", "run the scenario at params.eps"),
                       ("sweep", "run the scenario for every eps of the sweep")):
        p = sub.add_parser(name, help=text)
        p.add_argument("config")
        p.add_argument("-o", "--output", help="output directory")

    p = sub.add_parser("verify", help="Monte-Carlo inequality checks")
    p.add_argument("config")
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("-o", "--output", help="output directory")

    p = sub.add_parser("fit", help="decay fit of a diagnostics CSV")
    p.add_argument("csv")
    return parser


def _cmd_equilibrium(args):
    if args.config:
        cfg = load_config(args.config)
        params = cfg.build_params(args.eps)
        charge = args.charge
        if charge is None:
            charge = cfg.initial_state(params).mass(params.eps)
    else:
        eps = 0.0 if args.eps is None else args.eps
        params = SimParams(PotentialPair.flat(build_grid(200)), eps=eps)
        charge = 0.0 if args.charge is None else args.charge
    eq = solve_equilibrium(params, charge)
    out = eq.to_dict()
    if not args.profiles:
        del out["n_inf"], out["p_inf"]
    print(json.dumps(out, indent=2))
    return EXIT_OK


def _print_report(report):
    for r in report.runs:
        if r.fit is not None:
            fit = f"K={r.fit.K:.6g} r2={r.fit.r2:.6f} decades={r.fit.decades:.1f}"
        else:
            fit = f"no fit ({r.fit_error})"
        bad = sum(r.violations.values())
        print(f"eps={r.eps:<8g} {fit}  final L1 n={r.final_l1[0]:.3g} "
              f"p={r.final_l1[1]:.3g} ntr={r.final_l1[2]:.3g}  violations={bad}")
    for eps, gap in report.limit_table:
        print(f"limit  eps={eps:<8g} sup L1 gap to eps=0: {gap:.6g}")
    if report.already_converged:
        print("already converged: initial data is the equilibrium")


def _cmd_run(args, sweep):
    cfg = load_config(args.config)
    if not sweep:
        cfg = replace(cfg, eps_sweep=(cfg.params["eps"],))
    report = run_scenario(cfg, output=args.output)
    _print_report(report)
    return EXIT_VIOLATION if report.violation_count else EXIT_OK


def _cmd_verify(args):
    if args.samples < 1:
        raise ConfigError("--samples: must be >= 1")
    cfg = load_config(args.config)
    report = run_verification(cfg, args.samples, output=args.output)
    for row in report.table():
        kind = "exact" if row["exact"] else "sup"
        print(f"{row['check']:<20} eps={row['eps']:<8g} {kind:<5} "
              f"sup_ratio={row['sup_ratio']:.6g} evaluated={row['n_evaluated']} "
              f"violations={row['violations']}")
    if report.eep_uniformity is not None:
        print(f"eep_ratio uniformity over eps > 0: factor {report.eep_uniformity:.3f} "
              f"({'ok' if report.uniform else 'NOT uniform'})")
    return EXIT_VIOLATION if report.violation_count else EXIT_OK


def _cmd_fit(args):
    try:
        cols = read_csv(args.csv)
    except OSError as exc:
        raise ConfigError(f"cannot read {args.csv}: {exc.strerror}") from None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    fit = fit_decay_rate(cols)
    print(json.dumps(asdict(fit), indent=2))
    return EXIT_OK


def main(argv=None):
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "equilibrium":
            return _cmd_equilibrium(args)
        if args.command in ("simulate", "sweep"):
            return _cmd_run(args, sweep=args.command == "sweep")
        if args.command == "verify":
            return _cmd_verify(args)
        return _cmd_fit(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, EquilibriumError, DecayFitError, verify.InfeasibleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
