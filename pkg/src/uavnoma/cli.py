"""Command-line entry point: generate, run, campaign and audit.

Exit codes: 0 success, 1 usage or input error, 2 infeasible, 3 solver failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .assoc import AssociationInfeasible, AssociationSolverError
from .channel import build_gain_tables
from .experiment import ALGO_ORDER, CampaignError, CampaignSpec, audit_result, emit_results, \
    generate_scenario, run_campaign
from .iaspo import ALGORITHMS, RunResult
from .model import AlgoConfig, Scenario
from .rates import PowerAlloc, evaluate, resolve_roles
from .scapower import FeasibilityRestorationFailed

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_SOLVER = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which would read as "infeasible"
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_mapping(path: str | Path) -> dict:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        return tomllib.loads(text)
    return json.loads(text)


def _algo_config(path: str | None, section: dict | None = None) -> AlgoConfig:
    d = dict(section or {})
    if path:
        d.update(_load_mapping(path))
    return AlgoConfig.from_dict(d)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def solution_dict(algo: str, scenario: Scenario, res: RunResult, cfg: AlgoConfig) -> dict:
    return {
        "algo": algo,
        "scenario_seed": scenario.seed,
        "assignment": res.assignment.a.tolist(),
        "power": res.power.to_dict(),
        "record": res.record.to_dict(timing=False),
        "report": res.report.to_dict(),
        "violations": [list(v[:1]) + [list(v[1]) if isinstance(v[1], tuple) else v[1], v[2]]
                       for v in audit_result(algo, res, scenario, cfg)],
    }


def cmd_generate(args) -> int:
    sc = generate_scenario(args.n_ues, args.n_ubs, args.seed)
    _emit(sc.to_json() + "\n", args.out)
    return EXIT_OK


def cmd_run(args) -> int:
    if args.scenario:
        sc = Scenario.from_json(Path(args.scenario).read_text())
    else:
        sc = generate_scenario(args.n_ues, args.n_ubs, args.seed)
    cfg = _algo_config(args.config)
    res = ALGORITHMS[args.algo](sc, cfg)
    if args.out and args.out.endswith(".csv"):
        _emit(res.record.to_csv(), args.out)
    else:
        _emit(json.dumps(solution_dict(args.algo, sc, res, cfg), indent=2) + "\n", args.out)
    log = logging.getLogger("uavnoma")
    log.info("%s: status %s, f_EE %.6g after %d iterations", args.algo, res.record.status.value,
             res.report.f_ee, len(res.record.entries) - 1)
    return EXIT_OK


def cmd_campaign(args) -> int:
    d = _load_mapping(args.spec) if args.spec else {}
    algo_section = d.pop("algo", None)
    if args.replications is not None:
        d["replications"] = args.replications
    if args.seed is not None:
        d["base_seed"] = args.seed
    if args.out:
        d["out_dir"] = args.out
    if args.algo:
        d["algorithms"] = args.algo
    spec = CampaignSpec.from_dict(d)
    cfg = _algo_config(args.config, algo_section)
    table = run_campaign(spec, cfg)
    for p in emit_results(table):
        print(p)
    if all(c.aborted for c in table.cells):
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_audit(args) -> int:
    sc = Scenario.from_json(Path(args.scenario).read_text())
    sol = json.loads(Path(args.solution).read_text())
    G = build_gain_tables(sc)
    A = resolve_roles(np.asarray(sol["assignment"], dtype=np.int8), G)
    P = PowerAlloc.from_dict(sol["power"])
    cfg = _algo_config(args.config)
    rep = evaluate(A, P, G, sc, cfg.feas_tol)
    _emit(json.dumps(rep.to_dict(), indent=2) + "\n", args.out)
    return EXIT_OK if rep.feasible else EXIT_INFEASIBLE


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="uavnoma", description="Multi-UAV NOMA energy-efficiency optimisation.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a random scenario as JSON")
    g.add_argument("--n-ues", type=int, default=10)
    g.add_argument("--n-ubs", type=int, default=4)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="output file (default stdout)")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="solve one scenario with one algorithm")
    r.add_argument("scenario", nargs="?", help="scenario JSON; generated from --seed when omitted")
    r.add_argument("--algo", choices=ALGO_ORDER, default="iaspo")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--n-ues", type=int, default=10)
    r.add_argument("--n-ubs", type=int, default=4)
    r.add_argument("--config", help="AlgoConfig as TOML or JSON")
    r.add_argument("--out", help="output file; a .csv suffix writes the iteration table")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("campaign", help="Monte-Carlo sweep writing CSV/JSON tables")
    c.add_argument("spec", nargs="?", help="campaign spec as TOML or JSON (an [algo] table sets AlgoConfig)")
    c.add_argument("--replications", type=int)
    c.add_argument("--seed", type=int, help="base seed")
    c.add_argument("--out", help="output directory")
    c.add_argument("--algo", action="append", choices=ALGO_ORDER, help="repeat to select several")
    c.add_argument("--config", help="AlgoConfig as TOML or JSON")
    c.set_defaults(func=cmd_campaign)

    a = sub.add_parser("audit", help="check a solution against every constraint")
    a.add_argument("scenario", help="scenario JSON")
    a.add_argument("solution", help="solution JSON as written by 'run'")
    a.add_argument("--config", help="AlgoConfig as TOML or JSON (feas_tol)")
    a.add_argument("--out", help="output file (default stdout)")
    a.set_defaults(func=cmd_audit)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except AssociationInfeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (AssociationSolverError, FeasibilityRestorationFailed, CampaignError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
