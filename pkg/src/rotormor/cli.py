"""Command-line harness for meshes, sweeps, adaptive runs and benchmarks.

Exit codes: 0 on success, 2 for invalid input, 3 when an adaptive run does
not reach its tolerance.  ``ROTORMOR_OUTPUT_DIR`` overrides the output
directory; ``ROTORMOR_THREADS`` caps the BLAS thread count (read before
the numerics are imported).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

_threads = os.environ.get("ROTORMOR_THREADS")
if _threads:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, _threads)

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NOT_CONVERGED = 3


def _out_dir(args) -> Path:
    out = args.out_dir or os.environ.get("ROTORMOR_OUTPUT_DIR") or "rotormor_out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_spec(args):
    from .machine import MachineSpec

    if getattr(args, "config", None):
        return MachineSpec.from_file(args.config)
    overrides = {}
    if getattr(args, "n_interface", None):
        overrides["n_interface"] = args.n_interface
    return MachineSpec(**overrides)


def _load_scenario(args):
    from .bench import Scenario

    if args.scenario_file:
        scenario = Scenario.from_file(args.scenario_file)
    else:
        scenario = Scenario.named(args.scenario)
    updates = {}
    if args.family:
        updates["family"] = args.family
    if args.eps is not None:
        updates["eps"] = args.eps
    if args.eps_rel is not None:
        updates["eps_rel"] = args.eps_rel
    if args.repeats is not None:
        updates["repeats"] = args.repeats
    if args.n_interface:
        import dataclasses

        updates["machine"] = dataclasses.replace(
            scenario.machine, n_interface=args.n_interface
        )
    if updates:
        import dataclasses

        scenario = dataclasses.replace(scenario, **updates)
    return scenario


def _add_scenario_args(p, with_family=True):
    p.add_argument("--scenario", default="sym", help="named scenario (sym|rot|stat|rot_stat)")
    p.add_argument("--scenario-file", help="JSON scenario file (overrides --scenario)")
    if with_family:
        p.add_argument("--family", choices=["K", "M"], help="index-set family")
    p.add_argument("--eps", type=float, help="adaptive tolerance")
    p.add_argument("--eps-rel", type=float, dest="eps_rel", help="POD truncation threshold")
    p.add_argument("--repeats", type=int, help="timing repeats")
    p.add_argument("--n-interface", type=int, dest="n_interface", help="angular resolution")
    p.add_argument("--out-dir", help="artifact directory (or ROTORMOR_OUTPUT_DIR)")


def cmd_build_mesh(args) -> int:
    from .machine import apply_tooth_perturbation, build_mesh

    spec = _load_spec(args)
    mesh = apply_tooth_perturbation(build_mesh(spec), spec)
    out = _out_dir(args)
    target = out / "mesh.txt"
    mesh.export_text(target)
    spec.to_file(out / "machine.json")
    print(f"mesh with {mesh.n_nodes} nodes / {mesh.triangles.shape[0]} triangles -> {target}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .bench import Scenario
    from .fem import sweep_full

    scenario = _load_scenario(args)
    _, _, _, system = scenario.build()
    n_i = scenario.machine.n_interface
    angles = range(n_i) if args.angles is None else sorted(args.angles)
    snaps = sweep_full(system, angles)
    out = _out_dir(args)
    snaps.export_npz(out / f"snapshots_{scenario.name}.npz")
    if args.csv:
        snaps.export_csv(out / f"snapshots_{scenario.name}.csv")
    print(f"swept {snaps.n_snapshots} angles -> {out}")
    return EXIT_OK


def cmd_adapt(args) -> int:
    from .adaptive import adaptive_solve

    scenario = _load_scenario(args)
    _, _, _, system = scenario.build()
    run = adaptive_solve(
        system,
        scenario.index_family(),
        eps=scenario.eps,
        eps_rel=scenario.eps_rel,
        truncation=scenario.truncation,
        initial_set=scenario.initial_set,
        max_iterations=scenario.max_iterations,
    )
    out = _out_dir(args)
    tag = f"{scenario.name}_{scenario.family}"
    run.log_csv(out / f"adaptive_log_{tag}.csv")
    run.trace_csv(out / f"error_trace_{tag}.csv")
    run.report.export_csv(out / f"final_certificate_{tag}.csv")
    run.to_json(out / f"adaptive_{tag}.json")
    status = "converged" if run.converged else f"NOT converged ({run.termination})"
    print(
        f"{scenario.name}/{scenario.family}: {status} after {run.iterations} iterations, "
        f"basis {run.basis_sizes}, max rel estimate {run.report.max_rel:.3e}, "
        f"{run.solve_count} full solves"
    )
    return EXIT_OK if run.converged else EXIT_NOT_CONVERGED


def cmd_eig_decay(args) -> int:
    from .bench import eig_decay

    scenario = _load_scenario(args)
    out = _out_dir(args)
    target = out / f"eig_decay_{scenario.name}.csv"
    eig_decay(scenario, out_path=target)
    print(f"eigenvalue decay -> {target}")
    return EXIT_OK


def cmd_bench(args) -> int:
    from .bench import format_report_table, run_scenario

    scenario = _load_scenario(args)
    report, run, _ = run_scenario(scenario, out_dir=_out_dir(args))
    print(format_report_table([report]))
    return EXIT_OK if run.converged else EXIT_NOT_CONVERGED


def cmd_compare(args) -> int:
    from .bench import Scenario, compare_families, format_report_table

    names = [n.strip() for n in args.scenarios.split(",") if n.strip()]
    scenarios = [Scenario.named(n) for n in names]
    results = compare_families(scenarios, out_dir=_out_dir(args))
    for fam in ("K", "M"):
        good = [r for r in results[fam] if r is not None]
        print(f"\nIndex family {fam}:")
        print(format_report_table(good))
    failed = any(r is None for fam in results.values() for r in fam)
    not_conv = any(r is not None and not r.converged for fam in results.values() for r in fam)
    if failed:
        return EXIT_INVALID
    return EXIT_NOT_CONVERGED if not_conv else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rotormor",
        description="Certified POD reduced-order models for rotating machine sweeps",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-mesh", help="build and export the machine mesh")
    p.add_argument("--config", help="machine JSON config")
    p.add_argument("--n-interface", type=int, dest="n_interface")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_build_mesh)

    p = sub.add_parser("sweep", help="full-order sweep over rotation angles")
    _add_scenario_args(p, with_family=False)
    p.add_argument("--angles", type=int, nargs="*", help="explicit angle indices")
    p.add_argument("--csv", action="store_true", help="also export the CSV matrix")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("adapt", help="adaptive certified reduction")
    _add_scenario_args(p)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("eig-decay", help="POD eigenvalue decay of a full revolution")
    _add_scenario_args(p, with_family=False)
    p.set_defaults(func=cmd_eig_decay)

    p = sub.add_parser("bench", help="timed full vs adaptive comparison")
    _add_scenario_args(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("compare", help="run scenarios under both index families")
    p.add_argument("--scenarios", default="sym,rot,stat,rot_stat")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
