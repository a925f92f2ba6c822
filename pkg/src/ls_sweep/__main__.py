"""Entry point for ls-sweep."""

import argparse
import logging
import sys
from typing import Any

import numpy as np

from .config import RunConfig, load_config
from .dump import write_field, write_field_images, write_json, write_pgm
from .problem import ComplexField, plane_wave, velocity_from_spec
from .selftest import TableHook, run_selftest
from .solver import solve_scattering
from .stencil_eval import phase_error, reflection_proxy, solve_homogeneous, source_index

logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    datefmt="%Y-%m-%d %H:%M:%S",
)
logger = logging.getLogger(__name__)


def cmd_solve(cfg: RunConfig) -> int:
    """Scattering solve for the configured medium and incoming plane wave."""
    grid = cfg.grid.to_grid()
    logger.info(
        f"Grid: omega/2pi = {cfg.grid.omega_over_2pi:g}, n = {grid.n}, b = {grid.b}, "
        f"C = {grid.c_pml:g}, velocity = {cfg.velocity.kind}"
    )
    velocity = velocity_from_spec(grid, cfg.velocity, default_seed=cfg.seed)
    incoming = plane_wave(grid, cfg.direction)
    u, report = solve_scattering(grid, velocity, incoming, cfg.solver, threads=cfg.threads)
    total = ComplexField(u.index_set, u.data + incoming.data)

    out = cfg.out
    write_field(out / "u.lsf", u, grid.omega, grid.h)
    write_field(out / "total.lsf", total, grid.omega, grid.h)
    write_field_images(out, "u", u)
    write_field_images(out, "total", total)
    write_json(
        out / "report.json",
        {
            "omega_over_2pi": cfg.grid.omega_over_2pi,
            "n": grid.n,
            "b": grid.b,
            "c_pml": grid.c_pml,
            "velocity": cfg.velocity.kind,
            **report.to_dict(),
        },
    )
    logger.info(f"Results written to {out}")
    return 0


def cmd_stencil_eval(cfg: RunConfig) -> int:
    """Phase-error maps of each (scheme, ppw) pair against the analytic Green's function."""
    ev = cfg.stencil_eval
    summary: list[dict[str, Any]] = []
    for scheme in ev.schemes:
        for ppw in ev.ppw:
            grid, u = solve_homogeneous(
                scheme,
                cfg.grid.omega,
                ppw,
                b=cfg.grid.b,
                c_pml=cfg.grid.c_pml,
                depth_factor=ev.depth_factor,
                strength_factor=ev.strength_factor,
                fit_waves=ev.fit_waves,
            )
            j0 = source_index(grid)
            report = phase_error(u, grid.omega, (j0 * grid.h, j0 * grid.h), grid.h)
            stem = f"phase_{scheme}_ppw{ppw:g}"
            write_field(
                cfg.out / f"{stem}.lsf",
                ComplexField(u.index_set, report.error.astype(np.complex128)),
                grid.omega,
                grid.h,
            )
            write_pgm(cfg.out / f"{stem}.pgm", report.error, "phase error [cycles]")
            summary.append({"scheme": scheme, "ppw": ppw, "n": grid.n, **report.to_dict()})
            logger.info(
                f"{scheme} @ {ppw:g} ppw: max |delta| = {report.max_error:.3e} cycles, "
                f"relative {report.relative_error:.3e}"
            )
    write_json(cfg.out / "summary.json", summary)
    return 0


def cmd_calibrate_pml(cfg: RunConfig) -> int:
    """Boundary reflection of a centered point source for each (b, C) pair."""
    cal = cfg.calibration
    rows: list[dict[str, float | int]] = []
    for b in cal.b_values:
        for c in cal.c_values:
            grid, u = solve_homogeneous(
                "sparsify",
                cfg.grid.omega,
                cfg.grid.ppw,
                b=b,
                c_pml=c,
                depth_factor=1,
                strength_factor=1.0,
            )
            proxy = reflection_proxy(grid, u, band=cal.band)
            rows.append({"b": b, "c_pml": c, "reflection": proxy})
            logger.info(f"b = {b}, C = {c:g}: reflection proxy {proxy:.3e}")

    # recommendation is taken at the deepest layer; ties go to the smaller C
    deepest = max(cal.b_values)
    best = min(
        (r for r in rows if r["b"] == deepest), key=lambda r: (r["reflection"], r["c_pml"])
    )
    write_json(
        cfg.out / "calibration.json",
        {
            "omega_over_2pi": cfg.grid.omega_over_2pi,
            "ppw": cfg.grid.ppw,
            "band": cal.band,
            "results": rows,
            "recommended_c_pml": best["c_pml"],
            "recommended_at_b": deepest,
        },
    )
    logger.info(f"Recommended C = {best['c_pml']:g} (b = {deepest})")
    return 0


def cmd_selftest(table_hook: TableHook | None = None) -> int:
    """Run the oracle checks; nonzero status if any fails."""
    results = run_selftest(table_hook=table_hook)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name}  {r.value:.3e} (<= {r.threshold:.0e})")
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error(f"{len(failed)} self-test check(s) failed: {', '.join(failed)}")
        return 1
    return 0


COMMANDS = {
    "solve": cmd_solve,
    "stencil-eval": cmd_stencil_eval,
    "calibrate-pml": cmd_calibrate_pml,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ls-sweep",
        description="2D Lippmann-Schwinger scattering solver with a sparsify-and-sweep "
        "preconditioner",
    )
    parser.add_argument(
        "-c",
        "--config",
        default=None,
        help="Path to config file (default: built-in defaults)",
    )
    parser.add_argument("--out", default=None, help="Output directory (default: out)")
    parser.add_argument(
        "--threads", type=int, default=None, help="Worker threads (env LS_SWEEP_THREADS wins)"
    )
    parser.add_argument(
        "--omega-over-2pi", type=float, default=None, dest="omega_over_2pi", help="频率 ω/2π"
    )
    parser.add_argument("--ppw", type=float, default=None, help="每波长网格点数")
    parser.add_argument("--b", type=int, default=None, help="PML 层数")
    parser.add_argument("--c-pml", type=float, default=None, dest="c_pml", help="PML 强度 C")
    parser.add_argument("--seed", type=int, default=None, help="随机介质种子")

    subparsers = parser.add_subparsers(dest="command", help="Commands")
    subparsers.add_parser("solve", help="Solve the scattering problem and write fields")
    subparsers.add_parser("stencil-eval", help="比较各格式的相位误差")
    subparsers.add_parser("calibrate-pml", help="扫描 PML 强度 C 并给出推荐值")
    subparsers.add_parser("selftest", help="Run brute-force oracle checks")
    return parser


def main(argv: list[str] | None = None) -> None:
    """CLI entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command is None:
        parser.print_help()
        sys.exit(1)

    try:
        if args.command == "selftest":
            status = cmd_selftest()
        else:
            overrides = {
                "out": args.out,
                "threads": args.threads,
                "omega_over_2pi": args.omega_over_2pi,
                "ppw": args.ppw,
                "b": args.b,
                "c_pml": args.c_pml,
                "seed": args.seed,
            }
            cfg = load_config(args.config, overrides)
            status = COMMANDS[args.command](cfg)
    except FileNotFoundError as e:
        logger.error(str(e))
        sys.exit(1)
    except Exception:
        logger.exception(f"{args.command} failed")
        sys.exit(1)

    if status:
        sys.exit(status)


if __name__ == "__main__":
    main()
